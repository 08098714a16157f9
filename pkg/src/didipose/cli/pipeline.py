"""Stage functions behind the CLI subcommands.

Each stage is a pure function of (config, seeds, input files) and writes its
artifacts deterministically: datasets and CSVs with shortest round-trip
floats, checkpoints in the binary parameter format, plots with fixed
metadata.
"""
from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from ..diffusion import (
    DenoiserConfig, DenoiserParams, Schedule, TransitionParams, dataset_features, infer_tokens,
    observation_features, tokenize_dataset, train_diffusion,
)
from ..errors import ConfigError, DataError, SchemaError
from ..numerics import OptimizerState, load_checkpoint, save_checkpoint
from ..quantizer import CodecConfig, CodecParams, decode_pose, train_codec
from ..skeleton import (
    PoseDataset, generate_dataset, h36m_skeleton, mpjpe, pa_mpjpe, read_dataset, write_dataset,
)
from . import plots
from .config import RunConfig

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
TRAIN_LOG_COLUMNS = ("step", "s_sampled", "vlb", "aux", "total")
CODEC_LOG_COLUMNS = ("epoch", "step", "loss", "usage")
ABLATION_COLUMNS = ("variant", "mpjpe", "pa_mpjpe", "seed", "config_hash")
EVAL_COLUMNS = ("bucket", "count", "mpjpe", "pa_mpjpe", "config_hash", "seed")
# Buckets over the fraction of hidden joints: [0], (0, .25], (.25, .5], (.5, 1].
OCCLUSION_BUCKETS = (("none", -1.0, 0.0), ("(0,0.25]", 0.0, 0.25),
                     ("(0.25,0.5]", 0.25, 0.5), ("(0.5,1]", 0.5, 1.0))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def sibling(path, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.name + suffix)


# ---- data -----------------------------------------------------------------------
def gen_data(cfg: RunConfig, out_dir) -> dict:
    """Write ``{train,val,test}.jsonl``; splits use disjoint random streams."""
    out_dir = Path(out_dir)
    skeleton = h36m_skeleton()
    meta = {"config_hash": cfg.hash(), "data_hash": cfg.data_hash()}
    paths = {}
    for split in SPLITS:
        ds = generate_dataset(skeleton, cfg.raw["data"][split], cfg.seed, split, cfg.occluder)
        ds.meta = dict(meta)
        paths[split] = out_dir / f"{split}.jsonl"
        write_dataset(ds, paths[split])
    return paths


def load_data(path) -> PoseDataset:
    return read_dataset(path, h36m_skeleton())


# ---- checkpoints with optimizer state ------------------------------------------------
def _pack(params: dict, state: OptimizerState | None) -> dict:
    arrays = {f"param/{k}": v.data for k, v in params.items()}
    if state is not None:
        for k in params:
            if k in state.m:
                arrays[f"adam_m/{k}"] = state.m[k]
                arrays[f"adam_v/{k}"] = state.v[k]
    return arrays


def _unpack(arrays: dict, prefix: str) -> dict:
    n = len(prefix)
    return {k[n:]: v for k, v in arrays.items() if k.startswith(prefix)}


def _restore_state(arrays: dict, header: dict, adamw) -> OptimizerState:
    return OptimizerState(adamw, int(header["extra"].get("step", 0)),
                          {k: np.array(v) for k, v in _unpack(arrays, "adam_m/").items()},
                          {k: np.array(v) for k, v in _unpack(arrays, "adam_v/").items()})


def load_codec(path) -> tuple[CodecParams, dict]:
    arrays, header = load_checkpoint(path, kind="codec")
    try:
        config = CodecConfig(**header["config"]["codec"])
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{path}: codec checkpoint header lacks a valid codec config") from exc
    return CodecParams.from_arrays(config, _unpack(arrays, "param/")), header


def load_denoiser(path) -> tuple[DenoiserParams, TransitionParams, dict]:
    arrays, header = load_checkpoint(path, kind="denoiser")
    try:
        dcfg = DenoiserConfig(**header["config"]["denoiser"])
        sch = header["config"]["schedule"]
        schedule = Schedule.from_cumulative(np.array(sch["alpha_bar"]), np.array(sch["gamma_bar"]),
                                            sch["codebook_size"])
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"{path}: denoiser checkpoint header is incomplete") from exc
    return DenoiserParams.from_arrays(dcfg, _unpack(arrays, "param/")), TransitionParams(schedule), header


# ---- training stages ---------------------------------------------------------------
def train_codec_stage(cfg: RunConfig, train_path, out_ckpt, resume=None):
    ds = load_data(train_path)
    codec, state = None, None
    if resume is not None:
        codec, header = load_codec(resume)
        if codec.config != cfg.codec:
            raise ConfigError(f"resume checkpoint {resume} was trained with a different codec config")
        arrays, header = load_checkpoint(resume, kind="codec")
        state = _restore_state(arrays, header, cfg.codec_train.adamw())
    else:
        codec = CodecParams.init(cfg.codec, np.random.default_rng(np.random.SeedSequence([cfg.seed, 3])))
    codec, state, rows = train_codec(ds, codec, cfg.codec_train, state,
                                     on_epoch=lambda r: log.info("codec %s", r))
    save_checkpoint(out_ckpt, _pack(codec.params, state), kind="codec",
                    config={"codec": cfg.codec.to_dict()},
                    extra={"step": state.step, "config_hash": cfg.hash(),
                           "data_hash": ds.meta.get("data_hash")})
    write_csv(sibling(out_ckpt, ".log.csv"), CODEC_LOG_COLUMNS, rows)
    if rows:
        plots.line_plot(sibling(out_ckpt, ".loss.svg"), [r["step"] for r in rows],
                        {"loss": [r["loss"] for r in rows]}, "step", "reconstruction MSE (m^2)")
    return codec, rows


def _denoiser_header(cfg: RunConfig, dcfg: DenoiserConfig, tp: TransitionParams, matrix, gamma_end):
    sch = tp.schedule
    return {"denoiser": dcfg.to_dict(),
            "schedule": {"steps": sch.steps, "codebook_size": sch.codebook_size,
                         "matrix": matrix, "alpha_end": cfg.raw["schedule"]["alpha_end"],
                         "gamma_end": gamma_end,
                         "alpha_bar": sch.alpha_bar.tolist(), "gamma_bar": sch.gamma_bar.tolist()},
            "diffusion_train": cfg.diffusion_train.to_dict()}


def fit_denoiser(cfg: RunConfig, ds: PoseDataset, codec: CodecParams, tp: TransitionParams,
                 dp: DenoiserParams | None = None, state: OptimizerState | None = None):
    tokens = tokenize_dataset(ds, codec)
    feats = dataset_features(ds, codec.config.coord_scale)
    if dp is None:
        dp = DenoiserParams.init(cfg.denoiser, np.random.default_rng(np.random.SeedSequence([cfg.seed, 5])))
    def on_step(row):
        if row["step"] % 100 == 0:
            log.info("diffusion %s", row)

    dp, state, rows = train_diffusion(tokens, feats, dp, tp, cfg.diffusion_train, state, on_step)
    return dp, state, rows


def train_diffusion_stage(cfg: RunConfig, train_path, codec_ckpt, out_ckpt, resume=None):
    if codec_ckpt is None or not Path(codec_ckpt).is_file():
        raise DataError(f"diffusion training needs a trained codec checkpoint; not found: {codec_ckpt}")
    codec, _ = load_codec(codec_ckpt)
    if codec.config.fsq.codebook_size != cfg.denoiser.codebook_size or codec.config.tokens != cfg.denoiser.tokens:
        raise ConfigError("codec checkpoint does not match the configured codebook/token count")
    ds = load_data(train_path)
    matrix = cfg.raw["schedule"]["matrix"]
    gamma_end = cfg.raw["schedule"]["gamma_end"]
    tp = TransitionParams(cfg.schedule())
    dp, state = None, None
    if resume is not None:
        dp, tp_old, header = load_denoiser(resume)
        if dp.config != cfg.denoiser or not np.array_equal(tp_old.schedule.alpha_bar, tp.schedule.alpha_bar) \
                or not np.array_equal(tp_old.schedule.gamma_bar, tp.schedule.gamma_bar):
            raise ConfigError(f"resume checkpoint {resume} was trained with a different denoiser or schedule")
        arrays, header = load_checkpoint(resume, kind="denoiser")
        state = _restore_state(arrays, header, cfg.diffusion_train.adamw())
    dp, state, rows = fit_denoiser(cfg, ds, codec, tp, dp, state)
    prior = float(np.mean([r["prior_kl"] for r in rows])) if rows else 0.0
    save_checkpoint(out_ckpt, _pack(dp.params, state), kind="denoiser",
                    config=_denoiser_header(cfg, dp.config, tp, matrix, gamma_end),
                    extra={"step": state.step, "config_hash": cfg.hash(),
                           "data_hash": ds.meta.get("data_hash"), "mean_prior_kl": prior})
    write_csv(sibling(out_ckpt, ".log.csv"), TRAIN_LOG_COLUMNS, rows)
    if rows:
        plots.line_plot(sibling(out_ckpt, ".loss.svg"), [r["step"] for r in rows],
                        {"total": [r["total"] for r in rows], "vlb": [r["vlb"] for r in rows]},
                        "step", "loss (nats)")
    return dp, tp, rows


# ---- inference and evaluation ---------------------------------------------------------
def predict(cfg: RunConfig, ds: PoseDataset, codec: CodecParams, dp: DenoiserParams,
            tp: TransitionParams, steps_used=None, record_occ: list | None = None) -> np.ndarray:
    inf = cfg.raw["infer"]
    used = steps_used or inf["steps_used"] or tp.steps
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 13]))
    feats = observation_features(ds.proj2d, ds.visible, codec.config.coord_scale)
    out = []
    for lo in range(0, len(ds), inf["batch"]):
        tokens = infer_tokens(feats[lo:lo + inf["batch"]], dp, tp, used, inf["init_mode"], rng,
                              record_occ)
        out.append(decode_pose(tokens, codec))
    return np.concatenate(out, axis=0) if out else np.zeros((0, ds.skeleton.joint_count, 3))


def infer_stage(cfg: RunConfig, codec_ckpt, denoiser_ckpt, obs_path, out_path, steps_used=None):
    for label, path in (("codec", codec_ckpt), ("denoiser", denoiser_ckpt)):
        if path is None or not Path(path).is_file():
            raise DataError(f"inference needs the {label} checkpoint; not found: {path}")
    codec, _ = load_codec(codec_ckpt)
    dp, tp, _ = load_denoiser(denoiser_ckpt)
    ds = load_data(obs_path)
    pred = predict(cfg, ds, codec, dp, tp, steps_used)
    out = PoseDataset(ds.skeleton, pred, ds.proj2d, ds.visible, ds.occluders, ds.seed, ds.split,
                      {"config_hash": cfg.hash(), "data_hash": ds.meta.get("data_hash"),
                       "seed": cfg.seed, "predicted": True, "steps_used": int(steps_used or cfg.raw["infer"]["steps_used"] or tp.steps)})
    write_dataset(out, out_path)
    return out


def metrics_report(pred: np.ndarray, gt: np.ndarray, visible: np.ndarray) -> list[dict]:
    """Overall and per-occlusion-bucket MPJPE / PA-MPJPE rows."""
    if pred.shape != gt.shape:
        raise DataError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    errs = np.asarray(mpjpe(pred, gt), dtype=np.float64).reshape(-1) if len(gt) else np.zeros(0)
    pa = np.array([pa_mpjpe(p, g) for p, g in zip(pred, gt)], dtype=np.float64)
    frac = 1.0 - visible.mean(axis=1) if len(gt) else np.zeros(0)

    def row(name, mask):
        n = int(mask.sum())
        return {"bucket": name, "count": n,
                "mpjpe": float(errs[mask].mean()) if n else float("nan"),
                "pa_mpjpe": float(pa[mask].mean()) if n else float("nan")}

    rows = [row("all", np.ones(len(gt), dtype=bool))]
    for name, lo, hi in OCCLUSION_BUCKETS:
        rows.append(row(name, (frac > lo) & (frac <= hi)))
    return rows


def eval_stage(pred_path, gt_path, out_csv=None, allow_hash_mismatch=False) -> list[dict]:
    pred, gt = load_data(pred_path), load_data(gt_path)
    if len(pred) != len(gt):
        raise DataError(f"{pred_path} has {len(pred)} samples but {gt_path} has {len(gt)}")
    ph, gh = pred.meta.get("data_hash"), gt.meta.get("data_hash")
    if ph != gh and not allow_hash_mismatch:
        raise DataError(f"data hash mismatch: predictions {ph} vs ground truth {gh} "
                        "(pass --allow-hash-mismatch to override)")
    rows = metrics_report(pred.coords, gt.coords, gt.visible)
    # Trace every number to the run that produced the predictions.
    for r in rows:
        r["config_hash"] = pred.meta.get("config_hash", "")
        r["seed"] = pred.meta.get("seed", pred.seed)
    if out_csv is not None:
        write_csv(out_csv, EVAL_COLUMNS, rows)
        named = [r for r in rows[1:] if r["count"]]
        if named:
            plots.bar_plot(sibling(out_csv, ".svg"), [r["bucket"] for r in named],
                           [r["mpjpe"] for r in named], "MPJPE (mm)", "error by occluded fraction")
    return rows


# ---- ablation ---------------------------------------------------------------------
def ablate_stage(cfg: RunConfig, data_dir, out_dir, codec_ckpt=None, matrix=None) -> list[dict]:
    """Train and evaluate each transition-matrix variant (and optional sweeps) across seeds.

    One codec (loaded or trained once with the base seed) is shared by every
    row.  Writes ``ablation.csv`` and ``ablation_log.csv`` (Occ-token counts
    seen in training corruption and during inference).
    """
    data_dir, out_dir = Path(data_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test = load_data(data_dir / "train.jsonl"), load_data(data_dir / "test.jsonl")
    if codec_ckpt is not None:
        codec, _ = load_codec(codec_ckpt)
    else:
        codec, _ = train_codec_stage(cfg, data_dir / "train.jsonl", out_dir / "codec.ckpt")
    ab = cfg.raw["ablate"]
    variants = [matrix] if matrix else list(ab["variants"])
    tokens = tokenize_dataset(train, codec)
    feats = dataset_features(train, codec.config.coord_scale)
    rows, occ_rows = [], []

    def run(label, run_cfg, tp, seed, sweeps=()):
        dp = DenoiserParams.init(run_cfg.denoiser, np.random.default_rng(np.random.SeedSequence([seed, 5])))
        dp, _, train_log = train_diffusion(tokens, feats, dp, tp, run_cfg.diffusion_train)
        train_occ = int(sum(r["occ_tokens"] for r in train_log))
        for sweep_label, cfg_i, used in [(label, run_cfg, None)] + list(sweeps):
            occ = []
            pred = predict(cfg_i, test, codec, dp, tp, used, record_occ=occ)
            rows.append({"variant": sweep_label, "mpjpe": float(np.mean(mpjpe(pred, test.coords))) if len(test) else float("nan"),
                         "pa_mpjpe": float(np.mean([pa_mpjpe(p, g) for p, g in zip(pred, test.coords)])) if len(test) else float("nan"),
                         "seed": seed, "config_hash": cfg_i.hash()})
            occ_rows.append({"variant": sweep_label, "seed": seed, "train_occ_tokens": train_occ,
                             "infer_occ_tokens": int(sum(occ))})
            log.info("ablate %s", rows[-1])

    for seed in ab["seeds"]:
        for variant in variants:
            run_cfg = cfg.with_overrides(**{"seed": seed, "schedule.matrix": variant})
            tp = TransitionParams(run_cfg.schedule())
            sweeps = []
            if variant == "both":
                for used in ab["steps_used"]:
                    sweeps.append((f"both@steps_used={used}",
                                   run_cfg.with_overrides(**{"infer.steps_used": used}), used))
            run(variant, run_cfg, tp, seed, sweeps)
        for rate in ab["occ_rates"]:
            run_cfg = cfg.with_overrides(**{"seed": seed, "schedule.matrix": "both",
                                            "schedule.gamma_end": rate})
            run(f"both@occ_rate={rate}", run_cfg, TransitionParams(run_cfg.schedule()), seed)
    write_csv(out_dir / "ablation.csv", ABLATION_COLUMNS, rows)
    write_csv(out_dir / "ablation_log.csv", ("variant", "seed", "train_occ_tokens", "infer_occ_tokens"),
              occ_rows)
    if rows:
        labels = sorted({r["variant"] for r in rows}, key=[r["variant"] for r in rows].index)
        means = [float(np.mean([r["mpjpe"] for r in rows if r["variant"] == v])) for v in labels]
        plots.bar_plot(out_dir / "ablation.svg", labels, means, "MPJPE (mm)", "transition variants")
    return rows
