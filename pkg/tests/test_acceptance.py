"""Acceptance criteria, one marked group per criterion.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary prints one
PASS/FAIL line per criterion.  The desk corpus and its codec are built once
per session and shared by criteria 7 to 10.
"""
import dataclasses
import json
import time
import warnings

import numpy as np
import pytest

from didipose.diffusion import (
    DenoiserConfig, DenoiserParams, DiffusionTrainConfig, LossWeights, Schedule, TransitionParams,
    cumulative_forward, dataset_features, denoise_log_probs, infer_tokens, log_p_theta_step,
    log_posterior, sample_forward, tokenize_dataset, total_from_log_f, train_diffusion,
    transition_matrix, variant_schedule,
)
from didipose.numerics import (
    Tensor, concat, embedding_lookup, exp, gelu, getitem, grad_check, init_attention, layer_norm,
    linear, log, log_softmax, logaddexp, logsumexp, make_op, matmul, mean, multi_head_attention,
    reshape, softmax, sum_, swapaxes, tanh, transpose,
)
from didipose.quantizer import (
    CodecConfig, CodecParams, CodecTrainConfig, FSQConfig, code_to_index, decode_pose,
    encode_tokens, index_to_code, joint_shift, local_mlp_block, reconstruction_loss, train_codec,
)
from didipose.quantizer.codec import _init_block
from didipose.skeleton import generate_dataset, h36m_skeleton, mpjpe
from oracles import dense_cumulative, dense_step_matrix, random_per_step

pytestmark = pytest.mark.acceptance

INSTANCES = 200
PROPERTY_CASES = 1000
GRAD_TOL = 1e-4

# Desk corpus
DESK_TRAIN, DESK_TEST, DESK_SEED = 10_000, 1_000, 0
MEMO_POSES = 8
ABLATION_TEST = 200
ABLATION_SEEDS = (0, 1, 2)
# The ablation runs nine denoisers; a 125-codeword codec keeps each one to minutes.
ABLATION_LEVELS = (5, 5, 5)
ABLATION_CODEC_EPOCHS = 10
ABLATION_TRAIN = DiffusionTrainConfig(steps=1500, batch_size=64, lr=1e-3)
MEMO_CODEC_STEPS = 1000
MEMO_TRAIN = DiffusionTrainConfig(steps=1000, batch_size=8, lr=2e-3, weight_decay=0.0)
FIFTEEN_MIN = 15 * 60


def detail(record_property, text):
    record_property("detail", text)


def random_instance(rng):
    C = int(rng.integers(2, 9))
    S = int(rng.integers(1, 21))
    per = random_per_step(rng, C, S)
    sch = Schedule.from_per_step([a for a, _, _ in per], [g for _, _, g in per], C)
    return C, S, per, TransitionParams(sch)


# ---- 1-3: transition algebra -------------------------------------------------------------
@pytest.mark.criterion(1)
def test_closed_form_matches_dense_products(record_property):
    rng = np.random.default_rng(101)
    worst, t0 = 0.0, time.perf_counter()
    for _ in range(INSTANCES):
        C, S, per, tp = random_instance(rng)
        k0 = np.arange(1, C + 1)
        for s in range(S + 1):
            dense = dense_cumulative(per, C, s)[:, :C].T        # row k0-1 = column of q(.|k0)
            worst = max(worst, float(np.abs(cumulative_forward(k0, s, tp) - dense).max()))
    elapsed = time.perf_counter() - t0
    detail(record_property, f"max |diff| {worst:.2e} over {INSTANCES} schedules in {elapsed:.2f}s")
    assert worst <= 1e-10
    assert elapsed < 10


@pytest.mark.criterion(2)
def test_posterior_matches_dense_bayes(record_property):
    rng = np.random.default_rng(202)
    worst, worst_norm, checked, t0 = 0.0, 0.0, 0, time.perf_counter()
    for _ in range(INSTANCES):
        C, S, per, tp = random_instance(rng)
        ks_grid, k0_grid = np.meshgrid(np.arange(1, C + 2), np.arange(1, C + 1), indexing="ij")
        prev = np.eye(C + 1)
        for s in range(1, S + 1):
            step = dense_step_matrix(*per[s - 1], C)
            # joint[k_s, k_{s-1}, k_0] = M_s[k_s, k_{s-1}] * Mbar_{s-1}[k_{s-1}, k_0]
            joint = step[:, :, None] * prev[None, :, :C]
            reach = joint.sum(axis=1)                          # (C+1, C): q(k_s | k_0)
            ok = reach > 0
            oracle = joint / np.where(ok, reach, 1.0)[:, None, :]
            got = np.exp(log_posterior(ks_grid[ok], k0_grid[ok], s, tp))
            ref = np.moveaxis(oracle, 1, -1)[ok]
            worst = max(worst, float(np.abs(got - ref).max()))
            worst_norm = max(worst_norm, float(np.abs(got.sum(-1) - 1).max()))
            checked += int(ok.sum())
            prev = step @ prev
    elapsed = time.perf_counter() - t0
    detail(record_property, f"max |diff| {worst:.2e}, max |sum-1| {worst_norm:.2e} "
                            f"over {checked} posteriors in {elapsed:.2f}s")
    assert worst <= 1e-10 and worst_norm <= 1e-10
    assert elapsed < 10


@pytest.mark.criterion(3)
def test_chapman_kolmogorov_cases(record_property):
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(PROPERTY_CASES):
        C, S, per, tp = random_instance(rng)
        s = int(rng.integers(0, S + 1))
        t = int(rng.integers(0, s + 1))
        k0 = int(rng.integers(1, C + 1))
        hop = transition_matrix(tp, s, t) if s > t else np.eye(C + 1)
        lhs = hop @ cumulative_forward(k0, t, tp)
        worst = max(worst, float(np.abs(lhs - cumulative_forward(k0, s, tp)).max()))
    detail(record_property, f"Chapman-Kolmogorov max |diff| {worst:.2e} on {PROPERTY_CASES} cases")
    assert worst <= 1e-10


@pytest.mark.criterion(3)
def test_column_stochastic_cases(record_property):
    rng = np.random.default_rng(304)
    worst = 0.0
    for _ in range(PROPERTY_CASES):
        C, S, per, tp = random_instance(rng)
        s = int(rng.integers(1, S + 1))
        t = int(rng.integers(0, s))
        m = transition_matrix(tp, s, t)
        assert np.all(m >= 0)
        assert m[C, C] == 1.0 and np.all(m[:C, C] == 0)
        worst = max(worst, float(np.abs(m.sum(axis=0) - 1).max()))
    detail(record_property, f"column sums max |diff| {worst:.2e} on {PROPERTY_CASES} cases")
    assert worst <= 1e-10


# ---- 4: FSQ bijection --------------------------------------------------------------------
@pytest.mark.criterion(4)
@pytest.mark.parametrize("levels", [[3, 3], [5, 3], [7, 5, 5, 5, 5]])
def test_fsq_index_code_bijection(levels, record_property):
    fsq = FSQConfig(tuple(levels))
    size = int(np.prod(levels))
    if size <= 100:
        idx = np.arange(1, size + 1)
        codes = index_to_code(idx, fsq)
        distinct = len({tuple(c) for c in codes.tolist()})
        assert distinct == size
    else:
        idx = np.random.default_rng(404).integers(1, size + 1, size=10_000)
    mismatches = int(np.sum(code_to_index(index_to_code(idx, fsq), fsq) != idx))
    detail(record_property, f"levels {levels}: {mismatches} mismatches on {idx.size} indices")
    assert fsq.codebook_size == size
    assert mismatches == 0


# ---- 5: gradient integrity ---------------------------------------------------------------
def _t(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _primitive_cases():
    rng = np.random.default_rng(505)
    w = rng.normal(size=(3, 4))
    cases = {
        "add": (lambda p: sum_((p["a"] + p["b"]) * w), {"a": _t(rng, 3, 4), "b": _t(rng, 1, 4)}),
        "sub": (lambda p: sum_((p["a"] - p["b"]) * w), {"a": _t(rng, 3, 4), "b": _t(rng, 3, 1)}),
        "mul": (lambda p: sum_(p["a"] * p["b"] * w), {"a": _t(rng, 3, 4), "b": _t(rng, 3, 4)}),
        "div": (lambda p: sum_(p["a"] / (p["b"] * p["b"] + 1.0) * w), {"a": _t(rng, 3, 4), "b": _t(rng, 3, 4)}),
        "pow": (lambda p: sum_((p["a"] * p["a"] + 1.0) ** 1.5 * w), {"a": _t(rng, 3, 4)}),
        "exp": (lambda p: sum_(exp(p["a"] * 0.5) * w), {"a": _t(rng, 3, 4)}),
        "log": (lambda p: sum_(log(p["a"] * p["a"] + 1.0) * w), {"a": _t(rng, 3, 4)}),
        "tanh": (lambda p: sum_(tanh(p["a"]) * w), {"a": _t(rng, 3, 4)}),
        "gelu": (lambda p: sum_(gelu(p["a"]) * w), {"a": _t(rng, 3, 4)}),
        "softmax": (lambda p: sum_(softmax(p["a"], axis=-1) * w), {"a": _t(rng, 3, 4)}),
        "log_softmax": (lambda p: sum_(log_softmax(p["a"], axis=-1) * w), {"a": _t(rng, 3, 4)}),
        "logsumexp": (lambda p: sum_(logsumexp(p["a"], axis=-1) * w[:, 0]), {"a": _t(rng, 3, 4)}),
        "logaddexp": (lambda p: sum_(logaddexp(p["a"], p["b"]) * w), {"a": _t(rng, 3, 4), "b": _t(rng, 3, 4)}),
        "mean": (lambda p: sum_(mean(p["a"], axis=0) * w[0]), {"a": _t(rng, 3, 4)}),
        "reshape": (lambda p: sum_(reshape(p["a"], (4, 3)) * w.T), {"a": _t(rng, 3, 4)}),
        "transpose": (lambda p: sum_(transpose(p["a"]) * w.T), {"a": _t(rng, 3, 4)}),
        "swapaxes": (lambda p: sum_(swapaxes(p["a"], 0, 1) * w.T), {"a": _t(rng, 3, 4)}),
        "getitem": (lambda p: sum_(getitem(p["a"], (slice(None), 1)) * w[:, 0]), {"a": _t(rng, 3, 4)}),
        "concat": (lambda p: sum_(concat([p["a"], p["b"]], axis=-1) * np.ones((3, 6))),
                   {"a": _t(rng, 3, 4), "b": _t(rng, 3, 2)}),
        "matmul": (lambda p: sum_(matmul(p["a"], p["b"]) * w[:, :2]), {"a": _t(rng, 3, 5), "b": _t(rng, 5, 2)}),
        "linear": (lambda p: sum_(linear(p["x"], p["w"], p["b"]) * w),
                   {"x": _t(rng, 3, 5), "w": _t(rng, 5, 4), "b": _t(rng, 4)}),
        "layer_norm": (lambda p: sum_(layer_norm(p["x"], p["g"], p["b"]) * w),
                       {"x": _t(rng, 3, 4), "g": _t(rng, 4), "b": _t(rng, 4)}),
        "embedding": (lambda p: sum_(embedding_lookup(p["tab"], np.array([[0, 3], [3, 1]])) * rng_w),
                      {"tab": _t(rng, 5, 3)}),
        "joint_shift": (lambda p: sum_(joint_shift(p["x"], 3) * w_js), {"x": _t(rng, 2, 6, 9)}),
    }
    rng_w = rng.normal(size=(2, 2, 3))
    w_js = rng.normal(size=(2, 6, 9))

    att = init_attention(rng, 8, "att")
    att.update(q_src=_t(rng, 2, 3, 8), kv_src=_t(rng, 2, 5, 8))
    w_att = rng.normal(size=(2, 3, 8))
    cases["attention"] = (lambda p: sum_(multi_head_attention(p["q_src"], p["kv_src"], p, "att", heads=2) * w_att),
                          att)

    blk = _init_block(rng, "b", 6, 2)
    blk["x"] = _t(rng, 2, 5, 6)
    w_blk = rng.normal(size=(2, 5, 6))
    cases["local_mlp_block"] = (lambda p: sum_(local_mlp_block(p["x"], p, "b", 3) * w_blk), blk)

    tp = TransitionParams(variant_schedule("both", 9, 5))
    ks = np.array([[6, 2, 3], [1, 6, 5]])
    w_mix = rng.normal(size=(2, 3, 6))
    cases["reverse_mixture"] = (
        lambda p: sum_(log_p_theta_step(log_softmax(p["x"]), ks, np.array([9, 4]), tp, np.array([6, 3])) * w_mix),
        {"x": _t(rng, 2, 3, 5)})
    return cases


@pytest.mark.criterion(5)
def test_every_primitive_passes_finite_differences(record_property):
    errors = {name: grad_check(fn, point, h=1e-5) for name, (fn, point) in _primitive_cases().items()}
    worst = max(errors, key=errors.get)
    detail(record_property, f"{len(errors)} primitives, worst {worst} rel err {errors[worst]:.1e}")
    assert errors[worst] < GRAD_TOL, errors


@pytest.mark.criterion(5)
def test_full_losses_pass_finite_differences(record_property):
    rng = np.random.default_rng(506)
    codec_cfg = CodecConfig(levels=(5, 3, 3), tokens=4, enc_width=12, dec_width=12,
                            enc_blocks=1, dec_blocks=1)
    codec = CodecParams.init(codec_cfg, rng)
    poses = generate_dataset(h36m_skeleton(), 3, 6).coords
    codec_err = grad_check(lambda p: reconstruction_loss(codec, poses, quantize=False), codec.params,
                           max_coords=8)

    C, S = 7, 10
    tp = TransitionParams(variant_schedule("both", S, C))
    dcfg = DenoiserConfig(codebook_size=C, tokens=4, steps=S, width=8, heads=2, blocks=1,
                          cond_tokens=3, cond_hidden=10, ff_ratio=2)
    dp = DenoiserParams.init(dcfg, rng)
    ds = generate_dataset(h36m_skeleton(), 2, 7)
    feats = dataset_features(ds, 1000.0)
    k0 = rng.integers(1, C + 1, size=(2, 4))
    s = np.array([3, 9])
    ks = sample_forward(k0, s, tp, rng)

    def denoiser_loss(p):
        return total_from_log_f(denoise_log_probs(ks, s, feats, dp), k0, ks, s, tp, LossWeights(0.3))[0]

    den_err = grad_check(denoiser_loss, dp.params, max_coords=6)
    detail(record_property, f"codec loss rel err {codec_err:.1e}, denoiser loss rel err {den_err:.1e}")
    assert codec_err < GRAD_TOL and den_err < GRAD_TOL


@pytest.mark.criterion(5)
def test_corrupted_backward_rule_is_caught(record_property):
    def bad_tanh(a):
        y = np.tanh(a.data)
        return make_op(y, (a,), lambda g: (g * (1 - y),), "bad_tanh")     # should be 1 - y**2

    x = Tensor(np.random.default_rng(507).normal(size=(3, 4)), requires_grad=True)
    err = grad_check(lambda t: sum_(bad_tanh(t)), x)
    detail(record_property, f"negative control rel err {err:.2f}")
    assert err > GRAD_TOL


# ---- 6: forward-process statistics -------------------------------------------------------
@pytest.mark.criterion(6)
def test_occ_fraction_at_final_step(record_property):
    C, S, draws = 4375, 100, 200_000
    tp = TransitionParams(variant_schedule("both", S, C, alpha_end=0.0, gamma_end=0.9))
    k0 = np.random.default_rng(606).integers(1, C + 1, size=draws)
    ks = sample_forward(k0, S, tp, np.random.default_rng(607))
    frac = float(np.mean(ks == C + 1))
    detail(record_property, f"Occ fraction {frac:.4f} over {draws} draws")
    assert 0.89 <= frac <= 0.91


# ---- desk corpus shared by 7-10 ----------------------------------------------------------
@pytest.fixture(scope="session")
def desk():
    sk = h36m_skeleton()
    train = generate_dataset(sk, DESK_TRAIN, DESK_SEED, "train")
    test = generate_dataset(sk, DESK_TEST, DESK_SEED + 1, "test")
    codec = CodecParams.init(CodecConfig(), np.random.default_rng(np.random.SeedSequence([DESK_SEED, 3])))
    t0 = time.perf_counter()
    codec, _, log = train_codec(train, codec, CodecTrainConfig())
    elapsed = time.perf_counter() - t0
    rec = decode_pose(encode_tokens(test.coords, codec)[0], codec)
    mean_pose = train.coords - train.coords[:, :1]
    baseline = float(np.mean(mpjpe(np.broadcast_to(mean_pose.mean(0), test.coords.shape), test.coords)))
    return {"train": train, "test": test, "codec": codec, "codec_seconds": elapsed,
            "codec_mpjpe": float(np.mean(mpjpe(rec, test.coords))), "baseline": baseline}


@pytest.mark.slow
@pytest.mark.criterion(7)
def test_codec_beats_mean_pose_baseline(desk, record_property):
    ratio = desk["codec_mpjpe"] / desk["baseline"]
    detail(record_property, f"held-out MPJPE {desk['codec_mpjpe']:.1f} mm vs mean-pose {desk['baseline']:.1f} mm "
                            f"(ratio {ratio:.2f}), trained in {desk['codec_seconds']:.0f}s")
    assert ratio <= 0.5
    assert desk["codec_seconds"] < FIFTEEN_MIN


@pytest.mark.slow
@pytest.mark.criterion(7)
def test_codec_memorises_one_pose(record_property):
    pose = generate_dataset(h36m_skeleton(), 1, 77).coords
    codec = CodecParams.init(CodecConfig(), np.random.default_rng(8))
    t0 = time.perf_counter()
    codec, _, _ = train_codec(pose, codec, CodecTrainConfig(epochs=MEMO_CODEC_STEPS, lr=1e-2, weight_decay=0.0))
    err = float(mpjpe(decode_pose(encode_tokens(pose, codec)[0], codec), pose)[0])
    detail(record_property, f"single-pose MPJPE {err:.3f} mm after {MEMO_CODEC_STEPS} steps "
                            f"({time.perf_counter() - t0:.0f}s)")
    assert err < 1.0


# ---- 8: diffusion memorisation -----------------------------------------------------------
def desk_denoiser(codec, tp, seed):
    cfg = DenoiserConfig(codebook_size=codec.config.fsq.codebook_size, tokens=codec.config.tokens,
                         steps=tp.steps)
    return DenoiserParams.init(cfg, np.random.default_rng(np.random.SeedSequence([seed, 5])))


@pytest.mark.slow
@pytest.mark.criterion(8)
def test_diffusion_memorises_eight_poses(desk, record_property):
    codec = desk["codec"]
    ds = generate_dataset(h36m_skeleton(), MEMO_POSES, 88, "train")
    tokens, feats = tokenize_dataset(ds, codec), dataset_features(ds, 1000.0)
    tp = TransitionParams(variant_schedule("both", 100, codec.config.fsq.codebook_size))
    t0 = time.perf_counter()
    dp, _, _ = train_diffusion(tokens, feats, desk_denoiser(codec, tp, 0), tp, MEMO_TRAIN)
    pred = infer_tokens(feats, dp, tp, init_mode="all-occ", rng=np.random.default_rng(0))
    elapsed = time.perf_counter() - t0
    acc = float(np.mean(pred == tokens))
    err = float(np.mean(mpjpe(decode_pose(pred, codec), ds.coords)))
    rec = float(np.mean(mpjpe(decode_pose(tokens, codec), ds.coords)))
    detail(record_property, f"token accuracy {acc:.3f}, decoded MPJPE {err:.1f} mm vs codec {rec:.1f} mm, "
                            f"{elapsed:.0f}s")
    assert acc >= 0.9
    assert err < 2 * rec
    assert elapsed < FIFTEEN_MIN


# ---- 9-10: desk-corpus ablation ----------------------------------------------------------
@pytest.fixture(scope="session")
def ablation(desk):
    train, test = desk["train"], desk["test"]
    codec = CodecParams.init(CodecConfig(levels=ABLATION_LEVELS),
                             np.random.default_rng(np.random.SeedSequence([DESK_SEED, 3])))
    codec, _, _ = train_codec(train, codec, CodecTrainConfig(epochs=ABLATION_CODEC_EPOCHS))
    tokens, feats = tokenize_dataset(train, codec), dataset_features(train, 1000.0)
    held = slice(0, ABLATION_TEST)
    test_feats = dataset_features(test, 1000.0)[held]
    gt = test.coords[held]
    table, models = [], {}
    for seed in ABLATION_SEEDS:
        for variant in ("occlude", "replace", "both"):
            tp = TransitionParams(variant_schedule(variant, 100, codec.config.fsq.codebook_size))
            cfg = dataclasses.replace(ABLATION_TRAIN, seed=seed)
            dp, _, _ = train_diffusion(tokens, feats, desk_denoiser(codec, tp, seed), tp, cfg)
            pred = infer_tokens(test_feats, dp, tp, rng=np.random.default_rng(np.random.SeedSequence([seed, 13])))
            table.append({"variant": variant, "seed": seed,
                          "mpjpe": float(np.mean(mpjpe(decode_pose(pred, codec), gt)))})
            models[variant, seed] = (dp, tp)
    rec = float(np.mean(mpjpe(decode_pose(encode_tokens(gt, codec)[0], codec), gt)))
    return {"table": table, "models": models, "feats": test_feats, "gt": gt, "codec": codec,
            "codec_mpjpe": rec}


@pytest.mark.slow
@pytest.mark.criterion(9)
def test_both_mechanisms_trend(desk, ablation, record_property):
    means = {v: float(np.mean([r["mpjpe"] for r in ablation["table"] if r["variant"] == v]))
             for v in ("occlude", "replace", "both")}
    text = ", ".join(f"{v} {m:.1f} mm" for v, m in means.items())
    holds = all(means["both"] <= 1.1 * means[v] for v in ("occlude", "replace"))
    if not holds:
        warnings.warn("ablation trend violated (both > single mechanism + 10%):\n"
                      + json.dumps(ablation["table"], indent=1))
    detail(record_property, f"{'trend holds' if holds else 'WARNING trend violated'}: {text} "
                            f"(mean over seeds {list(ABLATION_SEEDS)}; codec floor {ablation['codec_mpjpe']:.1f} mm, "
                            f"mean-pose {desk['baseline']:.1f} mm)")


@pytest.mark.slow
@pytest.mark.criterion(10)
def test_quarter_steps_degrade_at_most_25_percent(ablation, record_property):
    dp, tp = ablation["models"]["both", ABLATION_SEEDS[0]]
    full = next(r["mpjpe"] for r in ablation["table"] if r["variant"] == "both" and r["seed"] == ABLATION_SEEDS[0])
    pred = infer_tokens(ablation["feats"], dp, tp, steps_used=tp.steps // 4,
                         rng=np.random.default_rng(np.random.SeedSequence([ABLATION_SEEDS[0], 13])))
    quarter = float(np.mean(mpjpe(decode_pose(pred, ablation["codec"]), ablation["gt"])))
    rel = quarter / full - 1
    detail(record_property, f"S/4 = {tp.steps // 4} steps: {quarter:.1f} mm vs {full:.1f} mm ({rel:+.1%})")
    assert rel <= 0.25


# ---- 11: CLI determinism -----------------------------------------------------------------
@pytest.mark.criterion(11)
def test_cli_double_execution(tmp_path, record_property):
    from test_cli import TINY, _run_all

    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    first, second = _run_all(tmp_path / "a", cfg), _run_all(tmp_path / "b", cfg)
    differing = sorted(str(k) for k in first if first[k] != second.get(k))
    detail(record_property, f"{len(first)} output files across 6 commands, {len(differing)} differ")
    assert first.keys() == second.keys()
    assert not differing, differing
