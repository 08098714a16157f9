"""Run configuration: one JSON document, validated section by section.

Every section has a fixed key set; unknown keys are rejected with the dotted
path of the offending key.  The config hash is the SHA-256 of the canonical
(sorted, compact) JSON of the fully resolved config.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from ..diffusion import INIT_MODES, MATRIX_VARIANTS, DenoiserConfig, DiffusionTrainConfig, variant_schedule
from ..errors import ConfigError, SchemaError
from ..quantizer import CodecConfig, CodecTrainConfig
from ..skeleton import OccluderSpec

SCHEMA_VERSION = 1

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "data": {"train": 10000, "val": 500, "test": 1000,
             "occluder_sizes": [0.0, 265.0, 530.0], "occluder_probs": [1 / 3, 1 / 3, 1 / 3]},
    "codec": {"levels": [7, 5, 5, 5, 5], "local_joints": 3, "tokens": 16, "enc_width": 120,
              "dec_width": 60, "enc_blocks": 4, "dec_blocks": 1, "mlp_ratio": 2},
    "codec_train": {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "weight_decay": 0.15,
                    "eps": 1e-8, "batch_size": 256, "epochs": 20},
    "schedule": {"steps": 100, "alpha_end": 0.0, "gamma_end": 0.9, "matrix": "both"},
    "denoiser": {"width": 64, "heads": 4, "blocks": 2, "cond_tokens": 4, "cond_hidden": 128,
                 "ff_ratio": 4, "cond_pos": False},
    "diffusion_train": {"lr": 5.5e-4, "beta1": 0.9, "beta2": 0.96, "weight_decay": 0.045,
                        "eps": 1e-8, "batch_size": 64, "steps": 2000, "aux_weight": 5e-4},
    "infer": {"steps_used": None, "init_mode": "auto", "batch": 256},
    "ablate": {"variants": ["occlude", "replace", "both"], "seeds": [0, 1, 2],
               "occ_rates": [], "steps_used": []},
}

_INT_KEYS = {"seed", "train", "val", "test", "local_joints", "tokens", "enc_width", "dec_width",
             "enc_blocks", "dec_blocks", "mlp_ratio", "batch_size", "epochs", "steps", "width",
             "heads", "blocks", "cond_tokens", "cond_hidden", "ff_ratio", "batch",
             "schema_version"}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _check_types(cfg: dict, path: str = ""):
    for key, value in cfg.items():
        where = f"{path}{key}"
        if isinstance(value, dict):
            _check_types(value, where + ".")
        elif key in _INT_KEYS and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"config key {where!r} must be an integer, got {value!r}")


class RunConfig:
    """Resolved config with typed views for each stage."""

    def __init__(self, raw: dict):
        self.raw = raw
        _check_types(raw)
        if raw["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {raw['schema_version']}")
        d = raw["data"]
        for split in ("train", "val", "test"):
            if d[split] < 0:
                raise ConfigError(f"data.{split} must be >= 0")
        try:
            self.occluder = OccluderSpec(tuple(d["occluder_sizes"]), tuple(d["occluder_probs"]))
        except (SchemaError, ValueError, TypeError) as exc:
            raise ConfigError(f"data occluder: {exc}") from None
        try:
            self.codec = CodecConfig(**raw["codec"])
            self.codec_train = CodecTrainConfig(seed=raw["seed"], **raw["codec_train"])
            self.diffusion_train = DiffusionTrainConfig(seed=raw["seed"], **raw["diffusion_train"])
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        if self.codec_train.epochs < 0 or self.diffusion_train.steps < 0:
            raise ConfigError("training lengths must be >= 0")
        if self.codec_train.batch_size < 1 or self.diffusion_train.batch_size < 1:
            raise ConfigError("batch sizes must be positive")
        sch = raw["schedule"]
        if sch["matrix"] not in MATRIX_VARIANTS:
            raise ConfigError(f"schedule.matrix must be one of {MATRIX_VARIANTS}, got {sch['matrix']!r}")
        self.schedule()  # validates feasibility
        self.denoiser = DenoiserConfig(codebook_size=self.codec.fsq.codebook_size,
                                       tokens=self.codec.tokens, steps=sch["steps"],
                                       joints=self.codec.joints, **raw["denoiser"])
        inf = raw["infer"]
        if inf["init_mode"] not in INIT_MODES:
            raise ConfigError(f"infer.init_mode must be one of {INIT_MODES}")
        used = inf["steps_used"]
        if used is not None and (isinstance(used, bool) or not isinstance(used, int)
                                 or not 1 <= used <= sch["steps"]):
            raise ConfigError(f"infer.steps_used must be null or an integer in 1..{sch['steps']}")
        ab = raw["ablate"]
        for v in ab["variants"]:
            if v not in MATRIX_VARIANTS:
                raise ConfigError(f"ablate.variants entry {v!r} not in {MATRIX_VARIANTS}")
        if not all(isinstance(s, int) for s in ab["seeds"]):
            raise ConfigError("ablate.seeds must be integers")

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    def schedule(self, matrix: str | None = None, gamma_end: float | None = None):
        sch = self.raw["schedule"]
        return variant_schedule(matrix or sch["matrix"], sch["steps"],
                                self.codec.fsq.codebook_size, sch["alpha_end"],
                                sch["gamma_end"] if gamma_end is None else gamma_end)

    def hash(self) -> str:
        return config_hash(self.raw)

    def data_hash(self) -> str:
        return config_hash({"seed": self.raw["seed"], "data": self.raw["data"]})

    def with_overrides(self, **changes) -> "RunConfig":
        raw = copy.deepcopy(self.raw)
        for dotted, value in changes.items():
            node = raw
            *parents, leaf = dotted.split(".")
            for p in parents:
                node = node[p]
            if leaf not in node:
                raise ConfigError(f"unknown config key {dotted!r}")
            node[leaf] = value
        return RunConfig(raw)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file at ``path``, then dotted-key ``overrides``."""
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc.msg} "
                              f"(line {exc.lineno}, column {exc.colno})") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
    cfg = RunConfig(_merge(DEFAULTS, user))
    if overrides:
        cfg = cfg.with_overrides(**{k: v for k, v in overrides.items() if v is not None})
    return cfg
