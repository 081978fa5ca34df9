"""Experiment configuration: one JSON document with sections
``sde``, ``schedule``, ``model``, ``train``, ``data`` and ``io``."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

from .sde import DEFAULT_LAMBDA_SQ, SdeConfig
from .training import TrainConfig

DEFAULTS = {
    "sde": {"T": 100, "lambda_sq": DEFAULT_LAMBDA_SQ},
    "schedule": {"kind": "cosine", "s_offset": 0.008, "delta": 0.005},
    "model": {"hidden": [256, 256], "embed_dim": 16, "patch": [32], "preconditioned": True,
              "input_shift": 0.5, "input_scale": 10.0},
    "train": {"objective": "max_likelihood", "iterations": 5000, "batch_size": 64, "lr": 1e-4,
              "beta1": 0.9, "beta2": 0.99, "lr_halve_every": 0, "norm": "l1", "eval_every": 100,
              "eval_mode": "sde", "eval_seed": 1234, "seed": 0},
    "data": {"task": "spikes", "n_train": 256, "n_eval": 8, "shape": [64], "master_seed": 0,
             "eval_seed": 99, "params": {}},
    "io": {"snapshot_every": 10, "pgm_maxval": 65535},
}


class ConfigError(ValueError):
    """Invalid or unreadable configuration (CLI exit code 2)."""


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "params":
            out[key] = _merge(out[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        text = Path(path).read_text()
        try:
            user = json.loads(text)
        except json.JSONDecodeError as exc:
            line = text.splitlines()[exc.lineno - 1] if exc.lineno - 1 < len(text.splitlines()) else ""
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}\n    {line}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}")
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def set_dotted(cfg: dict, dotted: str, value) -> None:
    section, _, key = dotted.partition(".")
    cfg.setdefault(section, {})[key] = value


def validate_config(cfg: dict) -> None:
    try:
        sde_config(cfg)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid sde/schedule settings: {exc}") from exc
    if cfg["train"]["norm"] not in ("l1", "l2"):
        raise ConfigError(f"train.norm must be 'l1' or 'l2', got {cfg['train']['norm']!r}")
    if cfg["train"]["lr"] <= 0:
        raise ConfigError("train.lr must be positive")


def sde_config(cfg: dict) -> SdeConfig:
    s, sch = cfg["sde"], cfg["schedule"]
    return SdeConfig.build(lambda_sq=float(s["lambda_sq"]), T=int(s["T"]), delta=float(sch["delta"]),
                           schedule=sch["kind"], s_offset=float(sch["s_offset"]))


def train_config(cfg: dict) -> TrainConfig:
    t, m = cfg["train"], cfg["model"]
    return TrainConfig(iterations=int(t["iterations"]), batch_size=int(t["batch_size"]), lr=float(t["lr"]),
                       beta1=float(t["beta1"]), beta2=float(t["beta2"]), lr_halve_every=int(t["lr_halve_every"]),
                       norm=t["norm"], hidden=tuple(m["hidden"]), embed_dim=int(m["embed_dim"]),
                       patch=tuple(m["patch"]), eval_every=int(t["eval_every"]), eval_mode=t["eval_mode"],
                       eval_seed=int(t["eval_seed"]), preconditioned=bool(m["preconditioned"]),
                       input_shift=float(m["input_shift"]), input_scale=float(m["input_scale"]))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]
