"""Run configuration: a sectioned YAML/JSON file plus flag overrides.

Unknown sections or keys are rejected outright; every run echoes its fully
resolved configuration next to its outputs so results stay reproducible.
"""

import json
import os

import yaml

from .model import ModelConfig
from .training import OptimizerConfig, TrainSchedule


class ConfigError(Exception):
    pass


_DEFAULTS = {
    "corpus": {
        "paired_path": None,
        "unpaired_path": None,
        "hanja_min_count": 10,
        "korean_vocab_size": 24000,
        "korean_piece_target": 200,
        "test_size": 50,
        "length_bounds_hanja": [4, 350],
        "length_bounds_korean": [4, 300],
    },
    "model": {f: getattr(ModelConfig, f) for f in (
        "d_emb", "d_model", "d_ffn", "n_heads",
        "layers_shared", "layers_restore", "layers_decoder",
        "max_len_hanja", "max_len_korean",
        "vocab_hanja", "vocab_korean", "sharing_policy", "dropout",
    )},
    "optimizer": {
        "lr": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "trust_clip": [0.01, 10.0],
        "accumulation_steps": 1,
        "warmup_frac": 0.06,
        "decay": "none",
        "min_lr_frac": 0.05,
    },
    "schedule": {
        "mode": "multitask",
        "total_steps": 1000,
        "batch_size": 16,
        "interleave": [1, 1],
        "eval_cadence": 200,
        "checkpoint_cadence": 0,
        "seed": 0,
        "mask_rate": 0.15,
        "pretrain_frac": 0.5,
    },
    "decode": {
        "beam_size": 3,
        "alpha": 0.6,
        "max_len": 300,
    },
    "topics": {
        "k": 20,
        "alpha": 0.1,
        "max_iter": 500,
        "tol": 1e-6,
        "seed": 0,
        "weighting": "raw",
        "granularity": "month",
        "window": 5,
        "top_n": 10,
        "min_term_count": 1,
    },
    "serve": {
        "host": "127.0.0.1",
        "port": 8040,
        "checkpoint": None,
        "hanja_vocab": None,
        "korean_vocab": None,
        "store_path": "sessions.db",
        "default_k": 10,
        "beam_size": 3,
        "alpha": 0.6,
        "ui_dir": None,
    },
}


def default_config():
    return {s: dict(kv) for s, kv in _DEFAULTS.items()}


def load_config(path=None, overrides=None):
    """Merge file values and `section.key=value` overrides onto defaults."""
    cfg = default_config()
    if path:
        with open(path, encoding="utf-8") as f:
            loaded = yaml.safe_load(f) or {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping of sections")
        for section, values in loaded.items():
            if section not in cfg:
                raise ConfigError(f"{path}: unknown section {section!r}")
            if not isinstance(values, dict):
                raise ConfigError(f"{path}: section {section!r} must be a mapping")
            for key, value in values.items():
                if key not in cfg[section]:
                    raise ConfigError(f"{path}: unknown key {section}.{key}")
                cfg[section][key] = value
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        target, raw = item.split("=", 1)
        section, key = target.split(".", 1)
        if section not in cfg or key not in cfg[section]:
            raise ConfigError(f"unknown override target {target!r}")
        cfg[section][key] = yaml.safe_load(raw)
    return cfg


def model_config(cfg):
    return ModelConfig(**cfg["model"])


def optimizer_config(cfg):
    values = dict(cfg["optimizer"])
    values["trust_clip"] = tuple(values["trust_clip"])
    return OptimizerConfig(**values)


def train_schedule(cfg):
    values = dict(cfg["schedule"])
    values["interleave"] = tuple(values["interleave"])
    return TrainSchedule(**values)


def echo_config(cfg, run_dir):
    """Write the resolved configuration into the run directory."""
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, "effective_config.yaml")
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(cfg, f, sort_keys=True, allow_unicode=True)
    return path


def run_root():
    return os.environ.get("HANMT_RUN_ROOT", "runs")


def resolve_run_dir(name=None, explicit=None):
    if explicit:
        return explicit
    return os.path.join(run_root(), name or "default")


def dump_json(path, payload):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2)
    return path
