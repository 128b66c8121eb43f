"""Run configuration files: JSON schema, strict validation, defaulting.

Unknown keys are rejected by name. The fully defaulted ("effective")
config is echoed into the output directory so a run can be reproduced by
feeding the echo back in.
"""

from __future__ import annotations

import copy
import json
import os

from .backbone import BackboneSpec, RkanSettings, StageSpec, build
from .data import SyntheticConfig, generate_synthetic, load_cifar10, load_cifar100
from .errors import ConfigError
from .training import TrainConfig

DEFAULTS = {
    "model": {
        "stem_channels": 16,
        "stage_channels": [16, 32, 64, 128],
        "stage_blocks": [2, 2, 2, 2],
        "stage_strides": [1, 2, 2, 2],
        "num_classes": 3,
        "channel_affine": False,
    },
    "rkan": {
        "enabled": False,
        "stages": [4],
        "reduce_factor": 2,
        "basis": "chebyshev",
        "degrees": [3, 2],
        "rbf_centers": [-1.0, 0.0, 1.0],
        "rbf_width": 1.0,
        "zero_init_expand": False,
    },
    "train": {
        "epochs": 30,
        "batch_size": 32,
        "base_lr": 0.005,
        "peak_lr": 0.05,
        "final_lr": 1e-5,
        "warmup_epochs": 10,
        "momentum": 0.9,
        "weight_decay": 5e-4,
        "seed": 0,
    },
    "data": {
        "source": "synthetic",
        "path": None,
        "classes": 3,
        "per_class": 100,
        "val_per_class": 50,
        "noise_sigma": 8.0,
        "image_hw": 32,
        "seed": 7,
        "flip": True,
    },
    "output": {"dir": "runs/out"},
}


def _merge(defaults, user, path=""):
    merged = copy.deepcopy(defaults)
    for key, value in user.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            merged[key] = _merge(defaults[key], value, where)
        else:
            merged[key] = value
    return merged


def effective_config(user):
    """Validate a parsed config object and fill in every default."""
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    return _merge(DEFAULTS, user)


def load_config(path):
    with open(path) as f:
        try:
            user = json.load(f)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from err
    return effective_config(user)


def write_effective_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "effective_config.json")
    with open(path, "w") as f:
        json.dump(cfg, f, indent=2)
        f.write("\n")
    return path


def spec_from_config(cfg, rkan_enabled=None):
    """Backbone spec from the model/rkan sections.

    ``rkan_enabled`` overrides the config's flag (the params command builds
    both the baseline and the augmented model from one config).
    """
    m, r = cfg["model"], cfg["rkan"]
    if not (len(m["stage_channels"]) == len(m["stage_blocks"])
            == len(m["stage_strides"]) == 4):
        raise ConfigError(
            "model.stage_channels/stage_blocks/stage_strides must have 4 entries")
    stages = tuple(
        StageSpec(c, b, s) for c, b, s in
        zip(m["stage_channels"], m["stage_blocks"], m["stage_strides"]))
    enabled = r["enabled"] if rkan_enabled is None else rkan_enabled
    return BackboneSpec(
        stem_channels=m["stem_channels"],
        stages=stages,
        num_classes=m["num_classes"],
        channel_affine=m["channel_affine"],
        rkan_stages=tuple(r["stages"]) if enabled else (),
        rkan=RkanSettings(
            reduce_factor=r["reduce_factor"],
            basis=r["basis"],
            degrees=tuple(r["degrees"]),
            rbf_centers=tuple(r["rbf_centers"]),
            rbf_width=r["rbf_width"],
            zero_init_expand=r["zero_init_expand"],
        ),
    )


def train_config_from_config(cfg):
    return TrainConfig(**cfg["train"])


def datasets_from_config(cfg):
    """Materialize (train, val) datasets for the configured source."""
    d = cfg["data"]
    source = d["source"]
    if source == "synthetic":
        train = generate_synthetic(SyntheticConfig(
            classes=d["classes"], per_class=d["per_class"],
            image_hw=d["image_hw"], noise_sigma=d["noise_sigma"],
            seed=d["seed"]))
        val = generate_synthetic(SyntheticConfig(
            classes=d["classes"], per_class=d["val_per_class"],
            image_hw=d["image_hw"], noise_sigma=d["noise_sigma"],
            seed=d["seed"] + 1))
        return train, val
    if d["path"] is None:
        raise ConfigError(f"data.path is required for source {source!r}")
    if not os.path.exists(d["path"]):
        raise ConfigError(f"data.path does not exist: {d['path']}")
    if source == "cifar10":
        return load_cifar10(d["path"], "train"), load_cifar10(d["path"], "test")
    if source == "cifar100":
        return load_cifar100(d["path"], "train"), load_cifar100(d["path"], "test")
    raise ConfigError(f"data.source must be synthetic|cifar10|cifar100, got {source!r}")


def model_from_config(cfg, seed=None, rkan_enabled=None):
    spec = spec_from_config(cfg, rkan_enabled)
    return build(spec, cfg["train"]["seed"] if seed is None else seed)
