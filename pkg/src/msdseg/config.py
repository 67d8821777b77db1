"""JSON run configuration with strict key checking.

Unknown keys are rejected rather than ignored: a silently misspelled toggle
is the main reproducibility hazard in ablation studies. The fully resolved
document (defaults filled, overrides applied) is echoed into the output
directory so any run can be reproduced from its artifacts alone.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .attention import StdConfig
from .backbone import BackboneConfig
from .data import FoldSpec
from .decoder import DecoderConfig
from .errors import ConfigError, ParseError
from .model import Ablation, ModelConfig
from .training import TrainConfig

CONFIG_VERSION = 1

DEFAULTS: dict = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "backbone": {
        "in_channels": 3,
        "stem_channels": 16,
        "stage_channels": [32, 48, 64],
        "feature_res": 8,
        "merged_channels": 64,
        "frozen": True,
    },
    "decoder": {
        "stage_channels": [64, 48, 32],
        "blocks_per_stage": 3,
    },
    "std": {
        "model_dim": 64,
        "heads": 4,
        "out_dim": 32,
    },
    "ablation": {
        "use_cmgm": True,
        "use_std": True,
        "use_msd": True,
    },
    "train": {
        "lr": 1e-3,
        "episodes_per_epoch": 200,
        "epochs": 10,
        "k_shot": 1,
        "batch_episodes": 4,
        "seed": None,  # falls back to the top-level seed
    },
    "eval": {
        "episodes": 200,
        "seeds": [0, 1, 2],
    },
    "fold": {
        "fold_id": 0,
        "n_folds": 4,
    },
    "dataset": {
        "manifest": "",
    },
    "out_dir": "runs/default",
}


def _merge_strict(defaults: dict, overrides: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, value in overrides.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key: {where!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge_strict(defaults[key], value, where)
        else:
            out[key] = value
    return out


def resolve_config(doc: dict) -> dict:
    resolved = _merge_strict(DEFAULTS, doc)
    if resolved["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {resolved['version']}, expected {CONFIG_VERSION}")
    if resolved["train"]["seed"] is None:
        resolved["train"]["seed"] = resolved["seed"]
    return resolved


def load_config(path: str | Path, overrides: dict | None = None, env_seed: str | None = None) -> dict:
    """Load, merge CLI overrides (dotted keys) and the MSDNET_SEED override."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON: {e}", offset=e.pos) from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top-level config must be a JSON object")
    if env_seed is not None:
        doc["seed"] = int(env_seed)
        doc.setdefault("train", {})
        if isinstance(doc["train"], dict):
            doc["train"].setdefault("seed", int(env_seed))
    for dotted, value in (overrides or {}).items():
        node = doc
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return resolve_config(doc)


def echo_config(resolved: dict, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "resolved_config.json"
    target.write_text(json.dumps(resolved, indent=2, sort_keys=True))
    return target


def model_config(resolved: dict) -> ModelConfig:
    bb = resolved["backbone"]
    dec = resolved["decoder"]
    std = resolved["std"]
    abl = resolved["ablation"]
    return ModelConfig(
        backbone=BackboneConfig(
            in_channels=int(bb["in_channels"]),
            stem_channels=int(bb["stem_channels"]),
            stage_channels=tuple(int(c) for c in bb["stage_channels"]),
            feature_res=int(bb["feature_res"]),
            merged_channels=int(bb["merged_channels"]),
            frozen=bool(bb["frozen"]),
            seed=int(resolved["seed"]),
        ),
        decoder=DecoderConfig(
            stage_channels=tuple(int(c) for c in dec["stage_channels"]),
            blocks_per_stage=int(dec["blocks_per_stage"]),
            base_res=int(bb["feature_res"]),
        ),
        std=StdConfig(model_dim=int(std["model_dim"]), heads=int(std["heads"]), out_dim=int(std["out_dim"])),
        ablation=Ablation(
            use_cmgm=bool(abl["use_cmgm"]), use_std=bool(abl["use_std"]), use_msd=bool(abl["use_msd"])
        ),
        seed=int(resolved["seed"]),
    )


def train_config(resolved: dict) -> TrainConfig:
    tr = resolved["train"]
    return TrainConfig(
        lr=float(tr["lr"]),
        episodes_per_epoch=int(tr["episodes_per_epoch"]),
        epochs=int(tr["epochs"]),
        k_shot=int(tr["k_shot"]),
        batch_episodes=int(tr["batch_episodes"]),
        seed=int(tr["seed"]),
    )


def fold_spec(resolved: dict) -> FoldSpec:
    f = resolved["fold"]
    return FoldSpec(fold_id=int(f["fold_id"]), n_folds=int(f["n_folds"]))
