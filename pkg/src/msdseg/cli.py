"""Command-line harness: synth | train | eval | ablate.

Every command is deterministic given (config, seeds); outputs are rewritten
identically on rerun. MSDNET_SEED overrides the config seed. Exit codes:
0 ok, 1 usage, 2 IO/parse, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import echo_config, fold_spec, load_config, model_config, train_config
from .data import FoldSpec, SynthConfig, exclude_classes, fold_split, load_manifest, synth_generate
from .errors import (
    ArgumentError,
    ConfigError,
    DimensionError,
    NumericError,
    ParseError,
    ProtocolError,
    SamplingError,
)
from .metrics import MetricsReport
from .model import build_model
from .params import checkpoint_load, checkpoint_save, param_count
from .training import evaluate, train

REPORT_VERSION = 1

ABLATION_ROWS = [
    ("baseline", False, False, False),
    ("+CMGM", True, False, False),
    ("+STD", False, True, False),
    ("+MSD", False, False, True),
    ("CMGM+STD", True, True, False),
    ("CMGM+MSD", True, False, True),
    ("STD+MSD", False, True, True),
    ("full", True, True, True),
]


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="msdseg", description="Few-shot segmentation harness")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate the synthetic shapes dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--per-class", type=int, default=40)
    p.add_argument("--side", type=int, default=64)

    p = sub.add_parser("train", help="episodic training on a fold")
    p.add_argument("--config", required=True)
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--kshot", type=int, choices=(1, 5), default=None)
    p.add_argument("--no-cmgm", action="store_true")
    p.add_argument("--no-std", action="store_true")
    p.add_argument("--no-msd", action="store_true")
    p.add_argument("--blocks", type=int, choices=(1, 2, 3, 4), default=None)
    p.add_argument("--out", default=None, help="override out_dir from the config")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.add_argument("--kshot", type=int, choices=(1, 5), default=None)
    p.add_argument("--dump-masks", default=None)
    p.add_argument("--exclude-train-classes", default=None, help="JSON file of class ids to exclude (cross-dataset mode)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)

    p = sub.add_parser("ablate", help="train+evaluate the 8 component combinations")
    p.add_argument("--config", required=True)
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--seeds", default=None, help="comma-separated trial seeds")
    p.add_argument("--out", default=None)
    return parser


def _load_resolved(args, extra_overrides: dict | None = None) -> dict:
    overrides = dict(extra_overrides or {})
    if getattr(args, "fold", None) is not None:
        overrides["fold.fold_id"] = args.fold
    if getattr(args, "kshot", None) is not None:
        overrides["train.k_shot"] = args.kshot
    if getattr(args, "blocks", None) is not None:
        overrides["decoder.blocks_per_stage"] = args.blocks
    if getattr(args, "no_cmgm", False):
        overrides["ablation.use_cmgm"] = False
    if getattr(args, "no_std", False):
        overrides["ablation.use_std"] = False
    if getattr(args, "no_msd", False):
        overrides["ablation.use_msd"] = False
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    if getattr(args, "episodes", None) is not None:
        overrides["eval.episodes"] = args.episodes
    if getattr(args, "seeds", None):
        overrides["eval.seeds"] = [int(s) for s in str(args.seeds).split(",") if s]
    return load_config(args.config, overrides, env_seed=os.environ.get("MSDNET_SEED"))


def _manifest_path(resolved: dict, config_path: str) -> Path:
    raw = resolved["dataset"]["manifest"]
    if not raw:
        raise ConfigError("config dataset.manifest is empty")
    p = Path(raw)
    return p if p.is_absolute() else Path(config_path).parent / p


def _out_dir(resolved: dict, config_path: str) -> Path:
    p = Path(resolved["out_dir"])
    return p if p.is_absolute() else Path(config_path).parent / p


def _report_dict(r: MetricsReport) -> dict:
    return {
        "seed": r.seed,
        "miou": r.miou,
        "fb_iou": r.fb_iou,
        "n_episodes": r.n_episodes,
        "empty_mask_warnings": r.empty_mask_warnings,
        "per_class_iou": {str(c): v for c, v in r.per_class_iou.items()},
        "episodes_per_class": {str(c): v for c, v in r.episodes_per_class.items()},
    }


def cmd_synth(args) -> int:
    env_seed = os.environ.get("MSDNET_SEED")
    seed = int(env_seed) if env_seed is not None else args.seed
    cfg = SynthConfig(n_classes=args.classes, imgs_per_class=args.per_class, side=args.side, seed=seed)
    manifest = synth_generate(args.out, cfg)
    print(f"wrote {len(manifest.entries)} image/mask pairs and manifest.json to {args.out}")
    return 0


def cmd_train(args) -> int:
    resolved = _load_resolved(args)
    out_dir = _out_dir(resolved, args.config)
    echo_config(resolved, out_dir)
    manifest = load_manifest(_manifest_path(resolved, args.config))
    fold = fold_spec(resolved)
    model = build_model(model_config(resolved))
    print(f"training: fold {fold.fold_id}, {param_count(model.state)} trainable parameters", file=sys.stderr)
    lines = train(model, train_config(resolved), manifest, fold)
    (out_dir / "loss.log").write_text("\n".join(lines) + "\n")
    checkpoint_save(model.state, out_dir / "checkpoint.msdn")
    train_ids, _ = fold_split(manifest.n_classes(), fold)
    (out_dir / "trained_classes.json").write_text(json.dumps(train_ids))
    print(f"checkpoint, loss.log and trained_classes.json written to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    resolved = _load_resolved(args)
    out_dir = _out_dir(resolved, args.config)
    echo_config(resolved, out_dir)
    manifest = load_manifest(_manifest_path(resolved, args.config))
    fold = fold_spec(resolved)
    model = build_model(model_config(resolved))
    model.state.load_values(checkpoint_load(args.checkpoint))

    trained_ids = None
    test_override = None
    if args.exclude_train_classes:
        banned = json.loads(Path(args.exclude_train_classes).read_text())
        trained_ids = [int(c) for c in banned]
        manifest = exclude_classes(manifest, set(trained_ids))
        test_override = sorted({e.class_id for e in manifest.entries})
    else:
        sidecar = Path(args.checkpoint).parent / "trained_classes.json"
        if sidecar.exists():
            trained_ids = [int(c) for c in json.loads(sidecar.read_text())]

    k_shot = int(resolved["train"]["k_shot"])
    seeds = [int(s) for s in resolved["eval"]["seeds"]]
    reports, mean = evaluate(
        model,
        manifest,
        fold,
        n_episodes=int(resolved["eval"]["episodes"]),
        k_shot=k_shot,
        seeds=seeds,
        trained_class_ids=trained_ids,
        dump_dir=args.dump_masks,
        test_class_override=test_override,
        jobs=args.jobs,
    )
    doc = {
        "version": REPORT_VERSION,
        "fold": fold.fold_id,
        "k_shot": k_shot,
        "episodes": int(resolved["eval"]["episodes"]),
        "cross_dataset_excluded": sorted(trained_ids) if args.exclude_train_classes else [],
        "seeds": [_report_dict(r) for r in reports],
        "mean": {"miou": mean.miou, "fb_iou": mean.fb_iou},
    }
    (out_dir / "report.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    print(json.dumps({"miou": mean.miou, "fb_iou": mean.fb_iou}, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    resolved = _load_resolved(args)
    out_dir = _out_dir(resolved, args.config)
    echo_config(resolved, out_dir)
    manifest = load_manifest(_manifest_path(resolved, args.config))
    fold = fold_spec(resolved)
    trial_seeds = [int(s) for s in resolved["eval"]["seeds"]]
    n_eval = int(resolved["eval"]["episodes"])

    rows = []
    for label, use_cmgm, use_std, use_msd in ABLATION_ROWS:
        per_seed = []
        for seed in trial_seeds:
            trial = json.loads(json.dumps(resolved))  # deep copy
            trial["ablation"] = {"use_cmgm": use_cmgm, "use_std": use_std, "use_msd": use_msd}
            trial["seed"] = seed
            trial["train"]["seed"] = seed
            model = build_model(model_config(trial))
            train(model, train_config(trial), manifest, fold)
            reports, mean = evaluate(model, manifest, fold, n_eval, int(trial["train"]["k_shot"]), [seed])
            per_seed.append({"seed": seed, "miou": reports[0].miou, "fb_iou": reports[0].fb_iou})
            print(f"[ablate] {label:10s} seed {seed}: mIoU {reports[0].miou:.4f}", file=sys.stderr)
        rows.append(
            {
                "label": label,
                "cmgm": use_cmgm,
                "std": use_std,
                "msd": use_msd,
                "miou": float(np.mean([r["miou"] for r in per_seed])),
                "fb_iou": float(np.mean([r["fb_iou"] for r in per_seed])),
                "per_seed": per_seed,
            }
        )

    header = f"{'variant':12s} {'CMGM':5s} {'STD':4s} {'MSD':4s} {'mIoU':>8s} {'FB-IoU':>8s}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row['label']:12s} {'x' if row['cmgm'] else ' ':5s} {'x' if row['std'] else ' ':4s} "
            f"{'x' if row['msd'] else ' ':4s} {row['miou']:8.4f} {row['fb_iou']:8.4f}"
        )
    table = "\n".join(lines)
    (out_dir / "ablation.txt").write_text(table + "\n")
    (out_dir / "ablation.json").write_text(
        json.dumps({"version": REPORT_VERSION, "rows": rows}, indent=2, sort_keys=True)
    )
    print(table)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}
    try:
        return handlers[args.command](args)
    except NumericError as e:
        print(f"msdseg: numeric failure: {e}", file=sys.stderr)
        return 3
    except (ParseError, ConfigError, DimensionError, ProtocolError, SamplingError, ArgumentError, OSError, json.JSONDecodeError) as e:
        print(f"msdseg: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
