"""Episodic Adam training and evaluation protocol.

Training samples batches of episodes, averages their Dice losses on one
tape, and takes a single Adam step per batch. Evaluation is deterministic
per seed and reports class-mean mIoU plus pooled FB-IoU at the native mask
resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tape, Tensor, backward
from .backbone import FeatureBundle, extract_features
from .data import DatasetManifest, Episode, FoldSpec, fold_split, sample_episode
from .errors import ArgumentError, ConfigError, DimensionError, NumericError, ProtocolError
from .metrics import MetricsReport, binarize, compute_fb_iou, compute_miou, dice_loss, iou
from .model import Model, ForwardInfo, model_forward_bundles
from .params import ModelState
from .pnm import write_mask_pgm
from .resample import resize_mask_nearest


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    episodes_per_epoch: int = 200
    epochs: int = 10
    k_shot: int = 1
    batch_episodes: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.k_shot not in (1, 5):
            raise ConfigError(f"k_shot must be 1 or 5, got {self.k_shot}")
        if self.epochs < 1 or self.episodes_per_epoch < 1 or self.batch_episodes < 1:
            raise ConfigError("epochs, episodes_per_epoch and batch_episodes must be >= 1")


# -- optimizer ----------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: ModelState,
    grads: dict[str, np.ndarray],
    opt: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam over the trainable tensors; frozen ones untouched."""
    opt.step += 1
    c1 = 1.0 - beta1**opt.step
    c2 = 1.0 - beta2**opt.step
    for name, t in state.trainable():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(t.data)
        if g.shape != t.data.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter {name!r} shape {t.data.shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        m = opt.m.setdefault(name, np.zeros_like(t.data))
        v = opt.v.setdefault(name, np.zeros_like(t.data))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def collect_grads(state: ModelState, tape: Tape, grad_map: dict[int, Tensor]) -> dict[str, np.ndarray]:
    return {name: tape.grad_of(t, grad_map).data for name, t in state.trainable()}


# -- episode plumbing ----------------------------------------------------------

class FeatureCache:
    """Per-image-path cache of frozen-backbone feature bundles.

    Only valid while the backbone is frozen; a trainable backbone bypasses it.
    """

    def __init__(self, model: Model):
        self.model = model
        self.enabled = model.config.backbone.frozen
        self._store: dict[str, FeatureBundle] = {}

    def get(self, image: Tensor, path: str) -> FeatureBundle:
        if not self.enabled or not path:
            return extract_features(self.model.backbone, image)
        bundle = self._store.get(path)
        if bundle is None:
            bundle = extract_features(self.model.backbone, image)
            self._store[path] = bundle
        return bundle


def episode_forward(model: Model, cache: FeatureCache, episode: Episode):
    support = [
        (cache.get(img, path), mask)
        for (img, mask), path in zip(episode.support, episode.support_paths)
    ]
    query_bundle = cache.get(episode.query_image, episode.query_path)
    return model_forward_bundles(model, support, query_bundle)


def episode_loss(model: Model, cache: FeatureCache, episode: Episode) -> tuple[Tensor, ForwardInfo]:
    logits, info = episode_forward(model, cache, episode)
    return dice_loss(ag.sigmoid(logits), episode.query_mask.data), info


# -- training loop --------------------------------------------------------------

def train(
    model: Model,
    train_cfg: TrainConfig,
    manifest: DatasetManifest,
    fold: FoldSpec,
    progress: Callable[[int, float], None] | None = None,
) -> list[str]:
    """Train in place; returns the loss log (one TSV line per Adam step)."""
    train_ids, _ = fold_split(manifest.n_classes(), fold)
    train_ids = [c for c in train_ids if manifest.by_class().get(c)]
    if not train_ids:
        raise ConfigError("no training classes have images")
    side = model.config.backbone.input_side
    cache = FeatureCache(model)
    opt = AdamState()
    lines = []
    episode_index = 0
    step = 0
    batches_per_epoch = math.ceil(train_cfg.episodes_per_epoch / train_cfg.batch_episodes)
    for _epoch in range(train_cfg.epochs):
        for _batch in range(batches_per_epoch):
            with Tape() as tape:
                losses = []
                for _ in range(train_cfg.batch_episodes):
                    ep = sample_episode(manifest, train_ids, train_cfg.k_shot, train_cfg.seed ^ episode_index, side)
                    episode_index += 1
                    loss_ep, _info = episode_loss(model, cache, ep)
                    losses.append(loss_ep)
                loss = ag.mean_of(losses)
                grad_map = backward(loss)
            grads = collect_grads(model.state, tape, grad_map)
            adam_step(model.state, grads, opt, train_cfg.lr)
            step += 1
            lines.append(f"{step}\t{loss.item():.6f}")
            if progress is not None:
                progress(step, loss.item())
    return lines


# -- evaluation ------------------------------------------------------------------

# predictor returns a binary (S,S) mask plus forward diagnostics (or None)
Predictor = Callable[[Model, FeatureCache, Episode], tuple[np.ndarray, ForwardInfo | None]]


def _model_predictor(model: Model, cache: FeatureCache, episode: Episode) -> tuple[np.ndarray, ForwardInfo | None]:
    logits, info = episode_forward(model, cache, episode)
    return binarize(logits.data)[0], info


def _episode_record(
    model: Model,
    cache: FeatureCache,
    manifest: DatasetManifest,
    test_ids: list[int],
    k_shot: int,
    side: int,
    fn: Predictor,
    dump_dir: Path | None,
    seed: int,
    index: int,
):
    ep = sample_episode(manifest, test_ids, k_shot, seed ^ index, side)
    pred, info = fn(model, cache, ep)
    warnings = info.empty_mask_shots if info is not None else 0
    gt_full = ep.query_mask_full if ep.query_mask_full is not None else ep.query_mask.data[0]
    pred_full = resize_mask_nearest(pred, gt_full.shape[0], gt_full.shape[1])
    if dump_dir is not None:
        write_mask_pgm(dump_dir / f"seed{seed}_ep{index:04d}_class{ep.class_id}.pgm", pred_full)
    return ep.class_id, iou(pred_full, gt_full), pred_full, gt_full, warnings


_POOL_CTX: dict = {}


def _pool_record(args):
    seed, index = args
    return _episode_record(
        _POOL_CTX["model"],
        _POOL_CTX["cache"],
        _POOL_CTX["manifest"],
        _POOL_CTX["test_ids"],
        _POOL_CTX["k_shot"],
        _POOL_CTX["side"],
        _POOL_CTX["fn"],
        _POOL_CTX["dump_dir"],
        seed,
        index,
    )


def evaluate(
    model: Model,
    manifest: DatasetManifest,
    fold: FoldSpec,
    n_episodes: int,
    k_shot: int,
    seeds: list[int],
    predictor: Predictor | None = None,
    trained_class_ids: list[int] | None = None,
    dump_dir: str | Path | None = None,
    test_class_override: list[int] | None = None,
    jobs: int = 1,
) -> tuple[list[MetricsReport], MetricsReport]:
    """Per-seed MetricsReports plus their mean (mIoU/FB-IoU averaged).

    `test_class_override` replaces the fold's test classes (cross-dataset
    mode evaluates every class surviving exclusion); `jobs` fans episodes
    out over forked workers, with results independent of job count.
    """
    if n_episodes < 1 or not seeds:
        raise ArgumentError("need n_episodes >= 1 and at least one seed")
    if test_class_override is not None:
        test_ids = sorted(test_class_override)
    else:
        _, test_ids = fold_split(manifest.n_classes(), fold)
    test_ids = [c for c in test_ids if manifest.by_class().get(c)]
    if not test_ids:
        raise ConfigError("no test classes have images")
    if trained_class_ids is not None:
        overlap = set(test_ids) & set(trained_class_ids)
        if overlap:
            raise ProtocolError(f"evaluation classes overlap training classes: {sorted(overlap)}")
    side = model.config.backbone.input_side
    cache = FeatureCache(model)
    fn = predictor or _model_predictor
    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)

    tasks = [(seed, i) for seed in seeds for i in range(n_episodes)]
    if jobs > 1:
        import multiprocessing as mp

        _POOL_CTX.update(
            model=model, cache=cache, manifest=manifest, test_ids=test_ids,
            k_shot=k_shot, side=side, fn=fn, dump_dir=dump_dir,
        )
        try:
            with mp.get_context("fork").Pool(jobs) as pool:
                flat = pool.map(_pool_record, tasks)
        finally:
            _POOL_CTX.clear()
    else:
        flat = [
            _episode_record(model, cache, manifest, test_ids, k_shot, side, fn, dump_dir, seed, i)
            for seed, i in tasks
        ]
    by_seed: dict[int, list] = {}
    for (seed, _i), rec in zip(tasks, flat):
        by_seed.setdefault(seed, []).append(rec)

    reports = []
    for seed in seeds:
        records = by_seed[seed]
        ious = [(class_id, value) for class_id, value, _p, _g, _w in records]
        pooled = [(p, g) for _c, _v, p, g, _w in records]
        warnings = sum(w for *_rest, w in records)
        per_class_count: dict[int, int] = {}
        for class_id, *_rest in records:
            per_class_count[class_id] = per_class_count.get(class_id, 0) + 1
        per_class, miou = compute_miou(ious)
        reports.append(
            MetricsReport(
                per_class_iou=per_class,
                miou=miou,
                fb_iou=compute_fb_iou(pooled),
                n_episodes=n_episodes,
                seed=seed,
                empty_mask_warnings=warnings,
                episodes_per_class=dict(sorted(per_class_count.items())),
            )
        )
    mean = MetricsReport(
        per_class_iou={},
        miou=float(np.mean([r.miou for r in reports])),
        fb_iou=float(np.mean([r.fb_iou for r in reports])),
        n_episodes=n_episodes * len(seeds),
        seed=-1,
        empty_mask_warnings=sum(r.empty_mask_warnings for r in reports),
        episodes_per_class={},
    )
    return reports, mean
