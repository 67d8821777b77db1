"""Support prototypes and the cosine-similarity prior.

The prototype is a masked average of support features; the prior map scores
every query pixel against it with cosine similarity. Both generalize to
k-shot by plain averaging, so k=1 reduces exactly to the 1-shot pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import ArgumentError, DimensionError
from .layers import ConvP, conv_chw

COSINE_EPS = 1e-8


@dataclass
class Prototype:
    vector: Tensor
    shot_count: int = 1
    empty_mask: bool = False  # mask had no foreground after downsizing


@dataclass
class PriorMap:
    map: Tensor  # (1, R, R), values in [-1, 1]
    shot_count: int = 1


def masked_average_pool(features: Tensor, mask) -> Prototype:
    """Average feature vectors over foreground pixels of a binary mask.

    An all-zero mask yields a zero prototype flagged `empty_mask` instead of
    failing; tiny objects can vanish when masks are downsized.
    """
    mask_arr = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    if mask_arr.shape != (1,) + tuple(features.shape[1:]):
        raise DimensionError(f"mask shape {mask_arr.shape} does not match features {features.shape}")
    if not np.isin(mask_arr, (0.0, 1.0)).all():
        raise ArgumentError("mask must be binary {0,1}")
    fg = float(mask_arr.sum())
    masked = ag.mul(features, Tensor(mask_arr))
    vec = ag.mul(ag.sum_(masked, axis=(1, 2)), 1.0 / max(fg, 1.0))
    return Prototype(vector=vec, shot_count=1, empty_mask=fg == 0.0)


def aggregate_prototypes(protos: list[Prototype]) -> Prototype:
    if not protos:
        raise ArgumentError("aggregate_prototypes needs at least one prototype")
    widths = {p.vector.shape for p in protos}
    if len(widths) != 1:
        raise DimensionError(f"prototype widths differ: {sorted(widths)}")
    return Prototype(
        vector=ag.mean_of([p.vector for p in protos]),
        shot_count=len(protos),
        empty_mask=any(p.empty_mask for p in protos),
    )


def cmgm_similarity(query_merged: Tensor, prototype: Prototype) -> PriorMap:
    """Per-pixel cosine similarity between query features and the prototype."""
    if query_merged.shape[0] != prototype.vector.shape[0]:
        raise DimensionError(
            f"channel mismatch: query has {query_merged.shape[0]}, prototype has {prototype.vector.shape[0]}"
        )
    c = query_merged.shape[0]
    p = ag.reshape(prototype.vector, (c, 1, 1))
    dot = ag.sum_(ag.mul(query_merged, ag.broadcast_to(p, query_merged.shape)), axis=0, keepdims=True)
    # eps^2 inside the sqrt keeps the derivative finite on exactly-zero vectors
    qnorm = ag.sqrt(ag.add(ag.sum_(ag.mul(query_merged, query_merged), axis=0, keepdims=True), COSINE_EPS**2))
    pnorm = ag.sqrt(ag.add(ag.sum_(ag.mul(prototype.vector, prototype.vector)), COSINE_EPS**2))
    return PriorMap(map=ag.div(dot, ag.add(ag.mul(qnorm, pnorm), COSINE_EPS)), shot_count=prototype.shot_count)


def aggregate_priors(maps: list[PriorMap]) -> PriorMap:
    if not maps:
        raise ArgumentError("aggregate_priors needs at least one prior map")
    shapes = {m.map.shape for m in maps}
    if len(shapes) != 1:
        raise DimensionError(f"prior shapes differ: {sorted(shapes)}")
    return PriorMap(map=ag.mean_of([m.map for m in maps]), shot_count=len(maps))


def fuse_stage1_input(
    query_merged: Tensor, prior: PriorMap | None, prototype: Prototype, fuse_weights: ConvP
) -> Tensor:
    """Concat query features, prior map and broadcast prototype; 1x1 conv back.

    `prior=None` is the CMGM-off ablation wiring: the prior channel is
    dropped and the fuse conv is built without it.
    """
    c, r = query_merged.shape[0], query_merged.shape[1]
    proto_map = ag.broadcast_to(ag.reshape(prototype.vector, (prototype.vector.shape[0], 1, 1)), (prototype.vector.shape[0], r, r))
    parts = [query_merged, proto_map] if prior is None else [query_merged, prior.map, proto_map]
    stacked = ag.concat(parts, axis=0)
    if fuse_weights.weight.shape[1] != stacked.shape[0]:
        raise DimensionError(
            f"fuse conv expects {fuse_weights.weight.shape[1]} channels, got {stacked.shape[0]}"
        )
    return conv_chw(stacked, fuse_weights)
