"""Full model assembly: wiring, ablation variants and the forward pass.

Ablation wiring follows the minimal shape-preserving substitutions: without
CMGM the fuse conv drops the prior channel; without the attention decoder a
learnable 1x1 conv produces the logits; without the multi-scale decoder a
single x4 resize plus one 3x3 conv replaces it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .attention import MaskEmbedding, StdConfig, StdParams, merge_dot_product, std_forward
from .autograd import Tensor
from .backbone import Backbone, BackboneConfig, FeatureBundle, build_backbone, extract_features, merge_midlevel
from .decoder import DecoderConfig, DecoderParams, build_decoder, decoder_forward
from .errors import ConfigError
from .layers import ConvP, conv_chw, conv_param, linear_param, vector_param
from .params import ModelState
from .prototype import (
    PriorMap,
    Prototype,
    aggregate_priors,
    aggregate_prototypes,
    cmgm_similarity,
    fuse_stage1_input,
    masked_average_pool,
)
from .resample import resize_mask_nearest


@dataclass(frozen=True)
class Ablation:
    use_cmgm: bool = True
    use_std: bool = True
    use_msd: bool = True


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = BackboneConfig()
    decoder: DecoderConfig = DecoderConfig()
    std: StdConfig = StdConfig()
    ablation: Ablation = Ablation()
    seed: int = 0

    def __post_init__(self):
        if self.backbone.merged_channels != self.decoder.stage_channels[0]:
            raise ConfigError(
                f"merged_channels {self.backbone.merged_channels} must equal decoder stage-1 width "
                f"{self.decoder.stage_channels[0]}"
            )
        if self.std.out_dim != self.decoder.stage_channels[2]:
            raise ConfigError(
                f"attention out_dim {self.std.out_dim} must equal decoder stage-3 width "
                f"{self.decoder.stage_channels[2]}"
            )
        if self.backbone.feature_res != self.decoder.base_res:
            raise ConfigError(
                f"feature_res {self.backbone.feature_res} must equal decoder base_res {self.decoder.base_res}"
            )


@dataclass
class Model:
    config: ModelConfig
    state: ModelState
    backbone: Backbone
    merge: ConvP
    fuse_in: ConvP
    decoder: DecoderParams | None
    simple: ConvP | None  # 3x3 conv replacing the decoder when it is disabled
    std: StdParams | None
    head: ConvP | None  # 1x1 logit conv replacing the dot-product when STD is disabled


@dataclass
class ForwardInfo:
    empty_mask_shots: int = 0
    prior: PriorMap | None = None
    prototype: Prototype | None = None


# Logits are tau * <unit decoder pixel, unit embedding>, so they stay in
# [-tau, tau]. With a fixed 1e-3 Adam rate and no normalization layers, an
# unbounded head oscillates into sigmoid saturation within a few steps and
# the gradients never recover; bounding the head keeps every step in the
# responsive band of the sigmoid.
LOGIT_SCALE = 16.0


def build_model(cfg: ModelConfig) -> Model:
    state = ModelState()
    seed = cfg.seed
    bb_cfg = cfg.backbone
    backbone = build_backbone(bb_cfg, state)
    c3, c4, c5 = bb_cfg.stage_channels
    merged = bb_cfg.merged_channels
    d1, d2, d3 = cfg.decoder.stage_channels
    abl = cfg.ablation

    merge = conv_param(state, "merge", merged, c3 + c4, 1, seed)
    fuse_in_ch = merged + merged + (1 if abl.use_cmgm else 0)
    fuse_in = conv_param(state, "fuse_in", d1, fuse_in_ch, 1, seed)

    decoder = simple = None
    if abl.use_msd:
        decoder = build_decoder(state, cfg.decoder, (c5, merged, merged), seed)
    else:
        simple = conv_param(state, "simple", d3, d1, 3, seed, padding=1)

    std = head = None
    if abl.use_std:
        d = cfg.std.model_dim
        std = StdParams(
            pos=vector_param(state, "std.pos", d, seed),
            wq=linear_param(state, "std.wq", d, d, seed),
            wk=linear_param(state, "std.wk", d, d, seed),
            wv=linear_param(state, "std.wv", d, d, seed),
            wo=linear_param(state, "std.wo", d, d, seed),
            ffn1=linear_param(state, "std.ffn1", d, 2 * d, seed),
            ffn2=linear_param(state, "std.ffn2", 2 * d, d, seed),
            out=linear_param(state, "std.out", d, cfg.std.out_dim, seed),
            in_proj=None if merged == d else linear_param(state, "std.in_proj", merged, d, seed),
        )
    else:
        head = conv_param(state, "head", 1, d3, 1, seed, gain=0.1)

    return Model(
        config=cfg,
        state=state,
        backbone=backbone,
        merge=merge,
        fuse_in=fuse_in,
        decoder=decoder,
        simple=simple,
        std=std,
        head=head,
    )


def _as_mask_array(mask) -> np.ndarray:
    arr = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    return arr.reshape(arr.shape[-2], arr.shape[-1])


def _shot_prototypes(model: Model, support: list[tuple[FeatureBundle, np.ndarray]]):
    """Merged features and a prototype per support shot."""
    r = model.config.backbone.feature_res
    merged, protos = [], []
    for bundle, mask in support:
        m = merge_midlevel(bundle.conv3, bundle.conv4, model.merge)
        small = resize_mask_nearest(_as_mask_array(mask), r)
        merged.append(m)
        protos.append(masked_average_pool(m, small[None]))
    return merged, protos


def model_forward_bundles(
    model: Model,
    support: list[tuple[FeatureBundle, np.ndarray]],
    query_bundle: FeatureBundle,
) -> tuple[Tensor, ForwardInfo]:
    """Forward pass from precomputed backbone features (see model_forward)."""
    abl = model.config.ablation
    merged_s, protos = _shot_prototypes(model, support)
    merged_q = merge_midlevel(query_bundle.conv3, query_bundle.conv4, model.merge)

    proto = aggregate_prototypes(protos)
    prior = None
    if abl.use_cmgm:
        prior = aggregate_priors([cmgm_similarity(merged_q, p) for p in protos])
    x1 = fuse_stage1_input(merged_q, prior, proto, model.fuse_in)

    if abl.use_msd:
        sup5 = ag.mean_of([b.conv5 for b, _ in support])
        supm = ag.mean_of(merged_s)
        dec = decoder_forward(x1, sup5, supm, model.decoder, model.config.decoder)
    else:
        up = ag.bilinear_upsample(ag.reshape(x1, (1,) + tuple(x1.shape)), 4)
        dec = conv_chw(ag.reshape(up, tuple(up.shape[1:])), model.simple)

    dec_unit = ag.l2_normalize(dec, axis=0)
    if abl.use_std:
        emb = std_forward(proto, merged_q, model.std, model.config.std)
        emb_unit = MaskEmbedding(vector=ag.l2_normalize(emb.vector, axis=0))
        logits_small = ag.mul(merge_dot_product(dec_unit, emb_unit), LOGIT_SCALE)
    else:
        logits_small = ag.mul(conv_chw(dec_unit, model.head), LOGIT_SCALE)

    # decoder output is at 4R; the image side is 8R
    logits = ag.bilinear_upsample(ag.reshape(logits_small, (1,) + tuple(logits_small.shape)), 2)
    logits = ag.reshape(logits, tuple(logits.shape[1:]))
    info = ForwardInfo(
        empty_mask_shots=sum(1 for p in protos if p.empty_mask),
        prior=prior,
        prototype=proto,
    )
    return logits, info


def model_forward(model: Model, support: list[tuple[Tensor, Tensor | np.ndarray]], query_image: Tensor) -> tuple[Tensor, ForwardInfo]:
    """Episode forward pass; returns full-resolution logits (1, S, S)."""
    bundles = [(extract_features(model.backbone, img), mask) for img, mask in support]
    query_bundle = extract_features(model.backbone, query_image)
    return model_forward_bundles(model, bundles, query_bundle)


def prior_only_logits(model: Model, support: list[tuple[FeatureBundle, np.ndarray]], query_bundle: FeatureBundle) -> Tensor:
    """Training-free baseline: the cosine prior upsampled to image resolution.

    Thresholding these values at 0 gives the prior-only prediction.
    """
    _, protos = _shot_prototypes(model, support)
    merged_q = merge_midlevel(query_bundle.conv3, query_bundle.conv4, model.merge)
    prior = aggregate_priors([cmgm_similarity(merged_q, p) for p in protos])
    side = model.config.backbone.input_side
    scale = side // prior.map.shape[1]
    up = ag.bilinear_upsample(ag.reshape(prior.map, (1,) + tuple(prior.map.shape)), scale)
    return ag.reshape(up, tuple(up.shape[1:]))


def prior_only_predict(model: Model, support: list[tuple[Tensor, Tensor | np.ndarray]], query_image: Tensor) -> np.ndarray:
    bundles = [(extract_features(model.backbone, img), mask) for img, mask in support]
    query_bundle = extract_features(model.backbone, query_image)
    logits = prior_only_logits(model, bundles, query_bundle)
    return (logits.data[0] >= 0.0).astype(np.float64)
