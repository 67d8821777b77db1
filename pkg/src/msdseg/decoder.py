"""Three-stage multi-scale decoder with support-feature skip fusion.

Stage 1 runs at the feature resolution R and fuses the support conv5 map
into every residual block; stages 2 and 3 run at 2R and 4R and fuse the
support merged map, re-upsampled by learned resize+conv operators. Stages 1
and 2 end with a resize+conv upsample, so the output is (d3, 4R, 4R).
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autograd as ag
from .autograd import Tensor
from .errors import ArgumentError, DimensionError
from .layers import ConvP, ResBlockP, conv_chw, conv_param, residual_block_forward, residual_block_param
from .params import ModelState


@dataclass(frozen=True)
class DecoderConfig:
    stage_channels: tuple[int, int, int] = (64, 48, 32)
    blocks_per_stage: int = 3
    base_res: int = 8

    def __post_init__(self):
        if self.blocks_per_stage not in (1, 2, 3, 4):
            raise ArgumentError(f"blocks_per_stage must be in 1..4, got {self.blocks_per_stage}")
        if any(c <= 0 for c in self.stage_channels):
            raise ArgumentError(f"stage channels must be positive, got {self.stage_channels}")


@dataclass
class DecoderBlockP:
    fuse: ConvP  # 1x1 conv after support-feature concat
    res: ResBlockP


@dataclass
class DecoderParams:
    stages: list[list[DecoderBlockP]]
    up1: ConvP  # after stage 1: d1 -> d2 at 2R
    up2: ConvP  # after stage 2: d2 -> d3 at 4R
    sup2: ConvP  # support merged -> 2R
    sup3: ConvP  # support merged 2R -> 4R


def build_decoder(state: ModelState, config: DecoderConfig, skip_channels: tuple[int, int, int], seed: int) -> DecoderParams:
    """skip_channels: support channel counts fused at stages (1, 2, 3)."""
    d1, d2, d3 = config.stage_channels
    stages = []
    for s, (ch, skip_ch) in enumerate(zip((d1, d2, d3), skip_channels), start=1):
        blocks = []
        for i in range(config.blocks_per_stage):
            name = f"decoder.stage{s}.block{i}"
            fuse = conv_param(state, name + ".fuse", ch, ch + skip_ch, 1, seed)
            res = residual_block_param(state, name, ch, ch, seed)
            blocks.append(DecoderBlockP(fuse=fuse, res=res))
        stages.append(blocks)
    merged_ch = skip_channels[1]
    return DecoderParams(
        stages=stages,
        up1=conv_param(state, "decoder.up1", d2, d1, 3, seed, padding=1),
        up2=conv_param(state, "decoder.up2", d3, d2, 3, seed, padding=1),
        sup2=conv_param(state, "decoder.sup2", merged_ch, merged_ch, 3, seed, padding=1),
        sup3=conv_param(state, "decoder.sup3", merged_ch, merged_ch, 3, seed, padding=1),
    )


def skip_fuse(x: Tensor, support_feat: Tensor, fuse_weights: ConvP) -> Tensor:
    """Concat support features onto x, 1x1 conv back to x's channel count."""
    if x.shape[1:] != support_feat.shape[1:]:
        raise DimensionError(f"spatial sizes differ: {x.shape} vs {support_feat.shape}")
    return conv_chw(ag.concat([x, support_feat], axis=0), fuse_weights)


def upsample_stage(x: Tensor, up_weights: ConvP) -> Tensor:
    """Bilinear x2 resize followed by a 3x3 conv to the next stage width."""
    resized = ag.bilinear_upsample(ag.reshape(x, (1,) + tuple(x.shape)), 2)
    return conv_chw(ag.reshape(resized, tuple(resized.shape[1:])), up_weights)


def decoder_forward(
    stage1_input: Tensor,
    support_conv5: Tensor,
    support_merged: Tensor,
    params: DecoderParams,
    config: DecoderConfig,
) -> Tensor:
    sup_2r = upsample_stage(support_merged, params.sup2)
    sup_4r = upsample_stage(sup_2r, params.sup3)

    x = stage1_input
    for skip_feat, blocks, up in (
        (support_conv5, params.stages[0], params.up1),
        (sup_2r, params.stages[1], params.up2),
        (sup_4r, params.stages[2], None),
    ):
        for block in blocks:
            x = residual_block_forward(skip_fuse(x, skip_feat, block.fuse), block.res)
        if up is not None:
            x = upsample_stage(x, up)
    return x
