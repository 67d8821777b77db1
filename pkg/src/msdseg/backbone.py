"""Resolution-preserving feature extractor shared by support and query images.

A two-conv stride-2 stem is followed by three residual stages: the first
halves resolution, the later two keep it and grow the receptive field with
dilation 2 and 4. All three stage outputs therefore share the same R x R
spatial size (input side must be 8*R).
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autograd as ag
from .autograd import Tensor
from .errors import ArgumentError, DimensionError
from .layers import ConvP, ResBlockP, conv_chw, conv_param, residual_block_forward, residual_block_param
from .params import ModelState


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 3
    stem_channels: int = 16
    stage_channels: tuple[int, int, int] = (32, 48, 64)
    feature_res: int = 8
    merged_channels: int = 64
    frozen: bool = True
    seed: int = 0

    def __post_init__(self):
        channels = (self.in_channels, self.stem_channels, *self.stage_channels, self.merged_channels)
        if any(c <= 0 for c in channels):
            raise ArgumentError(f"channel counts must be positive, got {channels}")
        if self.feature_res < 1:
            raise ArgumentError(f"feature_res must be >= 1, got {self.feature_res}")

    @property
    def input_side(self) -> int:
        return 8 * self.feature_res


@dataclass
class FeatureBundle:
    conv3: Tensor
    conv4: Tensor
    conv5: Tensor
    merged: Tensor | None = None


@dataclass
class Backbone:
    config: BackboneConfig
    stem1: ConvP
    stem2: ConvP
    stage1: ResBlockP
    stage2: ResBlockP
    stage3: ResBlockP


def build_backbone(config: BackboneConfig, state: ModelState) -> Backbone:
    """Register backbone parameters (seeded; frozen unless configured otherwise)."""
    c3, c4, c5 = config.stage_channels
    seed = config.seed
    train = not config.frozen
    return Backbone(
        config=config,
        stem1=conv_param(
            state, "backbone.stem1", config.stem_channels, config.in_channels, 3, seed, stride=2, padding=1, trainable=train
        ),
        stem2=conv_param(
            state, "backbone.stem2", config.stem_channels, config.stem_channels, 3, seed, stride=2, padding=1, trainable=train
        ),
        stage1=residual_block_param(state, "backbone.stage1", config.stem_channels, c3, seed, stride=2, trainable=train),
        stage2=residual_block_param(state, "backbone.stage2", c3, c4, seed, dilation=2, trainable=train),
        stage3=residual_block_param(state, "backbone.stage3", c4, c5, seed, dilation=4, trainable=train),
    )


def extract_features(backbone: Backbone, image: Tensor) -> FeatureBundle:
    """conv3/conv4/conv5 maps for a (3, 8R, 8R) image; merged left unset."""
    cfg = backbone.config
    side = cfg.input_side
    if image.shape != (cfg.in_channels, side, side):
        raise DimensionError(f"expected image of shape {(cfg.in_channels, side, side)}, got {image.shape}")
    x = ag.relu(conv_chw(image, backbone.stem1))
    x = ag.relu(conv_chw(x, backbone.stem2))
    conv3 = residual_block_forward(x, backbone.stage1)
    conv4 = residual_block_forward(conv3, backbone.stage2)
    conv5 = residual_block_forward(conv4, backbone.stage3)
    return FeatureBundle(conv3=conv3, conv4=conv4, conv5=conv5)


def merge_midlevel(conv3: Tensor, conv4: Tensor, merge_weights: ConvP) -> Tensor:
    """Channel-concat the two mid-level maps, then a learnable 1x1 conv."""
    if conv3.shape[1:] != conv4.shape[1:]:
        raise DimensionError(f"mid-level spatial sizes differ: {conv3.shape} vs {conv4.shape}")
    return conv_chw(ag.concat([conv3, conv4], axis=0), merge_weights)
