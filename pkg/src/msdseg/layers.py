"""Parameter containers and small layer helpers shared by the model modules.

Weights are derived from (seed, parameter name) so construction order can
never change initialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .params import ModelState
from .seeding import SplitMix, derive_seed


@dataclass
class ConvP:
    weight: Tensor  # (out, in, kh, kw)
    bias: Tensor  # (out,)
    stride: int = 1
    padding: int = 0
    dilation: int = 1


@dataclass
class LinearP:
    weight: Tensor  # (in, out)
    bias: Tensor  # (out,)


@dataclass
class ResBlockP:
    conv_a: ConvP
    conv_b: ConvP
    skip: ConvP | None  # 1x1 projection, present iff channels (or stride) change


def conv_param(
    state: ModelState,
    name: str,
    out_ch: int,
    in_ch: int,
    k: int,
    seed: int,
    *,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    gain: float = 1.0,
    trainable: bool = True,
) -> ConvP:
    """He-uniform conv weight plus zero bias, registered under `name`."""
    rng = SplitMix(derive_seed(seed, name + ".weight"))
    bound = gain * np.sqrt(6.0 / (in_ch * k * k))
    w = state.add(name + ".weight", Tensor(rng.uniform((out_ch, in_ch, k, k), -bound, bound), requires_grad=trainable))
    b = state.add(name + ".bias", Tensor(np.zeros(out_ch), requires_grad=trainable))
    return ConvP(w, b, stride=stride, padding=padding, dilation=dilation)


def linear_param(
    state: ModelState, name: str, in_dim: int, out_dim: int, seed: int, *, gain: float = 1.0, trainable: bool = True
) -> LinearP:
    """Xavier-uniform (in, out) weight plus zero bias."""
    rng = SplitMix(derive_seed(seed, name + ".weight"))
    bound = gain * np.sqrt(6.0 / (in_dim + out_dim))
    w = state.add(name + ".weight", Tensor(rng.uniform((in_dim, out_dim), -bound, bound), requires_grad=trainable))
    b = state.add(name + ".bias", Tensor(np.zeros(out_dim), requires_grad=trainable))
    return LinearP(w, b)


def vector_param(
    state: ModelState, name: str, dim: int, seed: int, *, std: float = 0.02, trainable: bool = True
) -> Tensor:
    rng = SplitMix(derive_seed(seed, name))
    return state.add(name, Tensor(rng.normal((dim,), std=std), requires_grad=trainable))


def residual_block_param(
    state: ModelState,
    name: str,
    in_ch: int,
    out_ch: int,
    seed: int,
    *,
    stride: int = 1,
    dilation: int = 1,
    trainable: bool = True,
) -> ResBlockP:
    """Two 3x3 convs plus a 1x1 skip projection when shapes change.

    conv_b uses a reduced gain so the residual branch does not double the
    activation variance per block (there are no normalization layers).
    """
    pad = dilation  # keeps 3x3 output spatial size at stride 1
    conv_a = conv_param(
        state, name + ".conv_a", out_ch, in_ch, 3, seed, stride=stride, padding=pad, dilation=dilation, trainable=trainable
    )
    conv_b = conv_param(
        state, name + ".conv_b", out_ch, out_ch, 3, seed, padding=pad, dilation=dilation, gain=0.5, trainable=trainable
    )
    skip = None
    if in_ch != out_ch or stride != 1:
        skip = conv_param(state, name + ".skip", out_ch, in_ch, 1, seed, stride=stride, trainable=trainable)
    return ResBlockP(conv_a, conv_b, skip)


def conv_chw(x: Tensor, p: ConvP) -> Tensor:
    """Apply a conv to a single (C,H,W) tensor."""
    y = ag.conv2d(
        ag.reshape(x, (1,) + tuple(x.shape)), p.weight, p.bias, stride=p.stride, padding=p.padding, dilation=p.dilation
    )
    return ag.reshape(y, tuple(y.shape[1:]))


def linear(x: Tensor, p: LinearP) -> Tensor:
    """(n, in) @ (in, out) + bias."""
    return ag.add(ag.matmul(x, p.weight), p.bias)


def residual_block_forward(x: Tensor, block: ResBlockP) -> Tensor:
    """relu(conv_b(relu(conv_a(x))) + skip(x)); skip is identity when absent."""
    branch = conv_chw(ag.relu(conv_chw(x, block.conv_a)), block.conv_b)
    shortcut = x if block.skip is None else conv_chw(x, block.skip)
    return ag.relu(ag.add(branch, shortcut))
