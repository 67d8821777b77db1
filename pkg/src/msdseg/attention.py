"""Cross-attention mask-embedding decoder.

A single multi-head cross-attention block: the (positionally encoded)
support prototype is the one Query token; the query-image feature map
supplies R*R Key/Value tokens. The block emits a channel embedding that is
fused with the decoder output by a per-pixel dot product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import autograd as ag
from .autograd import Tensor
from .errors import ConfigError, DimensionError
from .layers import LinearP, linear
from .prototype import Prototype


@dataclass(frozen=True)
class StdConfig:
    model_dim: int = 64
    heads: int = 4
    out_dim: int = 32

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads


@dataclass
class MaskEmbedding:
    vector: Tensor  # (out_dim,)


@dataclass
class StdParams:
    pos: Tensor  # (model_dim,) learnable positional encoding for the Query token
    wq: LinearP
    wk: LinearP
    wv: LinearP
    wo: LinearP
    ffn1: LinearP
    ffn2: LinearP
    out: LinearP
    in_proj: LinearP | None  # maps feature channels -> model_dim when they differ


def std_forward(prototype: Prototype, query_features: Tensor, params: StdParams, config: StdConfig) -> MaskEmbedding:
    """One cross-attention block from prototype Query to query-feature tokens."""
    c, r = query_features.shape[0], query_features.shape[1]
    tokens = ag.transpose(ag.reshape(query_features, (c, r * r)), (1, 0))  # (R*R, C)
    p = ag.reshape(prototype.vector, (1, prototype.vector.shape[0]))
    if params.in_proj is not None:
        tokens = linear(tokens, params.in_proj)
        p = linear(p, params.in_proj)
    elif c != config.model_dim:
        raise DimensionError(f"feature channels {c} != model_dim {config.model_dim} and no input projection")

    q_tok = ag.add(p, ag.reshape(params.pos, (1, config.model_dim)))
    q = linear(q_tok, params.wq)
    k = linear(tokens, params.wk)
    v = linear(tokens, params.wv)

    dh = config.head_dim
    scale = 1.0 / math.sqrt(dh)
    head_outs = []
    for h in range(config.heads):
        qh = ag.narrow(q, 1, h * dh, dh)
        kh = ag.narrow(k, 1, h * dh, dh)
        vh = ag.narrow(v, 1, h * dh, dh)
        logits = ag.mul(ag.matmul(qh, ag.transpose(kh, (1, 0))), scale)  # (1, R*R)
        attn = ag.softmax(logits, 1)
        head_outs.append(ag.matmul(attn, vh))  # (1, dh)
    merged = linear(ag.concat(head_outs, axis=1), params.wo)

    z = ag.add(merged, q_tok)
    hidden = ag.relu(linear(z, params.ffn1))
    ff = linear(hidden, params.ffn2)
    emb = linear(ff, params.out)
    return MaskEmbedding(vector=ag.reshape(emb, (config.out_dim,)))


def merge_dot_product(decoder_map: Tensor, embedding: MaskEmbedding) -> Tensor:
    """logit[0,i,j] = sum_c decoder_map[c,i,j] * embedding[c]."""
    c = embedding.vector.shape[0]
    if decoder_map.shape[0] != c:
        raise DimensionError(f"channel widths differ: decoder {decoder_map.shape[0]} vs embedding {c}")
    weighted = ag.mul(decoder_map, ag.reshape(embedding.vector, (c, 1, 1)))
    return ag.sum_(weighted, axis=0, keepdims=True)
