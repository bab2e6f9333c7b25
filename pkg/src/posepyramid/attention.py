"""Pyramid graph attention.

Queries come from joint-scale features; keys and values come from a fused
sequence that concatenates the joint features with their part- and
region-level averages (the original scale is retained unpooled). A residual
graph convolution sub-layer stands in for the transformer MLP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .gcn import VanillaGraphConv
from .skeleton import PoolingScheme
from .tensor import (
    Tensor,
    add,
    concat,
    dropout,
    layer_norm,
    matmul,
    parameter,
    relu,
    scale,
    slice_axis,
    softmax_lastdim,
    transpose_last,
    xavier_uniform,
)


@dataclass
class PyramidFeatures:
    fused: Tensor            # (B, fused_len, D), layer-normalized
    pre_norm: Tensor         # (B, fused_len, D) before normalization
    offsets: tuple           # segment start offsets: (0, N, N+M1, ...) plus end


def pyramid_concat(h: Tensor, scheme: PoolingScheme) -> Tensor:
    """Concatenate joint features with each pooled scale along the sequence."""
    if h.shape[-2] != scheme.n_joints:
        raise ShapeError(
            f"pooling scheme covers {scheme.n_joints} joints, input has {h.shape[-2]}"
        )
    parts = [h]
    for level in range(len(scheme.levels)):
        pool = Tensor(scheme.matrix_to_original(level))
        parts.append(matmul(pool, h))
    return concat(parts, axis=1)


def pyramid_fuse(h: Tensor, scheme: PoolingScheme, ln_scale: Tensor,
                 ln_shift: Tensor) -> PyramidFeatures:
    pre = pyramid_concat(h, scheme)
    fused = layer_norm(pre, ln_scale, ln_shift)
    offsets = [0, scheme.n_joints]
    for size in scheme.sizes:
        offsets.append(offsets[-1] + size)
    return PyramidFeatures(fused=fused, pre_norm=pre, offsets=tuple(offsets))


class PyramidAttentionLayer:
    """Parameters of one attention block: Q/K/V/out projections, the fusion
    and pre-sublayer layer norms, and the trailing graph convolution."""

    ATTN_DROP_SITE = 0
    OUT_DROP_SITE = 1
    GCONV_DROP_SITE = 2

    def __init__(self, dim: int, heads: int, scheme: PoolingScheme,
                 adjn: np.ndarray, gen, attn_dropout: float = 0.05,
                 residual_dropout: float = 0.25, scale_mode: str = "per_head",
                 rng_hub=None, site_base: int = 0):
        if dim % heads != 0:
            raise ParameterError(f"hidden dim {dim} not divisible by {heads} heads")
        if scale_mode not in ("per_head", "full_dim"):
            raise ParameterError(f"unknown attention scale mode {scale_mode!r}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.scheme = scheme
        self.attn_dropout = attn_dropout
        self.residual_dropout = residual_dropout
        self.scale_mode = scale_mode
        self._rng_hub = rng_hub
        self._site_base = site_base

        def proj():
            w = parameter(xavier_uniform(gen, dim, dim, (dim, dim)))
            b = parameter(np.zeros(dim))
            return w, b

        self.wq, self.bq = proj()
        self.wk, self.bk = proj()
        self.wv, self.bv = proj()
        self.wo, self.bo = proj()
        self.ln_scale = parameter(np.ones(dim))
        self.ln_shift = parameter(np.zeros(dim))
        self.fuse_scale = parameter(np.ones(dim))
        self.fuse_shift = parameter(np.zeros(dim))
        self.gconv = VanillaGraphConv(dim, dim, adjn, gen)

    def _stream(self, which: int):
        if self._rng_hub is None:
            raise ParameterError("dropout requested but no RNG hub attached")
        return self._rng_hub.stream(self._site_base + which)

    def logit_scale(self) -> float:
        d = self.dim if self.scale_mode == "full_dim" else self.head_dim
        return 1.0 / math.sqrt(d)

    def parameters(self, prefix: str) -> dict:
        out = {
            f"{prefix}.wq": self.wq, f"{prefix}.bq": self.bq,
            f"{prefix}.wk": self.wk, f"{prefix}.bk": self.bk,
            f"{prefix}.wv": self.wv, f"{prefix}.bv": self.bv,
            f"{prefix}.wo": self.wo, f"{prefix}.bo": self.bo,
            f"{prefix}.ln.scale": self.ln_scale, f"{prefix}.ln.shift": self.ln_shift,
            f"{prefix}.fuse.scale": self.fuse_scale, f"{prefix}.fuse.shift": self.fuse_shift,
        }
        out.update(self.gconv.parameters(f"{prefix}.gconv"))
        return out


def attention_heads(h: Tensor, layer: PyramidAttentionLayer, training: bool = False):
    """Per-head scaled dot-product attention against the fused pyramid.

    Returns the concatenated head outputs (before the output projection) and
    the per-head attention weight arrays, each (B, N, fused_len).
    """
    feats = pyramid_fuse(h, layer.scheme, layer.fuse_scale, layer.fuse_shift)
    q = add(matmul(h, layer.wq), layer.bq)
    k = add(matmul(feats.fused, layer.wk), layer.bk)
    v = add(matmul(feats.fused, layer.wv), layer.bv)
    outs = []
    weights = []
    hd = layer.head_dim
    for i in range(layer.heads):
        lo, hi = i * hd, (i + 1) * hd
        qi = slice_axis(q, 2, lo, hi)
        ki = slice_axis(k, 2, lo, hi)
        vi = slice_axis(v, 2, lo, hi)
        logits = scale(matmul(qi, transpose_last(ki)), layer.logit_scale())
        attn = softmax_lastdim(logits)
        weights.append(attn.data.copy())
        if training and layer.attn_dropout > 0:
            attn = dropout(attn, layer.attn_dropout, training,
                           layer._stream(layer.ATTN_DROP_SITE))
        outs.append(matmul(attn, vi))
    return concat(outs, axis=2), weights


def pyramid_attention(h: Tensor, layer: PyramidAttentionLayer,
                      training: bool = False, qkv_input: Tensor = None) -> Tensor:
    """Multi-head pyramid attention with a shortcut from `h`.

    `qkv_input` optionally supplies the (already normalized) features the
    projections read; the residual always comes from `h` itself.
    """
    src = h if qkv_input is None else qkv_input
    heads_out, _ = attention_heads(src, layer, training)
    proj = add(matmul(heads_out, layer.wo), layer.bo)
    if training and layer.residual_dropout > 0:
        proj = dropout(proj, layer.residual_dropout, training,
                       layer._stream(layer.OUT_DROP_SITE))
    return add(h, proj)


def pyramid_block(x: Tensor, layer: PyramidAttentionLayer,
                  training: bool = False) -> Tensor:
    """Full block: pre-norm, attention with shortcut, then the residual
    ReLU graph-conv sub-layer reading the same normalized input."""
    x_norm = layer_norm(x, layer.ln_scale, layer.ln_shift)
    h_out = pyramid_attention(x, layer, training, qkv_input=x_norm)
    g = relu(layer.gconv(x_norm))
    if training and layer.residual_dropout > 0:
        g = dropout(g, layer.residual_dropout, training,
                    layer._stream(layer.GCONV_DROP_SITE))
    return add(h_out, g)


def export_attention(x: Tensor, layer: PyramidAttentionLayer, skeleton):
    """Eval-mode attention maps with labeled rows and columns.

    Returns (weights, row_labels, col_labels) where weights is a list of
    (B, N, fused_len) arrays, one per head. Columns cover the joints followed
    by part and region groups.
    """
    x_norm = layer_norm(x, layer.ln_scale, layer.ln_shift)
    _, weights = attention_heads(x_norm, layer, training=False)
    row_labels = list(skeleton.names)
    col_labels = list(skeleton.names)
    for level_idx, names in enumerate(layer.scheme.level_names):
        tag = "part" if level_idx == 0 else "region"
        col_labels.extend(f"{tag}:{n}" for n in names)
    return weights, row_labels, col_labels


def attention_maps_to_csv(weights_head: np.ndarray, row_labels, col_labels) -> str:
    """Serialize one head's (N, fused_len) attention matrix; 9 significant digits."""
    if weights_head.ndim == 3:
        weights_head = weights_head[0]
    lines = ["query," + ",".join(col_labels)]
    for name, row in zip(row_labels, weights_head):
        lines.append(name + "," + ",".join(f"{v:.9g}" for v in row))
    return "\n".join(lines) + "\n"
