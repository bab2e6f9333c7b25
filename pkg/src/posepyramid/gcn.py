"""Graph convolution layers and the residual local block.

Features are laid out (batch, joints, channels). With a symmetric normalized
adjacency this is the transposed but equivalent orientation of the
channels-first formulation; tests pin this orientation.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .tensor import (
    BatchNormState,
    Tensor,
    add,
    batch_norm,
    matmul,
    parameter,
    relu,
    reshape,
    scale,
    sub,
    xavier_uniform,
)


class VanillaGraphConv:
    """adj @ h @ W + b, returned pre-activation."""

    def __init__(self, in_dim: int, out_dim: int, adjn: np.ndarray, gen,
                 zero_init: bool = False):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.adj = Tensor(adjn)
        if zero_init:
            w = np.zeros((in_dim, out_dim))
        else:
            w = xavier_uniform(gen, in_dim, out_dim, (in_dim, out_dim))
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(out_dim))

    def __call__(self, h: Tensor) -> Tensor:
        if h.shape[-2] != self.adj.shape[0]:
            raise ParameterError(
                f"graph conv built for {self.adj.shape[0]} joints, input has {h.shape[-2]}"
            )
        return add(matmul(matmul(self.adj, h), self.weight), self.bias)

    def parameters(self, prefix: str) -> dict:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class ChebGraphConv:
    """Chebyshev filter sum_k T_k(L) @ h @ W_k + b.

    T_0 = I and T_1 = L with the usual recurrence T_k = 2 L T_{k-1} - T_{k-2}.
    `order` counts the number of terms (order 2 means T_0 and T_1).
    """

    def __init__(self, in_dim: int, out_dim: int, lap: np.ndarray, order: int, gen):
        if order < 1:
            raise ParameterError(f"Chebyshev order must be >= 1, got {order}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.order = order
        self.lap = Tensor(lap)
        self.weights = [
            parameter(xavier_uniform(gen, in_dim, out_dim, (in_dim, out_dim)))
            for _ in range(order)
        ]
        self.bias = parameter(np.zeros(out_dim))

    def __call__(self, h: Tensor) -> Tensor:
        if h.shape[-2] != self.lap.shape[0]:
            raise ParameterError(
                f"graph conv built for {self.lap.shape[0]} joints, input has {h.shape[-2]}"
            )
        acc = matmul(h, self.weights[0])
        if self.order > 1:
            t_prev, t_cur = h, matmul(self.lap, h)
            acc = add(acc, matmul(t_cur, self.weights[1]))
            for k in range(2, self.order):
                t_next = sub(scale(matmul(self.lap, t_cur), 2.0), t_prev)
                acc = add(acc, matmul(t_next, self.weights[k]))
                t_prev, t_cur = t_cur, t_next
        return add(acc, self.bias)

    def parameters(self, prefix: str) -> dict:
        out = {f"{prefix}.w{k}": w for k, w in enumerate(self.weights)}
        out[f"{prefix}.bias"] = self.bias
        return out


class LocalGraphBlock:
    """Residual unit: h + ReLU(BN(Cheb(ReLU(BN(Cheb(h)))))).

    Batch norm runs on features flattened to (batch, joints*channels), i.e.
    per-location statistics over the batch axis, the convention of the pose
    lifting lineage this follows.
    """

    def __init__(self, n_joints: int, dim: int, lap: np.ndarray, order: int, gen):
        self.n_joints = n_joints
        self.dim = dim
        self.conv1 = ChebGraphConv(dim, dim, lap, order, gen)
        self.conv2 = ChebGraphConv(dim, dim, lap, order, gen)
        channels = n_joints * dim
        self.bn1_scale = parameter(np.ones(channels))
        self.bn1_shift = parameter(np.zeros(channels))
        self.bn1_state = BatchNormState(channels)
        self.bn2_scale = parameter(np.ones(channels))
        self.bn2_shift = parameter(np.zeros(channels))
        self.bn2_state = BatchNormState(channels)

    def _bn(self, x: Tensor, scale_t, shift_t, state, training: bool) -> Tensor:
        b = x.shape[0]
        flat = reshape(x, (b, self.n_joints * self.dim))
        y = batch_norm(flat, scale_t, shift_t, state, training)
        return reshape(y, (b, self.n_joints, self.dim))

    def __call__(self, h: Tensor, training: bool = False) -> Tensor:
        y = self.conv1(h)
        y = relu(self._bn(y, self.bn1_scale, self.bn1_shift, self.bn1_state, training))
        y = self.conv2(y)
        y = relu(self._bn(y, self.bn2_scale, self.bn2_shift, self.bn2_state, training))
        return add(h, y)

    def parameters(self, prefix: str) -> dict:
        out = {}
        out.update(self.conv1.parameters(f"{prefix}.conv1"))
        out.update(self.conv2.parameters(f"{prefix}.conv2"))
        out[f"{prefix}.bn1.scale"] = self.bn1_scale
        out[f"{prefix}.bn1.shift"] = self.bn1_shift
        out[f"{prefix}.bn2.scale"] = self.bn2_scale
        out[f"{prefix}.bn2.shift"] = self.bn2_shift
        return out
