"""Dense f64 tensors with reverse-mode automatic differentiation.

Every layer in the package is built from the kernels here. Operations record
themselves on the innermost active `Tape`; `Tape.backward(loss)` then fills
the `.grad` of every requires_grad leaf reachable from the loss. Running ops
with no tape active is plain (fast) evaluation.

Supported ranks are what the models need: 2-D matrices and 3-D batched
feature maps. There is no general broadcasting beyond bias addition.
"""

from __future__ import annotations

import math
import os
import threading
from contextlib import contextmanager

import numpy as np

from . import backend
from .errors import NumericError, ParameterError, ShapeError

_DEBUG_CHECKS = os.environ.get("POSEPYRAMID_DEBUG_CHECKS", "") not in ("", "0")

LN_EPS = 1e-5
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class Tensor:
    """A contiguous float64 array plus optional gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "parents", "bwd")

    def __init__(self, out, parents, bwd):
        self.out = out
        self.parents = parents
        self.bwd = bwd


_tls = threading.local()


def _stack():
    s = getattr(_tls, "stack", None)
    if s is None:
        s = []
        _tls.stack = s
    return s


def active_tape():
    s = _stack()
    return s[-1] if s else None


class Tape:
    """Records operations in execution order; single-writer.

    Calling `backward` repeatedly without zeroing grads accumulates into the
    leaves, which is the documented contract.
    """

    def __init__(self):
        self._nodes = []
        self._out_ids = set()
        self._leaves = {}

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _stack().pop()
        return False

    def _record(self, out, parents, bwd):
        self._nodes.append(_Node(out, parents, bwd))
        self._out_ids.add(id(out))
        for p in parents:
            if isinstance(p, Tensor) and p.requires_grad and id(p) not in self._out_ids:
                self._leaves[id(p)] = p

    def backward(self, loss: Tensor) -> None:
        if not isinstance(loss, Tensor) or loss.size != 1:
            raise ShapeError("backward requires a scalar loss tensor")
        if id(loss) not in self._out_ids:
            raise ParameterError("loss was not produced on this tape")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            parent_grads = node.bwd(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not isinstance(p, Tensor):
                    continue
                if not p.requires_grad:
                    continue
                pid = id(p)
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        for lid, leaf in self._leaves.items():
            g = grads.get(lid)
            if g is None:
                g = np.zeros_like(leaf.data)
            leaf.grad = g if leaf.grad is None else leaf.grad + g


def _apply(parents, out_data, bwd) -> Tensor:
    if _DEBUG_CHECKS and not np.all(np.isfinite(out_data)):
        raise NumericError("non-finite values produced by a kernel")
    tape = active_tape()
    needs = tape is not None and any(
        isinstance(p, Tensor) and p.requires_grad for p in parents
    )
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape._record(out, parents, bwd)
    return out


# ---------------------------------------------------------------------------
# FLOP instrumentation (multiply-accumulate counts of matmul)


class FlopCounter:
    def __init__(self):
        self.macs = 0


_flops = None


@contextmanager
def count_flops():
    """Count matmul multiply-accumulates executed inside the block."""
    global _flops
    prev = _flops
    counter = FlopCounter()
    _flops = counter
    try:
        yield counter
    finally:
        _flops = prev


def _note_macs(n: int) -> None:
    if _flops is not None:
        _flops.macs += n


# ---------------------------------------------------------------------------
# kernels


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    Accepted rank pairs: (2,2), (3,2), (2,3), (3,3). A 2-D operand paired
    with a 3-D one is broadcast over the batch axis.
    """
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim not in (2, 3) or bd.ndim not in (2, 3):
        raise ShapeError(f"matmul supports 2-D/3-D operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {ad.shape} @ {bd.shape}")
    if ad.ndim == 3 and bd.ndim == 3 and ad.shape[0] != bd.shape[0]:
        raise ShapeError(f"matmul batch sizes differ: {ad.shape} @ {bd.shape}")
    out = ad @ bd
    batch = out.shape[0] if out.ndim == 3 else 1
    _note_macs(batch * ad.shape[-2] * ad.shape[-1] * bd.shape[-1])

    case = (ad.ndim, bd.ndim)

    def bwd(g):
        if case == (2, 2):
            return g @ bd.T, ad.T @ g
        if case == (3, 2):
            return g @ bd.T, np.tensordot(ad, g, axes=([0, 1], [0, 1]))
        if case == (2, 3):
            return np.einsum("bmn,bkn->mk", g, bd), np.matmul(ad.T, g)
        return g @ bd.swapaxes(-1, -2), np.matmul(ad.swapaxes(-1, -2), g)

    return _apply((a, b), out, bwd)


def transpose_last(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = a.data.swapaxes(-1, -2)

    def bwd(g):
        return (g.swapaxes(-1, -2),)

    return _apply((a,), out, bwd)


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.data.shape
    out = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(orig),)

    return _apply((a,), out, bwd)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    ash, bsh = a.data.shape, b.data.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _apply((a, b), out, bwd)


def neg(a) -> Tensor:
    return scale(a, -1.0)


def sub(a, b) -> Tensor:
    return add(a, neg(b))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _apply((a, b), out, bwd)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    out = a.data * s

    def bwd(g):
        return (g * s,)

    return _apply((a,), out, bwd)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0)

    def bwd(g):
        return (g * mask,)

    return _apply((a,), out, bwd)


def abs_val(a) -> Tensor:
    a = as_tensor(a)
    out = np.abs(a.data)
    sign = np.sign(a.data)

    def bwd(g):
        return (g * sign,)

    return _apply((a,), out, bwd)


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = np.asarray(a.data.sum())
    shape = a.data.shape

    def bwd(g):
        return (np.broadcast_to(g, shape).astype(np.float64),)

    return _apply((a,), out, bwd)


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return scale(sum_all(a), 1.0 / n)


def softmax_lastdim(a) -> Tensor:
    a = as_tensor(a)
    cols = a.data.shape[-1]
    flat = np.ascontiguousarray(a.data.reshape(-1, cols))
    y = backend.kernel("softmax_fwd")(flat)
    out = y.reshape(a.data.shape)

    def bwd(g):
        gflat = np.ascontiguousarray(g.reshape(-1, cols))
        gx = backend.kernel("softmax_bwd")(y, gflat)
        return (gx.reshape(a.data.shape),)

    return _apply((a,), out, bwd)


def layer_norm(a, scale_t: Tensor, shift_t: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize each row over the last dimension, then apply affine."""
    a = as_tensor(a)
    cols = a.data.shape[-1]
    if scale_t.data.shape != (cols,) or shift_t.data.shape != (cols,):
        raise ShapeError("layer_norm affine parameters must match the last dimension")
    flat = np.ascontiguousarray(a.data.reshape(-1, cols))
    y, mean, inv = backend.kernel("layernorm_fwd")(flat, scale_t.data, shift_t.data, eps)
    out = y.reshape(a.data.shape)

    def bwd(g):
        gflat = np.ascontiguousarray(g.reshape(-1, cols))
        gx, gscale, gshift = backend.kernel("layernorm_bwd")(
            flat, mean, inv, scale_t.data, gflat
        )
        return gx.reshape(a.data.shape), gscale, gshift

    return _apply((a, scale_t, shift_t), out, bwd)


class BatchNormState:
    """Running statistics for eval-mode batch norm (not learnable)."""

    def __init__(self, channels: int, momentum: float = BN_MOMENTUM):
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.momentum = momentum


def batch_norm(
    a,
    scale_t: Tensor,
    shift_t: Tensor,
    state: BatchNormState,
    training: bool,
    eps: float = BN_EPS,
) -> Tensor:
    """Normalize a 2-D (batch, channels) input over the batch axis per channel."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"batch_norm expects 2-D input, got {a.data.shape}")
    rows, cols = a.data.shape
    if rows == 0:
        raise ShapeError("batch_norm on an empty batch")
    if scale_t.data.shape != (cols,) or shift_t.data.shape != (cols,):
        raise ShapeError("batch_norm affine parameters must match the channel count")
    x = a.data
    if training:
        mu = x.mean(axis=0)
        xc = x - mu
        var = (xc * xc).mean(axis=0)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mu
        state.running_var = (1.0 - m) * state.running_var + m * var
        out = xhat * scale_t.data + shift_t.data

        def bwd(g):
            gscale = (g * xhat).sum(axis=0)
            gshift = g.sum(axis=0)
            gh = g * scale_t.data
            gx = inv * (gh - gh.mean(axis=0) - xhat * (gh * xhat).mean(axis=0))
            return gx, gscale, gshift

    else:
        inv = 1.0 / np.sqrt(state.running_var + eps)
        xhat = (x - state.running_mean) * inv
        out = xhat * scale_t.data + shift_t.data

        def bwd(g):
            gscale = (g * xhat).sum(axis=0)
            gshift = g.sum(axis=0)
            return g * (scale_t.data * inv), gscale, gshift

    return _apply((a, scale_t, shift_t), out, bwd)


def dropout(a, p: float, training: bool, uniforms) -> Tensor:
    """Zero entries with probability p and rescale survivors in train mode.

    `uniforms` is a callable shape -> U[0,1) samples; callers pass a
    counter-based stream so training is replayable. Eval mode returns the
    input tensor itself (bitwise identity).
    """
    a = as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    keep = uniforms(a.data.shape) >= p
    factor = 1.0 / (1.0 - p)
    out = np.where(keep, a.data * factor, 0.0)

    def bwd(g):
        return (np.where(keep, g * factor, 0.0),)

    return _apply((a,), out, bwd)


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _apply(tuple(tensors), out, bwd)


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = a.data[idx].copy()
    shape = a.data.shape

    def bwd(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _apply((a,), out, bwd)


# ---------------------------------------------------------------------------
# counter-based RNG streams (replayable dropout)

_MASK64 = (1 << 64) - 1


class RngHub:
    """Per-site Philox streams derived from one seed.

    Each (seed, site) pair is an independent stream; every draw advances a
    per-site counter, so a fresh hub with the same seed replays the exact
    same masks in the same order.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._counters = {}

    def reset(self, seed=None) -> None:
        if seed is not None:
            self.seed = int(seed) & _MASK64
        self._counters = {}

    def uniforms(self, site: int, shape):
        c = self._counters.get(site, 0)
        self._counters[site] = c + 1
        bg = np.random.Philox(counter=[c, 0, 0, 0], key=[self.seed, site & _MASK64])
        return np.random.Generator(bg).random(shape)

    def stream(self, site: int):
        return lambda shape: self.uniforms(site, shape)


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Worst relative error between analytic gradient and central differences.

    `f` maps a Tensor to a scalar Tensor and must be deterministic (run
    dropout in eval mode or freeze its mask). The relative error denominator
    is max(|analytic|, |numeric|, 1e-8) per coordinate.
    """
    if h <= 0:
        raise ParameterError("finite difference step must be positive")
    x.zero_grad()
    with Tape() as tape:
        out = f(x)
        if out.size != 1:
            raise ShapeError("finite_diff_check requires a scalar-valued function")
        tape.backward(out)
    analytic = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x).item()
        flat[i] = orig - h
        lo = f(x).item()
        flat[i] = orig
        if math.isnan(hi) or math.isnan(lo):
            raise NumericError("NaN encountered during finite differencing")
        nflat[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def xavier_uniform(gen: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return gen.uniform(-limit, limit, size=shape)
