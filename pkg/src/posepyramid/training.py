"""Losses, Adam, learning-rate schedules, flip augmentation, and the training
loops for the direct lifter and the diffusion variant.

Internally 3D poses are root-centered and expressed in meters so weights stay
O(1); record files and all reported metrics use millimeters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import backend, evaluation
from .diffusion import DiffusionLifter, ddim_sample, default_step_subsequence
from .errors import NumericError, ParameterError, ShapeError
from .skeleton import SkeletonGraph
from .tensor import Tensor, Tape, abs_val, add, mul, scale, sub, sum_all

MM_PER_UNIT = 1000.0

SCHEDULES = ("decay4pct_per_4epochs", "mul0.9_per_50k_steps", "mul0.9_per_10_epochs")


@dataclass
class TrainConfig:
    lambda_weight: float = 0.025
    lr0: float = 1e-3
    schedule: str = "mul0.9_per_50k_steps"
    batch_size: int = 64
    epochs: int = 20
    flip_augment: bool = True
    seed: int = 0
    val_fraction: float = 0.1

    def validate(self) -> None:
        if not 0.0 <= self.lambda_weight <= 1.0:
            raise ParameterError("lambda_weight must be in [0, 1]")
        if self.lr0 <= 0:
            raise ParameterError("lr0 must be positive")
        if self.schedule not in SCHEDULES:
            raise ParameterError(f"unknown schedule {self.schedule!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        cfg = cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        update = backend.kernel("adam_update")
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            update(p.data, g, self.m[name], self.v[name],
                   lr, self.beta1, self.beta2, self.eps, self.t)
            p.grad = None


def pose_loss(pred: Tensor, target, lam: float) -> Tensor:
    """Weighted sum of per-joint L1 and squared error, averaged over batch."""
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    if not np.all(np.isfinite(pred.data)) or not np.all(np.isfinite(target)):
        raise NumericError("pose_loss received non-finite values")
    if not 0.0 <= lam <= 1.0:
        raise ParameterError("loss weight must be in [0, 1]")
    b = pred.shape[0] if pred.ndim == 3 else 1
    d = sub(pred, Tensor(target))
    l1 = scale(sum_all(abs_val(d)), 1.0 / b)
    sq = scale(sum_all(mul(d, d)), 1.0 / b)
    return add(scale(l1, lam), scale(sq, 1.0 - lam))


def make_draws(rng: np.random.Generator, batch: int, n_joints: int,
               total_steps: int):
    """(step index, base noise) pairs for the stepwise diffusion loss."""
    ks = rng.integers(1, total_steps + 1, size=batch)
    eps = rng.standard_normal((batch, n_joints, 3))
    return ks, eps


def diffusion_loss(model: DiffusionLifter, h0: np.ndarray, pose2d: np.ndarray,
                   draws, training: bool = True) -> Tensor:
    """Mean squared stepwise prediction error over the given (step, noise)
    draws. Targets use the closed-form marginal with the same base noise as
    the input, so supervision is consistent along a trajectory."""
    ks, eps = draws
    h0 = np.asarray(h0, dtype=np.float64)
    sched = model.schedule
    ab_k = sched.alpha_bar(ks).reshape(-1, 1, 1)
    ab_prev = sched.alpha_bar(ks - 1).reshape(-1, 1, 1)
    h_k = np.sqrt(ab_k) * h0 + np.sqrt(1.0 - ab_k) * eps
    target = np.sqrt(ab_prev) * h0 + np.sqrt(1.0 - ab_prev) * eps
    out = model.net(h_k, ks, pose2d, training=training)
    if model.config.parameterization == "direct":
        pred = add(out, Tensor(h_k))
    else:
        coef_h = np.sqrt(ab_prev / ab_k)
        coef_e = np.sqrt(1.0 - ab_prev) - coef_h * np.sqrt(1.0 - ab_k)
        pred = add(Tensor(coef_h * h_k), mul(out, Tensor(np.broadcast_to(
            coef_e, out.shape).copy())))
    d = sub(pred, Tensor(target))
    return scale(sum_all(mul(d, d)), 1.0 / len(ks))


def lr_at(config: TrainConfig, epoch: int, step: int) -> float:
    if config.schedule == "decay4pct_per_4epochs":
        return config.lr0 * 0.96 ** (epoch // 4)
    if config.schedule == "mul0.9_per_50k_steps":
        return config.lr0 * 0.9 ** (step // 50_000)
    if config.schedule == "mul0.9_per_10_epochs":
        return config.lr0 * 0.9 ** (epoch // 10)
    raise ParameterError(f"unknown schedule {config.schedule!r}")


# ---------------------------------------------------------------------------
# dataset plumbing


def records_to_arrays(records, skeleton: SkeletonGraph):
    """Stack records into (S, N, 2) inputs and (S, N, 3) root-centered
    targets in meters."""
    x = np.stack([r.joints2d for r in records]).astype(np.float64)
    y_mm = np.stack([r.joints3d for r in records]).astype(np.float64)
    y_mm = y_mm - y_mm[:, skeleton.root: skeleton.root + 1, :]
    return x, y_mm / MM_PER_UNIT


def flip_batch(arr: np.ndarray, skeleton: SkeletonGraph) -> np.ndarray:
    """Vectorized horizontal flip of (S, N, C) poses."""
    out = arr[:, list(skeleton.mirror), :].copy()
    out[:, :, 0] = -out[:, :, 0]
    return out


def split_indices(n: int, val_fraction: float, seed: int):
    rng = np.random.Generator(np.random.Philox(key=[int(seed), 0x5B117]))
    perm = rng.permutation(n)
    n_val = int(round(n * val_fraction))
    return perm[n_val:], perm[:n_val]


def _log_write(fh, obj) -> None:
    if fh is not None:
        fh.write(json.dumps(obj) + "\n")
        fh.flush()


def predict_poses(model, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode predictions in meters, batched."""
    outs = []
    for i in range(0, len(x), batch_size):
        outs.append(model.forward(x[i: i + batch_size]).data)
    return np.concatenate(outs, axis=0)


def train_lifter(model, records, config: TrainConfig, log_path=None):
    """Train the direct lifter; returns the per-epoch history.

    Deterministic given the seed: data order, dropout masks, and the val
    split all derive from it.
    """
    config.validate()
    if not records:
        raise ParameterError("training requires a non-empty dataset")
    skel = model.skeleton
    x, y = records_to_arrays(records, skel)
    train_idx, val_idx = split_indices(len(x), config.val_fraction, config.seed)
    xtr, ytr = x[train_idx], y[train_idx]
    xval, yval = x[val_idx], y[val_idx]
    if config.flip_augment:
        xtr = np.concatenate([xtr, flip_batch(xtr, skel)], axis=0)
        ytr = np.concatenate([ytr, flip_batch(ytr, skel)], axis=0)

    model.reset_dropout(config.seed)
    adam = Adam(model.named_parameters())
    history = []
    step = 0
    fh = open(log_path, "w") if log_path else None
    try:
        _log_write(fh, {"config": {"train": config.to_dict(),
                                   "model": model.config.to_dict()}})
        for epoch in range(config.epochs):
            order_rng = np.random.Generator(
                np.random.Philox(key=[int(config.seed), 0xE90C + epoch]))
            order = order_rng.permutation(len(xtr))
            epoch_loss = 0.0
            n_batches = 0
            for lo in range(0, len(order), config.batch_size):
                idx = order[lo: lo + config.batch_size]
                lr = lr_at(config, epoch, step)
                with Tape() as tape:
                    pred = model.forward(xtr[idx], training=True)
                    loss = pose_loss(pred, ytr[idx], config.lambda_weight)
                    value = loss.item()
                    if not np.isfinite(value):
                        raise NumericError(
                            f"training diverged at epoch {epoch} step {step}")
                    tape.backward(loss)
                adam.step(lr)
                epoch_loss += value
                n_batches += 1
                step += 1
            val_mpjpe = float("nan")
            if len(xval):
                pred_mm = predict_poses(model, xval) * MM_PER_UNIT
                val_mpjpe = evaluation.mpjpe(pred_mm, yval * MM_PER_UNIT, skel.root)
            rec = {"epoch": epoch, "step": step,
                   "lr": lr_at(config, epoch, max(step - 1, 0)),
                   "train_loss": epoch_loss / max(n_batches, 1),
                   "val_mpjpe_mm": val_mpjpe}
            history.append(rec)
            _log_write(fh, rec)
    finally:
        if fh:
            fh.close()
    return history


def sample_poses(model: DiffusionLifter, encoder, x: np.ndarray,
                 rng: np.random.Generator, n_chains: int = None,
                 steps=None, init_std: float = None) -> np.ndarray:
    """Diffusion inference for a batch of 2D poses, in meters.

    Chains start from a per-joint Gaussian around (x2d, y2d, encoder z); the
    deterministic reverse chain runs along the step sub-sequence and chains
    are averaged per sample.
    """
    cfg = model.config
    n_chains = cfg.n_chains if n_chains is None else n_chains
    init_std = cfg.init_std if init_std is None else init_std
    if init_std <= 0:
        raise ParameterError("init std must be positive")
    if steps is None:
        steps = default_step_subsequence(model.schedule.steps, cfg.ddim_steps)
    s, n, _ = x.shape
    if encoder is not None:
        z = predict_poses(encoder, x)[:, :, 2]
    else:
        z = np.zeros((s, n))
    mean = np.concatenate([x, z[:, :, None]], axis=2)
    noise = rng.standard_normal((s, n_chains, n, 3))
    chains = mean[:, None, :, :] + init_std * noise
    flat = chains.reshape(s * n_chains, n, 3)
    cond = np.repeat(x, n_chains, axis=0)
    h0 = ddim_sample(model, flat, cond, steps)
    return h0.reshape(s, n_chains, n, 3).mean(axis=1)


def train_diffusion(model: DiffusionLifter, records, config: TrainConfig,
                    log_path=None, encoder=None, val_cap: int = 64):
    """Train the stepwise reverse model; returns the per-epoch history."""
    config.validate()
    if not records:
        raise ParameterError("training requires a non-empty dataset")
    skel = model.backbone.skeleton
    x, y = records_to_arrays(records, skel)
    train_idx, val_idx = split_indices(len(x), config.val_fraction, config.seed)
    xtr, ytr = x[train_idx], y[train_idx]
    xval, yval = x[val_idx][:val_cap], y[val_idx][:val_cap]

    model.reset_dropout(config.seed)
    adam = Adam(model.named_parameters())
    draw_rng = np.random.Generator(np.random.Philox(key=[int(config.seed), 0xD1FF]))
    history = []
    step = 0
    fh = open(log_path, "w") if log_path else None
    try:
        _log_write(fh, {"config": {"train": config.to_dict(),
                                   "diffusion": model.config.to_dict()}})
        for epoch in range(config.epochs):
            order_rng = np.random.Generator(
                np.random.Philox(key=[int(config.seed), 0xE90C + epoch]))
            order = order_rng.permutation(len(xtr))
            epoch_loss = 0.0
            n_batches = 0
            for lo in range(0, len(order), config.batch_size):
                idx = order[lo: lo + config.batch_size]
                lr = lr_at(config, epoch, step)
                draws = make_draws(draw_rng, len(idx), skel.n_joints,
                                   model.schedule.steps)
                with Tape() as tape:
                    loss = diffusion_loss(model, ytr[idx], xtr[idx], draws)
                    value = loss.item()
                    if not np.isfinite(value):
                        raise NumericError(
                            f"training diverged at epoch {epoch} step {step}")
                    tape.backward(loss)
                adam.step(lr)
                epoch_loss += value
                n_batches += 1
                step += 1
            val_mpjpe = float("nan")
            if len(xval):
                val_rng = np.random.Generator(
                    np.random.Philox(key=[int(config.seed), 0x5A3F + epoch]))
                pred = sample_poses(model, encoder, xval, val_rng)
                val_mpjpe = evaluation.mpjpe(pred * MM_PER_UNIT,
                                             yval * MM_PER_UNIT, skel.root)
            rec = {"epoch": epoch, "step": step,
                   "lr": lr_at(config, epoch, max(step - 1, 0)),
                   "train_loss": epoch_loss / max(n_batches, 1),
                   "val_mpjpe_mm": val_mpjpe}
            history.append(rec)
            _log_write(fh, rec)
    finally:
        if fh:
            fh.close()
    return history
