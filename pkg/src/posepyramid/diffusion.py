"""Denoising-diffusion variant: noise schedule, closed-form forward noising,
stepwise reverse model conditioned on the 2D pose and a sinusoidal step
embedding, and accelerated deterministic sampling over a step sub-sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ParameterError, ShapeError
from .model import ModelConfig, PoseLifter
from .tensor import Tensor


@dataclass
class NoiseSchedule:
    """Linear variance schedule; alpha_bar[0] == 1 by convention."""

    steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 2e-3

    def __post_init__(self):
        if self.steps < 1:
            raise ParameterError("schedule needs at least one step")
        self.betas = np.linspace(self.beta_start, self.beta_end, self.steps)
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ParameterError("betas must lie strictly inside (0, 1)")
        self.alphas = 1.0 - self.betas
        self.alpha_bars = np.concatenate([[1.0], np.cumprod(self.alphas)])

    def alpha_bar(self, k) -> np.ndarray:
        """alpha_bar for step(s) k in 0..steps (0 means clean data)."""
        k = np.asarray(k)
        if np.any(k < 0) or np.any(k > self.steps):
            raise ParameterError(f"step index out of range 0..{self.steps}")
        return self.alpha_bars[k]

    def to_dict(self) -> dict:
        return {"steps": self.steps, "beta_start": self.beta_start,
                "beta_end": self.beta_end}


def forward_sample(h0: np.ndarray, k, noise: np.ndarray,
                   schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form noisy sample sqrt(ab_k)*h0 + sqrt(1-ab_k)*noise, 1 <= k <= K."""
    karr = np.asarray(k)
    if np.any(karr < 1) or np.any(karr > schedule.steps):
        raise ParameterError(f"step must be in 1..{schedule.steps}")
    ab = schedule.alpha_bar(karr)
    if karr.ndim > 0:
        ab = ab.reshape((-1,) + (1,) * (np.asarray(h0).ndim - 1))
    return np.sqrt(ab) * h0 + np.sqrt(1.0 - ab) * noise


def step_embedding(k, dim: int, base: float = 10000.0) -> np.ndarray:
    """Transformer-style sinusoidal embedding; interleaved sin/cos pairs."""
    if dim % 2 != 0:
        raise ParameterError("step embedding dimension must be even")
    karr = np.atleast_1d(np.asarray(k, dtype=np.float64))
    half = dim // 2
    freqs = base ** (-np.arange(half) / half)
    ang = karr[:, None] * freqs[None, :]
    emb = np.empty((karr.shape[0], dim))
    emb[:, 0::2] = np.sin(ang)
    emb[:, 1::2] = np.cos(ang)
    return emb[0] if np.isscalar(k) or np.asarray(k).ndim == 0 else emb


@dataclass
class DiffusionConfig:
    backbone: ModelConfig = field(default_factory=lambda: ModelConfig(
        hidden=64, layers=3, attn_dropout=0.15))
    steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 2e-3
    emb_dim: int = 16
    ddim_steps: int = 5
    n_chains: int = 5
    init_std: float = 0.05
    parameterization: str = "direct"  # or "epsilon"

    def __post_init__(self):
        if self.parameterization not in ("direct", "epsilon"):
            raise ParameterError(
                f"unknown parameterization {self.parameterization!r}")
        if self.emb_dim % 2 != 0:
            raise ParameterError("emb_dim must be even")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone"] = self.backbone.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DiffusionConfig":
        d = dict(d)
        backbone = d.pop("backbone", {})
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        known["backbone"] = ModelConfig.from_dict(backbone) if isinstance(
            backbone, dict) else backbone
        return cls(**known)


class DiffusionLifter:
    """Reverse-process model: one shared backbone across all steps.

    The backbone input channels carry (noisy 3D pose | 2D condition |
    broadcast step embedding); the output head is zero-initialized and added
    back onto the noisy pose, so a freshly built model is the identity map.
    `eval_count` tallies per-sample network evaluations.
    """

    def __init__(self, config: DiffusionConfig, seed: int = 0):
        self.config = config
        bb = ModelConfig.from_dict(config.backbone.to_dict())
        bb.in_channels = 3 + 2 + config.emb_dim
        bb.out_channels = 3
        self.backbone = PoseLifter(bb, seed, zero_head=True)
        self.schedule = NoiseSchedule(config.steps, config.beta_start,
                                      config.beta_end)
        self.eval_count = 0

    def named_parameters(self) -> dict:
        return self.backbone.named_parameters()

    def reset_dropout(self, seed: int) -> None:
        self.backbone.reset_dropout(seed)

    def net(self, h_k: np.ndarray, k, cond2d: np.ndarray,
            training: bool = False) -> Tensor:
        """Raw backbone output for noisy poses (B, N, 3) at step(s) k."""
        h_k = np.asarray(h_k, dtype=np.float64)
        cond2d = np.asarray(cond2d, dtype=np.float64)
        if h_k.ndim != 3 or h_k.shape[-1] != 3:
            raise ShapeError(f"expected (B, N, 3) noisy poses, got {h_k.shape}")
        if cond2d.shape != h_k.shape[:2] + (2,):
            raise ShapeError(
                f"condition shape {cond2d.shape} does not match poses {h_k.shape}")
        b, n, _ = h_k.shape
        karr = np.full(b, k, dtype=np.float64) if np.isscalar(k) else np.asarray(
            k, dtype=np.float64)
        emb = step_embedding(karr, self.config.emb_dim)
        emb = np.repeat(emb[:, None, :], n, axis=1)
        x = np.concatenate([h_k, cond2d, emb], axis=2)
        self.eval_count += b
        return self.backbone.forward(x, training=training)

    def predict_next(self, h_k: np.ndarray, k_from: int, k_to: int,
                     cond2d: np.ndarray) -> np.ndarray:
        """One deterministic reverse hop k_from -> k_to (eval mode)."""
        if not (1 <= k_from <= self.schedule.steps):
            raise ParameterError(f"k_from must be in 1..{self.schedule.steps}")
        if not (0 <= k_to < k_from):
            raise ParameterError("k_to must satisfy 0 <= k_to < k_from")
        out = self.net(h_k, k_from, cond2d).data
        if self.config.parameterization == "direct":
            return h_k + out
        # epsilon parameterization: deterministic (sigma = 0) jump
        ab_from = self.schedule.alpha_bar(k_from)
        ab_to = self.schedule.alpha_bar(k_to)
        x0_hat = (h_k - np.sqrt(1.0 - ab_from) * out) / np.sqrt(ab_from)
        return np.sqrt(ab_to) * x0_hat + np.sqrt(1.0 - ab_to) * out


def reverse_step(model: DiffusionLifter, h_k: np.ndarray, k: int,
                 cond2d: np.ndarray) -> np.ndarray:
    """Single denoising step k -> k-1."""
    return model.predict_next(h_k, k, k - 1, cond2d)


def default_step_subsequence(total_steps: int, n_evals: int) -> list:
    """Uniform picks, e.g. 50 steps and 5 evals give [50, 40, 30, 20, 10]."""
    if n_evals < 1 or n_evals > total_steps:
        raise ParameterError("eval count must be in 1..total_steps")
    picks = [int(round(total_steps - i * total_steps / n_evals))
             for i in range(n_evals)]
    picks = sorted(set(p for p in picks if p >= 1), reverse=True)
    return picks


def ddim_sample(model: DiffusionLifter, init_samples: np.ndarray,
                cond2d: np.ndarray, steps=None) -> np.ndarray:
    """Run the deterministic reverse chain along a decreasing sub-sequence.

    `init_samples` is (S, N, 3); every chain gets exactly len(steps) model
    evaluations, the last one landing on the clean estimate (step 0).
    """
    if steps is None:
        steps = default_step_subsequence(model.schedule.steps,
                                         model.config.ddim_steps)
    steps = list(steps)
    if not steps:
        raise ParameterError("the step sub-sequence is empty")
    if any(steps[i] <= steps[i + 1] for i in range(len(steps) - 1)):
        raise ParameterError("steps must be strictly decreasing")
    if steps[0] > model.schedule.steps or steps[-1] < 1:
        raise ParameterError(f"steps must lie in 1..{model.schedule.steps}")
    init_samples = np.asarray(init_samples, dtype=np.float64)
    cond = np.broadcast_to(cond2d, init_samples.shape[:2] + (2,))
    h = init_samples
    hops = list(zip(steps, steps[1:] + [0]))
    for k_from, k_to in hops:
        h = model.predict_next(h, k_from, k_to, cond)
    return h


def init_gaussian(pose2d: np.ndarray, encoder: PoseLifter, std: float,
                  rng: np.random.Generator, n_samples: int) -> np.ndarray:
    """Draw initial chains around (x_2d, y_2d, z from the encoder)."""
    if std <= 0:
        raise ParameterError(f"init std must be positive, got {std}")
    pose2d = np.asarray(pose2d, dtype=np.float64)
    z = encoder.forward(pose2d[None]).data[0, :, 2]
    mean = np.concatenate([pose2d, z[:, None]], axis=1)
    noise = rng.standard_normal((n_samples,) + mean.shape)
    return mean[None] + std * noise


def aggregate_samples(samples: np.ndarray) -> np.ndarray:
    """Coordinate-wise mean over the chain axis."""
    samples = np.asarray(samples, dtype=np.float64)
    return samples.mean(axis=0)
