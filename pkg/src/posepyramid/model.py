"""Model assembly: embedding conv, alternating local graph blocks and pyramid
attention blocks, output head. Also parameter counting and the closed-form
complexity estimate used for architecture comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .attention import PyramidAttentionLayer, pyramid_block
from .errors import ParameterError, ShapeError
from .gcn import LocalGraphBlock, VanillaGraphConv
from .skeleton import load_skeleton, normalize_adjacency, scaled_laplacian
from .tensor import RngHub, Tensor


@dataclass
class ModelConfig:
    n_joints: int = 16
    hidden: int = 96
    layers: int = 5
    cheb_order: int = 2
    heads: int = 4
    lp_units: int = 2
    attn_dropout: float = 0.05
    residual_dropout: float = 0.25
    in_channels: int = 2
    out_channels: int = 3
    skeleton: str = "skeleton16"
    attn_scale: str = "per_head"
    use_attention: bool = True

    def validate(self) -> None:
        if self.hidden % self.heads != 0:
            raise ParameterError(
                f"hidden={self.hidden} must be divisible by heads={self.heads}"
            )
        if self.layers < 1:
            raise ParameterError("at least one layer pair is required")
        if self.lp_units < 1:
            raise ParameterError("at least one local block per pair is required")

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


class PoseLifter:
    """Maps (B, N, in_channels) inputs to (B, N, out_channels) poses."""

    # RNG site ids: 16 slots per attention layer is plenty for its 3 sites
    _SITES_PER_LAYER = 16

    def __init__(self, config: ModelConfig, seed: int, zero_head: bool = False):
        config.validate()
        self.config = config
        self.skeleton, self.scheme = load_skeleton(config.skeleton)
        if self.skeleton.n_joints != config.n_joints:
            raise ParameterError(
                f"config says {config.n_joints} joints but asset "
                f"{config.skeleton!r} has {self.skeleton.n_joints}"
            )
        self.adjn = normalize_adjacency(self.skeleton)
        self.lap = scaled_laplacian(self.adjn)
        self.rng_hub = RngHub(seed)
        gen = np.random.Generator(np.random.Philox(key=[int(seed), 0x9e3779b9]))

        self.embed = VanillaGraphConv(config.in_channels, config.hidden, self.adjn, gen)
        self.pairs = []
        for li in range(config.layers):
            locals_ = [
                LocalGraphBlock(config.n_joints, config.hidden, self.lap,
                                config.cheb_order, gen)
                for _ in range(config.lp_units)
            ]
            attn = None
            if config.use_attention:
                attn = PyramidAttentionLayer(
                    config.hidden, config.heads, self.scheme, self.adjn, gen,
                    attn_dropout=config.attn_dropout,
                    residual_dropout=config.residual_dropout,
                    scale_mode=config.attn_scale,
                    rng_hub=self.rng_hub,
                    site_base=(li + 1) * self._SITES_PER_LAYER,
                )
            self.pairs.append((locals_, attn))
        self.head = VanillaGraphConv(config.hidden, config.out_channels, self.adjn,
                                     gen, zero_init=zero_head)
        if zero_head:
            self.head.bias.data[:] = 0.0

    def forward(self, x, training: bool = False) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim != 3 or x.shape[1] != self.config.n_joints \
                or x.shape[2] != self.config.in_channels:
            raise ShapeError(
                f"expected (B, {self.config.n_joints}, {self.config.in_channels}) "
                f"input, got {x.shape}"
            )
        h = self.embed(x)
        for locals_, attn in self.pairs:
            for block in locals_:
                h = block(h, training)
            if attn is not None:
                h = pyramid_block(h, attn, training)
        return self.head(h)

    def __call__(self, x, training: bool = False) -> Tensor:
        return self.forward(x, training)

    def named_parameters(self) -> dict:
        params = {}
        params.update(self.embed.parameters("embed"))
        for li, (locals_, attn) in enumerate(self.pairs):
            for ui, block in enumerate(locals_):
                params.update(block.parameters(f"pairs.{li}.local.{ui}"))
            if attn is not None:
                params.update(attn.parameters(f"pairs.{li}.attn"))
        params.update(self.head.parameters("head"))
        return params

    def attention_layers(self):
        return [attn for _, attn in self.pairs if attn is not None]

    def reset_dropout(self, seed: int) -> None:
        self.rng_hub.reset(seed)


def build_lifter(config: ModelConfig, seed: int = 0) -> PoseLifter:
    """Deterministic construction: the same seed gives bitwise-equal weights."""
    return PoseLifter(config, seed)


def param_count(model: PoseLifter) -> int:
    return sum(p.size for p in model.named_parameters().values())


def complexity_estimate(config: ModelConfig) -> dict:
    """Closed-form per-layer cost [N*d^2 + (N + sum M_i)*d^2] * layers.

    Also returns the reference values for the stacked-hourglass multi-scale
    design (21*N*d^2) and the parallel multi-scale design (48*N*d^2) used in
    the comparison table. Values are in d^2-granular units: each term counts
    one pass of a feature matrix through a d x d transform.
    """
    config.validate()
    _, scheme = load_skeleton(config.skeleton)
    n = config.n_joints
    d = config.hidden
    fused = scheme.fused_length()
    per_layer = (n + fused) * d * d
    return {
        "per_layer": per_layer,
        "total": per_layer * config.layers,
        "fused_length": fused,
        "hourglass_ref": 21 * n * d * d,
        "parallel_ref": 48 * n * d * d,
    }
