"""Finite-difference verification of every differentiable layer type and of
the end-to-end toy model. Used by the CLI `gradcheck` subcommand and by the
acceptance suite."""

from __future__ import annotations

import numpy as np

from .attention import PyramidAttentionLayer, pyramid_block
from .diffusion import DiffusionConfig, DiffusionLifter
from .gcn import ChebGraphConv, LocalGraphBlock, VanillaGraphConv
from .model import ModelConfig, PoseLifter
from .skeleton import load_skeleton, normalize_adjacency, scaled_laplacian
from .tensor import (
    BatchNormState,
    Tensor,
    batch_norm,
    dropout,
    finite_diff_check,
    layer_norm,
    matmul,
    mul,
    parameter,
    relu,
    softmax_lastdim,
    sum_all,
)
from .training import diffusion_loss, pose_loss

TOLERANCE = 1e-4


def _gen(seed):
    return np.random.Generator(np.random.Philox(key=[seed, 0xC0FFEE]))


def check_tensor(seed: int = 0):
    gen = _gen(seed)
    results = []

    a = parameter(gen.standard_normal((5, 7)))
    b = Tensor(gen.standard_normal((7, 3)))
    wsum = Tensor(gen.standard_normal((5, 3)))
    results.append(("matmul", finite_diff_check(
        lambda t: sum_all(mul(matmul(t, b), wsum)), a)))

    x = parameter(gen.standard_normal((4, 6)) + 0.1)
    wrelu = Tensor(gen.standard_normal((4, 6)))
    results.append(("relu", finite_diff_check(
        lambda t: sum_all(mul(relu(t), wrelu)), x)))

    x = parameter(gen.standard_normal((3, 5)))
    wmix = Tensor(gen.standard_normal((3, 5)))
    results.append(("softmax", finite_diff_check(
        lambda t: sum_all(mul(softmax_lastdim(t), wmix)), x)))

    x = parameter(gen.standard_normal((4, 6)))
    scale_t = parameter(gen.standard_normal(6) * 0.2 + 1.0)
    shift_t = parameter(gen.standard_normal(6) * 0.1)
    wln = Tensor(gen.standard_normal((4, 6)))
    results.append(("layer_norm/x", finite_diff_check(
        lambda t: sum_all(mul(layer_norm(t, scale_t, shift_t), wln)), x)))
    results.append(("layer_norm/scale", finite_diff_check(
        lambda t: sum_all(mul(layer_norm(x, t, shift_t), wln)), scale_t)))

    xb = parameter(gen.standard_normal((6, 4)))
    bscale = parameter(np.ones(4) + 0.1 * gen.standard_normal(4))
    bshift = parameter(0.1 * gen.standard_normal(4))
    wbn = Tensor(gen.standard_normal((6, 4)))
    results.append(("batch_norm/x", finite_diff_check(
        lambda t: sum_all(mul(batch_norm(
            t, bscale, bshift, BatchNormState(4), training=True), wbn)), xb)))
    results.append(("batch_norm/scale", finite_diff_check(
        lambda t: sum_all(mul(batch_norm(
            xb, t, bshift, BatchNormState(4), training=True), wbn)), bscale)))

    xd = parameter(gen.standard_normal((5, 5)))
    frozen = gen.random((5, 5))
    wdrop = Tensor(gen.standard_normal((5, 5)))
    results.append(("dropout", finite_diff_check(
        lambda t: sum_all(mul(dropout(t, 0.4, True, lambda s: frozen), wdrop)), xd)))

    xn = parameter(gen.standard_normal((4, 3)))
    w1 = parameter(gen.standard_normal((3, 8)) * 0.5)
    w2 = parameter(gen.standard_normal((8, 2)) * 0.5)
    results.append(("two_layer_relu_net/x", finite_diff_check(
        lambda t: sum_all(matmul(relu(matmul(t, w1)), w2)), xn)))
    results.append(("two_layer_relu_net/w1", finite_diff_check(
        lambda t: sum_all(matmul(relu(matmul(xn, t)), w2)), w1)))

    return results


def check_gcn(seed: int = 0):
    gen = _gen(seed)
    skel, _ = load_skeleton("skeleton16")
    adjn = normalize_adjacency(skel)
    lap = scaled_laplacian(adjn)
    results = []

    conv = VanillaGraphConv(4, 3, adjn, gen)
    x = parameter(gen.standard_normal((2, 16, 4)))
    wmix = Tensor(gen.standard_normal((2, 16, 3)))
    results.append(("gconv_vanilla/x", finite_diff_check(
        lambda t: sum_all(mul(conv(t), wmix)), x)))
    results.append(("gconv_vanilla/w", finite_diff_check(
        lambda t: sum_all(mul(conv(x), wmix)), conv.weight)))

    cheb = ChebGraphConv(4, 3, lap, 3, gen)
    results.append(("gconv_cheb/x", finite_diff_check(
        lambda t: sum_all(mul(cheb(t), wmix)), x)))
    results.append(("gconv_cheb/w2", finite_diff_check(
        lambda t: sum_all(mul(cheb(x), wmix)), cheb.weights[2])))

    block = LocalGraphBlock(16, 8, lap, 2, gen)
    xb = parameter(gen.standard_normal((2, 16, 8)))
    wb = Tensor(gen.standard_normal((2, 16, 8)))
    results.append(("local_block/x", finite_diff_check(
        lambda t: sum_all(mul(block(t, training=True), wb)), xb)))
    results.append(("local_block/conv1_w0", finite_diff_check(
        lambda t: sum_all(mul(block(xb, training=True), wb)),
        block.conv1.weights[0])))
    return results


def check_pga(seed: int = 0):
    gen = _gen(seed)
    skel, scheme = load_skeleton("skeleton16")
    adjn = normalize_adjacency(skel)
    layer = PyramidAttentionLayer(8, 4, scheme, adjn, gen)
    x = parameter(gen.standard_normal((2, 16, 8)))
    wmix = Tensor(gen.standard_normal((2, 16, 8)))

    def block_loss(_):
        return sum_all(mul(pyramid_block(x, layer, training=False), wmix))

    results = [("pga_block/x", finite_diff_check(
        lambda t: sum_all(mul(pyramid_block(t, layer, training=False), wmix)), x))]
    for name, p in (("wq", layer.wq), ("wk", layer.wk), ("wv", layer.wv),
                    ("wo", layer.wo), ("fuse_scale", layer.fuse_scale),
                    ("ln_scale", layer.ln_scale), ("gconv_w", layer.gconv.weight)):
        results.append((f"pga_block/{name}", finite_diff_check(block_loss, p)))
    return results


def check_model(seed: int = 0):
    cfg = ModelConfig(n_joints=16, hidden=8, layers=1, heads=4)
    model = PoseLifter(cfg, seed)
    gen = _gen(seed + 1)
    x = gen.standard_normal((2, 16, 2))
    y = gen.standard_normal((2, 16, 3))

    def loss_fn(_):
        return pose_loss(model.forward(x, training=False), y, 0.5)

    worst = 0.0
    for _, p in model.named_parameters().items():
        worst = max(worst, finite_diff_check(loss_fn, p))
    return [("model_end_to_end/all_params", worst)]


def check_diffusion(seed: int = 0):
    cfg = DiffusionConfig(
        backbone=ModelConfig(n_joints=16, hidden=8, layers=1, heads=4),
        emb_dim=4)
    model = DiffusionLifter(cfg, seed)
    gen = _gen(seed + 2)
    h0 = gen.standard_normal((2, 16, 3)) * 0.3
    cond = gen.standard_normal((2, 16, 2)) * 0.3
    draws = (np.array([10, 40]), gen.standard_normal((2, 16, 3)))

    def loss_fn(_):
        return diffusion_loss(model, h0, cond, draws, training=False)

    worst = 0.0
    for _, p in model.named_parameters().items():
        worst = max(worst, finite_diff_check(loss_fn, p))
    return [("diffusion_loss/all_params", worst)]


MODULES = {
    "tensor": check_tensor,
    "gcn": check_gcn,
    "pga": check_pga,
    "model": check_model,
    "diffusion": check_diffusion,
}


def run(module: str = "all", seed: int = 0):
    """Returns a list of (check name, max relative error)."""
    names = list(MODULES) if module == "all" else [module]
    results = []
    for name in names:
        results.extend(MODULES[name](seed))
    return results
