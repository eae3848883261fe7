"""Gradient checks for every layer type and for whole networks."""

from __future__ import annotations

import numpy as np

from . import layers
from .blocks import D2Block, SeparationModel
from .tensor import Tensor, finite_diff_check


def _rng(seed=0):
    return np.random.default_rng(seed)


def layer_checks(seed: int = 0) -> dict:
    """Max relative finite-difference error per layer type on small shapes."""
    rng = _rng(seed)
    results = {}

    conv = layers.Conv2d(3, 2, dilation=(2, 2), rng=rng)
    x = Tensor(rng.standard_normal((2, 3, 8, 8)))
    results["conv2d"] = finite_diff_check(lambda t: conv(t).sum(), x)

    md = layers.MultiDilatedConv([2, 2, 2], 2, rng=rng)
    xg = Tensor(rng.standard_normal((2, 6, 8, 8)))

    def md_fn(t):
        from .tensor import slice_axis
        gs = [slice_axis(t, 1, 2 * i, 2 * i + 2) for i in range(3)]
        return md(gs).sum()

    results["multidilated_conv"] = finite_diff_check(md_fn, xg)

    bn = layers.BatchNorm2d(3)
    bn.set_mode("train")
    xb = Tensor(rng.standard_normal((2, 3, 4, 4)))
    results["batch_norm_train"] = finite_diff_check(
        lambda t: layers.composite_psi(t, bn).sum(), xb)
    bn.set_mode("eval")
    results["batch_norm_eval"] = finite_diff_check(
        lambda t: layers.composite_psi(t, bn).sum(), xb)

    xp = Tensor(rng.standard_normal((2, 2, 5, 6)))
    results["avg_pool_2x2"] = finite_diff_check(
        lambda t: layers.avg_pool_2x2(t).sum(), xp)

    tc = layers.TransposedConv2x2(2, 3, rng=rng)
    results["transposed_conv_2x2"] = finite_diff_check(
        lambda t: tc(t).sum(), xp)

    return results


def d2_check(seed: int = 0, mode: str = "multi") -> float:
    rng = _rng(seed)
    block = D2Block(2, 2, 3, mode=mode, rng=rng)
    block.set_mode("eval")
    x = Tensor(rng.standard_normal((1, 2, 8, 8)))
    return finite_diff_check(lambda t: block(t).sum(), x)


def network_check(config: dict, seed: int = 0,
                  shape=(1, 2, 8, 16)) -> float:
    """End-to-end input-gradient check on a built network (eval mode)."""
    model = SeparationModel(config, seed=seed)
    model.set_mode("eval")
    rng = _rng(seed)
    x = Tensor(np.abs(rng.standard_normal(shape)) + 0.1)
    return finite_diff_check(lambda t: model(t).sum(), x)


def parameter_gradient_check(config: dict, seed: int = 0,
                             shape=(1, 2, 8, 16), n_coords: int = 40,
                             step: float = 1e-6) -> float:
    # A 1e-5 step occasionally straddles a rectifier kink and inflates the
    # difference quotient; 1e-6 stays on one side while roundoff remains
    # far below the 1e-6 relative tolerance.
    """Spot-check parameter gradients of a built network against central
    differences on a random subset of coordinates."""
    model = SeparationModel(config, seed=seed)
    model.set_mode("eval")
    rng = _rng(seed + 1)
    x = Tensor(np.abs(rng.standard_normal(shape)) + 0.1)

    def loss_value():
        out = model(x)
        return (out * out).sum().item()

    model.zero_grad()
    out = model(x)
    (out * out).sum().backward()
    params = list(model.named_parameters())
    worst = 0.0
    for _ in range(n_coords):
        name, p = params[rng.integers(len(params))]
        idx = tuple(rng.integers(s) for s in p.data.shape)
        analytic = 0.0 if p.grad is None else float(p.grad[idx])
        orig = p.data[idx]
        p.data[idx] = orig + step
        fp = loss_value()
        p.data[idx] = orig - step
        fm = loss_value()
        p.data[idx] = orig
        numeric = (fp - fm) / (2 * step)
        err = abs(analytic - numeric) / max(1.0, abs(analytic))
        worst = max(worst, err)
    return worst
