"""Randomised comparison of tape gradients against central differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import PRIMITIVES, Tensor, apply_primitive, backward, finite_difference_gradient, max_relative_error
from .layers import build_network
from .losses import LogitBatch, LossKind, MarginCosineParams, discriminator_loss, generator_loss

__all__ = ["GradCase", "primitive_case", "check_primitive", "check_loss_endpoint", "run_gradient_suite"]


@dataclass
class GradCase:
    label: str
    rel_error: float


def _away_from_zero(rng, shape, lo=0.05, hi=2.0):
    return rng.uniform(lo, hi, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def primitive_case(kind: str, rng: np.random.Generator):
    """Random inputs and attrs for ``kind``, kept away from kinks and domain edges."""
    n, k = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    shape = (n, k)
    attrs: dict = {}
    if kind in ("add", "sub", "mul"):
        other = (1, k) if rng.random() < 0.3 else shape
        return [rng.normal(size=shape), rng.normal(size=other)], attrs
    if kind == "div":
        return [rng.normal(size=shape), _away_from_zero(rng, shape, 0.5, 2.0)], attrs
    if kind == "matmul":
        return [rng.normal(size=(n, k)), rng.normal(size=(k, int(rng.integers(2, 5))))], attrs
    if kind in ("log", "sqrt"):
        return [rng.uniform(0.2, 3.0, size=shape)], attrs
    if kind in ("relu", "leaky_relu"):
        if kind == "leaky_relu":
            attrs["slope"] = float(rng.uniform(0.01, 0.5))
        return [_away_from_zero(rng, shape)], attrs
    if kind == "clamp_min":
        attrs["floor"] = float(rng.normal())
        return [attrs["floor"] + _away_from_zero(rng, shape)], attrs
    if kind in ("scale", "shift"):
        attrs["c"] = float(rng.normal())
    if kind in ("sum", "mean"):
        attrs["axis"] = [None, 0, 1][int(rng.integers(3))]
    if kind == "reshape":
        attrs["shape"] = (k, n)
    if kind == "broadcast_row":
        attrs["n"] = int(rng.integers(1, 5))
        return [rng.normal(size=(1, k))], attrs
    if kind == "slice_rows":
        start = int(rng.integers(0, n - 1))
        attrs.update(start=start, stop=int(rng.integers(start + 1, n + 1)))
    if kind == "exp":
        return [rng.uniform(-2, 2, size=shape)], attrs
    return [rng.normal(size=shape)], attrs


def check_primitive(kind: str, rng: np.random.Generator, h: float = 1e-5) -> GradCase:
    """Worst relative error over all inputs of sum(w * prim(inputs)) for random w."""
    arrays, attrs = primitive_case(kind, rng)
    inputs = [Tensor(a, requires_grad=True) for a in arrays]
    out = apply_primitive(kind, inputs, attrs)
    w = Tensor(rng.normal(size=out.shape))

    def f(*_):
        return (apply_primitive(kind, inputs, attrs) * w).sum()

    backward(f())
    worst = 0.0
    for t in inputs:
        fd = finite_difference_gradient(f, t, h)
        worst = max(worst, max_relative_error(t.grad, fd))
    return GradCase(kind, worst)


def _small_models(kind: LossKind, rng: np.random.Generator):
    G = build_network([4, 16, 16, 2], "generator", batchnorm=True, rng=rng, init_std=0.5)
    D = build_network([2, 16, 16, 1], "discriminator", head=kind.head, spectral=True, rng=rng, init_std=0.5)
    return G, D


def check_loss_endpoint(kind, side: str, rng: np.random.Generator, batch: int = 8, n_coords: int = 24,
                        h: float = 1e-5, params: MarginCosineParams | None = None) -> GradCase:
    """Gradient of one loss endpoint w.r.t. every parameter of both networks.

    Central differences are taken on ``n_coords`` randomly chosen scalar
    parameters; the tape gradient is compared on exactly those.
    """
    kind = LossKind.parse(kind)
    params = params or MarginCosineParams(s=float(rng.uniform(1, 10)), m=float(rng.uniform(-0.3, 0.5)))
    G, D = _small_models(kind, rng)
    x = Tensor(rng.normal(size=(batch, 2)) * 2.0)
    z = Tensor(rng.normal(size=(batch, 4)))
    loss_fn = discriminator_loss if side == "D" else generator_loss

    def f(*_):
        return loss_fn(kind, LogitBatch(D(x), D(G(z))), params)

    all_params = G.parameters() + D.parameters()
    backward(f())
    auto = [p.grad.copy() for p in all_params]
    sizes = np.array([p.size for p in all_params])
    flat_choice = rng.choice(sizes.sum(), size=min(n_coords, sizes.sum()), replace=False)
    bounds = np.cumsum(sizes)
    picked_auto, picked_fd = [], []
    for j in flat_choice:
        pi = int(np.searchsorted(bounds, j, side="right"))
        local = int(j - (bounds[pi] - sizes[pi]))
        fd = finite_difference_gradient(f, all_params[pi], h, coords=[local]).reshape(-1)[local]
        picked_auto.append(auto[pi].reshape(-1)[local])
        picked_fd.append(fd)
    return GradCase(f"{kind.value}/{side}", max_relative_error(np.array(picked_auto), np.array(picked_fd)))


def run_gradient_suite(seed: int = 0, primitive_reps: int = 8, loss_reps: int = 20) -> list[GradCase]:
    rng = np.random.default_rng(seed)
    cases = []
    for kind in sorted(PRIMITIVES):
        for _ in range(primitive_reps):
            cases.append(check_primitive(kind, rng))
    for kind in LossKind:
        for side in ("D", "G"):
            for _ in range(loss_reps):
                cases.append(check_loss_endpoint(kind, side, rng))
    return cases
