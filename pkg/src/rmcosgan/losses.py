"""Discriminator and generator losses for eight GAN formulations.

All losses take a :class:`LogitBatch` of critic outputs.  Paired
relativistic losses (R-CE, RMCos) pair real sample ``i`` with fake sample
``i``; the relativistic-average ones compare each sample with the mean
critic value of the opposite class.

``log(1 - sigmoid(x))`` is always computed as ``log_sigmoid(-x)`` so large
logits never hit ``log(0)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import DomainError, ShapeError, Tensor, backward

__all__ = [
    "LossKind",
    "MarginCosineParams",
    "LogitBatch",
    "HeadMismatchError",
    "discriminator_loss",
    "generator_loss",
    "rmcos_objective",
    "rsgan_objective",
    "MonotonicityResult",
    "margin_monotonicity_check",
    "link_function_variant_check",
    "LINKS",
]


class LossKind(str, enum.Enum):
    CE = "CE"
    R_CE = "R-CE"
    RA_CE = "Ra-CE"
    LS = "LS"
    RA_LS = "Ra-LS"
    HINGE = "Hinge"
    RA_HINGE = "Ra-Hinge"
    RMCOS = "RMCos"

    @classmethod
    def parse(cls, name: "str | LossKind") -> "LossKind":
        if isinstance(name, LossKind):
            return name
        for kind in cls:
            if kind.value.lower() == str(name).lower() or kind.name.lower() == str(name).lower():
                return kind
        valid = ", ".join(k.value for k in cls)
        raise ValueError(f"unknown loss kind {name!r}; valid kinds: {valid}")

    @property
    def head(self) -> str:
        return "cosine" if self is LossKind.RMCOS else "linear"


@dataclass(frozen=True)
class MarginCosineParams:
    s: float = 10.0
    m: float = 0.15

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"scale s must be positive, got {self.s}")


class HeadMismatchError(ValueError):
    """RMCos needs cosine logits in [-1, 1]."""


@dataclass
class LogitBatch:
    real: Tensor
    fake: Tensor

    def __post_init__(self):
        self.real = _vec(self.real)
        self.fake = _vec(self.fake)
        if self.real.shape[0] != self.fake.shape[0]:
            raise ShapeError(f"real and fake logits differ in length: {self.real.shape[0]} vs {self.fake.shape[0]}")

    def __len__(self) -> int:
        return self.real.shape[0]

    def swapped(self) -> "LogitBatch":
        return LogitBatch(self.fake, self.real)

    def difference(self) -> Tensor:
        """Paired critic gap, real minus fake."""
        return self.real - self.fake


def _vec(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if t.ndim == 0:
        t = t.reshape(1)
    if t.ndim != 1:
        raise ShapeError(f"logits must be a vector, got shape {t.shape}")
    return t


_COSINE_SLACK = 1e-12


def _check_cosine(batch: LogitBatch) -> None:
    for name, t in (("real", batch.real), ("fake", batch.fake)):
        if np.any(np.abs(t.data) > 1.0 + _COSINE_SLACK):
            raise HeadMismatchError(f"RMCos needs cosine-head logits in [-1, 1]; {name} logits reach {np.max(np.abs(t.data)):.6g}")


def _nll(x: Tensor) -> Tensor:
    """-mean log sigmoid(x)"""
    return -x.log_sigmoid().mean()


def _nll_neg(x: Tensor) -> Tensor:
    """-mean log(1 - sigmoid(x))"""
    return -(-x).log_sigmoid().mean()


def _hinge(x: Tensor) -> Tensor:
    """mean max(0, 1 - x)"""
    return (1.0 - x).clamp_min(0.0).mean()


def _hinge_neg(x: Tensor) -> Tensor:
    """mean max(0, 1 + x)"""
    return (1.0 + x).clamp_min(0.0).mean()


def _margin_term(a: Tensor, b: Tensor, s: float, m) -> Tensor:
    return _nll((a - b - m) * s)


def _params(kind: LossKind, params: MarginCosineParams | None) -> MarginCosineParams:
    if params is None:
        if kind is LossKind.RMCOS:
            raise ValueError("RMCos loss needs MarginCosineParams")
        return MarginCosineParams()
    return params


def _pair_loss(kind: LossKind, a: Tensor, b: Tensor, s: float, m) -> Tensor:
    """Loss of the side that wants ``a`` judged real and ``b`` judged fake.

    Relativistic losses are symmetric, so the generator loss is the
    discriminator loss with the roles of real and fake exchanged.
    """
    if kind is LossKind.R_CE:
        return _nll(a - b)
    if kind is LossKind.RA_CE:
        return _nll(a - b.mean()) + _nll_neg(b - a.mean())
    if kind is LossKind.RA_LS:
        return (a - b.mean() - 1.0).square().mean() + (b - a.mean() + 1.0).square().mean()
    if kind is LossKind.RA_HINGE:
        return _hinge(a - b.mean()) + _hinge_neg(b - a.mean())
    if kind is LossKind.RMCOS:
        return _margin_term(a, b, s, m)
    raise AssertionError(kind)


def discriminator_loss(kind, batch: LogitBatch, params: MarginCosineParams | None = None, m=None) -> Tensor:
    """D-side loss.  ``m`` overrides ``params.m`` (it may be a Tensor)."""
    kind = LossKind.parse(kind)
    p = _params(kind, params)
    if len(batch) == 0:
        raise ShapeError("empty logit batch")
    cr, cf = batch.real, batch.fake
    if kind is LossKind.CE:
        return _nll(cr) + _nll_neg(cf)
    if kind is LossKind.LS:
        return 0.5 * (cr - 1.0).square().mean() + 0.5 * cf.square().mean()
    if kind is LossKind.HINGE:
        return _hinge(cr) + _hinge_neg(cf)
    if kind is LossKind.RMCOS:
        _check_cosine(batch)
    return _pair_loss(kind, cr, cf, p.s, p.m if m is None else m)


def generator_loss(kind, batch: LogitBatch, params: MarginCosineParams | None = None, m=None) -> Tensor:
    """G-side loss; CE uses the non-saturating form."""
    kind = LossKind.parse(kind)
    p = _params(kind, params)
    if len(batch) == 0:
        raise ShapeError("empty logit batch")
    cr, cf = batch.real, batch.fake
    if kind is LossKind.CE:
        return _nll(cf)
    if kind is LossKind.LS:
        return 0.5 * (cf - 1.0).square().mean()
    if kind is LossKind.HINGE:
        return -cf.mean()
    if kind is LossKind.RMCOS:
        _check_cosine(batch)
    return _pair_loss(kind, cf, cr, p.s, p.m if m is None else m)


def rmcos_objective(batch: LogitBatch, s: float, m) -> Tensor:
    """Full saddle objective: the D term plus the G term of RMCos."""
    params = MarginCosineParams(s=s, m=0.0)
    return (discriminator_loss(LossKind.RMCOS, batch, params, m=m)
            + generator_loss(LossKind.RMCOS, batch, params, m=m))


def rsgan_objective(batch: LogitBatch) -> Tensor:
    """Both terms of the paired relativistic cross-entropy objective."""
    return discriminator_loss(LossKind.R_CE, batch) + generator_loss(LossKind.R_CE, batch)


# ---------------------------------------------------------------------------
# margin monotonicity
# ---------------------------------------------------------------------------


@dataclass
class MonotonicityResult:
    m_grid: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray = field(default_factory=lambda: np.empty(0))
    passed: bool = False

    @property
    def min_increment(self) -> float:
        return float(np.min(np.diff(self.values)))


def _check_grid(m_grid: Sequence[float]) -> np.ndarray:
    grid = np.asarray(m_grid, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 3:
        raise ValueError("margin grid needs at least 3 points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("margin grid must be strictly increasing")
    return grid


def margin_monotonicity_check(batch: LogitBatch, s: float, m_grid: Sequence[float],
                              tol: float = 1e-12, strict: bool = True) -> MonotonicityResult:
    """Evaluate the RMCos objective across ``m_grid`` with its tape derivative in m.

    Passes when the values increase along the grid (strictly unless
    ``strict=False``) and every derivative is at least ``-tol``.
    """
    grid = _check_grid(m_grid)
    fixed = LogitBatch(batch.real.detach(), batch.fake.detach())
    values, derivs = [], []
    for m in grid:
        mt = Tensor(m, requires_grad=True)
        obj = rmcos_objective(fixed, s, mt)
        backward(obj)
        values.append(obj.item())
        derivs.append(float(mt.grad))
    values = np.array(values)
    derivs = np.array(derivs)
    passed = bool(_increasing(values, strict) and np.all(derivs >= -tol))
    return MonotonicityResult(grid, values, derivs, passed)


def _increasing(values: np.ndarray, strict: bool) -> bool:
    steps = np.diff(values)
    return bool(np.all(steps > 0) if strict else np.all(steps >= 0))


def _log_sigmoid_np(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def _log_positive(y: np.ndarray, name: str) -> np.ndarray:
    if np.any(y <= 0):
        raise DomainError(f"{name} link produced non-positive values; log is undefined")
    return np.log(y)


LINKS = {
    "sigmoid": _log_sigmoid_np,
    "softplus": lambda x: _log_positive(np.logaddexp(0.0, x), "softplus"),
    # (1 + tanh x) / 2 == sigmoid(2x); the identity keeps log finite for very negative x
    "tanh-shifted": lambda x: _log_sigmoid_np(2.0 * x),
    "arctan-shifted": lambda x: _log_positive(0.5 + np.arctan(x) / np.pi, "arctan-shifted"),
    "relu": lambda x: _log_positive(np.maximum(x, 0.0), "relu"),
}


def link_function_variant_check(batch: LogitBatch, s: float, m_grid: Sequence[float],
                                link: str = "sigmoid", strict: bool = True) -> MonotonicityResult:
    """Monotonicity in m of -mean log link(s(h-m)) - mean log link(s(-h-m))."""
    try:
        log_link = LINKS[link]
    except KeyError:
        raise ValueError(f"unknown link {link!r}; choose from {sorted(LINKS)}") from None
    grid = _check_grid(m_grid)
    cr, cf = batch.real.data, batch.fake.data
    values = []
    for m in grid:
        d_term = -np.mean(log_link((cr - cf - m) * s))
        g_term = -np.mean(log_link((cf - cr - m) * s))
        values.append(d_term + g_term)
    values = np.array(values)
    return MonotonicityResult(grid, values, passed=_increasing(values, strict))
