"""Fréchet distance, inception score and mode coverage at toy scale.

A fixed mode classifier stands in for the Inception network: class
posteriors come from a softmax over negative squared distances to known
mixture centres.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "GaussianStats",
    "ModeSpec",
    "fit_gaussian",
    "matrix_sqrt_psd",
    "frechet_distance",
    "inception_score",
    "mode_classifier_probs",
    "mode_coverage",
    "RandomProjection",
    "save_stats",
    "load_stats",
]


@dataclass
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        d = self.mu.shape[0]
        if self.sigma.shape != (d, d):
            raise ValueError(f"covariance shape {self.sigma.shape} does not match mean dimension {d}")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def fit_gaussian(samples) -> GaussianStats:
    x = np.asarray(getattr(samples, "data", samples), dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise ValueError("need at least two samples to estimate a covariance")
    mu = x.mean(axis=0)
    c = x - mu
    sigma = c.T @ c / (x.shape[0] - 1)
    return GaussianStats(mu, 0.5 * (sigma + sigma.T))


def matrix_sqrt_psd(sigma, sym_tol: float = 1e-10, eig_tol: float = 1e-8) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, clamping tiny negative eigenvalues."""
    a = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > sym_tol * scale:
        raise ValueError("matrix is not symmetric")
    w, V = np.linalg.eigh(0.5 * (a + a.T))
    if w.size and w.min() < -eig_tol * scale:
        raise ValueError(f"matrix is indefinite (min eigenvalue {w.min():.3g})")
    root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return 0.5 * (root + root.T)


def frechet_distance(real: GaussianStats, gen: GaussianStats) -> float:
    """Squared 2-Wasserstein distance between two Gaussians."""
    if real.dim != gen.dim:
        raise ValueError(f"dimension mismatch: {real.dim} vs {gen.dim}")
    diff = real.mu - gen.mu
    root_r = matrix_sqrt_psd(real.sigma)
    inner = root_r @ gen.sigma @ root_r
    cross = matrix_sqrt_psd(0.5 * (inner + inner.T))
    fd = float(diff @ diff + np.trace(real.sigma) + np.trace(gen.sigma) - 2.0 * np.trace(cross))
    if -1e-8 <= fd < 0:
        fd = 0.0
    return fd


_IS_SNAP = 1e-12


def inception_score(probs, n_splits: int = 10) -> tuple[float, float]:
    """exp of mean KL(p(y|x) || p(y)), as mean and std over splits."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError("probabilities must be an n x K matrix")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("rows must be non-negative and sum to 1")
    n = p.shape[0]
    if not 1 <= n_splits <= n:
        raise ValueError(f"need 1 <= n_splits <= n, got n_splits={n_splits}, n={n}")
    scores = []
    for part in np.array_split(p, n_splits):
        marginal = part.mean(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(part > 0, part * (np.log(part) - np.log(marginal)), 0.0)
        scores.append(np.exp(terms.sum(axis=1).mean()))
    # KL to the marginal lies in [0, log K]; snap exp/log roundoff onto the bounds
    k = float(p.shape[1])
    scores = np.clip(np.array(scores), 1.0, k)
    scores[np.abs(scores - 1.0) <= _IS_SNAP] = 1.0
    scores[np.abs(scores - k) <= _IS_SNAP * k] = k
    return float(scores.mean()), float(scores.std())


@dataclass
class ModeSpec:
    centers: np.ndarray
    std: float
    quality_radius: float = 3.0

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        if self.std <= 0:
            raise ValueError("mode std must be positive")
        if len(np.unique(self.centers, axis=0)) != len(self.centers):
            raise ValueError("mode centres must be distinct")

    @property
    def n_modes(self) -> int:
        return self.centers.shape[0]


def _sq_dists(samples, centers: np.ndarray) -> np.ndarray:
    x = np.asarray(getattr(samples, "data", samples), dtype=np.float64)
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def mode_classifier_probs(samples, spec: ModeSpec) -> np.ndarray:
    if spec.n_modes < 2:
        raise ValueError("classifier needs at least two modes")
    logits = -_sq_dists(samples, spec.centers) / (2.0 * spec.std ** 2)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def mode_coverage(samples, spec: ModeSpec) -> tuple[int, float]:
    """(modes covered, fraction of high-quality samples).

    A sample is high quality when it lies within ``quality_radius * std`` of
    its nearest centre; a mode counts as covered once it holds at least
    ``max(1, n / (10 K))`` high-quality samples.
    """
    d2 = _sq_dists(samples, spec.centers)
    n = d2.shape[0]
    if n == 0:
        raise ValueError("no samples")
    nearest = d2.argmin(axis=1)
    good = np.sqrt(d2[np.arange(n), nearest]) <= spec.quality_radius * spec.std
    counts = np.bincount(nearest[good], minlength=spec.n_modes)
    need = max(1.0, n / (10.0 * spec.n_modes))
    return int(np.sum(counts >= need)), float(good.mean())


class RandomProjection:
    """Fixed seeded Gaussian map from flattened pixels to a feature space.

    Entries are N(0, 1/out_dim) drawn from ``default_rng(seed)``, so the
    same (in_dim, out_dim, seed) always gives the same map.
    """

    def __init__(self, in_dim: int, out_dim: int = 64, seed: int = 1234):
        self.in_dim, self.out_dim, self.seed = in_dim, out_dim, seed
        rng = np.random.default_rng(seed)
        self.matrix = rng.normal(0.0, 1.0 / np.sqrt(out_dim), size=(in_dim, out_dim))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(getattr(x, "data", x), dtype=np.float64)
        return x.reshape(x.shape[0], -1) @ self.matrix


STATS_FORMAT = "rmcosgan-stats/1"


def save_stats(path, stats: GaussianStats, meta: dict | None = None) -> Path:
    """Cache real-data statistics.

    ``.npz`` with float64 ``mu`` (d,), ``sigma`` (d, d), int64 ``dim`` and
    ``__meta__`` (UTF-8 JSON bytes with a format tag and caller metadata).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps({"format": STATS_FORMAT, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        np.savez(fh, mu=stats.mu, sigma=stats.sigma, dim=np.int64(stats.dim),
                 __meta__=np.frombuffer(header, dtype=np.uint8))
    return path


def load_stats(path) -> GaussianStats:
    with np.load(Path(path), allow_pickle=False) as npz:
        header = json.loads(npz["__meta__"].tobytes().decode())
        if header.get("format") != STATS_FORMAT:
            raise ValueError(f"not a stats cache: {path}")
        stats = GaussianStats(npz["mu"], npz["sigma"])
        if int(npz["dim"]) != stats.dim:
            raise ValueError("stats cache dimension field disagrees with mu")
    return stats
