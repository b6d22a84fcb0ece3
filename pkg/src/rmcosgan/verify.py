"""Executable property suite behind ``rmcosgan verify``.

Each property returns ``(passed, detail)``.  An exception inside a
property is reported as a failure of that property, never propagated.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses
from .autodiff import DomainError, Tensor
from .data import IdxFormatError, denormalize_images, normalize_images, parse_idx, serialize_idx
from .gradcheck import run_gradient_suite
from .harness import ExperimentConfig, load_training_checkpoint, train
from .layers import SpectralNormWrapper, build_network, load_checkpoint, save_checkpoint
from .metrics import GaussianStats, frechet_distance, inception_score, matrix_sqrt_psd

__all__ = ["Check", "PROPERTIES", "run_verify", "MARGIN_GRID"]

MARGIN_GRID = np.round(np.arange(-0.5, 0.5 + 1e-9, 0.05), 10)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  {self.detail}  ({self.seconds:.1f}s)"


def _random_batch(rng: np.random.Generator, lo: float = -1.0, hi: float = 1.0) -> losses.LogitBatch:
    n = int(rng.integers(1, 33))
    return losses.LogitBatch(Tensor(rng.uniform(lo, hi, n)), Tensor(rng.uniform(lo, hi, n)))


def check_gradients(seed: int = 0, tol: float = 1e-4):
    cases = run_gradient_suite(seed)
    worst = max(cases, key=lambda c: c.rel_error)
    bad = sorted({c.label for c in cases if not c.rel_error <= tol})
    detail = f"{len(cases)} cases, max rel err {worst.rel_error:.2e} ({worst.label})"
    if bad:
        detail += f"; failing: {', '.join(bad)}"
    return not bad and len(cases) >= 500, detail


def check_reduction(seed: int = 1, n: int = 1000, tol: float = 1e-12):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        b = _random_batch(rng)
        gap = abs(losses.rmcos_objective(b, 1.0, 0.0).item() - losses.rsgan_objective(b).item())
        worst = max(worst, gap)
    return worst <= tol, f"{n} batches, max |RMCos(s=1,m=0) - R-CE| = {worst:.2e}"


def check_monotonicity(seed: int = 2, n: int = 1000, s: float = 10.0):
    rng = np.random.default_rng(seed)
    failures, min_deriv, min_step = 0, np.inf, np.inf
    for _ in range(n):
        res = losses.margin_monotonicity_check(_random_batch(rng), s, MARGIN_GRID)
        failures += not res.passed
        min_deriv = min(min_deriv, res.derivatives.min())
        min_step = min(min_step, res.min_increment)
    return failures == 0, f"{n} batches, {failures} failures, min dL/dm {min_deriv:.3g}, min increment {min_step:.3g}"


def check_link_variants(seed: int = 3, n: int = 1000, s: float = 10.0):
    rng = np.random.default_rng(seed)
    failures = {"softplus": 0, "tanh-shifted": 0}
    for _ in range(n):
        b = _random_batch(rng)
        for link in failures:
            failures[link] += not losses.link_function_variant_check(b, s, MARGIN_GRID, link).passed
    try:
        losses.link_function_variant_check(_random_batch(rng), s, MARGIN_GRID, "relu")
        relu_rejected = False
    except DomainError:
        relu_rejected = True
    ok = not any(failures.values()) and relu_rejected
    return ok, f"failures {failures}, relu link rejected: {relu_rejected}"


def check_frechet(seed: int = 4, n: int = 100, tol: float = 1e-10, sqrt_tol: float = 1e-8):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(5, 5))
    same = GaussianStats(rng.normal(size=5), a @ a.T)
    errs = [
        abs(frechet_distance(same, same)),
        abs(frechet_distance(GaussianStats([0.0], [[1.0]]), GaussianStats([1.0], [[1.0]])) - 1.0),
        abs(frechet_distance(GaussianStats(np.zeros(2), np.eye(2)), GaussianStats(np.zeros(2), 4 * np.eye(2))) - 2.0),
    ]
    worst_sqrt = 0.0
    for _ in range(n):
        d = int(rng.integers(1, 33))
        b = rng.normal(size=(d, int(rng.integers(1, d + 1))))
        m = b @ b.T
        r = matrix_sqrt_psd(m)
        worst_sqrt = max(worst_sqrt, np.linalg.norm(r @ r - m) / max(np.linalg.norm(m), 1e-300))
    ok = max(errs) <= tol and worst_sqrt <= sqrt_tol
    return ok, f"closed-form max err {max(errs):.2e}, sqrt max rel err {worst_sqrt:.2e} over {n} matrices"


def check_inception_bounds(seed: int = 5, n: int = 200, tol: float = 1e-12):
    rng = np.random.default_rng(seed)
    out_of_range = 0
    for _ in range(n):
        k = int(rng.integers(2, 12))
        rows = int(rng.integers(k, 200))
        p = rng.dirichlet(np.full(k, rng.uniform(0.05, 5.0)), size=rows)
        mean, _ = inception_score(p, int(rng.integers(1, min(10, rows) + 1)))
        out_of_range += not 1.0 <= mean <= k
    k = 8
    uniform, _ = inception_score(np.full((800, k), 1.0 / k))
    onehot, _ = inception_score(np.tile(np.eye(k), (100, 1)))
    ok = out_of_range == 0 and abs(uniform - 1.0) <= tol and abs(onehot - k) <= tol
    return ok, f"{out_of_range} of {n} out of [1, K]; uniform {uniform!r}, one-hot {onehot!r} (K={k})"


def check_idx(seed: int = 6):
    rng = np.random.default_rng(seed)
    arrays = [
        rng.integers(0, 256, size=(3, 4, 5)).astype(np.uint8),
        rng.integers(-128, 128, size=(7,)).astype(np.int8),
        rng.integers(-2**15, 2**15, size=(2, 3)).astype(np.int16),
        rng.integers(-2**31, 2**31, size=(4, 2)).astype(np.int32),
        rng.normal(size=(2, 2, 2)).astype(np.float32),
        rng.normal(size=(9,)),
    ]
    exact = all(np.array_equal(parse_idx(serialize_idx(a)).data, a) and parse_idx(serialize_idx(a)).data.dtype == a.dtype
                for a in arrays)
    raw = serialize_idx(arrays[0])
    offsets = {}
    for label, bad in (("magic", b"\x01" + raw[1:]), ("type", raw[:2] + b"\x07" + raw[3:]),
                       ("truncated", raw[:-1]), ("trailing", raw + b"\x00")):
        try:
            parse_idx(bad)
            offsets[label] = None
        except IdxFormatError as exc:
            offsets[label] = exc.offset
    expected = {"magic": 0, "type": 2, "truncated": len(raw), "trailing": len(raw)}
    pixels = np.arange(256, dtype=np.uint8)
    norm_ok = np.array_equal(denormalize_images(normalize_images(pixels)), pixels)
    ok = exact and offsets == expected and norm_ok
    return ok, f"round-trip exact: {exact}, error offsets {offsets}, pixel round-trip: {norm_ok}"


def check_checkpoint(seed: int = 7):
    rng = np.random.default_rng(seed)
    G = build_network([4, 8, 2], "generator", batchnorm=True, rng=rng)
    D = build_network([2, 8, 1], "discriminator", head="cosine", spectral=True, rng=rng)
    extra = {"opt/x": rng.normal(size=(3, 3))}
    with tempfile.TemporaryDirectory() as tmp:
        path = save_checkpoint(Path(tmp) / "c.npz", {"generator": G, "discriminator": D}, {"k": 1}, extra)
        nets, meta, extra2 = load_checkpoint(path)
        with np.load(path) as first:
            stored = {k: first[k] for k in first.files}
        path2 = save_checkpoint(Path(tmp) / "c2.npz", nets, meta, extra2)
        with np.load(path2) as second:
            restored = {k: second[k] for k in second.files}
    same_params = all(np.array_equal(a.data, b.data) for net, name in ((G, "generator"), (D, "discriminator"))
                      for a, b in zip(net.parameters(), nets[name].parameters()))
    same_arrays = stored.keys() == restored.keys() and all(
        stored[k].dtype == restored[k].dtype and np.array_equal(stored[k], restored[k]) for k in stored)
    return same_params and same_arrays, f"parameters bit-exact: {same_params}, every stored array identical: {same_arrays}"


def check_spectral(seed: int = 8, n: int = 50, tol: float = 1e-2):
    rng = np.random.default_rng(seed)
    w = SpectralNormWrapper(Tensor(np.diag([3.0, 1.0])), rng=rng)
    w.power_iterate(5)
    errs = [abs(np.linalg.svd(w.effective().data, compute_uv=False)[0] - 1.0)]
    for _ in range(n):
        wr = SpectralNormWrapper(Tensor(rng.normal(size=tuple(rng.integers(2, 17, size=2)))), rng=rng)
        wr.power_iterate(200)
        errs.append(abs(np.linalg.svd(wr.effective().data, compute_uv=False)[0] - 1.0))
    return max(errs) <= tol, f"max |sigma_1(W_sn) - 1| = {max(errs):.2e} over {n + 1} matrices"


def check_determinism(seed: int = 9):
    cfg = ExperimentConfig(steps=40, eval_interval=10, eval_samples=200, reference_samples=500, seed=seed,
                           g_layers=[16, 32, 2], d_layers=[2, 32, 1], batch_size=16)
    a = train(cfg).report.deterministic_rows()
    b = train(cfg).report.deterministic_rows()
    with tempfile.TemporaryDirectory() as tmp:
        full = train(cfg.replace(out_dir=tmp, checkpoint_interval=20))
        mid = Path(tmp) / "checkpoint_0000020.npz"
        resumed = train(cfg, resume=mid)
        _, G, _, _, _, _, _ = load_training_checkpoint(Path(tmp) / "checkpoint_0000040.npz")
    resume_ok = all(np.array_equal(x.data, y.data) for x, y in zip(G.parameters(), resumed.generator.parameters()))
    resume_ok = resume_ok and all(np.array_equal(x.data, y.data)
                                  for x, y in zip(full.generator.parameters(), resumed.generator.parameters()))
    return a == b and resume_ok, f"replay identical: {a == b}, resume matches uninterrupted run: {resume_ok}"


PROPERTIES: list[tuple[str, Callable[[], tuple[bool, str]]]] = [
    ("gradient-oracle", check_gradients),
    ("rmcos-reduces-to-rsgan", check_reduction),
    ("margin-monotonicity", check_monotonicity),
    ("link-variants", check_link_variants),
    ("frechet-closed-forms", check_frechet),
    ("inception-bounds", check_inception_bounds),
    ("idx-codec", check_idx),
    ("checkpoint-roundtrip", check_checkpoint),
    ("spectral-norm", check_spectral),
    ("determinism", check_determinism),
]


def run_verify(only: list[str] | None = None, echo: Callable[[str], None] | None = None) -> list[Check]:
    known = [name for name, _ in PROPERTIES]
    if only:
        unknown = sorted(set(only) - set(known))
        if unknown:
            raise ValueError(f"unknown propert{'y' if len(unknown) == 1 else 'ies'} {', '.join(unknown)}; "
                             f"valid: {', '.join(known)}")
    results = []
    for name, fn in PROPERTIES:
        if only and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crash is a failed property
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        check = Check(name, bool(passed), detail, time.perf_counter() - t0)
        results.append(check)
        if echo is not None:
            echo(check.line())
    return results
