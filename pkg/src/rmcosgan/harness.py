"""Training loop, evaluation, checkpoints and the ablation sweeps."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import AdamState, DivergenceError, Tensor, adam_step, backward, no_grad
from .data import RngStream, SyntheticSpec, load_mnist, sample_latent, sample_real
from .layers import MlpNetwork, build_network, load_checkpoint, save_checkpoint
from .losses import LogitBatch, LossKind, MarginCosineParams, discriminator_loss, generator_loss
from .metrics import (GaussianStats, ModeSpec, RandomProjection, fit_gaussian, frechet_distance,
                      inception_score, load_stats, mode_classifier_probs, mode_coverage, save_stats)

log = logging.getLogger(__name__)

__all__ = [
    "ConfigError",
    "TrainingDiverged",
    "ExperimentConfig",
    "MetricRow",
    "MetricReport",
    "TrainResult",
    "EvalResult",
    "ToyDataset",
    "ImageDataset",
    "make_dataset",
    "train",
    "evaluate",
    "sweep_margin",
    "sweep_sample_count",
    "run_seed_variance",
    "REPORT_HEADER",
]

REPORT_HEADER = ["step", "d_loss", "g_loss", "fid", "is_mean", "is_std", "modes", "hq_frac", "wall_ms"]


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, report: "MetricReport", message: str = ""):
        super().__init__(message or f"training diverged at step {step}")
        self.step = step
        self.report = report


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    loss: str = "RMCos"
    dataset: str = "ring8"
    radius: float = 2.0
    mode_std: float = 0.1
    quality_radius: float = 3.0
    data_seed: int = 0
    mnist_images: str | None = None
    mnist_labels: str | None = None
    mnist_limit: int | None = None
    feature_dim: int = 64
    latent_dim: int = 16
    g_layers: list = field(default_factory=lambda: [16, 128, 128, 2])
    d_layers: list = field(default_factory=lambda: [2, 128, 128, 1])
    batchnorm: bool = True
    spectral_norm: bool = True
    init_std: float = 0.02
    leaky_slope: float = 0.2
    batch_size: int = 64
    steps: int = 20000
    d_steps: int = 1
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    s: float = 10.0
    m: float = 0.15
    eval_interval: int = 500
    eval_samples: int = 2000
    reference_samples: int = 10000
    is_splits: int = 10
    checkpoint_interval: int = 0
    collapse_modes: int = 2
    collapse_window: int = 3
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        self.validate()

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def validate(self) -> None:
        try:
            kind = LossKind.parse(self.loss)
        except ValueError as exc:
            raise ConfigError(f"loss: {exc}") from None
        self.loss = kind.value
        if self.dataset not in ("ring8", "grid25", "spiral", "mnist"):
            raise ConfigError(f"dataset: unknown dataset {self.dataset!r}; expected ring8, grid25, spiral or mnist")
        for name in ("latent_dim", "batch_size", "d_steps", "eval_interval", "eval_samples",
                     "reference_samples", "is_splits", "feature_dim", "collapse_window"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name}: must be a positive integer, got {getattr(self, name)!r}")
        for name in ("steps", "checkpoint_interval"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name}: must be non-negative, got {getattr(self, name)!r}")
        if not self.s > 0:
            raise ConfigError(f"s: scale must be positive, got {self.s}")
        for name in ("lr", "mode_std", "adam_eps", "init_std"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name}: must be positive, got {getattr(self, name)}")
        if self.batch_size < 2 and self.batchnorm:
            raise ConfigError("batch_size: batch norm needs at least 2 samples per batch")
        if self.eval_samples < self.is_splits:
            raise ConfigError("eval_samples: must be at least is_splits")
        if self.g_layers[0] != self.latent_dim:
            raise ConfigError(f"g_layers: generator input {self.g_layers[0]} != latent_dim {self.latent_dim}")
        if self.d_layers[-1] != 1:
            raise ConfigError("d_layers: discriminator must end in a single critic output (1)")
        if self.dataset != "mnist":
            if self.g_layers[-1] != 2 or self.d_layers[0] != 2:
                raise ConfigError("g_layers/d_layers: 2D toy data needs generator output 2 and discriminator input 2")
        elif not self.mnist_images:
            raise ConfigError("mnist_images: path required for the mnist dataset")

    @property
    def kind(self) -> LossKind:
        return LossKind.parse(self.loss)

    @property
    def margin(self) -> float:
        """m only matters for RMCos."""
        return self.m if self.kind is LossKind.RMCOS else 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k != "out_dir"}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = sorted(set(d) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"unknown config key(s) {', '.join(unknown)}; valid keys: {', '.join(cls.keys())}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path, overrides: Sequence[str] = ()) -> "ExperimentConfig":
        """Load a JSON config; ``key=value`` overrides win over the file."""
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
        d.update(parse_overrides(overrides))
        return cls.from_dict(d)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def parse_overrides(pairs: Sequence[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        key = key.strip()
        if key not in ExperimentConfig.keys():
            raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(ExperimentConfig.keys())}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


class ToyDataset:
    """2D mixture; FID is computed on raw coordinates."""

    image = False

    def __init__(self, spec: SyntheticSpec, quality_radius: float = 3.0):
        self.spec = spec
        self.mode_spec = ModeSpec(spec.centers(), spec.std, quality_radius)
        self.dim = 2

    def sample(self, n: int, rng: RngStream) -> Tensor:
        return sample_real(self.spec, n, rng)

    def features(self, x) -> np.ndarray:
        return np.asarray(getattr(x, "data", x))

    def reference_stats(self, n: int) -> GaussianStats:
        return fit_gaussian(self.sample(n, RngStream(self.spec.seed, "reference")))


class ImageDataset:
    """Flattened images in [-1, 1] scored in a fixed random-projection space.

    Class means of the projected training images act as mode centres for
    the inception-score and coverage surrogates.
    """

    image = True

    def __init__(self, images: np.ndarray, labels: np.ndarray | None, feature_dim: int = 64,
                 quality_radius: float = 3.0, seed: int = 0):
        self.images = images
        self.dim = images.shape[1]
        self.seed = seed
        self.projection = RandomProjection(self.dim, feature_dim)
        feats = self.projection(images)
        if labels is None:
            labels = np.zeros(len(images), dtype=np.int64)
        classes = np.unique(labels)
        centers = np.stack([feats[labels == c].mean(axis=0) for c in classes])
        resid = feats - centers[np.searchsorted(classes, labels)]
        std = float(np.sqrt(np.mean(resid ** 2)))
        self.mode_spec = ModeSpec(centers, std, quality_radius) if len(classes) >= 2 else None
        self._feats = feats

    def sample(self, n: int, rng: RngStream) -> Tensor:
        return Tensor(self.images[rng.integers(len(self.images), n)])

    def features(self, x) -> np.ndarray:
        return self.projection(x)

    def reference_stats(self, n: int) -> GaussianStats:
        return fit_gaussian(self._feats)


def make_dataset(config: ExperimentConfig):
    if config.dataset == "mnist":
        x, labels = load_mnist(config.mnist_images, config.mnist_labels, config.mnist_limit)
        return ImageDataset(x, labels, config.feature_dim, config.quality_radius, config.data_seed)
    spec = SyntheticSpec(config.dataset, config.radius, config.mode_std, config.data_seed)
    return ToyDataset(spec, config.quality_radius)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class MetricRow:
    step: int
    d_loss: float
    g_loss: float
    fid: float
    is_mean: float
    is_std: float
    modes: int
    hq_frac: float
    wall_ms: float

    def values(self) -> list:
        return [getattr(self, k) for k in REPORT_HEADER]


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)
    diverged_at: int | None = None
    config_hash: str = ""

    def append(self, row: MetricRow) -> None:
        if self.rows and row.step <= self.rows[-1].step:
            raise ValueError("report steps must be strictly increasing")
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def best(self) -> MetricRow | None:
        return min(self.rows, key=lambda r: r.fid) if self.rows else None

    @property
    def final(self) -> MetricRow | None:
        return self.rows[-1] if self.rows else None

    def collapsed(self, max_modes: int = 2, window: int = 3) -> bool:
        run = 0
        for r in self.rows:
            run = run + 1 if r.modes <= max_modes else 0
            if run >= window:
                return True
        return False

    def deterministic_rows(self) -> list[tuple]:
        """Rows without wall-clock time, for replay comparisons."""
        return [tuple(r.values()[:-1]) for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in self.rows:
            w.writerow([r.step, repr(r.d_loss), repr(r.g_loss), repr(r.fid), repr(r.is_mean),
                        repr(r.is_std), r.modes, repr(r.hq_frac), f"{r.wall_ms:.3f}"])
        return buf.getvalue()

    def summary(self) -> dict:
        best = self.best()
        return {
            "config_hash": self.config_hash,
            "n_evals": len(self.rows),
            "diverged_at": self.diverged_at,
            "final": dict(zip(REPORT_HEADER, self.final.values())) if self.final else None,
            "best_fid": best.fid if best else None,
            "best_step": best.step if best else None,
        }

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / "report.csv", out / "summary.json"
        csv_path.write_text(self.to_csv())
        json_path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        return csv_path, json_path

    @classmethod
    def read_csv(cls, path) -> "MetricReport":
        report = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != REPORT_HEADER:
                raise ValueError(f"unexpected report header {header}")
            for rec in reader:
                report.append(MetricRow(int(rec[0]), *map(float, rec[1:6]), int(rec[6]), float(rec[7]), float(rec[8])))
        return report


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    config: ExperimentConfig
    report: MetricReport
    generator: MlpNetwork
    discriminator: MlpNetwork
    opt_g: AdamState
    opt_d: AdamState
    step: int
    checkpoints: list[Path] = field(default_factory=list)

    @property
    def collapsed(self) -> bool:
        return self.report.collapsed(self.config.collapse_modes, self.config.collapse_window)


@dataclass
class EvalResult:
    fid: float
    is_mean: float
    is_std: float
    modes: int
    hq_frac: float


def build_models(config: ExperimentConfig, rng: np.random.Generator) -> tuple[MlpNetwork, MlpNetwork]:
    G = build_network(config.g_layers, "generator", batchnorm=config.batchnorm, rng=rng,
                      init_std=config.init_std, output_activation="tanh" if config.dataset == "mnist" else "linear")
    D = build_network(config.d_layers, "discriminator", head=config.kind.head, spectral=config.spectral_norm,
                      rng=rng, init_std=config.init_std, slope=config.leaky_slope)
    return G, D


def generate(G, n: int, latent_dim: int, rng: RngStream, batch: int = 5000) -> np.ndarray:
    """Samples from a frozen generator (eval mode, no tape)."""
    z = rng.normal((n, latent_dim))
    if not isinstance(G, MlpNetwork):
        return np.asarray(G(z))
    was_training = any(getattr(l, "training", False) for l in G.layers)
    G.eval()
    try:
        with no_grad():
            out = np.concatenate([G(Tensor(z[i:i + batch])).data for i in range(0, n, batch)])
    finally:
        if was_training:
            G.train()
    return out


def evaluate(generator, n_samples: int, dataset, seed: int = 0, reference: GaussianStats | None = None,
             latent_dim: int | None = None, is_splits: int = 10, reference_samples: int = 10000) -> EvalResult:
    """FID, IS and mode coverage of ``n_samples`` generated samples.

    ``generator`` is an :class:`MlpNetwork` (run in eval mode) or any
    callable mapping an (n, latent_dim) array to samples.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples")
    if latent_dim is None:
        latent_dim = generator.in_dim if isinstance(generator, MlpNetwork) else 2
    x = generate(generator, n_samples, latent_dim, RngStream(seed, "eval"))
    if x.ndim != 2 or x.shape[1] != dataset.dim:
        raise ValueError(f"generator output dimension {x.shape[1:]} does not match dataset dimension {dataset.dim}")
    if reference is None:
        reference = dataset.reference_stats(reference_samples)
    feats = dataset.features(x)
    fid = frechet_distance(reference, fit_gaussian(feats))
    if dataset.mode_spec is not None:
        probs = mode_classifier_probs(feats, dataset.mode_spec)
        is_mean, is_std = inception_score(probs, min(is_splits, n_samples))
        modes, hq = mode_coverage(feats, dataset.mode_spec)
    else:
        is_mean, is_std, modes, hq = 1.0, 0.0, 0, 0.0
    return EvalResult(fid, is_mean, is_std, modes, hq)


def _rng_state(rng: RngStream) -> dict:
    st = rng.generator.bit_generator.state
    return {"draws": rng.draws, "state": _jsonable(st)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _from_jsonable(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["__ndarray__"], dtype=obj["dtype"])
        return {k: _from_jsonable(v) for k, v in obj.items()}
    return obj


def _restore_rng(rng: RngStream, saved: dict) -> None:
    rng.generator.bit_generator.state = _from_jsonable(saved["state"])
    rng.draws = saved["draws"]


def save_training_checkpoint(path, config: ExperimentConfig, G, D, opt_g: AdamState, opt_d: AdamState,
                             step: int, rngs: dict[str, RngStream] | None = None) -> Path:
    extra = {}
    for tag, opt in (("g", opt_g), ("d", opt_d)):
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            extra[f"opt/{tag}/m/{i}"] = m
            extra[f"opt/{tag}/v/{i}"] = v
    meta = {
        "step": step,
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "adam": {tag: {"t": o.t, "lr": o.lr, "beta1": o.beta1, "beta2": o.beta2, "epsilon": o.epsilon,
                       "n": len(o.m)} for tag, o in (("g", opt_g), ("d", opt_d))},
        "rng": {k: _rng_state(r) for k, r in (rngs or {}).items()},
    }
    return save_checkpoint(path, {"generator": G, "discriminator": D}, meta, extra)


def load_training_checkpoint(path):
    """Returns (config, G, D, opt_g, opt_d, step, rng_states)."""
    nets, meta, extra = load_checkpoint(path)
    config = ExperimentConfig.from_dict(meta["config"])
    opts = []
    for tag in ("g", "d"):
        a = meta["adam"][tag]
        st = AdamState(a["lr"], a["beta1"], a["beta2"], a["epsilon"], a["t"])
        st.m = [extra[f"opt/{tag}/m/{i}"].copy() for i in range(a["n"])]
        st.v = [extra[f"opt/{tag}/v/{i}"].copy() for i in range(a["n"])]
        opts.append(st)
    return config, nets["generator"], nets["discriminator"], opts[0], opts[1], meta["step"], meta.get("rng", {})


@contextmanager
def _frozen(params: Sequence[Tensor]):
    """Stop gradient tracking for ``params`` while building a graph."""
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True


def _finite(x: float, step: int, what: str) -> None:
    if not math.isfinite(x):
        raise DivergenceError(f"non-finite {what} at step {step}", step=step)


def train(config: ExperimentConfig, resume: str | Path | None = None,
          progress: Callable[[MetricRow], None] | None = None) -> TrainResult:
    """Alternating D/G optimisation with periodic evaluation.

    Each step runs ``d_steps`` discriminator updates on fresh real and
    latent batches, then one generator update against the last real batch.
    Evaluation happens every ``eval_interval`` steps on a frozen copy of the
    generator's state and never consumes training randomness.
    """
    t0 = time.perf_counter()
    kind = config.kind
    params = MarginCosineParams(s=config.s, m=config.margin)
    dataset = make_dataset(config)
    rng_data = RngStream(config.seed, "data")
    rng_latent = RngStream(config.seed, "latent")
    out_dir = Path(config.out_dir) if config.out_dir else None

    if resume is not None:
        _, G, D, opt_g, opt_d, start, rng_states = load_training_checkpoint(resume)
        if "data" in rng_states:
            _restore_rng(rng_data, rng_states["data"])
            _restore_rng(rng_latent, rng_states["latent"])
    else:
        G, D = build_models(config, RngStream(config.seed, "init").generator)
        opt_g = AdamState(config.lr, config.beta1, config.beta2, config.adam_eps)
        opt_d = AdamState(config.lr, config.beta1, config.beta2, config.adam_eps)
        start = 0
    G.train()
    g_params, d_params = G.parameters(), D.parameters()
    reference = dataset.reference_stats(config.reference_samples)
    report = MetricReport(config_hash=config.hash())
    checkpoints: list[Path] = []
    rngs = {"data": rng_data, "latent": rng_latent}

    def checkpoint(step: int) -> None:
        if out_dir is not None:
            checkpoints.append(save_training_checkpoint(out_dir / f"checkpoint_{step:07d}.npz", config,
                                                        G, D, opt_g, opt_d, step, rngs))

    if resume is None:
        checkpoint(0)

    d_val = g_val = float("nan")
    step = start
    try:
        for step in range(start + 1, config.steps + 1):
            for _ in range(config.d_steps):
                x = dataset.sample(config.batch_size, rng_data)
                z = sample_latent(config.batch_size, config.latent_dim, rng_latent)
                with no_grad():
                    fake = G(z)
                D.update_spectral()
                n = config.batch_size
                logits = D(Tensor(np.concatenate([x.data, fake.data])))
                batch = LogitBatch(logits.slice_rows(0, n), logits.slice_rows(n, 2 * n))
                d_loss = discriminator_loss(kind, batch, params)
                d_val = d_loss.item()
                _finite(d_val, step, "discriminator loss")
                adam_step(d_params, backward(d_loss), opt_d)

            z = sample_latent(config.batch_size, config.latent_dim, rng_latent)
            fake = G(z)
            with no_grad():
                real_logits = D(x)
            with _frozen(d_params):
                g_loss = generator_loss(kind, LogitBatch(real_logits, D(fake)), params)
            g_val = g_loss.item()
            _finite(g_val, step, "generator loss")
            adam_step(g_params, backward(g_loss), opt_g)

            if step % config.eval_interval == 0:
                ev = evaluate(G, config.eval_samples, dataset, seed=config.seed, reference=reference,
                              latent_dim=config.latent_dim, is_splits=config.is_splits)
                row = MetricRow(step, d_val, g_val, ev.fid, ev.is_mean, ev.is_std, ev.modes, ev.hq_frac,
                                (time.perf_counter() - t0) * 1e3)
                report.append(row)
                log.info("step %d  D %.4f  G %.4f  FID %.4f  IS %.3f  modes %d  hq %.3f", step, d_val, g_val,
                         ev.fid, ev.is_mean, ev.modes, ev.hq_frac)
                if progress is not None:
                    progress(row)
            if config.checkpoint_interval and step % config.checkpoint_interval == 0:
                checkpoint(step)
    except DivergenceError as exc:
        report.diverged_at = exc.step if exc.step is not None else step
        if out_dir is not None:
            report.write(out_dir)
        raise TrainingDiverged(report.diverged_at, report, str(exc)) from exc

    if out_dir is not None:
        if not checkpoints or not checkpoints[-1].name.endswith(f"{config.steps:07d}.npz"):
            checkpoint(config.steps)
        config.save(out_dir / "config.json")
        report.write(out_dir)
    return TrainResult(config, report, G, D, opt_g, opt_d, max(step, start), checkpoints)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    seed: int
    margin: float | None
    final_fid: float
    final_is: float
    best_fid: float
    best_step: int
    modes: int
    hq_frac: float
    collapsed: bool
    diverged_at: int | None = None

    @classmethod
    def from_report(cls, config: ExperimentConfig, rep: MetricReport) -> "RunRecord":
        """Summarise one run; a diverged run counts as collapsed."""
        nan = float("nan")
        final, best = rep.final, rep.best()
        collapsed = rep.diverged_at is not None or rep.collapsed(config.collapse_modes, config.collapse_window)
        return cls(config.seed, config.m if config.kind is LossKind.RMCOS else None,
                   final.fid if final else nan, final.is_mean if final else nan,
                   best.fid if best else nan, best.step if best else -1,
                   final.modes if final else 0, final.hq_frac if final else nan,
                   collapsed, rep.diverged_at)


def _run_one(config: ExperimentConfig) -> RunRecord:
    try:
        rep = train(config).report
    except TrainingDiverged as exc:
        rep = exc.report
    return RunRecord.from_report(config, rep)


def _run_all(configs: list[ExperimentConfig], n_jobs: int) -> list[RunRecord]:
    if n_jobs <= 1:
        return [_run_one(c) for c in configs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_run_one, configs))


@dataclass
class MarginSweep:
    runs: list[RunRecord]

    def margins(self) -> list[float]:
        return sorted({r.margin for r in self.runs})

    def median_fid(self, m: float) -> float:
        return float(np.median([r.final_fid for r in self.runs if r.margin == m]))

    def median_is(self, m: float) -> float:
        return float(np.median([r.final_is for r in self.runs if r.margin == m]))

    def collapsed(self, m: float) -> int:
        return sum(r.collapsed for r in self.runs if r.margin == m)

    def table(self) -> list[dict]:
        return [{"m": m, "median_fid": self.median_fid(m), "median_is": self.median_is(m),
                 "collapsed_runs": self.collapsed(m), "runs": sum(r.margin == m for r in self.runs)}
                for m in self.margins()]


def sweep_margin(base: ExperimentConfig, margins: Sequence[float], seeds: Sequence[int] = (0, 1, 2),
                 n_jobs: int = 1) -> MarginSweep:
    """One training per (margin, seed); divergent runs are kept as flagged cells."""
    if not margins:
        raise ValueError("margin list is empty")
    if base.kind is not LossKind.RMCOS:
        raise ValueError("margin sweep needs the RMCos loss")
    if any(not -1.0 <= m <= 1.0 for m in margins):
        raise ValueError("margins must lie in [-1, 1]")
    configs = [base.replace(m=float(m), seed=int(s), out_dir=None) for m in margins for s in seeds]
    return MarginSweep(_run_all(configs, n_jobs))


def sweep_sample_count(generator, counts: Sequence[int], dataset, seed: int = 0,
                       reference: GaussianStats | None = None, latent_dim: int | None = None,
                       repeats: int = 20) -> list[tuple[int, float, float]]:
    """Mean and std of FID over ``repeats`` independent sample sets at each count.

    Count ``n`` draws all of its latents from substream ``1000 + n`` of ``seed``.
    """
    counts = [int(c) for c in counts]
    if any(c < 2 for c in counts) or any(b < a for a, b in zip(counts, counts[1:])):
        raise ValueError("counts must be >= 2 and non-decreasing")
    if repeats < 1:
        raise ValueError("repeats must be positive")
    if reference is None:
        reference = dataset.reference_stats(10000)
    if latent_dim is None:
        latent_dim = generator.in_dim if isinstance(generator, MlpNetwork) else 2
    out = []
    for n in counts:
        x = generate(generator, n * repeats, latent_dim, RngStream(seed, 1000 + n))
        fids = [frechet_distance(reference, fit_gaussian(dataset.features(part))) for part in np.split(x, repeats)]
        out.append((n, float(np.mean(fids)), float(np.std(fids))))
    return out


@dataclass
class SeedVariance:
    runs: list[RunRecord]

    @property
    def best_fids(self) -> np.ndarray:
        return np.array([r.best_fid for r in self.runs])

    def summary(self) -> dict:
        f = self.best_fids
        return {"min": float(np.nanmin(f)), "median": float(np.nanmedian(f)), "max": float(np.nanmax(f)),
                "spread": float(np.nanmax(f) - np.nanmin(f))}

    def table(self) -> list[dict]:
        return [{"seed": r.seed, "best_fid": r.best_fid, "best_step": r.best_step, "final_fid": r.final_fid,
                 "collapsed": r.collapsed, "diverged_at": r.diverged_at} for r in self.runs]


def run_seed_variance(config: ExperimentConfig, seeds: Sequence[int], n_jobs: int = 1) -> SeedVariance:
    if len(seeds) < 2:
        raise ValueError("need at least two seeds")
    return SeedVariance(_run_all([config.replace(seed=int(s), out_dir=None) for s in seeds], n_jobs))


def cached_reference(dataset, path, n: int) -> GaussianStats:
    """Real-data statistics, computed once and stored at ``path``."""
    path = Path(path)
    if path.exists():
        return load_stats(path)
    stats = dataset.reference_stats(n)
    save_stats(path, stats, {"n": n})
    return stats
