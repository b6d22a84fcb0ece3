"""MLP building blocks: dense, batch norm, spectral norm and the critic heads."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import DomainError, ShapeError, Tensor, no_grad

__all__ = [
    "DenseLayer",
    "BatchNormLayer",
    "SpectralNormWrapper",
    "CriticHead",
    "MlpNetwork",
    "dense_forward",
    "batchnorm_forward",
    "spectral_normalize",
    "critic_logit",
    "build_network",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_FORMAT",
]

ACTIVATIONS = ("linear", "relu", "leaky_relu", "tanh", "sigmoid")


def _activate(x: Tensor, kind: str, slope: float) -> Tensor:
    if kind == "linear":
        return x
    if kind == "relu":
        return x.relu()
    if kind == "leaky_relu":
        return x.leaky_relu(slope)
    if kind == "tanh":
        return x.tanh()
    if kind == "sigmoid":
        return x.sigmoid()
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


class SpectralNormWrapper:
    """Holds a raw weight and a persisted left singular vector estimate."""

    def __init__(self, weight: Tensor, u: np.ndarray | None = None, n_power_iterations: int = 1,
                 rng: np.random.Generator | None = None):
        if n_power_iterations < 1:
            raise ValueError("need at least one power iteration")
        self.weight = weight
        self.n_power_iterations = n_power_iterations
        if u is None:
            rng = rng or np.random.default_rng(0)
            u = rng.standard_normal(weight.shape[0])
        self.u = _unit(np.asarray(u, dtype=np.float64))
        self.v = _unit(weight.data.T @ self.u)

    def power_iterate(self, k: int | None = None) -> float:
        W = self.weight.data
        if not np.any(W):
            raise DomainError("spectral norm of a zero matrix has no direction")
        for _ in range(self.n_power_iterations if k is None else k):
            self.v = _unit(W.T @ self.u)
            self.u = _unit(W @ self.v)
        return float(self.u @ W @ self.v)

    def sigma(self) -> Tensor:
        u = Tensor(self.u.reshape(1, -1))
        v = Tensor(self.v.reshape(-1, 1))
        return u @ self.weight @ v

    def effective(self) -> Tensor:
        return self.weight / self.sigma()


def _unit(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x)
    if n == 0:
        raise DomainError("cannot normalise a zero vector")
    return x / n


def spectral_normalize(wrapper: SpectralNormWrapper, update: bool = True) -> Tensor:
    """W divided by its power-iteration estimate of the top singular value."""
    if update:
        wrapper.power_iterate()
    elif not np.any(wrapper.weight.data):
        raise DomainError("spectral norm of a zero matrix has no direction")
    return wrapper.effective()


@dataclass
class DenseLayer:
    weight: Tensor  # out x in
    bias: Tensor | None
    activation: str = "linear"
    slope: float = 0.2
    spectral: SpectralNormWrapper | None = None

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> list[Tensor]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])

    def effective_weight(self) -> Tensor:
        return self.spectral.effective() if self.spectral is not None else self.weight


def dense_forward(layer: DenseLayer, batch: Tensor) -> Tensor:
    if batch.ndim != 2 or batch.shape[1] != layer.in_dim:
        raise ShapeError(f"dense layer expects (n, {layer.in_dim}) input, got {batch.shape}")
    out = batch @ layer.effective_weight().T
    if layer.bias is not None:
        out = out + layer.bias
    return _activate(out, layer.activation, layer.slope)


@dataclass
class BatchNormLayer:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-8
    momentum: float = 0.1
    training: bool = True

    @classmethod
    def create(cls, dim: int, eps: float = 1e-8, momentum: float = 0.1) -> "BatchNormLayer":
        return cls(Tensor(np.ones(dim), requires_grad=True), Tensor(np.zeros(dim), requires_grad=True),
                   np.zeros(dim), np.ones(dim), eps, momentum)

    def parameters(self) -> list[Tensor]:
        return [self.gamma, self.beta]


def batchnorm_forward(layer: BatchNormLayer, batch: Tensor) -> Tensor:
    if batch.ndim != 2 or batch.shape[1] != layer.gamma.shape[0]:
        raise ShapeError(f"batch norm expects (n, {layer.gamma.shape[0]}) input, got {batch.shape}")
    if layer.training:
        n = batch.shape[0]
        if n < 2:
            raise ValueError("batch norm in train mode needs at least 2 samples")
        mu = batch.mean(axis=0)
        centered = batch - mu
        var = centered.square().mean(axis=0)
        xhat = centered / (var + layer.eps).sqrt()
        with no_grad():
            m = layer.momentum
            layer.running_mean = (1 - m) * layer.running_mean + m * mu.data
            layer.running_var = (1 - m) * layer.running_var + m * var.data * n / (n - 1)
    else:
        xhat = (batch - layer.running_mean) / np.sqrt(layer.running_var + layer.eps)
    return xhat * layer.gamma + layer.beta


@dataclass
class CriticHead:
    """Final discriminator layer: plain logit or cosine of the feature angle.

    The cosine variant has no scale of its own; the loss multiplies the
    logit difference by ``s``.
    """

    variant: str  # "linear" | "cosine"
    weight: Tensor  # 1 x d
    spectral: SpectralNormWrapper | None = None

    def __post_init__(self):
        if self.variant not in ("linear", "cosine"):
            raise ValueError(f"critic head must be 'linear' or 'cosine', got {self.variant!r}")

    def parameters(self) -> list[Tensor]:
        return [self.weight]


def critic_logit(head: CriticHead, features: Tensor) -> Tensor:
    d = head.weight.shape[1]
    if features.ndim != 2 or features.shape[1] != d:
        raise ShapeError(f"critic head expects (n, {d}) features, got {features.shape}")
    n = features.shape[0]
    if head.variant == "linear":
        W = head.spectral.effective() if head.spectral is not None else head.weight
        return (features @ W.T).reshape(n)
    if np.any(np.sum(features.data ** 2, axis=1) == 0):
        raise DomainError("cosine critic got a zero-norm feature vector")
    return (features.l2_normalize_rows() @ head.weight.l2_normalize_rows().T).reshape(n)


class _ActivationOnly:
    """Activation between a batch-norm layer and the next dense layer."""

    def __init__(self, kind: str, slope: float):
        self.activation = kind
        self.slope = slope

    def parameters(self) -> list[Tensor]:
        return []


@dataclass
class MlpNetwork:
    role: str  # "generator" | "discriminator"
    layers: list = field(default_factory=list)
    head: CriticHead | None = None
    config: dict = field(default_factory=dict)

    def parameters(self) -> list[Tensor]:
        params = []
        for layer in self.layers:
            params.extend(layer.parameters())
        if self.head is not None:
            params.extend(self.head.parameters())
        return params

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def spectral_wrappers(self) -> list[SpectralNormWrapper]:
        out = [l.spectral for l in self.layers if isinstance(l, DenseLayer) and l.spectral is not None]
        if self.head is not None and self.head.spectral is not None:
            out.append(self.head.spectral)
        return out

    def update_spectral(self, k: int | None = None) -> None:
        for w in self.spectral_wrappers():
            w.power_iterate(k)

    def train(self) -> "MlpNetwork":
        for layer in self.layers:
            if isinstance(layer, BatchNormLayer):
                layer.training = True
        return self

    def eval(self) -> "MlpNetwork":
        for layer in self.layers:
            if isinstance(layer, BatchNormLayer):
                layer.training = False
        return self

    def body(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            if isinstance(layer, DenseLayer):
                x = dense_forward(layer, x)
            elif isinstance(layer, BatchNormLayer):
                x = batchnorm_forward(layer, x)
            else:
                x = _activate(x, layer.activation, layer.slope)
        return x

    def __call__(self, x: Tensor) -> Tensor:
        """Generator: samples.  Discriminator: one critic logit per row."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        h = self.body(x)
        return critic_logit(self.head, h) if self.head is not None else h

    @property
    def in_dim(self) -> int:
        return self.config["sizes"][0]

    @property
    def out_dim(self) -> int:
        return self.config["sizes"][-1]


def build_network(sizes: list[int], role: str, head: str | None = None, batchnorm: bool = False,
                  spectral: bool = False, rng: np.random.Generator | None = None,
                  init_std: float = 0.02, hidden_activation: str | None = None,
                  output_activation: str = "linear", slope: float = 0.2,
                  sn_warmup: int = 200, sn_iterations: int = 1) -> MlpNetwork:
    """Build a generator or discriminator MLP.

    For a discriminator the final size must be 1; that last layer is the
    bias-free critic head (``head`` = "linear" or "cosine").  Batch norm goes
    after each hidden dense layer, before its activation.
    """
    if not sizes or len(sizes) < 2:
        raise ValueError("layer-size list needs at least an input and an output size")
    if any(int(s) <= 0 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    if role not in ("generator", "discriminator"):
        raise ValueError(f"role must be 'generator' or 'discriminator', got {role!r}")
    if hidden_activation is None:
        hidden_activation = "relu" if role == "generator" else "leaky_relu"
    rng = rng or np.random.default_rng(0)
    config = dict(sizes=[int(s) for s in sizes], role=role, head=head, batchnorm=batchnorm,
                  spectral=spectral, init_std=init_std, hidden_activation=hidden_activation,
                  output_activation=output_activation, slope=slope, sn_iterations=sn_iterations)
    net = MlpNetwork(role=role, config=config)

    def weight(out_dim, in_dim):
        return Tensor(rng.normal(0.0, init_std, size=(out_dim, in_dim)), requires_grad=True)

    if role == "discriminator":
        if sizes[-1] != 1:
            raise ValueError("discriminator must end in a single critic output")
        if head is None:
            head = config["head"] = "linear"
        body_sizes = sizes[:-1]
    else:
        body_sizes = sizes

    n_dense = len(body_sizes) - 1
    for i in range(n_dense):
        last = role == "generator" and i == n_dense - 1
        W = weight(body_sizes[i + 1], body_sizes[i])
        b = Tensor(np.zeros(body_sizes[i + 1]), requires_grad=True)
        sn = SpectralNormWrapper(W, n_power_iterations=sn_iterations, rng=rng) if spectral else None
        if batchnorm and not last:
            net.layers.append(DenseLayer(W, b, "linear", slope, sn))
            net.layers.append(BatchNormLayer.create(body_sizes[i + 1]))
            net.layers.append(_ActivationOnly(hidden_activation, slope))
        else:
            act = output_activation if last else hidden_activation
            net.layers.append(DenseLayer(W, b, act, slope, sn))

    if role == "discriminator":
        W = weight(1, body_sizes[-1])
        sn = None
        if spectral and head == "linear":
            sn = SpectralNormWrapper(W, n_power_iterations=sn_iterations, rng=rng)
        net.head = CriticHead(head, W, sn)

    if spectral:
        net.update_spectral(sn_warmup)
    return net


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "rmcosgan-checkpoint/1"


def network_arrays(net: MlpNetwork, prefix: str) -> dict[str, np.ndarray]:
    arrays = {}
    for i, layer in enumerate(net.layers):
        if isinstance(layer, DenseLayer):
            arrays[f"{prefix}/{i}/weight"] = layer.weight.data
            if layer.bias is not None:
                arrays[f"{prefix}/{i}/bias"] = layer.bias.data
            if layer.spectral is not None:
                arrays[f"{prefix}/{i}/sn_u"] = layer.spectral.u
                arrays[f"{prefix}/{i}/sn_v"] = layer.spectral.v
        elif isinstance(layer, BatchNormLayer):
            arrays[f"{prefix}/{i}/gamma"] = layer.gamma.data
            arrays[f"{prefix}/{i}/beta"] = layer.beta.data
            arrays[f"{prefix}/{i}/running_mean"] = layer.running_mean
            arrays[f"{prefix}/{i}/running_var"] = layer.running_var
    if net.head is not None:
        arrays[f"{prefix}/head/weight"] = net.head.weight.data
        if net.head.spectral is not None:
            arrays[f"{prefix}/head/sn_u"] = net.head.spectral.u
            arrays[f"{prefix}/head/sn_v"] = net.head.spectral.v
    return arrays


def restore_network(config: dict, arrays: dict[str, np.ndarray], prefix: str) -> MlpNetwork:
    cfg = dict(config)
    net = build_network(cfg.pop("sizes"), cfg.pop("role"), sn_warmup=1, **cfg)
    for i, layer in enumerate(net.layers):
        if isinstance(layer, DenseLayer):
            layer.weight.data = arrays[f"{prefix}/{i}/weight"].copy()
            if layer.bias is not None:
                layer.bias.data = arrays[f"{prefix}/{i}/bias"].copy()
            if layer.spectral is not None:
                layer.spectral.u = arrays[f"{prefix}/{i}/sn_u"].copy()
                layer.spectral.v = arrays[f"{prefix}/{i}/sn_v"].copy()
        elif isinstance(layer, BatchNormLayer):
            layer.gamma.data = arrays[f"{prefix}/{i}/gamma"].copy()
            layer.beta.data = arrays[f"{prefix}/{i}/beta"].copy()
            layer.running_mean = arrays[f"{prefix}/{i}/running_mean"].copy()
            layer.running_var = arrays[f"{prefix}/{i}/running_var"].copy()
    if net.head is not None:
        net.head.weight.data = arrays[f"{prefix}/head/weight"].copy()
        if net.head.spectral is not None:
            net.head.spectral.u = arrays[f"{prefix}/head/sn_u"].copy()
            net.head.spectral.v = arrays[f"{prefix}/head/sn_v"].copy()
    return net


def save_checkpoint(path, networks: dict[str, MlpNetwork], meta: dict | None = None,
                    extra_arrays: dict[str, np.ndarray] | None = None) -> Path:
    """Write networks plus metadata to an uncompressed ``.npz`` archive.

    Layout: one float64 array per parameter/statistic named
    ``<net>/<layer-index>/<field>`` (``<net>/head/...`` for the critic head),
    any ``extra_arrays`` verbatim, and ``__meta__``: UTF-8 JSON bytes holding
    the format tag, each network's build config and the caller's ``meta``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    for name, net in networks.items():
        arrays.update(network_arrays(net, name))
    if extra_arrays:
        arrays.update(extra_arrays)
    header = {"format": CHECKPOINT_FORMAT,
              "networks": {name: net.config for name, net in networks.items()},
              "meta": meta or {}}
    arrays["__meta__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[dict[str, MlpNetwork], dict, dict[str, np.ndarray]]:
    with np.load(Path(path), allow_pickle=False) as npz:
        arrays = {k: npz[k] for k in npz.files}
    header = json.loads(arrays.pop("__meta__").tobytes().decode())
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a checkpoint file: format tag {header.get('format')!r}")
    nets = {name: restore_network(cfg, arrays, name) for name, cfg in header["networks"].items()}
    prefixes = tuple(f"{name}/" for name in nets)
    extra = {k: v for k, v in arrays.items() if not k.startswith(prefixes)}
    return nets, header["meta"], extra
