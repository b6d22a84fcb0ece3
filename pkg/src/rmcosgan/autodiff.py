"""Define-by-run reverse-mode autodiff over dense float64 arrays.

Every differentiable operation is a registered primitive with a forward rule
and a vector-Jacobian rule.  Calling a primitive on tensors that track
gradients records a :class:`TapeNode` on the output; :func:`backward` walks
those nodes in reverse creation order.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "TapeNode",
    "ShapeError",
    "DomainError",
    "DivergenceError",
    "PRIMITIVES",
    "apply_primitive",
    "backward",
    "no_grad",
    "finite_difference_gradient",
    "max_relative_error",
    "AdamState",
    "adam_step",
]


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    """Raised when a non-finite value shows up during optimisation."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


_state = threading.local()
_node_ids = itertools.count()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@dataclass(eq=False)
class TapeNode:
    kind: str
    inputs: tuple["Tensor", ...]
    attrs: dict
    saved: dict = field(default_factory=dict)
    id: int = field(default_factory=lambda: next(_node_ids))


class Tensor:
    """A float64 array with optional gradient tracking."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: TapeNode | None = None
        self.name = name

    # basic introspection
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return apply_primitive("transpose", [self])

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr if arr.dtype == np.float64 else arr.astype(np.float64)
        t.requires_grad = False
        t.grad = None
        t.node = None
        t.name = None
        return t

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # operators
    def __add__(self, other):
        return apply_primitive("add", [self, _as_tensor(other)])

    __radd__ = __add__

    def __sub__(self, other):
        return apply_primitive("sub", [self, _as_tensor(other)])

    def __rsub__(self, other):
        return apply_primitive("sub", [_as_tensor(other), self])

    def __mul__(self, other):
        if np.isscalar(other):
            return apply_primitive("scale", [self], {"c": float(other)})
        return apply_primitive("mul", [self, _as_tensor(other)])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return apply_primitive("scale", [self], {"c": 1.0 / float(other)})
        return apply_primitive("div", [self, _as_tensor(other)])

    def __rtruediv__(self, other):
        return apply_primitive("div", [_as_tensor(other), self])

    def __neg__(self):
        return apply_primitive("neg", [self])

    def __matmul__(self, other):
        return apply_primitive("matmul", [self, _as_tensor(other)])

    # method forms of the primitives
    def exp(self):
        return apply_primitive("exp", [self])

    def log(self):
        return apply_primitive("log", [self])

    def sigmoid(self):
        return apply_primitive("sigmoid", [self])

    def log_sigmoid(self):
        return apply_primitive("log_sigmoid", [self])

    def softplus(self):
        return apply_primitive("softplus", [self])

    def tanh(self):
        return apply_primitive("tanh", [self])

    def relu(self):
        return apply_primitive("relu", [self])

    def leaky_relu(self, slope: float = 0.2):
        return apply_primitive("leaky_relu", [self], {"slope": slope})

    def square(self):
        return apply_primitive("square", [self])

    def sqrt(self):
        return apply_primitive("sqrt", [self])

    def sum(self, axis=None):
        return apply_primitive("sum", [self], {"axis": axis})

    def mean(self, axis=None):
        return apply_primitive("mean", [self], {"axis": axis})

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply_primitive("reshape", [self], {"shape": tuple(shape)})

    def clamp_min(self, floor: float = 0.0):
        return apply_primitive("clamp_min", [self], {"floor": floor})

    def l2_normalize_rows(self):
        return apply_primitive("l2_normalize_rows", [self])

    def slice_rows(self, start: int, stop: int):
        return apply_primitive("slice_rows", [self], {"start": start, "stop": stop})

    def broadcast_row(self, n: int):
        return apply_primitive("broadcast_row", [self], {"n": n})

    def backward(self) -> dict[int, np.ndarray]:
        return backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# primitive registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Primitive:
    forward: Callable  # (values, attrs, saved) -> ndarray
    vjp: Callable  # (grad_out, values, out, attrs, saved) -> tuple of grads
    arity: int


PRIMITIVES: dict[str, Primitive] = {}


def _register(name: str, arity: int):
    def deco(pair):
        fwd, vjp = pair()
        PRIMITIVES[name] = Primitive(fwd, vjp, arity)
        return pair

    return deco


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, kind: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.shape} and {b.shape}") from None


def _binary(kind, op, vjp_a, vjp_b):
    def fwd(vals, attrs, saved):
        a, b = vals
        _check_broadcast(a, b, kind)
        return op(a, b)

    def vjp(g, vals, out, attrs, saved):
        a, b = vals
        return _unbroadcast(vjp_a(g, a, b, out), a.shape), _unbroadcast(vjp_b(g, a, b, out), b.shape)

    return fwd, vjp


@_register("add", 2)
def _add():
    return _binary("add", np.add, lambda g, a, b, o: g, lambda g, a, b, o: g)


@_register("sub", 2)
def _sub():
    return _binary("sub", np.subtract, lambda g, a, b, o: g, lambda g, a, b, o: -g)


@_register("mul", 2)
def _mul():
    return _binary("mul", np.multiply, lambda g, a, b, o: g * b, lambda g, a, b, o: g * a)


@_register("div", 2)
def _div():
    def fwd_op(a, b):
        if np.any(b == 0):
            raise DomainError("div: zero divisor")
        return a / b

    return _binary("div", fwd_op, lambda g, a, b, o: g / b, lambda g, a, b, o: -g * o / b)


@_register("matmul", 2)
def _matmul():
    def fwd(vals, attrs, saved):
        a, b = vals
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        return a @ b

    def vjp(g, vals, out, attrs, saved):
        a, b = vals
        return g @ b.T, a.T @ g

    return fwd, vjp


def _unary(op, dop):
    """dop(g, x, out, attrs) gives the input gradient."""

    def fwd(vals, attrs, saved):
        return op(vals[0], attrs)

    def vjp(g, vals, out, attrs, saved):
        return (dop(g, vals[0], out, attrs),)

    return fwd, vjp


@_register("neg", 1)
def _neg():
    return _unary(lambda x, a: -x, lambda g, x, o, a: -g)


@_register("scale", 1)
def _scale():
    return _unary(lambda x, a: x * a["c"], lambda g, x, o, a: g * a["c"])


@_register("shift", 1)
def _shift():
    return _unary(lambda x, a: x + a["c"], lambda g, x, o, a: g)


@_register("exp", 1)
def _exp():
    return _unary(lambda x, a: np.exp(x), lambda g, x, o, a: g * o)


def _log_fwd(x, attrs):
    if np.any(x <= 0):
        raise DomainError(f"log: non-positive input (min {x.min()!r})")
    return np.log(x)


@_register("log", 1)
def _log():
    return _unary(_log_fwd, lambda g, x, o, a: g / x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


@_register("sigmoid", 1)
def _sigmoid_prim():
    return _unary(lambda x, a: _sigmoid(x), lambda g, x, o, a: g * o * (1.0 - o))


@_register("log_sigmoid", 1)
def _log_sigmoid():
    # log sigma(x) = -softplus(-x); derivative 1 - sigma(x) = sigma(-x)
    return _unary(lambda x, a: -_softplus(-x), lambda g, x, o, a: g * _sigmoid(-x))


@_register("softplus", 1)
def _softplus_prim():
    return _unary(lambda x, a: _softplus(x), lambda g, x, o, a: g * _sigmoid(x))


@_register("tanh", 1)
def _tanh():
    return _unary(lambda x, a: np.tanh(x), lambda g, x, o, a: g * (1.0 - o * o))


@_register("relu", 1)
def _relu():
    return _unary(lambda x, a: np.maximum(x, 0.0), lambda g, x, o, a: g * (x > 0))


@_register("leaky_relu", 1)
def _leaky_relu():
    def f(x, a):
        slope = a.get("slope", 0.2)
        return np.maximum(x, slope * x) if 0 <= slope <= 1 else np.where(x > 0, x, slope * x)

    def df(g, x, o, a):
        return g * np.where(x > 0, 1.0, a.get("slope", 0.2))

    return _unary(f, df)


@_register("square", 1)
def _square():
    return _unary(lambda x, a: x * x, lambda g, x, o, a: 2.0 * g * x)


def _sqrt_fwd(x, attrs):
    if np.any(x <= 0):
        raise DomainError(f"sqrt: non-positive input (min {x.min()!r})")
    return np.sqrt(x)


@_register("sqrt", 1)
def _sqrt():
    return _unary(_sqrt_fwd, lambda g, x, o, a: g / (2.0 * o))


@_register("clamp_min", 1)
def _clamp_min():
    def f(x, a):
        return np.maximum(x, a.get("floor", 0.0))

    def df(g, x, o, a):
        return g * (x > a.get("floor", 0.0))

    return _unary(f, df)


def _expand_reduced(g: np.ndarray, shape, axis) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


@_register("sum", 1)
def _sum():
    def f(x, a):
        return np.sum(x, axis=a.get("axis"))

    def df(g, x, o, a):
        return _expand_reduced(g, x.shape, a.get("axis")).copy()

    return _unary(f, df)


@_register("mean", 1)
def _mean():
    def f(x, a):
        return np.mean(x, axis=a.get("axis"))

    def df(g, x, o, a):
        axis = a.get("axis")
        count = x.size if axis is None else np.prod([x.shape[i] for i in np.atleast_1d(axis)])
        return _expand_reduced(g, x.shape, axis) / count

    return _unary(f, df)


@_register("transpose", 1)
def _transpose():
    return _unary(lambda x, a: x.T.copy(), lambda g, x, o, a: g.T)


@_register("reshape", 1)
def _reshape():
    def f(x, a):
        try:
            return x.reshape(a["shape"])
        except ValueError:
            raise ShapeError(f"reshape: cannot view {x.shape} as {a['shape']}") from None

    return _unary(f, lambda g, x, o, a: g.reshape(x.shape))


@_register("broadcast_row", 1)
def _broadcast_row():
    def f(x, a):
        if x.ndim == 2 and x.shape[0] != 1:
            raise ShapeError(f"broadcast_row: expected a single row, got {x.shape}")
        row = x.reshape(1, -1)
        return np.repeat(row, a["n"], axis=0)

    def df(g, x, o, a):
        return g.sum(axis=0).reshape(x.shape)

    return _unary(f, df)


@_register("slice_rows", 1)
def _slice_rows():
    def f(x, a):
        if not 0 <= a["start"] < a["stop"] <= x.shape[0]:
            raise ShapeError(f"slice_rows: [{a['start']}:{a['stop']}] out of range for {x.shape}")
        return x[a["start"]:a["stop"]].copy()

    def df(g, x, o, a):
        out = np.zeros_like(x)
        out[a["start"]:a["stop"]] = g
        return out

    return _unary(f, df)


@_register("l2_normalize_rows", 1)
def _l2_normalize_rows():
    def fwd(vals, attrs, saved):
        x = vals[0]
        x2 = x.reshape(1, -1) if x.ndim == 1 else x
        norms = np.sqrt(np.sum(x2 * x2, axis=1, keepdims=True))
        if np.any(norms == 0):
            raise DomainError("l2_normalize_rows: zero-norm row has no direction")
        saved["norms"] = norms
        return (x2 / norms).reshape(x.shape)

    def vjp(g, vals, out, attrs, saved):
        x = vals[0]
        o2 = out.reshape(1, -1) if x.ndim == 1 else out
        g2 = g.reshape(o2.shape)
        proj = np.sum(g2 * o2, axis=1, keepdims=True)
        return (((g2 - proj * o2) / saved["norms"]).reshape(x.shape),)

    return fwd, vjp


def apply_primitive(kind: str, inputs: Sequence[Tensor], attrs: dict | None = None) -> Tensor:
    """Evaluate primitive ``kind`` and record it on the tape if needed."""
    try:
        prim = PRIMITIVES[kind]
    except KeyError:
        raise KeyError(f"unknown primitive {kind!r}") from None
    if len(inputs) != prim.arity:
        raise TypeError(f"{kind} takes {prim.arity} inputs, got {len(inputs)}")
    attrs = dict(attrs or {})
    saved: dict = {}
    out = Tensor._wrap(np.asarray(prim.forward([t.data for t in inputs], attrs, saved)))
    if _grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = TapeNode(kind, tuple(inputs), attrs, saved)
    return out


def backward(root: Tensor) -> dict[int, np.ndarray]:
    """Store d(root)/d(leaf) in ``leaf.grad`` for every tracked leaf.

    ``grad`` is overwritten, not accumulated.  Returns a map from
    ``id(leaf)`` to its gradient; leaves reached only through zero paths
    still receive a (zero) entry.
    """
    if root.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise RuntimeError("root was computed without gradient tracking")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for inp in t.node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))

    grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    fresh: dict[int, np.ndarray] = {}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if t.node is None:
            g = np.zeros_like(t.data) if g is None else g
            fresh[id(t)] = g
            t.grad = g
            continue
        if g is None:
            continue
        node = t.node
        vals = [inp.data for inp in node.inputs]
        in_grads = PRIMITIVES[node.kind].vjp(g, vals, t.data, node.attrs, node.saved)
        for inp, ig in zip(node.inputs, in_grads):
            if not inp.requires_grad:
                continue
            ig = np.asarray(ig, dtype=np.float64)
            key = id(inp)
            grads[key] = grads[key] + ig if key in grads else ig
    return fresh


# ---------------------------------------------------------------------------
# gradient oracle
# ---------------------------------------------------------------------------


def finite_difference_gradient(f: Callable[[Tensor], Tensor | float], x: Tensor, h: float = 1e-5,
                               coords: Sequence[int] | None = None) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``, one coordinate at a time.

    ``coords`` restricts the probe to a subset of flat indices; the other
    entries of the result are left as NaN.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    if not x.data.flags.c_contiguous:
        x.data = np.ascontiguousarray(x.data)
    flat = x.data.reshape(-1)
    out = np.full(flat.shape, np.nan) if coords is not None else np.empty(flat.shape)
    idx = range(flat.size) if coords is None else coords
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f(x))
            flat[i] = orig - h
            fm = _scalar(f(x))
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(x.shape)


def _scalar(v) -> float:
    return v.item() if isinstance(v, Tensor) else float(v)


def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max-norm error relative to the larger of the two max-norms."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    mask = ~(np.isnan(a) | np.isnan(b))
    a, b = a[mask], b[mask]
    if a.size == 0:
        return 0.0
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), floor)
    return float(np.max(np.abs(a - b)) / scale)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def adam_step(params: Sequence[Tensor], grads: dict[int, np.ndarray] | Sequence[np.ndarray],
              state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``.

    ``grads`` is either the map returned by :func:`backward` or a list aligned
    with ``params``.  Parameters missing from the map get a zero gradient.
    """
    if isinstance(grads, dict):
        glist = [grads.get(id(p), np.zeros_like(p.data)) for p in params]
    else:
        glist = list(grads)
        if len(glist) != len(params):
            raise ShapeError(f"got {len(glist)} gradients for {len(params)} parameters")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("optimizer state does not match parameter list")

    step = state.t + 1
    for p, g in zip(params, glist):
        if g.shape != p.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient at optimizer step {step}", step=step)

    state.t = step
    bc1 = 1.0 - state.beta1 ** step
    bc2 = 1.0 - state.beta2 ** step
    for p, g, m, v in zip(params, glist, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return state
