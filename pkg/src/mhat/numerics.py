"""Log-space numerics and a small reverse-mode gradient engine.

Everything downstream (lattice training, internal-LM losses, adaptation)
differentiates through the ops defined here.  The engine is deliberately
minimal: dense float64 arrays, only the ops the losses need, and a
finite-difference certifier (`gradient_check`) that is the contract every
analytic gradient must pass.
"""

from __future__ import annotations

import contextlib
import hashlib
from collections.abc import Callable, Sequence

import numpy as np

__all__ = [
    "EvaluationError",
    "ParameterSet",
    "ShapeError",
    "Tensor",
    "affine",
    "concat",
    "dot",
    "embedding",
    "gradient_check",
    "log_sigmoid",
    "log_softmax",
    "log_sum_exp",
    "no_grad",
    "sigmoid",
    "tanh",
]


class ShapeError(ValueError):
    """Operands whose shapes do not conform."""


class EvaluationError(RuntimeError):
    """A loss evaluation produced a non-finite value."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Suspend graph construction (decoding, teacher/snapshot evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense float64 array plus reverse-mode bookkeeping.

    Tensors are treated as immutable values by every op; training code
    mutates `.data` in place only between graph constructions.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def _ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def _accumulate(self, g: np.ndarray) -> None:
        self._ensure_grad()
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode accumulation from a scalar output into leaf grads."""
        if self.data.ndim != 0:
            raise ShapeError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(1.0))
        for node in reversed(order):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self):
        return total(self)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _op(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise / structural ops ---------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data + b.data

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _op(data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data - b.data

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _op(data, (a, b), vjp)


def neg(a) -> Tensor:
    a = _coerce(a)

    def vjp(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _op(-a.data, (a,), vjp)


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    data = a.data * b.data

    def vjp(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _op(data, (a, b), vjp)


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    orig = a.data.shape

    def vjp(g):
        if a.requires_grad:
            a._accumulate(g.reshape(orig))

    return _op(a.data.reshape(shape), (a,), vjp)


def concat(a, b) -> Tensor:
    """Concatenate along the trailing axis."""
    a, b = _coerce(a), _coerce(b)
    na = a.data.shape[-1]
    data = np.concatenate([a.data, b.data], axis=-1)

    def vjp(g):
        if a.requires_grad:
            a._accumulate(g[..., :na])
        if b.requires_grad:
            b._accumulate(g[..., na:])

    return _op(data, (a, b), vjp)


def take(a, idx) -> Tensor:
    """Indexing with gradient scatter.

    Supports basic (int/slice) indexing and pure integer-array gathering;
    the two styles must not be mixed in one index tuple.
    """
    a = _coerce(a)
    data = a.data[idx]
    fancy = any(
        isinstance(i, (np.ndarray, list)) for i in (idx if isinstance(idx, tuple) else (idx,))
    )

    def vjp(g):
        if not a.requires_grad:
            return
        buf = a._ensure_grad()
        if fancy:
            np.add.at(buf, idx, g)
        else:
            buf[idx] += g

    return _op(data, (a,), vjp)


def total(a) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    a = _coerce(a)

    def vjp(g):
        if a.requires_grad:
            a._accumulate(np.broadcast_to(g, a.data.shape))

    return _op(a.data.sum(), (a,), vjp)


def embedding(table, ids) -> Tensor:
    """Row lookup `table[ids]` with scatter-add gradient into the table."""
    table = _coerce(table)
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids]

    def vjp(g):
        if table.requires_grad:
            np.add.at(table._ensure_grad(), ids, g)

    return _op(data, (table,), vjp)


# -- linear maps ---------------------------------------------------------


def affine(x, W, b=None) -> Tensor:
    """W x + b applied over the trailing axis of `x`."""
    x, W = _coerce(x), _coerce(W)
    if W.data.ndim != 2:
        raise ShapeError(f"affine: W must be a matrix, got shape {W.data.shape}")
    if x.data.ndim < 1 or x.data.shape[-1] != W.data.shape[1]:
        raise ShapeError(
            f"affine: x with shape {x.data.shape} does not conform with W {W.data.shape}"
        )
    m, n = W.data.shape
    data = x.data @ W.data.T
    parents: tuple[Tensor, ...]
    if b is not None:
        b = _coerce(b)
        if b.data.shape != (m,):
            raise ShapeError(
                f"affine: bias with shape {b.data.shape} does not conform with W {W.data.shape}"
            )
        data = data + b.data
        parents = (x, W, b)
    else:
        parents = (x, W)

    def vjp(g):
        g2 = g.reshape(-1, m)
        if x.requires_grad:
            x._accumulate(g @ W.data)
        if W.requires_grad:
            W._accumulate(g2.T @ x.data.reshape(-1, n))
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=0))

    return _op(data, parents, vjp)


def dot(x, w, b=None) -> Tensor:
    """Inner product with a vector over the trailing axis, plus a scalar bias."""
    x, w = _coerce(x), _coerce(w)
    if w.data.ndim != 1 or x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(
            f"dot: x with shape {x.data.shape} does not conform with w {w.data.shape}"
        )
    h = w.data.shape[0]
    data = x.data @ w.data
    parents: tuple[Tensor, ...]
    if b is not None:
        b = _coerce(b)
        if b.data.shape not in ((), (1,)):
            raise ShapeError(f"dot: bias must be scalar, got shape {b.data.shape}")
        data = data + b.data.reshape(())
        parents = (x, w, b)
    else:
        parents = (x, w)

    def vjp(g):
        if x.requires_grad:
            x._accumulate(g[..., None] * w.data)
        if w.requires_grad:
            w._accumulate((g[..., None] * x.data).reshape(-1, h).sum(axis=0))
        if b is not None and b.requires_grad:
            b._accumulate(np.asarray(g.sum()).reshape(b.data.shape))

    return _op(data, parents, vjp)


# -- nonlinearities -------------------------------------------------------


def tanh(x) -> Tensor:
    x = _coerce(x)
    data = np.tanh(x.data)

    def vjp(g):
        if x.requires_grad:
            x._accumulate(g * (1.0 - data * data))

    return _op(data, (x,), vjp)


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    """Stable logistic function; plain values in (0,1), no graph."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return float(out) if out.ndim == 0 else out


def log_sigmoid(x) -> Tensor:
    """log(sigmoid(x)); finite for all finite inputs."""
    x = _coerce(x)
    data = -_softplus(-x.data)

    def vjp(g):
        if x.requires_grad:
            # d/dx log sigmoid(x) = sigmoid(-x)
            x._accumulate(g * sigmoid(-x.data))

    return _op(data, (x,), vjp)


def log_softmax(x, axis: int = -1) -> Tensor:
    """Log-probabilities along `axis`, stable via max subtraction."""
    x = _coerce(x)
    if x.data.ndim == 0 or x.data.shape[axis] == 0:
        raise ShapeError("log_softmax: empty input")
    m = x.data.max(axis=axis, keepdims=True)
    shifted = x.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse

    def vjp(g):
        if x.requires_grad:
            sm = np.exp(data)
            x._accumulate(g - sm * g.sum(axis=axis, keepdims=True))

    return _op(data, (x,), vjp)


def log_sum_exp(z, axis=None):
    """Stable log-sum-exp; tolerates -inf entries (empty-path sentinel)."""
    z = np.asarray(z, dtype=np.float64)
    if z.size == 0:
        raise ShapeError("log_sum_exp: empty input")
    m = np.max(z, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.exp(z - m_safe).sum(axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


# -- parameters -----------------------------------------------------------

GROUPS = ("encoder", "blank_branch", "ilm")


class ParameterSet:
    """Named, grouped trainable tensors.

    Names are unique dotted paths; every entry belongs to exactly one of
    the groups in ``GROUPS``, the unit of freezing and checkpointing.
    """

    def __init__(self):
        self.entries: dict[str, Tensor] = {}
        self.group: dict[str, str] = {}

    def add(self, name: str, values: np.ndarray, group: str) -> Tensor:
        if name in self.entries:
            raise ValueError(f"duplicate parameter name: {name}")
        if group not in GROUPS:
            raise ValueError(f"unknown parameter group: {group}")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self.entries[name] = t
        self.group[name] = group
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def names(self) -> list[str]:
        return list(self.entries)

    def group_names(self, group: str) -> list[str]:
        return [n for n, g in self.group.items() if g == group]

    def zero_grads(self) -> None:
        for t in self.entries.values():
            t.grad = None

    def size(self) -> int:
        return sum(t.size for t in self.entries.values())

    def group_sizes(self) -> dict[str, int]:
        out = {g: 0 for g in GROUPS}
        for n, t in self.entries.items():
            out[self.group[n]] += t.size
        return out

    def snapshot(self, groups: Sequence[str] | None = None) -> dict[str, np.ndarray]:
        gs = set(groups) if groups is not None else set(GROUPS)
        return {n: t.data.copy() for n, t in self.entries.items() if self.group[n] in gs}

    def load_snapshot(self, values: dict[str, np.ndarray]) -> None:
        for n, v in values.items():
            t = self.entries[n]
            if t.data.shape != v.shape:
                raise ShapeError(f"snapshot shape mismatch for {n}")
            t.data = np.array(v, dtype=np.float64)

    def checksum(self, groups: Sequence[str] | None = None) -> str:
        gs = set(groups) if groups is not None else set(GROUPS)
        h = hashlib.sha256()
        for n in sorted(self.entries):
            if self.group[n] not in gs:
                continue
            t = self.entries[n]
            h.update(n.encode())
            h.update(str(t.data.shape).encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.hexdigest()


def gradient_check(
    loss_fn: Callable[[ParameterSet], Tensor],
    params: ParameterSet,
    h: float = 1e-4,
    num_coords: int = 200,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples `num_coords` coordinates across all parameters; for each,
    compares the analytic gradient of `loss_fn` with
    (L(theta+h) - L(theta-h)) / 2h using
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
    """
    if h <= 0:
        raise ValueError("gradient_check: h must be positive")
    rng = rng or np.random.default_rng(0)

    out = loss_fn(params)
    if not np.isfinite(out.data):
        raise EvaluationError("non-finite loss at the unperturbed point")
    params.zero_grads()
    out.backward()
    analytic = {
        n: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for n, t in params.entries.items()
    }

    coords: list[tuple[str, int]] = []
    for n, t in params.entries.items():
        coords.extend((n, i) for i in range(t.size))
    if len(coords) > num_coords:
        picks = rng.choice(len(coords), size=num_coords, replace=False)
        coords = [coords[i] for i in picks]

    max_rel = 0.0
    for name, i in coords:
        t = params[name]
        orig = t.data.flat[i]
        t.data.flat[i] = orig + h
        lp = float(loss_fn(params).data)
        t.data.flat[i] = orig - h
        lm = float(loss_fn(params).data)
        t.data.flat[i] = orig
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise EvaluationError(f"non-finite loss when perturbing {name}[{i}]")
        numeric = (lp - lm) / (2.0 * h)
        ana = analytic[name].flat[i]
        rel = abs(ana - numeric) / max(1e-8, abs(ana) + abs(numeric))
        max_rel = max(max_rel, rel)
    return max_rel
