"""Dense float64 tensors with reverse-mode autodiff and an Adam optimizer.

Every op builds a node holding its parents and a closure that pushes the
upstream gradient back to them.  ``backward`` walks the graph once in reverse
topological order.  Only the ops the MIRRAMS model needs are provided.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "tensor",
    "concat",
    "gather",
    "where",
    "broadcast_to",
    "layer_norm",
    "softmax",
    "log_softmax",
    "cross_entropy",
    "dropout",
    "backward",
    "Adam",
    "numerical_grad",
    "relative_error",
]

_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Operand shapes do not conform for an op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or inf."""


def _check_finite(op: str, arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op}: non-finite output")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # Sum out axes that were added or stretched by broadcasting.
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a} and {b}") from None


class Tensor:
    """A float64 array that records how it was computed."""

    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple = (),
        _op: str = "leaf",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = _op
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- basics -----------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{label})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        # Never mutated in place, so aliasing an upstream array is safe.
        self.grad = g if self.grad is None else self.grad + g

    # -- elementwise arithmetic ------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = _as_tensor(other)
        _broadcast_shape("add", self.shape, other.shape)
        out = _node(self.data + other.data, (self, other), "add")
        a_shape, b_shape = self.shape, other.shape

        def _bw(g):
            self._accumulate(_unbroadcast(g, a_shape))
            other._accumulate(_unbroadcast(g, b_shape))

        out._backward = _bw
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other) -> "Tensor":
        return self + (-_as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return _as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float, np.floating)):
            c = float(other)
            out = _node(self.data * c, (self,), "scale")
            out._backward = lambda g: self._accumulate(g * c)
            return out
        other = _as_tensor(other)
        _broadcast_shape("mul", self.shape, other.shape)
        out = _node(self.data * other.data, (self, other), "mul")
        a_shape, b_shape = self.shape, other.shape

        def _bw(g):
            self._accumulate(_unbroadcast(g * other.data, a_shape))
            other._accumulate(_unbroadcast(g * self.data, b_shape))

        out._backward = _bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, (int, float, np.floating)):
            return self * (1.0 / float(other))
        raise TypeError("division is only supported by a Python scalar")

    def __matmul__(self, other) -> "Tensor":
        other = _as_tensor(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
        out = _node(a @ b, (self, other), "matmul")

        def _bw(g):
            self._accumulate(_unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape))
            other._accumulate(_unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape))

        out._backward = _bw
        return out

    # -- shape ops ---------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        try:
            data = self.data.reshape(shape)
        except ValueError:
            raise ShapeError(f"reshape: cannot view {self.shape} as {shape}") from None
        out = _node(data, (self,), "reshape")
        src = self.shape
        out._backward = lambda g: self._accumulate(g.reshape(src))
        return out

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        if sorted(axes) != list(range(self.ndim)):
            raise ShapeError(f"transpose: axes {axes} invalid for shape {self.shape}")
        out = _node(np.transpose(self.data, axes), (self,), "transpose")
        inverse = tuple(np.argsort(axes))
        out._backward = lambda g: self._accumulate(np.transpose(g, inverse))
        return out

    def __getitem__(self, index) -> "Tensor":
        out = _node(self.data[index], (self,), "getitem")
        src = self.shape

        basic = _is_basic_index(index)

        def _bw(g):
            full = np.zeros(src)
            if basic:
                full[index] = g
            else:
                np.add.at(full, index, g)
            self._accumulate(full)

        out._backward = _bw
        return out

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")
        src = self.shape

        def _bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, src).copy())

        out._backward = _bw
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    def max(self, axis: int = -1) -> tuple["Tensor", np.ndarray]:
        """Maximum along ``axis`` plus the argmax (first occurrence on ties)."""
        idx = np.argmax(self.data, axis=axis)
        vals = np.take_along_axis(self.data, np.expand_dims(idx, axis), axis=axis)
        out = _node(np.squeeze(vals, axis=axis), (self,), "max")
        src = self.shape

        def _bw(g):
            full = np.zeros(src)
            np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
            self._accumulate(full)

        out._backward = _bw
        return out, idx

    # -- nonlinearities ----------------------------------------------------

    def relu(self) -> "Tensor":
        keep = self.data > 0
        out = _node(np.where(keep, self.data, 0.0), (self,), "relu")
        out._backward = lambda g: self._accumulate(g * keep)
        return out

    def gelu(self) -> "Tensor":
        x = self.data
        cdf = 0.5 * (1.0 + erf(x / _SQRT_2))
        out = _node(x * cdf, (self,), "gelu")
        out._backward = lambda g: self._accumulate(
            g * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x))
        )
        return out

    def log(self) -> "Tensor":
        x = self.data
        if (x <= 0).any():
            raise NonFiniteError("log: non-positive input")
        out = _node(np.log(x), (self,), "log")
        out._backward = lambda g: self._accumulate(g / x)
        return out

    def exp(self) -> "Tensor":
        with np.errstate(over="ignore"):
            data = np.exp(self.data)
        out = _node(data, (self,), "exp")
        out._backward = lambda g: self._accumulate(g * out.data)
        return out


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice)) or i is None or i is Ellipsis for i in items)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple, op: str) -> Tensor:
    _check_finite(op, data)
    return Tensor(data, requires_grad=any(p.requires_grad for p in parents), _parents=parents, _op=op)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


# -- free-standing ops -------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape}")
    out = _node(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), "concat")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def _bw(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=ax)):
            t._accumulate(piece)

    out._backward = _bw
    return out


def gather(table: Tensor, index: np.ndarray) -> Tensor:
    """Row lookup ``table[index]`` (embedding lookup)."""
    index = np.asarray(index)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise IndexError(
            f"gather: index out of range for table with {table.shape[0]} rows"
        )
    out = _node(table.data[index], (table,), "gather")

    def _bw(g):
        full = np.zeros(table.shape)
        np.add.at(full, index, g)
        table._accumulate(full)

    out._backward = _bw
    return out


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select ``a`` where ``cond`` holds, else ``b``.  ``cond`` is a constant."""
    a, b = _as_tensor(a), _as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    shape = _broadcast_shape("where", _broadcast_shape("where", cond.shape, a.shape), b.shape)
    cond_full = np.broadcast_to(cond, shape)
    out = _node(np.where(cond_full, a.data, b.data), (a, b), "where")

    def _bw(g):
        a._accumulate(_unbroadcast(np.where(cond_full, g, 0.0), a.shape))
        b._accumulate(_unbroadcast(np.where(cond_full, 0.0, g), b.shape))

    out._backward = _bw
    return out


def broadcast_to(x: Tensor, shape: tuple) -> Tensor:
    try:
        data = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    out = _node(data, (x,), "broadcast_to")
    out._backward = lambda g: x._accumulate(_unbroadcast(g, x.shape))
    return out


def layer_norm(x: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (population variance), then scale and shift."""
    d = x.shape[-1]
    if scale.shape != (d,) or shift.shape != (d,):
        raise ShapeError(f"layer_norm: incompatible shapes {x.shape} and {scale.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    out = _node(xhat * scale.data + shift.data, (x, scale, shift), "layer_norm")

    def _bw(g):
        lead = tuple(range(g.ndim - 1))
        scale._accumulate((g * xhat).sum(axis=lead))
        shift._accumulate(g.sum(axis=lead))
        gx = g * scale.data
        x._accumulate(
            inv_std
            * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        )

    out._backward = _bw
    return out


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(x: Tensor) -> Tensor:
    s = _softmax(x.data)
    out = _node(s, (x,), "softmax")
    out._backward = lambda g: x._accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))
    return out


def log_softmax(x: Tensor) -> Tensor:
    ls = _log_softmax(x.data)
    out = _node(ls, (x,), "log_softmax")
    out._backward = lambda g: x._accumulate(g - np.exp(ls) * g.sum(axis=-1, keepdims=True))
    return out


def cross_entropy(
    logits: Tensor, targets: np.ndarray, weights: np.ndarray | None = None
) -> Tensor:
    """Fused log-softmax + NLL: ``mean_i w_i * -log softmax(logits_i)[t_i]``.

    The mean runs over all rows, so zero-weight rows still count in the
    denominator.
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy: expected (n, K) logits, got {logits.shape}")
    n, k = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (n,):
        raise ShapeError(f"cross_entropy: incompatible shapes {logits.shape} and {targets.shape}")
    if n and (targets.min() < 0 or targets.max() >= k):
        raise ValueError(f"cross_entropy: target outside [0, {k})")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    ls = _log_softmax(logits.data)
    nll = -ls[np.arange(n), targets]
    out = _node(np.asarray((w * nll).sum() / n), (logits,), "cross_entropy")

    def _bw(g):
        grad = np.exp(ls)
        grad[np.arange(n), targets] -= 1.0
        logits._accumulate(grad * (w * (float(g) / n))[:, None])

    out._backward = _bw
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    if rng is None or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = _node(x.data * keep, (x,), "dropout")
    out._backward = lambda g: x._accumulate(g * keep)
    return out


# -- backward pass -------------------------------------------------------------


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Mapping[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Backpropagate from scalar ``loss``.

    Returns a gradient for every tensor in ``params`` (zeros for those the
    loss does not reach).  Intermediate gradients are released afterwards.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    params = dict(params or {})
    for p in params.values():
        p.grad = None
    order = _topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        if not np.isfinite(g).all():
            label = node.name or node.op
            raise NonFiniteError(f"backward: NaN/inf gradient at node {label!r}")
        if node._backward is not None:
            node._backward(g)
            if node._parents:
                node.grad = None
    grads = {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"backward: NaN/inf gradient at parameter {name!r}")
        params[name].grad = None
    return grads


# -- optimizer -------------------------------------------------------------------


class Adam:
    """Adam with bias correction, state keyed by parameter name."""

    def __init__(
        self,
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ValueError("Adam: lr must be positive")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> None:
        for name, p in params.items():
            if grads[name].shape != p.shape:
                raise ShapeError(
                    f"adam_step: incompatible shapes {p.shape} and {grads[name].shape} for {name!r}"
                )
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": {k: v.copy() for k, v in self.m.items()},
                "v": {k: v.copy() for k, v in self.v.items()}}


# -- finite differences ----------------------------------------------------------


def numerical_grad(f: Callable[[], float], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f()`` with respect to ``x.data``."""
    grad = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """``||a - n|| / max(||a||, ||n||)``; 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.isfinite(p.data).all() for p in params)
