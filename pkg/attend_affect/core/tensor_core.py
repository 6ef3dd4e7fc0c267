import logging
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from attend_affect.config import GRADCHECK_FLOOR, GRADCHECK_KINK_GAP, GRADCHECK_STEP, LAYER_NORM_EPS
from attend_affect.errors import ConfigurationError, DimensionError, NonDeterminismError

log = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """Run forward computations without recording a graph (per thread)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class RngState:
    """
    Seeded random stream for weight initialization and dropout masks.

    Two RngStates built from the same seed and key produce identical draws for
    identical call sequences. `position` counts the values drawn so far.

    Example:
        rng = RngState(7)
        mask = rng.random((3, 4))      # position == 12
        child = rng.child(2, 1)        # independent stream keyed by (7, 2, 1)
    """

    def __init__(self, seed: int, key: Sequence[int] = ()):
        if int(seed) < 0:
            raise ConfigurationError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self.position = 0
        self._generator = np.random.default_rng([self.seed, *self.key])

    def child(self, *key: int) -> "RngState":
        return RngState(self.seed, self.key + tuple(key))

    def _advance(self, size) -> None:
        self.position += int(np.prod(size)) if size is not None else 1

    def random(self, size) -> np.ndarray:
        self._advance(size)
        return self._generator.random(size)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        self._advance(size)
        return self._generator.uniform(low, high, size)

    def normal(self, loc: float, scale: float, size) -> np.ndarray:
        self._advance(size)
        return self._generator.normal(loc, scale, size)

    def permutation(self, n: int) -> np.ndarray:
        self._advance(n)
        return self._generator.permutation(n)

    def choice(self, n: int, size: int) -> np.ndarray:
        self._advance(size)
        return self._generator.choice(n, size=size, replace=False)


class Tensor:
    """
    Dense float64 array with optional reverse-mode gradient tracking.

    A Tensor produced by an op keeps references to its parents and a closure
    that pushes its gradient back to them; `backward(loss)` walks that graph.
    Leaves created with requires_grad=True accumulate into `.grad`.
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data.data if isinstance(data, Tensor) else data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @classmethod
    def _wrap(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out._parents = ()
        out._backward = None
        return out

    # ---- introspection ----
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if grad.shape != self.data.shape:
            grad = np.reshape(grad, self.data.shape)
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64)
        else:
            self.grad = self.grad + grad

    # ---- operators ----
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, exponent: float): return power(self, exponent)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: Iterable[Tensor], backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    parents = tuple(parents)
    track = is_grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor._wrap(np.asarray(data, dtype=np.float64), track)
    if track:
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------
# Elementwise arithmetic
# ---------------------
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), _backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), _backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), _backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(a.data / b.data, (a, b), _backward)


def neg(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    return _result(-x.data, (x,), lambda g: x._accumulate(-g))


def power(x: ArrayLike, exponent: float) -> Tensor:
    x = as_tensor(x)
    exponent = float(exponent)
    return _result(x.data ** exponent, (x,),
                   lambda g: x._accumulate(g * exponent * x.data ** (exponent - 1.0)))


# ---------------------
# Nonlinearities
# ---------------------
def exp(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: x._accumulate(g * out))


def tanh(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _result(out, (x,), lambda g: x._accumulate(g * (1.0 - out * out)))


def sigmoid(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(out, (x,), lambda g: x._accumulate(g * out * (1.0 - out)))


def relu(x: ArrayLike) -> Tensor:
    x = as_tensor(x)
    active = x.data > 0
    return _result(np.where(active, x.data, 0.0), (x,), lambda g: x._accumulate(g * active))


def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    """
    Softmax along `axis`, stabilized by subtracting the maximum.

    Example:
        softmax([0, ln 3]) -> [0.25, 0.75]
    """
    x = as_tensor(x)
    shifted = np.exp(x.data - np.max(x.data, axis=axis, keepdims=True))
    out = shifted / np.sum(shifted, axis=axis, keepdims=True)

    def _backward(g):
        x._accumulate(out * (g - np.sum(g * out, axis=axis, keepdims=True)))

    return _result(out, (x,), _backward)


# ---------------------
# Reductions and reshaping
# ---------------------
def tsum(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return _result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), _backward)


def mean(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return tsum(x, axis=axis, keepdims=keepdims) / float(count)


def reshape(x: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    return _result(x.data.reshape(shape), (x,), lambda g: x._accumulate(g.reshape(x.shape)))


def transpose(x: ArrayLike) -> Tensor:
    """Swap the last two axes (plain transpose for matrices)."""
    x = as_tensor(x)
    if x.ndim < 2:
        return x
    return _result(np.swapaxes(x.data, -1, -2), (x,), lambda g: x._accumulate(np.swapaxes(g, -1, -2)))


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


def getitem(x: ArrayLike, index) -> Tensor:
    x = as_tensor(x)
    basic = _is_basic_index(index)

    def _backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        x._accumulate(full)

    return _result(x.data[index], (x,), _backward)


def concat(tensors: Sequence[ArrayLike], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def _backward(g):
        for t, piece in zip(tensors, np.split(g, cuts, axis=axis)):
            t._accumulate(piece)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, _backward)


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def _backward(g):
        for i, t in enumerate(tensors):
            t._accumulate(np.take(g, i, axis=axis))

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, _backward)


# ---------------------
# Linear algebra
# ---------------------
def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """
    Matrix product for vectors and (batched) matrices.

    Raises:
        DimensionError: inner extents disagree; the message names both shapes.

    Example:
        [[1,2],[3,4]] @ [[5,6],[7,8]] -> [[19,22],[43,50]]
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul needs at least 1-d operands, got shapes {a.shape} and {b.shape}")
    inner_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if a.shape[-1] != inner_b:
        raise DimensionError(f"matmul inner extents disagree for shapes {a.shape} and {b.shape}")

    def _backward(g):
        if a.ndim == 1 and b.ndim == 1:
            ga, gb = g * b.data, g * a.data
        elif a.ndim == 1:
            ga = b.data @ g
            gb = np.outer(a.data, g) if b.ndim == 2 else _unbroadcast(a.data[:, None] * g[..., None, :], b.shape)
        elif b.ndim == 1:
            ga = g[..., :, None] * b.data
            gb = np.tensordot(g, a.data, axes=(list(range(g.ndim)), list(range(a.ndim - 1))))
        else:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.asarray(ga), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.asarray(gb), b.shape))

    return _result(a.data @ b.data, (a, b), _backward)


def linear(x: ArrayLike, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map x·Wᵀ + b over the last axis; W is stored out×in."""
    out = matmul(x, transpose(weight))
    return out if bias is None else out + bias


def conv1d(x: ArrayLike, kernels: ArrayLike, bias: ArrayLike) -> Tensor:
    """
    Valid cross-correlation along the time axis, stride 1, no padding.

    Args:
        x: (..., d_in, n) input; leading axes are a batch of windows.
        kernels: (d_out, d_in, k)
        bias: (d_out,)

    Returns:
        Tensor: (..., d_out, n - k + 1)

    Example:
        x=[[1,2,3]], kernels=[[[1,1]]], bias=[0] -> [[3,5]]
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    d_out, d_in, k = kernels.shape
    if x.ndim < 2 or x.shape[-2] != d_in:
        raise DimensionError(f"conv1d input shape {x.shape} does not match kernel shape {kernels.shape}")
    n = x.shape[-1]
    if n < k:
        raise DimensionError(f"window too short for conv1d: {n} time steps < kernel size {k}")
    width = n - k + 1
    lead = x.shape[:-2]
    batch = x.data.reshape(-1, d_in, n)
    taps = np.stack([batch[:, :, j:j + width] for j in range(k)], axis=-1)  # (B, d_in, width, k)
    out = np.einsum("biwj,oij->bow", taps, kernels.data) + bias.data[None, :, None]

    def _backward(g):
        g = g.reshape(-1, d_out, width)
        if kernels.requires_grad:
            kernels._accumulate(np.einsum("bow,biwj->oij", g, taps))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gx = np.zeros_like(batch)
            for j in range(k):
                gx[:, :, j:j + width] += np.einsum("bow,oi->biw", g, kernels.data[:, :, j])
            x._accumulate(gx.reshape(x.shape))

    return _result(out.reshape(lead + (d_out, width)), (x, kernels, bias), _backward)


def maxpool_time(c: ArrayLike) -> Tensor:
    """
    Max over the last (time) axis; the subgradient goes to the first argmax.

    Example:
        [[3,5],[-1,-2]] -> [5, -1]
    """
    c = as_tensor(c)
    if c.ndim == 0 or c.shape[-1] < 1:
        raise DimensionError(f"maxpool_time needs a non-empty time axis, got shape {c.shape}")
    index = np.argmax(c.data, axis=-1)[..., None]
    out = np.take_along_axis(c.data, index, axis=-1)[..., 0]

    def _backward(g):
        full = np.zeros_like(c.data)
        np.put_along_axis(full, index, g[..., None], axis=-1)
        c._accumulate(full)

    return _result(out, (c,), _backward)


def layer_norm(x: ArrayLike, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize each position over the last axis, then apply gain and bias."""
    x = as_tensor(x)
    if x.shape[-1] < 2:
        raise DimensionError(f"layer_norm needs at least 2 features, got shape {x.shape}")
    centered = x - mean(x, axis=-1, keepdims=True)
    variance = mean(centered * centered, axis=-1, keepdims=True)
    return centered * (variance + eps) ** -0.5 * gain + bias


def dropout(x: Tensor, p: float, rng: Optional[RngState], training: bool) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-p) in training, identity otherwise."""
    if not training or p <= 0.0:
        return x
    if p >= 1.0:
        raise ConfigurationError(f"dropout probability must be < 1, got {p}")
    keep = rng.random(x.shape) >= p
    return x * Tensor._wrap(keep / (1.0 - p), False)


def mse(prediction: Tensor, target: ArrayLike) -> Tensor:
    diff = prediction - as_tensor(target)
    return mean(diff * diff)


# ---------------------
# Reverse mode
# ---------------------
def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    pending = [(root, False)]
    while pending:
        node, expanded = pending.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        pending.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                pending.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """
    Populate `.grad` of every requires_grad leaf reachable from a scalar loss.

    Gradients add onto whatever the leaves already hold. The recorded graph is
    released as it is consumed, so each forward supports one backward.

    Raises:
        DimensionError: the loss is not a scalar.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is None:
            continue
        if node.grad is not None:
            node._backward(node.grad)
        node.grad = None
        node._backward = None
        node._parents = ()


def _relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(GRADCHECK_FLOOR, abs(a) + abs(b))


def finite_diff_check(
        f: Callable[[], Tensor],
        params: Sequence[Tensor],
        h: float = GRADCHECK_STEP,
        max_components: Optional[int] = None,
        seed: int = 0
) -> float:
    """
    Compare backward() gradients against central differences.

    A component whose left and right one-sided slopes disagree by more than
    GRADCHECK_KINK_GAP has a non-differentiable point (ReLU, max) within ±h.
    There the analytic gradient is scored against the closest of the central
    and the two one-sided slopes.

    Args:
        f: zero-argument function returning a scalar Tensor built from `params`;
            must be deterministic (dropout off).
        params: leaf tensors to check.
        h: finite-difference step.
        max_components: check at most this many components per parameter,
            chosen with a seeded generator; None checks all of them.
        seed: seed of that choice.

    Returns:
        float: max over checked components of |a-b| / max(1e-8, |a|+|b|).

    Raises:
        NonDeterminismError: two identical forward calls differ.
    """
    for p in params:
        p.zero_grad()
    loss = f()
    with no_grad():
        repeat = f()
    if loss.item() != repeat.item():
        raise NonDeterminismError(f"forward is not deterministic: {loss.item()!r} != {repeat.item()!r}")
    backward(loss)

    center = loss.item()
    chooser = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = np.zeros(p.size) if p.grad is None else p.grad.reshape(-1)
        flat = p.data.reshape(-1)
        if max_components is None or max_components >= flat.size:
            indices = range(flat.size)
        else:
            indices = sorted(chooser.choice(flat.size, size=max_components, replace=False))
        for i in indices:
            original = flat[i]
            with no_grad():
                flat[i] = original + h
                plus = f().item()
                flat[i] = original - h
                minus = f().item()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * h)
            error = _relative_error(analytic[i], numeric)
            right, left = (plus - center) / h, (center - minus) / h
            if _relative_error(right, left) > GRADCHECK_KINK_GAP:
                error = min(error, _relative_error(analytic[i], right), _relative_error(analytic[i], left))
                log.debug("gradcheck %s[%d]: kink within h, one-sided slopes %.6e / %.6e",
                          p.name or "param", i, left, right)
            if error > worst:
                worst = error
                log.debug("gradcheck %s[%d]: analytic=%.6e numeric=%.6e rel=%.2e",
                          p.name or "param", i, analytic[i], numeric, error)
    return worst
