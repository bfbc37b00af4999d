"""
Dense tensors with reverse-mode automatic differentiation.

Every operation records a closure that maps the output gradient to the
gradients of its inputs. ``Tensor.backward`` walks the recorded tape once in
reverse topological order and accumulates gradients on leaf tensors that
require them. ``finite_diff_check`` is the independent oracle used by the test
suites and by ``tric selftest``.
"""
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

DEFAULT_DTYPE = np.float64

_grad_state = threading.local()


class ShapeMismatchError(ValueError):
    """Raised when operand shapes do not conform for an operation."""


class NonDeterministicFunctionError(RuntimeError):
    """Raised when a function under gradient check returns differing values."""


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording in the current thread (sampling, evaluation)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """
    A node of the computation tape.

    Leaf tensors created with ``requires_grad=True`` are parameters; their
    ``grad`` is filled by ``backward``. Intermediate tensors keep their parents
    and a backward closure until the tape is consumed.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self._op = ""
        self._consumed = False

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- tape -----------------------------------------------------------------

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self):
        """Accumulate d(self)/d(leaf) on every leaf that requires a gradient."""
        if self.data.size != 1:
            raise ShapeMismatchError(f"backward requires a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise RuntimeError("The tape of this loss was already consumed by an earlier backward pass")
        if not self.requires_grad:
            raise RuntimeError("Loss does not depend on any tensor that requires a gradient")

        order = self._topological_order()
        grads: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            parent_grads = node._backward(grad)
            for parent, parent_grad in zip(node._parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                parent_grad = _unbroadcast(np.asarray(parent_grad), parent.shape)
                key = id(parent)
                grads[key] = grads[key] + parent_grad if key in grads else parent_grad
            node._backward = None
            node._parents = ()
            node._consumed = True

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return tmax(self, axis=axis, keepdims=keepdims)


TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    out = Tensor(data, dtype=data.dtype if data.dtype in (np.float32, np.float64) else None)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} cannot be broadcast together") from None


# -- elementwise arithmetic ----------------------------------------------------

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), "mul", lambda g: (g * b.data, g * a.data))


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data
    return _result(out, (a, b), "div", lambda g: (g / b.data, -g * out / b.data))


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), "neg", lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    return _result(a.data ** exponent, (a,), "pow",
                   lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), "exp", lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _result(out, (a,), "sqrt", lambda g: (g * 0.5 / out,))


# -- activations ---------------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0).astype(a.dtype), (a,), "relu", lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = special.expit(a.data)
    return _result(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


def gelu(a: Tensor) -> Tensor:
    """Exact GELU: x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + special.erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return _result((x * cdf).astype(a.dtype), (a,), "gelu", lambda g: (g * (cdf + x * pdf),))


def softmax(a: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Softmax along ``axis``. ``mask`` (broadcastable, True = keep) removes
    entries from the normalisation; every slice must keep at least one entry.
    """
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        if not np.all(mask.any(axis=axis)):
            raise ValueError("softmax mask removes every entry of at least one slice")
        x = np.where(mask, x, -np.inf)
    shifted = np.exp(x - x.max(axis=axis, keepdims=True))
    out = shifted / shifted.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out.astype(a.dtype), (a,), "softmax", backward)


# -- linear algebra ------------------------------------------------------------

def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeMismatchError(f"matmul: batch dimensions of {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        return (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g)

    return _result(a.data @ b.data, (a, b), "matmul", backward)


def contract_axis(matrix: np.ndarray, a: Tensor, axis: int) -> Tensor:
    """
    Apply a constant matrix [K x L] along ``axis`` (extent L) of ``a``.
    Used for pooling, upsampling, DFT and graph mixing.
    """
    matrix = np.asarray(matrix, dtype=a.dtype)
    axis = axis % a.ndim
    if matrix.ndim != 2 or matrix.shape[1] != a.shape[axis]:
        raise ShapeMismatchError(
            f"contract_axis: matrix {matrix.shape} does not match axis {axis} of tensor {a.shape}")
    out = np.moveaxis(np.tensordot(matrix, a.data, axes=([1], [axis])), 0, axis)

    def backward(g):
        return (np.moveaxis(np.tensordot(matrix.T, g, axes=([1], [axis])), 0, axis),)

    return _result(out, (a,), "contract_axis", backward)


# -- reductions ----------------------------------------------------------------

def _normalize_axes(axis, ndim) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def _expand_reduced(g: np.ndarray, axes: Tuple[int, ...], keepdims: bool) -> np.ndarray:
    if keepdims:
        return g
    for ax in axes:
        g = np.expand_dims(g, ax)
    return g


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        return (np.broadcast_to(_expand_reduced(g, axes, keepdims), a.shape),)

    return _result(np.asarray(out), (a,), "sum", backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = float(np.prod([a.shape[ax] for ax in axes])) if axes else 1.0
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        return (np.broadcast_to(_expand_reduced(g, axes, keepdims), a.shape) / count,)

    return _result(np.asarray(out), (a,), "mean", backward)


def tmax(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; tied maxima share the gradient equally."""
    axes = _normalize_axes(axis, a.ndim)
    kept = a.data.max(axis=axes, keepdims=True)
    mask = (a.data == kept)
    counts = mask.sum(axis=axes, keepdims=True)
    out = kept if keepdims else np.squeeze(kept, axis=axes)

    def backward(g):
        return (mask * _expand_reduced(g, axes, keepdims) / counts,)

    return _result(np.asarray(out), (a,), "max", backward)


# -- shape manipulation --------------------------------------------------------

def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatchError(f"reshape: cannot view shape {a.shape} as {tuple(shape)}") from None
    return _result(out, (a,), "reshape", lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Optional[Tuple[int, ...]] = None) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), "transpose", lambda g: (g.transpose(inverse),))


def broadcast_to(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeMismatchError(f"broadcast_to: shape {a.shape} cannot be broadcast to {tuple(shape)}") from None
    return _result(np.array(out), (a,), "broadcast_to", lambda g: (g,))


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(out), (a,), "getitem", backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeMismatchError(
                f"concat along axis {axis}: shapes {tensors[0].shape} and {t.shape} do not conform")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in tensors], axis=ax)

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors)))

    return _result(out, tensors, "concat", backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    expanded = []
    for t in tensors:
        ax = axis % (t.ndim + 1)
        expanded.append(reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]))
    return concat(expanded, axis=axis)


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    """Zero padding along one axis."""
    ax = axis % a.ndim
    widths = [(0, 0)] * a.ndim
    widths[ax] = (before, after)
    out = np.pad(a.data, widths)
    length = a.shape[ax]

    def backward(g):
        return (np.take(g, np.arange(before, before + length), axis=ax),)

    return _result(out, (a,), "pad", backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int, step: int = 1) -> Tensor:
    index = [slice(None)] * a.ndim
    index[axis % a.ndim] = slice(start, stop, step)
    return getitem(a, tuple(index))


# -- composite layers ------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x [..., in] @ weight [in, out] + bias [out]."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatchError(f"linear: input {x.shape} does not match weight {weight.shape}")
    out = matmul(x, weight)
    return out + bias if bias is not None else out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis. A zero input normalises to zero (eps guard)."""
    centered = x - mean(x, axis=-1, keepdims=True)
    var = mean(centered * centered, axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * gamma + beta


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """
    Group normalisation for channels-last tensors [B, ..., C]: statistics per
    sample over every non-batch position and the channels of one group.
    """
    channels = x.shape[-1]
    if groups < 1 or channels % groups != 0:
        raise ShapeMismatchError(f"group_norm: {channels} channels are not divisible by {groups} groups")
    grouped = reshape(x, x.shape[:-1] + (groups, channels // groups))
    axes = tuple(range(1, grouped.ndim - 2)) + (grouped.ndim - 1,)
    centered = grouped - mean(grouped, axis=axes, keepdims=True)
    var = mean(centered * centered, axis=axes, keepdims=True)
    normed = reshape(centered / sqrt(var + eps), x.shape)
    return normed * gamma + beta


def conv1d(x: Tensor, weight: Tensor, bias: Optional[Tensor], axis: int, kind: str = "plain") -> Tensor:
    """
    1-D convolution along ``axis`` of a channels-last tensor with "same" zero
    padding.

    kind="plain":     weight [k, C_in, C_out]
    kind="depthwise": weight [k, C]
    kind="pointwise": weight [C_in, C_out]
    """
    ax = axis % x.ndim
    if ax == x.ndim - 1:
        raise ShapeMismatchError("conv1d runs along a spatial axis; the last axis holds channels")
    if kind == "pointwise":
        return linear(x, weight, bias)
    kernel = weight.shape[0]
    if kind == "depthwise" and weight.shape[1] != x.shape[-1]:
        raise ShapeMismatchError(f"depthwise conv1d: weight {weight.shape} does not match input {x.shape}")
    if kind == "plain" and weight.shape[1] != x.shape[-1]:
        raise ShapeMismatchError(f"conv1d: weight {weight.shape} does not match input {x.shape}")
    if kind not in ("plain", "depthwise"):
        raise ValueError(f"Unknown conv1d kind '{kind}'")
    left = (kernel - 1) // 2
    length = x.shape[ax]
    padded = pad_axis(x, ax, left, kernel - 1 - left)
    out = None
    for k in range(kernel):
        window = slice_axis(padded, ax, k, k + length)
        term = window * weight[k] if kind == "depthwise" else matmul(window, weight[k])
        out = term if out is None else out + term
    return out + bias if bias is not None else out


def avg_pool(x: Tensor, axes) -> Tensor:
    return mean(x, axis=axes, keepdims=True)


def max_pool(x: Tensor, axes) -> Tensor:
    return tmax(x, axis=axes, keepdims=True)


def mse(a: Tensor, b: TensorLike) -> Tensor:
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a - b
    return mean(diff * diff)


def cross_entropy(logits: Tensor, target: int, axis: int = -1) -> Tensor:
    """Softmax cross-entropy of a single logit vector against a class index."""
    shifted = logits - Tensor(logits.data.max(axis=axis, keepdims=True))
    log_z = log(tsum(exp(shifted), axis=axis, keepdims=True))
    return neg(tsum(getitem(shifted - log_z, target)))


# -- initialisation ------------------------------------------------------------

def kaiming_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, dtype=DEFAULT_DTYPE) -> Tensor:
    bound = np.sqrt(6.0 / max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def zeros(shape: Tuple[int, ...], requires_grad: bool = True, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape: Tuple[int, ...], requires_grad: bool = True, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


# -- finite-difference oracle ----------------------------------------------------

def _scalar(t: Tensor) -> float:
    if t.data.size != 1:
        raise ShapeMismatchError(f"gradient check needs a scalar function, got shape {t.shape}")
    return float(t.data.reshape(-1)[0])


@dataclass
class GradientCheckReport:
    max_rel_err: float
    max_abs_err: float
    checked: int
    passed: bool


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    tol: float = 1e-4,
    abs_tol: float = 1e-8,
    roundoff: float = 16.0,
    sample_fraction: Optional[float] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradientCheckReport:
    """
    Compare analytic gradients of the scalar ``f()`` with central differences
    (f(p+h) - f(p-h)) / 2h. An entry passes when its relative error is within
    ``tol`` or its absolute error is within the absolute floor: the larger of
    ``abs_tol`` and ``roundoff * eps * |f| / step``, the cancellation error of
    the difference quotient itself. Entries whose exact gradient vanishes
    (softmax shift invariance, for one) only ever see that noise.

    With ``sample_fraction`` only that share of the scalar entries (at least
    one per tensor) is perturbed.
    """
    if step <= 0:
        raise ValueError(f"finite-difference step must be positive, got {step}")
    first, second = _scalar(f()), _scalar(f())
    if first != second:
        raise NonDeterministicFunctionError(
            f"Function under gradient check is not deterministic: {first!r} != {second!r}")
    scale = max(abs(first), 1.0)

    for p in params:
        p.zero_grad()
    f().backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = rng or np.random.default_rng(0)
    max_rel = 0.0
    max_abs = 0.0
    checked = 0
    passed = True
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        floor = max(abs_tol, roundoff * np.finfo(p.data.dtype).eps * scale / step)
        indices = np.arange(flat.size)
        if sample_fraction is not None:
            count = max(1, int(round(flat.size * sample_fraction)))
            indices = np.sort(rng.choice(flat.size, size=count, replace=False))
        for i in indices:
            original = flat[i]
            flat[i] = original + step
            plus = _scalar(f())
            flat[i] = original - step
            minus = _scalar(f())
            flat[i] = original
            numeric = (plus - minus) / (2.0 * step)
            exact = grad.reshape(-1)[i]
            abs_err = abs(exact - numeric)
            max_abs = max(max_abs, abs_err)
            checked += 1
            if abs_err <= floor:
                continue
            rel_err = abs_err / max(abs(exact), abs(numeric))
            max_rel = max(max_rel, rel_err)
            if rel_err > tol:
                passed = False
    for p in params:
        p.zero_grad()
    logging.debug(f"Gradient check: {checked} entries, max relative error {max_rel:.3e}, passed={passed}")
    return GradientCheckReport(max_rel_err=max_rel, max_abs_err=max_abs, checked=checked, passed=passed)
