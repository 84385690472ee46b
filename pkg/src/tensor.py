"""
Tensor Module
Dense N-dimensional arrays with reverse-mode automatic differentiation

Each differentiable operation is a `Function` subclass with a numpy forward and
a backward that maps the output gradient to one gradient per input. Tensors
remember the `Function` that created them; `Tensor.backward()` walks that graph
once in reverse topological order.
"""

import itertools
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ContractError, DimensionError, DomainError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[Any]]

_DEFAULT_DTYPE = np.float64
_STRICT_MATH = False
_GRAD_ENABLED = True
_MAC_COUNTERS: List["MacCounter"] = []


def set_default_dtype(name: Union[str, type]) -> None:
    """Switch between 64-bit (verification) and 32-bit (speed) arithmetic"""
    global _DEFAULT_DTYPE
    dtype = np.dtype(name)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise DomainError(f"unsupported tensor dtype: {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype() -> type:
    return _DEFAULT_DTYPE


def set_strict_math(enabled: bool) -> None:
    """In strict mode a zero denominator in `div` raises DomainError"""
    global _STRICT_MATH
    _STRICT_MATH = bool(enabled)


@contextmanager
def default_dtype(name: Union[str, type]) -> Iterator[None]:
    previous = _DEFAULT_DTYPE
    set_default_dtype(name)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextmanager
def no_grad() -> Iterator[None]:
    """Operations inside the block do not record a backward graph"""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class MacCounter:
    """Counts multiply-accumulates of every matmul executed while active"""

    def __init__(self):
        self.total = 0

    def add(self, macs: int) -> None:
        self.total += int(macs)

    def __enter__(self) -> "MacCounter":
        _MAC_COUNTERS.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _MAC_COUNTERS.remove(self)


def _as_array(data: ArrayLike) -> np.ndarray:
    return np.asarray(data, dtype=_DEFAULT_DTYPE)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast dimensions so `grad` matches `shape`"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement `forward` on numpy arrays and `backward`, which
    receives dL/d(output) and returns one gradient (or None) per input tensor.
    """

    tag = "function"

    def __init__(self, *tensors: "Tensor"):
        self.tensors = tensors

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward")

    @classmethod
    def apply(cls, *tensors: "Tensor", **kwargs: Any) -> "Tensor":
        func = cls(*tensors)
        out_data = func.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = _GRAD_ENABLED and any(t.requires_grad for t in tensors)
        return Tensor(out_data, requires_grad=requires_grad, creator=func if requires_grad else None)


class Tensor:
    """
    N-dimensional array node of the autodiff graph.

    `data` is a contiguous numpy array in the default float dtype; `grad` is
    filled by `backward()` for tensors with `requires_grad`.
    """

    # numpy defers mixed ndarray/Tensor arithmetic to the Tensor operators
    __array_ufunc__ = None

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        creator: Optional[Function] = None,
    ):
        self.data = np.ascontiguousarray(_as_array(data))
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.creator = creator

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        grad_fn = f", creator={self.creator.tag}" if self.creator else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{grad_fn})"

    # ---------------------------------------------------------------- backward
    def backward(self) -> None:
        """Fill `grad` of every leaf reachable from this scalar loss"""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor that requires grad")

        order = self._topological_order()
        grads: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node.creator is None:
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            parent_grads = node.creator.backward(grad)
            for parent, parent_grad in zip(node.creator.tensors, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad

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
            if node.creator is not None:
                for parent in node.creator.tensors:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return order

    # --------------------------------------------------------------- operators
    def __add__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(self, ensure_tensor(other))

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return Add.apply(ensure_tensor(other), self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(self, ensure_tensor(other))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Sub.apply(ensure_tensor(other), self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(self, ensure_tensor(other))

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return Mul.apply(ensure_tensor(other), self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(self, ensure_tensor(other))

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return Div.apply(ensure_tensor(other), self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, ensure_tensor(other))

    def __rmatmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(ensure_tensor(other), self)

    def __getitem__(self, key: Any) -> "Tensor":
        return GetItem.apply(self, key=key)

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def sqrt(self) -> "Tensor":
        return Sqrt.apply(self)

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes: Any) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    def clip(self, low: float, high: float) -> "Tensor":
        return Clip.apply(self, low=low, high=high)


def ensure_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Parameter(Tensor):
    """Named learnable tensor; `name` is the dotted path inside its model"""

    def __init__(self, data: ArrayLike, name: str = "", trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    @trainable.setter
    def trainable(self, flag: bool) -> None:
        self.requires_grad = bool(flag)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, trainable={self.trainable})"


# ---------------------------------------------------------------- elementwise
class _Binary(Function):
    def _check(self, a: np.ndarray, b: np.ndarray) -> None:
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError as e:
            raise DimensionError(f"{self.tag}: shapes {a.shape} and {b.shape} do not broadcast") from e


class Add(_Binary):
    tag = "add"

    def forward(self, a, b):
        self._check(a, b)
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(_Binary):
    tag = "sub"

    def forward(self, a, b):
        self._check(a, b)
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(_Binary):
    tag = "mul"

    def forward(self, a, b):
        self._check(a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return _unbroadcast(grad * self.b, self.a.shape), _unbroadcast(grad * self.a, self.b.shape)


class Div(_Binary):
    tag = "div"

    def forward(self, a, b):
        self._check(a, b)
        if _STRICT_MATH and np.any(b == 0):
            raise DomainError("div: zero denominator")
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        ga = grad / self.b
        gb = -grad * self.a / (self.b * self.b)
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


class Neg(Function):
    tag = "neg"

    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Exp(Function):
    tag = "exp"

    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Sqrt(Function):
    tag = "sqrt"

    def forward(self, a):
        if np.any(a < 0):
            raise DomainError("sqrt: negative input")
        self.out = np.sqrt(a)
        return self.out

    def backward(self, grad):
        return (grad * 0.5 / self.out,)


class Pow(Function):
    tag = "pow"

    def forward(self, a, exponent: float):
        self.a, self.exponent = a, exponent
        return np.power(a, exponent)

    def backward(self, grad):
        return (grad * self.exponent * np.power(self.a, self.exponent - 1.0),)


class LeakyReLU(Function):
    tag = "leaky_relu"

    def forward(self, a, slope: float):
        self.positive = a > 0
        self.slope = slope
        return np.where(self.positive, a, slope * a)

    def backward(self, grad):
        return (np.where(self.positive, grad, self.slope * grad),)


class Clip(Function):
    tag = "clip"

    def forward(self, a, low: float, high: float):
        self.inside = (a >= low) & (a <= high)
        return np.clip(a, low, high)

    def backward(self, grad):
        return (grad * self.inside,)


def leaky_relu(t: Tensor, slope: float = 0.01) -> Tensor:
    return LeakyReLU.apply(t, slope=float(slope))


_UNARY = {
    "exp": lambda a: Exp.apply(a),
    "neg": lambda a: Neg.apply(a),
    "leaky_relu": lambda a: LeakyReLU.apply(a, slope=0.01),
    "relu": lambda a: LeakyReLU.apply(a, slope=0.0),
}
_BINARY = {"add": Add, "sub": Sub, "mul": Mul, "div": Div}


def elementwise(tag: str, a: Tensor, b: Optional[Union[Tensor, ArrayLike]] = None) -> Tensor:
    """Dispatch an elementwise op by tag (add, sub, mul, div, exp, neg, leaky_relu, relu)"""
    if tag in _BINARY:
        if b is None:
            raise ContractError(f"{tag} needs two operands")
        return _BINARY[tag].apply(ensure_tensor(a), ensure_tensor(b))
    if tag in _UNARY:
        return _UNARY[tag](ensure_tensor(a))
    raise ContractError(f"unknown elementwise op: {tag}")


# --------------------------------------------------------------- reductions
class Sum(Function):
    tag = "sum"

    def forward(self, a, axis=None, keepdims=False):
        self.shape = a.shape
        self.axis = axis
        self.keepdims = keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


# ------------------------------------------------------------------- matmul
class MatMul(Function):
    tag = "matmul"

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
        try:
            batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError as e:
            raise DimensionError(f"matmul batch dims do not broadcast: {a.shape} @ {b.shape}") from e
        self.a, self.b = a, b
        if _MAC_COUNTERS:
            macs = int(np.prod(batch, dtype=np.int64)) * a.shape[-2] * a.shape[-1] * b.shape[-1]
            for counter in _MAC_COUNTERS:
                counter.add(macs)
        return np.matmul(a, b)

    def backward(self, grad):
        ga = np.matmul(grad, np.swapaxes(self.b, -1, -2))
        gb = np.matmul(np.swapaxes(self.a, -1, -2), grad)
        return _unbroadcast(ga, self.a.shape), _unbroadcast(gb, self.b.shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched contraction over the last axis of `a` and the second-to-last of `b`"""
    return MatMul.apply(a, b)


# ------------------------------------------------------------------ softmax
class Softmax(Function):
    tag = "softmax"

    def forward(self, a):
        if a.shape[-1] < 1:
            raise DimensionError("softmax over an empty last dimension")
        if np.isnan(a).any():
            raise DomainError("softmax input contains NaN")
        shifted = np.exp(a - a.max(axis=-1, keepdims=True))
        self.out = shifted / shifted.sum(axis=-1, keepdims=True)
        return self.out

    def backward(self, grad):
        dot = (grad * self.out).sum(axis=-1, keepdims=True)
        return (self.out * (grad - dot),)


def softmax_lastdim(t: Tensor) -> Tensor:
    return Softmax.apply(t)


# ------------------------------------------------------------ re-indexing
class Reshape(Function):
    tag = "reshape"

    def forward(self, a, shape):
        self.shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError as e:
            raise DimensionError(f"cannot reshape {a.shape} into {tuple(shape)}") from e

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Permute(Function):
    tag = "permute"

    def forward(self, a, axes):
        if sorted(axes) != list(range(a.ndim)):
            raise DimensionError(f"{tuple(axes)} is not a permutation of {a.ndim} axes")
        self.inverse = tuple(np.argsort(axes))
        return np.ascontiguousarray(np.transpose(a, axes))

    def backward(self, grad):
        return (np.ascontiguousarray(np.transpose(grad, self.inverse)),)


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(t, shape=tuple(int(s) for s in shape))


def permute(t: Tensor, axes: Sequence[int]) -> Tensor:
    return Permute.apply(t, axes=tuple(int(a) for a in axes))


class Pad(Function):
    tag = "pad"

    def forward(self, a, pads):
        if len(pads) != a.ndim:
            raise DimensionError(f"pad spec has {len(pads)} entries for rank {a.ndim}")
        self.crop = tuple(slice(before, before + extent) for (before, _), extent in zip(pads, a.shape))
        return np.pad(a, pads)

    def backward(self, grad):
        return (np.ascontiguousarray(grad[self.crop]),)


def pad(t: Tensor, pads: Sequence[Tuple[int, int]]) -> Tensor:
    """Zero-pad; `pads` holds one (before, after) pair per axis"""
    pads = tuple((int(b), int(a)) for b, a in pads)
    if not any(b or a for b, a in pads):
        return t
    return Pad.apply(t, pads=pads)


class GetItem(Function):
    tag = "getitem"

    def forward(self, a, key):
        self.shape, self.key = a.shape, key
        return np.ascontiguousarray(a[key])

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=grad.dtype)
        if _is_basic_index(self.key):
            out[self.key] = grad
        else:
            np.add.at(out, self.key, grad)
        return (out,)


def _is_basic_index(key: Any) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)


class Concat(Function):
    tag = "concat"

    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        try:
            return np.concatenate(arrays, axis=axis)
        except ValueError as e:
            raise DimensionError(f"concat: {[a.shape for a in arrays]} along axis {axis}") from e

    def backward(self, grad):
        return tuple(np.ascontiguousarray(g) for g in np.split(grad, self.bounds, axis=self.axis))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*[ensure_tensor(t) for t in tensors], axis=axis)


class Take(Function):
    tag = "take"

    def forward(self, table, index):
        self.shape, self.index = table.shape, index
        return table[index]

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=grad.dtype)
        np.add.at(out, self.index, grad)
        return (out,)


def take(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of `table` by an integer index array (scatter-add backward)"""
    return Take.apply(table, index=np.asarray(index, dtype=np.int64))


# ------------------------------------------------------------------- conv3d
class Conv3d(Function):
    """Stride-1 'same' 3D convolution over a C×T×H×W volume, looped over kernel offsets"""

    tag = "conv3d"

    def forward(self, x, w, b):
        if x.ndim != 4 or w.ndim != 5:
            raise DimensionError(f"conv3d expects x C×T×H×W and w O×I×k×k×k, got {x.shape}, {w.shape}")
        if w.shape[1] != x.shape[0]:
            raise DimensionError(f"conv3d channel mismatch: input has {x.shape[0]}, kernel expects {w.shape[1]}")
        if any(k % 2 == 0 for k in w.shape[2:]):
            raise DimensionError(f"conv3d kernel must be odd-sized, got {w.shape[2:]}")
        if b.shape != (w.shape[0],):
            raise DimensionError(f"conv3d bias shape {b.shape} != ({w.shape[0]},)")
        self.kernel = w.shape[2:]
        self.pads = ((0, 0),) + tuple((k // 2, k // 2) for k in self.kernel)
        self.extent = x.shape[1:]
        self.xp = np.pad(x, self.pads)
        self.w = w
        out = np.zeros((w.shape[0],) + self.extent, dtype=x.dtype)
        for offset in itertools.product(*(range(k) for k in self.kernel)):
            out += np.tensordot(w[(slice(None), slice(None)) + offset], self.xp[self._window(offset)], axes=(1, 0))
        return out + b[:, None, None, None]

    def _window(self, offset: Tuple[int, ...]) -> Tuple[slice, ...]:
        return (slice(None),) + tuple(slice(o, o + n) for o, n in zip(offset, self.extent))

    def backward(self, grad):
        gw = np.zeros_like(self.w)
        gxp = np.zeros_like(self.xp)
        for offset in itertools.product(*(range(k) for k in self.kernel)):
            window = self._window(offset)
            gw[(slice(None), slice(None)) + offset] = np.tensordot(grad, self.xp[window], axes=([1, 2, 3], [1, 2, 3]))
            gxp[window] += np.tensordot(self.w[(slice(None), slice(None)) + offset], grad, axes=(0, 0))
        crop = (slice(None),) + tuple(slice(p, p + n) for (p, _), n in zip(self.pads[1:], self.extent))
        return np.ascontiguousarray(gxp[crop]), gw, grad.sum(axis=(1, 2, 3))


def conv3d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if bias is None:
        bias = Tensor(np.zeros(w.shape[0]))
    return Conv3d.apply(x, w, bias)


# ------------------------------------------------------------ gradient check
@dataclass
class GradCheckResult:
    max_rel_err: float
    worst: str
    checked: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err <= tol


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Dict[str, Tensor],
    h: float = 1e-5,
    entries: Optional[int] = None,
    seed: int = 0,
    atol: float = 1e-9,
) -> GradCheckResult:
    """
    Compare autodiff gradients with central differences.

    Args:
        loss_fn: rebuilds the graph and returns a scalar loss
        tensors: name -> tensor to perturb (must require grad)
        h: finite-difference step
        entries: number of randomly chosen entries per tensor (all if None)
        atol: entries with |ad - cd| <= atol are counted as checked but left
            out of the maximum; where the true gradient is ~0 the relative
            error only measures finite-difference noise. atol=0 scores every
            entry with the plain relative error.

    Returns:
        GradCheckResult with the maximum of |ad - cd| / (|cd| + 1e-8) over
        entries whose absolute error exceeds `atol`
    """
    for t in tensors.values():
        t.grad = None
    loss_fn().backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in tensors.items()}

    rng = np.random.default_rng(seed)
    worst, worst_name, checked = 0.0, "", 0
    with no_grad():
        for name, t in tensors.items():
            flat = t.data.reshape(-1)
            picks = range(flat.size) if entries is None or entries >= flat.size else rng.choice(flat.size, entries, replace=False)
            for i in picks:
                original = flat[i]
                flat[i] = original + h
                plus = loss_fn().item()
                flat[i] = original - h
                minus = loss_fn().item()
                flat[i] = original
                numeric = (plus - minus) / (2 * h)
                ad = analytic[name].reshape(-1)[i]
                checked += 1
                if abs(ad - numeric) <= atol:
                    continue
                rel = abs(ad - numeric) / (abs(numeric) + 1e-8)
                if rel > worst:
                    worst, worst_name = rel, f"{name}[{i}]"
    logger.debug("gradient check: %d entries, max rel err %.3e at %s", checked, worst, worst_name)
    return GradCheckResult(worst, worst_name, checked)
