"""
Reverse-mode tape over numpy arrays, plus spatial jets nested inside it.

A :class:`Tensor` records the primitives applied to it and can back-propagate a scalar
to every leaf created with ``requires_grad=True``. A :class:`SpatialJet` carries the
value of a field together with its first partials and pure second partials in the
spatial input, each component being a :class:`Tensor`. Jets are propagated forward
through networks and masks, so a loss written in terms of them stays differentiable
in the network parameters.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Any, Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .errors import ContractError, InputError, UnsupportedOperationError

if TYPE_CHECKING:
    from typing_extensions import TypeAlias

    from ._types import FloatArray


__all__ = (
    'Tensor',
    'SpatialJet',
    'as_tensor',
    'value_and_grad',
    'grad_params',
)


Operand: TypeAlias = Union['Tensor', float, int, np.ndarray]
Vjp: TypeAlias = Callable[[np.ndarray], np.ndarray]

_SUPPORTED_INDEX = (int, slice, type(Ellipsis), type(None), np.integer)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(value: Any) -> Tensor:
    """
    Lift a number or array into a constant :class:`Tensor`. Tensors are returned unchanged.

    Raises
    ------
    UnsupportedOperationError
        The value is not numeric.
    """
    if isinstance(value, Tensor):
        return value
    if isinstance(value, (int, float, np.floating, np.integer, np.ndarray)):
        return Tensor(value)
    raise UnsupportedOperationError(f'Cannot use {type(value).__name__!r} inside a differentiable expression')


class Tensor:
    """
    A float64 array that records how it was computed.

    Parameters
    ----------
    data: array-like
        The value. It is copied into a float64 array.
    requires_grad: :class:`bool`
        Whether this is a leaf to collect gradients for.

    Example
    -------
    .. code:: py

        theta = Tensor(np.ones(3), requires_grad=True)
        loss = (theta * theta).sum()
        loss.backward()
        theta.grad  # array([2., 2., 2.])
    """

    __slots__ = ('data', 'grad', 'requires_grad', 'op', '_parents', '_backward')

    def __init__(self, data: Any, requires_grad: bool = False, *, op: str = 'leaf'):
        self.data: np.ndarray = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    def __repr__(self) -> str:
        return f'Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})'

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    @staticmethod
    def _result(data: np.ndarray, op: str, pairs: Sequence[Tuple[Tensor, Vjp]]) -> Tensor:
        out = Tensor(data, op=op)
        tracked = [(parent, vjp) for parent, vjp in pairs if parent.requires_grad]
        if not tracked:
            return out

        out.requires_grad = True
        out._parents = tuple(parent for parent, _ in tracked)

        def backward(grad: np.ndarray) -> None:
            for parent, vjp in tracked:
                parent._accumulate(_unbroadcast(vjp(grad), parent.data.shape))

        out._backward = backward
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64)
        else:
            self.grad = self.grad + grad

    def backward(self) -> None:
        """
        Back-propagate from this scalar to every leaf that requires a gradient.

        Raises
        ------
        ContractError
            The tensor is not a scalar.
        """
        if self.data.size != 1:
            raise ContractError(f'backward() needs a scalar, got shape {self.shape}')
        if not self.requires_grad:
            return

        order: List[Tensor] = []
        seen = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # numpy interop: ndarray (op) Tensor lands here

    def __array_ufunc__(self, ufunc: Any, method: str, *inputs: Any, **kwargs: Any) -> Any:
        if method == '__call__' and not kwargs:
            binary = {
                np.add: lambda a, b: a + b,
                np.subtract: lambda a, b: a - b,
                np.multiply: lambda a, b: a * b,
                np.true_divide: lambda a, b: a / b,
                np.matmul: lambda a, b: a @ b,
            }
            if ufunc in binary and len(inputs) == 2:
                return binary[ufunc](as_tensor(inputs[0]), as_tensor(inputs[1]))
            if ufunc is np.negative:
                return -as_tensor(inputs[0])
        raise UnsupportedOperationError(
            f'numpy.{ufunc.__name__} is not a supported primitive; use Tensor methods'
        )

    # arithmetic

    def __add__(self, other: Operand) -> Tensor:
        if isinstance(other, SpatialJet):
            return NotImplemented
        other = as_tensor(other)
        return Tensor._result(self.data + other.data, 'add', [(self, lambda g: g), (other, lambda g: g)])

    def __radd__(self, other: Operand) -> Tensor:
        return as_tensor(other) + self

    def __sub__(self, other: Operand) -> Tensor:
        if isinstance(other, SpatialJet):
            return NotImplemented
        other = as_tensor(other)
        return Tensor._result(self.data - other.data, 'sub', [(self, lambda g: g), (other, lambda g: -g)])

    def __rsub__(self, other: Operand) -> Tensor:
        return as_tensor(other) - self

    def __mul__(self, other: Operand) -> Tensor:
        if isinstance(other, SpatialJet):
            return NotImplemented
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._result(a * b, 'mul', [(self, lambda g: g * b), (other, lambda g: g * a)])

    def __rmul__(self, other: Operand) -> Tensor:
        return as_tensor(other) * self

    def __truediv__(self, other: Operand) -> Tensor:
        if isinstance(other, SpatialJet):
            return NotImplemented
        return self * as_tensor(other).reciprocal()

    def __rtruediv__(self, other: Operand) -> Tensor:
        return as_tensor(other) * self.reciprocal()

    def __neg__(self) -> Tensor:
        return Tensor._result(-self.data, 'neg', [(self, lambda g: -g)])

    def __pow__(self, exponent: Any) -> Tensor:
        if exponent == 2:
            return self.square()
        raise UnsupportedOperationError(f'Only squaring is supported, got exponent {exponent!r}')

    def __matmul__(self, other: Operand) -> Tensor:
        other = as_tensor(other)
        a, b = self.data, other.data
        if a.ndim < 1 or b.ndim not in (1, 2):
            raise InputError(f'Cannot multiply shapes {a.shape} and {b.shape}')

        k = b.shape[0]
        if b.ndim == 2:
            vjp_a: Vjp = lambda g: g @ b.T
            vjp_b: Vjp = lambda g: a.reshape(-1, k).T @ g.reshape(-1, b.shape[1])
        else:
            vjp_a = lambda g: np.multiply.outer(g, b)
            vjp_b = lambda g: a.reshape(-1, k).T @ np.reshape(g, -1)
        return Tensor._result(a @ b, 'matmul', [(self, vjp_a), (other, vjp_b)])

    def __rmatmul__(self, other: Operand) -> Tensor:
        return as_tensor(other) @ self

    # shape

    def __getitem__(self, index: Any) -> Tensor:
        parts = index if isinstance(index, tuple) else (index,)
        if not all(isinstance(part, _SUPPORTED_INDEX) for part in parts):
            raise UnsupportedOperationError('Only basic indexing (ints, slices, Ellipsis) is differentiable')

        shape = self.data.shape

        def vjp(g: np.ndarray) -> np.ndarray:
            full = np.zeros(shape)
            full[index] = g
            return full

        return Tensor._result(self.data[index], 'getitem', [(self, vjp)])

    def reshape(self, *shape: int) -> Tensor:
        original = self.data.shape
        return Tensor._result(self.data.reshape(*shape), 'reshape', [(self, lambda g: g.reshape(original))])

    def sum(self, axis: Optional[int] = None) -> Tensor:
        shape = self.data.shape

        def vjp(g: np.ndarray) -> np.ndarray:
            if axis is not None:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, shape)

        return Tensor._result(self.data.sum(axis=axis), 'sum', [(self, vjp)])

    def mean(self, axis: Optional[int] = None) -> Tensor:
        """Arithmetic mean. The mean of an empty batch is 0."""
        count = self.data.size if axis is None else self.data.shape[axis]
        if count == 0:
            return Tensor(np.zeros(np.sum(self.data, axis=axis).shape), op='mean')
        return self.sum(axis) * (1.0 / count)

    # pointwise

    def square(self) -> Tensor:
        x = self.data
        return Tensor._result(x * x, 'square', [(self, lambda g: 2.0 * g * x)])

    def exp(self) -> Tensor:
        out = np.exp(self.data)
        return Tensor._result(out, 'exp', [(self, lambda g: g * out)])

    def sqrt(self) -> Tensor:
        out = np.sqrt(self.data)
        return Tensor._result(out, 'sqrt', [(self, lambda g: 0.5 * g / out)])

    def reciprocal(self) -> Tensor:
        out = 1.0 / self.data
        return Tensor._result(out, 'reciprocal', [(self, lambda g: -g * out * out)])

    def sigmoid(self) -> Tensor:
        out = expit(self.data)
        return Tensor._result(out, 'sigmoid', [(self, lambda g: g * out * (1.0 - out))])

    def tanh(self) -> Tensor:
        out = np.tanh(self.data)
        return Tensor._result(out, 'tanh', [(self, lambda g: g * (1.0 - out * out))])

    def softplus(self) -> Tensor:
        x = self.data
        return Tensor._result(np.logaddexp(0.0, x), 'softplus', [(self, lambda g: g * expit(x))])

    def relu(self) -> Tensor:
        x = self.data
        return Tensor._result(np.maximum(x, 0.0), 'relu', [(self, lambda g: g * (x > 0.0))])

    def heaviside(self) -> Tensor:
        """Indicator of ``self > 0``. The result is a constant: it carries no gradient."""
        return Tensor((self.data > 0.0).astype(np.float64), op='heaviside')

    def maximum(self, bound: Any) -> Tensor:
        """Pointwise ``max(self, bound)`` against a constant bound."""
        c = _constant(bound)
        x = self.data
        return Tensor._result(np.maximum(x, c), 'maximum', [(self, lambda g: g * (x > c))])

    def minimum(self, bound: Any) -> Tensor:
        """Pointwise ``min(self, bound)`` against a constant bound."""
        c = _constant(bound)
        x = self.data
        return Tensor._result(np.minimum(x, c), 'minimum', [(self, lambda g: g * (x < c))])


def _constant(value: Any) -> np.ndarray:
    if isinstance(value, Tensor):
        if value.requires_grad:
            raise UnsupportedOperationError('The bound of maximum/minimum must be a constant')
        return value.data
    return np.asarray(value, dtype=np.float64)


def _opt(op: Callable[[Any, Any], Any], a: Optional[Tensor], b: Optional[Tensor]) -> Optional[Tensor]:
    if a is None or b is None:
        return None
    return op(a, b)


class SpatialJet:
    """
    Value, first partials and pure second partials of a field in the spatial input.

    Shapes: ``value`` is ``(m, ...)``, ``grad_x`` and ``laplacian_terms`` are ``(d, m, ...)``
    where ``d`` is the spatial dimension. ``grad_x`` is ``None`` for an order-0 jet and
    ``laplacian_terms`` is ``None`` below order 2.

    Every component is a :class:`Tensor`, so a loss built from jets back-propagates
    to the network parameters exactly.

    Parameters
    ----------
    value: :class:`Tensor`
        Field values.
    grad_x: Optional[:class:`Tensor`]
        ``grad_x[i]`` is the partial derivative along axis ``i``.
    laplacian_terms: Optional[:class:`Tensor`]
        ``laplacian_terms[i]`` is the pure second partial along axis ``i``.
    """

    __slots__ = ('value', 'grad_x', 'laplacian_terms')
    __array_ufunc__ = None

    def __init__(
        self, value: Tensor, grad_x: Optional[Tensor] = None, laplacian_terms: Optional[Tensor] = None
    ):
        if grad_x is None and laplacian_terms is not None:
            raise ContractError('A jet with second partials must also carry first partials')
        self.value = value
        self.grad_x = grad_x
        self.laplacian_terms = laplacian_terms

    def __repr__(self) -> str:
        return f'SpatialJet(shape={self.value.shape}, order={self.order})'

    @property
    def order(self) -> int:
        if self.grad_x is None:
            return 0
        return 1 if self.laplacian_terms is None else 2

    # construction

    @classmethod
    def inputs(cls, points: FloatArray, order: int) -> SpatialJet:
        """The identity jet of a batch of points ``(m, d)``: value ``x``, partials ``e_i``."""
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2:
            raise InputError(f'Expected points of shape (m, d), got {points.shape}')
        if order not in (0, 1, 2):
            raise InputError(f'Jet order must be 0, 1 or 2, got {order}')

        m, d = points.shape
        value = Tensor(points)
        if order == 0:
            return cls(value)

        grad = np.zeros((d, m, d))
        for axis in range(d):
            grad[axis, :, axis] = 1.0
        second = Tensor(np.zeros((d, m, d))) if order == 2 else None
        return cls(value, Tensor(grad), second)

    @classmethod
    def coordinates(cls, points: FloatArray, order: int) -> List[SpatialJet]:
        """One scalar jet per coordinate of ``points``."""
        identity = cls.inputs(points, order)
        return [identity[..., axis] for axis in range(identity.value.shape[-1])]

    @classmethod
    def constant(cls, values: Any, dim: int, order: int) -> SpatialJet:
        """A jet with zero spatial derivatives."""
        value = as_tensor(values)
        if order == 0:
            return cls(value)
        zeros = Tensor(np.zeros((dim, *value.shape)))
        return cls(value, zeros, zeros if order == 2 else None)

    # accessors

    def partial(self, axis: int) -> Tensor:
        if self.grad_x is None:
            raise ContractError('This jet carries no first partials')
        return self.grad_x[axis]

    def laplacian(self) -> Tensor:
        if self.laplacian_terms is None:
            raise ContractError('This jet carries no second partials')
        return self.laplacian_terms.sum(axis=0)

    def grad_norm_squared(self) -> Tensor:
        if self.grad_x is None:
            raise ContractError('This jet carries no first partials')
        return self.grad_x.square().sum(axis=0)

    def __getitem__(self, index: Any) -> SpatialJet:
        parts = index if isinstance(index, tuple) else (index,)
        if parts[0] is not Ellipsis:
            raise UnsupportedOperationError('Jets are indexed from the trailing axes, e.g. jet[..., 0]')
        return SpatialJet(
            self.value[index],
            None if self.grad_x is None else self.grad_x[index],
            None if self.laplacian_terms is None else self.laplacian_terms[index],
        )

    # arithmetic

    def __add__(self, other: Any) -> SpatialJet:
        if isinstance(other, SpatialJet):
            return SpatialJet(
                self.value + other.value,
                _opt(lambda a, b: a + b, self.grad_x, other.grad_x),
                _opt(lambda a, b: a + b, self.laplacian_terms, other.laplacian_terms),
            )
        return SpatialJet(self.value + as_tensor(other), self.grad_x, self.laplacian_terms)

    def __radd__(self, other: Any) -> SpatialJet:
        return self + other

    def __neg__(self) -> SpatialJet:
        return SpatialJet(
            -self.value,
            None if self.grad_x is None else -self.grad_x,
            None if self.laplacian_terms is None else -self.laplacian_terms,
        )

    def __sub__(self, other: Any) -> SpatialJet:
        if isinstance(other, SpatialJet):
            return self + (-other)
        return self + (-as_tensor(other))

    def __rsub__(self, other: Any) -> SpatialJet:
        return (-self) + other

    def __mul__(self, other: Any) -> SpatialJet:
        if not isinstance(other, SpatialJet):
            c = as_tensor(other)
            return SpatialJet(
                self.value * c,
                None if self.grad_x is None else self.grad_x * c,
                None if self.laplacian_terms is None else self.laplacian_terms * c,
            )

        u, v = self.value, other.value
        grad = _opt(lambda gu, gv: gu * v + u * gv, self.grad_x, other.grad_x)
        second = None
        if grad is not None and self.laplacian_terms is not None and other.laplacian_terms is not None:
            gu, gv = self.grad_x, other.grad_x
            second = self.laplacian_terms * v + 2.0 * (gu * gv) + u * other.laplacian_terms
        return SpatialJet(u * v, grad, second)

    def __rmul__(self, other: Any) -> SpatialJet:
        return self * other

    def __truediv__(self, other: Any) -> SpatialJet:
        if isinstance(other, SpatialJet):
            return self * other.reciprocal()
        return self * as_tensor(other).reciprocal()

    def __rtruediv__(self, other: Any) -> SpatialJet:
        return self.reciprocal() * other

    def affine(self, weight: Tensor, bias: Tensor) -> SpatialJet:
        """``x @ W + b`` applied to the value, ``x @ W`` to the derivatives."""
        return SpatialJet(
            self.value @ weight + bias,
            None if self.grad_x is None else self.grad_x @ weight,
            None if self.laplacian_terms is None else self.laplacian_terms @ weight,
        )

    # pointwise functions

    def _chain(
        self,
        out: Tensor,
        first: Callable[[], Tensor],
        second: Optional[Callable[[], Tensor]],
    ) -> SpatialJet:
        if self.grad_x is None:
            return SpatialJet(out)
        d1 = first()
        grad = d1 * self.grad_x
        if self.laplacian_terms is None:
            return SpatialJet(out, grad)
        lap = d1 * self.laplacian_terms
        if second is not None:
            lap = lap + second() * self.grad_x.square()
        return SpatialJet(out, grad, lap)

    def square(self) -> SpatialJet:
        return self * self

    def relu(self) -> SpatialJet:
        # the derivative at 0 is taken as 0
        v = self.value
        return self._chain(v.relu(), v.heaviside, None)

    def maximum(self, bound: Any) -> SpatialJet:
        v = self.value
        return self._chain(v.maximum(bound), lambda: (v - _constant(bound)).heaviside(), None)

    def minimum(self, bound: Any) -> SpatialJet:
        v = self.value
        return self._chain(v.minimum(bound), lambda: (_constant(bound) - v).heaviside(), None)

    def swish(self) -> SpatialJet:
        v = self.value
        s = v.sigmoid()
        ds = s * (1.0 - s)
        return self._chain(v * s, lambda: s + v * ds, lambda: ds * (2.0 + v * (1.0 - 2.0 * s)))

    def tanh(self) -> SpatialJet:
        t = self.value.tanh()
        d1 = 1.0 - t.square()
        return self._chain(t, lambda: d1, lambda: -2.0 * t * d1)

    def softplus(self) -> SpatialJet:
        s = self.value.sigmoid()
        return self._chain(self.value.softplus(), lambda: s, lambda: s * (1.0 - s))

    def sqrt(self) -> SpatialJet:
        root = self.value.sqrt()
        inv = root.reciprocal()
        return self._chain(root, lambda: 0.5 * inv, lambda: -0.25 * inv * inv * inv)

    def reciprocal(self) -> SpatialJet:
        inv = self.value.reciprocal()
        return self._chain(inv, lambda: -(inv * inv), lambda: 2.0 * inv * inv * inv)


def value_and_grad(
    func: Callable[..., Tensor], *arrays: FloatArray, argnums: Sequence[int] = (0,)
) -> Tuple[float, Tuple[FloatArray, ...]]:
    """
    Evaluate a scalar function of arrays and its gradient with respect to ``argnums``.

    Leaves that do not influence the output get a zero gradient.
    """
    leaves = [Tensor(array, requires_grad=index in argnums) for index, array in enumerate(arrays)]
    out = func(*leaves)
    if not isinstance(out, Tensor):
        raise ContractError(f'Expected the function to return a Tensor, got {type(out).__name__!r}')
    out.backward()

    grads = []
    for index in argnums:
        leaf = leaves[index]
        grads.append(np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad)
    return out.item(), tuple(grads)


def grad_params(loss: Callable[[Tensor, Any], Tensor], theta: FloatArray, batch: Any) -> FloatArray:
    """Gradient of ``loss(theta, batch)`` in ``theta``, exact up to floating point."""
    _, (grad,) = value_and_grad(lambda t: loss(t, batch), theta)
    return grad
