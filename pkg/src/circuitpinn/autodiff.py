"""Scalar automatic differentiation: a reverse-mode tape plus forward-mode duals.

A :class:`Var` is a node on a :class:`Tape`.  A :class:`Dual` pairs a primal
with a tangent (the derivative along one input direction, here scaled time).
Because the components of a ``Dual`` may themselves be ``Var`` objects, the
tangent is recorded on the tape and can be differentiated again with respect
to network parameters (forward-over-reverse).

Values are 64-bit floats.  A node's value may also be a 1-D ``numpy`` array,
in which case every element is an independent scalar evaluation sharing one
operation sequence (this is how one tape covers all collocation points).
Scalar operands broadcast against array operands; their adjoints are summed.

The free functions :func:`tanh`, :func:`exp`, :func:`log`, :func:`softplus`,
:func:`square`, :func:`clamp_min` and :func:`select` dispatch on the argument
type, so device equations written with them run unchanged on plain floats,
arrays, tape variables and duals.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, NonFiniteError

__all__ = [
    "Tape",
    "Var",
    "Dual",
    "Gradients",
    "lift",
    "seed_input",
    "primal",
    "tanh",
    "exp",
    "log",
    "softplus",
    "square",
    "clamp_min",
    "select",
    "total",
]


def _is_array(x) -> bool:
    return isinstance(x, np.ndarray) and x.ndim > 0


def _reduce_to(contrib, like):
    """Sum a broadcast adjoint contribution back onto a scalar operand."""
    if _is_array(contrib) and not _is_array(like):
        return float(np.sum(contrib))
    return contrib


class Tape:
    """Append-only record of primitive operations.

    Insertion order is a valid topological order, because an operation can
    only reference variables that already exist.
    """

    def __init__(self) -> None:
        self.values: list = []
        self.parents: list[tuple[int, ...]] = []
        self.partials: list[tuple] = []

    def __len__(self) -> int:
        return len(self.values)

    def reset(self) -> None:
        """Drop every recorded node; outstanding ``Var`` handles become invalid."""
        self.values.clear()
        self.parents.clear()
        self.partials.clear()

    def var(self, value) -> "Var":
        """Create a leaf variable (a parameter or an independent input)."""
        if isinstance(value, np.ndarray):
            value = np.asarray(value, dtype=np.float64)
            if value.ndim == 0:
                value = float(value)
        else:
            value = float(value)
        return self._push(value, (), ())

    def _push(self, value, parents, partials) -> "Var":
        index = len(self.values)
        self.values.append(value)
        self.parents.append(parents)
        self.partials.append(partials)
        return Var(self, index, value)

    def backward(self, root: "Var", seed=1.0, check_finite: bool = True) -> "Gradients":
        """Accumulate adjoints of ``root`` into every node recorded before it.

        With ``check_finite`` every forward value and adjoint is scanned and
        the first non-finite node raises :class:`NonFiniteError`.  With
        ``check_finite=False`` only the root value and the returned adjoints
        of leaves are checked (the cheap path used inside training loops).
        """
        if root.tape is not self:
            raise ValueError("root belongs to a different tape")
        values, parents, partials = self.values, self.parents, self.partials
        n = root.index + 1
        if check_finite:
            for i in range(n):
                if not np.all(np.isfinite(values[i])):
                    raise NonFiniteError(f"non-finite forward value at tape node {i}", node=i)
        elif not np.all(np.isfinite(values[root.index])):
            raise NonFiniteError(
                f"non-finite forward value at tape node {root.index}", node=root.index
            )
        adj: list = [None] * n
        adj[root.index] = seed
        for i in range(root.index, -1, -1):
            a = adj[i]
            if a is None:
                continue
            if check_finite and not np.all(np.isfinite(a)):
                raise NonFiniteError(f"non-finite adjoint at tape node {i}", node=i)
            for j, d in zip(parents[i], partials[i]):
                c = _reduce_to(a * d, values[j])
                adj[j] = c if adj[j] is None else adj[j] + c
        return Gradients(self, adj)


class Gradients:
    """Adjoint accessor returned by :meth:`Tape.backward`."""

    def __init__(self, tape: Tape, adjoints: list) -> None:
        self._tape = tape
        self._adj = adjoints

    def __getitem__(self, v: "Var"):
        if v.tape is not self._tape:
            raise ValueError("variable belongs to a different tape")
        if v.index >= len(self._adj):
            return np.zeros_like(v.value) if _is_array(v.value) else 0.0
        a = self._adj[v.index]
        if a is None:
            a = 0.0
        if _is_array(v.value) and not _is_array(a):
            return np.full_like(v.value, a)
        return a

    def check_finite(self, leaves) -> None:
        for v in leaves:
            a = self._adj[v.index] if v.index < len(self._adj) else None
            if a is not None and not np.all(np.isfinite(a)):
                raise NonFiniteError(f"non-finite adjoint at tape node {v.index}", node=v.index)


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "index", "value")
    __array_ufunc__ = None

    def __init__(self, tape: Tape, index: int, value) -> None:
        self.tape = tape
        self.index = index
        self.value = value

    def __repr__(self) -> str:
        return f"Var(#{self.index}, {self.value!r})"

    def _binary(self, other, value, d_self, d_other):
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise ValueError("operands live on different tapes")
            return self.tape._push(value, (self.index, other.index), (d_self, d_other))
        return self.tape._push(value, (self.index,), (d_self,))

    def __add__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        ov = other.value if isinstance(other, Var) else other
        return self._binary(other, self.value + ov, 1.0, 1.0)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        ov = other.value if isinstance(other, Var) else other
        return self._binary(other, self.value - ov, 1.0, -1.0)

    def __rsub__(self, other):
        return self.tape._push(other - self.value, (self.index,), (-1.0,))

    def __mul__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        ov = other.value if isinstance(other, Var) else other
        return self._binary(other, self.value * ov, ov, self.value)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            return NotImplemented
        ov = other.value if isinstance(other, Var) else other
        inv = 1.0 / ov
        q = self.value * inv
        return self._binary(other, q, inv, -q * inv)

    def __rtruediv__(self, other):
        inv = 1.0 / self.value
        q = other * inv
        return self.tape._push(q, (self.index,), (-q * inv,))

    def __neg__(self):
        return self.tape._push(-self.value, (self.index,), (-1.0,))

    def __pos__(self):
        return self

    def __pow__(self, k):
        if k == 2:
            return square(self)
        if not isinstance(k, int) or k < 0:
            raise TypeError("only non-negative integer powers are supported")
        out = 1.0
        for _ in range(k):
            out = out * self
        return out


class Dual:
    """Forward-mode pair ``(value, tangent)``.

    Components are floats, arrays or tape variables.  A dual seeded on the
    time input has tangent 1; constants and parameters have tangent 0.
    """

    __slots__ = ("value", "tangent")
    __array_ufunc__ = None

    def __init__(self, value, tangent=0.0) -> None:
        self.value = value
        self.tangent = tangent

    def __repr__(self) -> str:
        return f"Dual({self.value!r}, {self.tangent!r})"

    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value + other.value, self.tangent + other.tangent)
        return Dual(self.value + other, self.tangent)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.value - other.value, self.tangent - other.tangent)
        return Dual(self.value - other, self.tangent)

    def __rsub__(self, other):
        return Dual(other - self.value, -self.tangent)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(
                self.value * other.value,
                self.tangent * other.value + self.value * other.tangent,
            )
        return Dual(self.value * other, self.tangent * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            q = self.value / other.value
            return Dual(q, (self.tangent - q * other.tangent) / other.value)
        return Dual(self.value / other, self.tangent / other)

    def __rtruediv__(self, other):
        q = other / self.value
        return Dual(q, -q * self.tangent / self.value)

    def __neg__(self):
        return Dual(-self.value, -self.tangent)

    def __pos__(self):
        return self

    def __pow__(self, k):
        if k == 2:
            return square(self)
        if not isinstance(k, int) or k < 0:
            raise TypeError("only non-negative integer powers are supported")
        out = 1.0
        for _ in range(k):
            out = out * self
        return out


def lift(x) -> Dual:
    """A constant or parameter in dual form (tangent 0)."""
    return Dual(x, 0.0)


def seed_input(x) -> Dual:
    """The differentiation input in dual form (tangent 1)."""
    return Dual(x, 1.0)


def primal(x):
    """Plain numeric value underneath any wrapper."""
    while isinstance(x, (Dual, Var)):
        x = x.value
    return x


# --- primitives -------------------------------------------------------------
# Each primitive handles Dual (chain rule on the components, which recurses
# into the tape when they are Vars), Var (records one node) and plain numbers.


def tanh(x):
    if isinstance(x, Dual):
        y = tanh(x.value)
        return Dual(y, (1.0 - square(y)) * x.tangent)
    if isinstance(x, Var):
        y = np.tanh(x.value)
        return x.tape._push(y, (x.index,), (1.0 - y * y,))
    return np.tanh(x) if _is_array(x) else math.tanh(x)


def exp(x):
    if isinstance(x, Dual):
        y = exp(x.value)
        return Dual(y, y * x.tangent)
    if isinstance(x, Var):
        y = np.exp(x.value)
        return x.tape._push(y, (x.index,), (y,))
    return np.exp(x) if _is_array(x) else math.exp(x)


def log(x):
    if isinstance(x, Dual):
        return Dual(log(x.value), x.tangent / x.value)
    v = primal(x)
    if np.any(np.asarray(v) <= 0.0):
        raise DomainError(f"log of non-positive value {v!r}")
    if isinstance(x, Var):
        return x.tape._push(np.log(x.value), (x.index,), (1.0 / x.value,))
    return np.log(x) if _is_array(x) else math.log(x)


def _softplus_num(x):
    if _is_array(x):
        return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def _sigmoid_num(x):
    if _is_array(x):
        e = np.exp(-np.abs(x))
        return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))
    e = math.exp(-abs(x))
    return 1.0 / (1.0 + e) if x >= 0.0 else e / (1.0 + e)


def _sigmoid(x):
    # sigmoid expressed through recorded primitives so duals of Vars nest
    if isinstance(x, Var):
        s = _sigmoid_num(x.value)
        return x.tape._push(s, (x.index,), (s * (1.0 - s),))
    return _sigmoid_num(x)


def softplus(x):
    """``ln(1 + e^x)`` evaluated without overflow."""
    if isinstance(x, Dual):
        return Dual(softplus(x.value), _sigmoid(x.value) * x.tangent)
    if isinstance(x, Var):
        return x.tape._push(_softplus_num(x.value), (x.index,), (_sigmoid_num(x.value),))
    return _softplus_num(x)


def square(x):
    if isinstance(x, Dual):
        return Dual(square(x.value), 2.0 * x.value * x.tangent)
    if isinstance(x, Var):
        return x.tape._push(x.value * x.value, (x.index,), (2.0 * x.value,))
    return x * x


def clamp_min(x, lo: float):
    """``max(x, lo)``; the derivative is zero where the clamp is active."""
    if isinstance(x, Dual):
        active = np.asarray(primal(x.value)) < lo
        if not np.any(active):
            return x
        return Dual(clamp_min(x.value, lo), select(active, 0.0, x.tangent))
    if isinstance(x, Var):
        keep = x.value >= lo
        if np.all(keep):
            return x
        return x.tape._push(np.maximum(x.value, lo), (x.index,), (keep.astype(np.float64),))
    return np.maximum(x, lo) if _is_array(x) else max(x, lo)


def select(cond, a, b):
    """Elementwise ``a if cond else b`` with ``cond`` a plain boolean (array)."""
    if not _is_array(cond):
        return a if bool(cond) else b
    if cond.all():
        return a
    if not cond.any():
        return b
    if isinstance(a, Dual) or isinstance(b, Dual):
        a = a if isinstance(a, Dual) else Dual(a, 0.0)
        b = b if isinstance(b, Dual) else Dual(b, 0.0)
        return Dual(select(cond, a.value, b.value), select(cond, a.tangent, b.tangent))
    va, vb = primal(a), primal(b)
    value = np.where(cond, va, vb)
    tape = a.tape if isinstance(a, Var) else b.tape if isinstance(b, Var) else None
    if tape is None:
        return value
    mask = cond.astype(np.float64)
    parents, partials = [], []
    if isinstance(a, Var):
        parents.append(a.index)
        partials.append(mask)
    if isinstance(b, Var):
        parents.append(b.index)
        partials.append(1.0 - mask)
    return tape._push(value, tuple(parents), tuple(partials))


def total(x):
    """Sum of all elements of an array-valued node (identity on scalars)."""
    if isinstance(x, Dual):
        return Dual(total(x.value), total(x.tangent))
    if isinstance(x, Var):
        if not _is_array(x.value):
            return x
        return x.tape._push(float(np.sum(x.value)), (x.index,), (1.0,))
    return float(np.sum(x)) if _is_array(x) else x
