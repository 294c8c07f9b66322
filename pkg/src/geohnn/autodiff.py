"""Reverse-mode automatic differentiation on dense f64 tensors.

A :class:`Tape` records primitive operations as they execute. Gradients are
obtained by walking the tape backwards; every backward rule is itself written
in terms of the primitives, so a backward pass executed with
``create_graph=True`` is recorded like any forward computation. Differentiating
the result again yields exact second-order derivatives, which the Hamiltonian
training losses need (they depend on dH/dq and dH/dp).

Tensors are plain ``numpy.float64`` arrays. A :class:`Variable` couples a value
to at most one tape node; Variables without a tape are constants.
"""
from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from ._backend import kernels


class config:
    """Global toggles. ``checked`` enables NaN guards at construction."""

    checked = True


class ShapeError(ValueError):
    pass


def tensor(data, shape=None) -> np.ndarray:
    """Coerce ``data`` to a float64 array, validating finiteness in checked mode."""
    arr = np.asarray(data, dtype=np.float64)
    if shape is not None:
        if int(np.prod(shape)) != arr.size:
            raise ShapeError(f"cannot view {arr.size} values as shape {tuple(shape)}")
        arr = arr.reshape(shape)
    if config.checked and not np.all(np.isfinite(arr)):
        raise ValueError("non-finite values in tensor")
    return arr


class Tape:
    """Append-only record of primitive ops, in topological order."""

    _generation_counter = 0

    def __init__(self):
        self.nodes: list[_Node] = []
        Tape._generation_counter += 1
        self.generation = Tape._generation_counter

    def var(self, value) -> "Variable":
        """Create a tracked leaf Variable (e.g. a model parameter or input)."""
        v = Variable(tensor(value), tape=self)
        v.node = self._append("leaf", (), None)
        return v

    def _append(self, op: str, inputs: tuple, vjp) -> int:
        self.nodes.append(_Node(op, inputs, vjp))
        return len(self.nodes) - 1


class _Node:
    __slots__ = ("op", "inputs", "vjp")

    def __init__(self, op, inputs, vjp):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp


class Variable:
    """A value, optionally tracked on a tape."""

    __slots__ = ("value", "tape", "node")

    def __init__(self, value, tape=None, node=None):
        self.value = value
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.value.shape

    @property
    def tracked(self):
        return self.tape is not None and _RECORDING[-1]

    def __repr__(self):
        return f"Variable(shape={self.value.shape}, tracked={self.tape is not None})"

    # Operator sugar; everything funnels through the primitives below.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


_RECORDING = [True]


@contextmanager
def no_recording():
    """Suspend tape recording (used for first-order-only backward passes)."""
    _RECORDING.append(False)
    try:
        yield
    finally:
        _RECORDING.pop()


def _as_variable(x) -> Variable:
    if isinstance(x, Variable):
        return x
    return Variable(np.asarray(x, dtype=np.float64))


def _result_tape(*vs: Variable):
    if not _RECORDING[-1]:
        return None
    tape = None
    for v in vs:
        if v.tape is not None:
            if tape is not None and tape is not v.tape:
                raise ValueError("operands live on different tapes")
            tape = v.tape
    return tape


def _make(value, tape, op, inputs, vjp) -> Variable:
    out = Variable(value, tape=tape)
    if tape is not None:
        out.node = tape._append(op, inputs, vjp)
    return out


def _zeros_like(v: Variable) -> Variable:
    return Variable(np.zeros_like(v.value))


# ---------------------------------------------------------------------------
# broadcasting helper


def _unbroadcast(g: Variable, shape: tuple) -> Variable:
    """Reduce an adjoint ``g`` back to ``shape`` after numpy broadcasting."""
    if g.value.shape == shape:
        return g
    extra = g.value.ndim - len(shape)
    if extra > 0:
        g = sum_(g, axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.value.shape[i] != 1)
    if axes:
        g = sum_(g, axis=axes, keepdims=True)
    if g.value.shape != shape:
        g = reshape(g, shape)
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a, b) -> Variable:
    a, b = _as_variable(a), _as_variable(b)
    tape = _result_tape(a, b)
    value = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return _make(value, tape, "add", (a, b), vjp)


def sub(a, b) -> Variable:
    a, b = _as_variable(a), _as_variable(b)
    tape = _result_tape(a, b)
    value = a.value - b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(neg(g), b.value.shape)

    return _make(value, tape, "sub", (a, b), vjp)


def neg(a) -> Variable:
    a = _as_variable(a)
    tape = _result_tape(a)

    def vjp(g):
        return (neg(g),)

    return _make(-a.value, tape, "neg", (a,), vjp)


def mul(a, b) -> Variable:
    a, b = _as_variable(a), _as_variable(b)
    tape = _result_tape(a, b)
    value = a.value * b.value

    def vjp(g):
        return _unbroadcast(mul(g, b), a.value.shape), _unbroadcast(mul(g, a), b.value.shape)

    return _make(value, tape, "mul", (a, b), vjp)


def div(a, b) -> Variable:
    a, b = _as_variable(a), _as_variable(b)
    tape = _result_tape(a, b)
    value = a.value / b.value

    def vjp(g):
        ga = div(g, b)
        gb = neg(mul(g, div(a, mul(b, b))))
        return _unbroadcast(ga, a.value.shape), _unbroadcast(gb, b.value.shape)

    return _make(value, tape, "div", (a, b), vjp)


def matmul(a, b) -> Variable:
    a, b = _as_variable(a), _as_variable(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got shapes {a.value.shape} and {b.value.shape}")
    if a.value.shape[-1] != b.value.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.value.shape} vs {b.value.shape}")
    tape = _result_tape(a, b)
    value = a.value @ b.value

    def vjp(g):
        ga = _unbroadcast(matmul(g, transpose(b)), a.value.shape)
        gb = _unbroadcast(matmul(transpose(a), g), b.value.shape)
        return ga, gb

    return _make(value, tape, "matmul", (a, b), vjp)


def transpose(a) -> Variable:
    """Swap the last two axes."""
    a = _as_variable(a)
    if a.value.ndim < 2:
        raise ShapeError(f"transpose needs ndim >= 2, got shape {a.value.shape}")
    tape = _result_tape(a)

    def vjp(g):
        return (transpose(g),)

    return _make(np.swapaxes(a.value, -1, -2), tape, "transpose", (a,), vjp)


def reshape(a, shape) -> Variable:
    a = _as_variable(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.value.size and -1 not in shape:
        raise ShapeError(f"cannot reshape {a.value.shape} to {shape}")
    tape = _result_tape(a)
    old = a.value.shape

    def vjp(g):
        return (reshape(g, old),)

    return _make(a.value.reshape(shape), tape, "reshape", (a,), vjp)


def concat(parts: Sequence, axis: int = 0) -> Variable:
    parts = [_as_variable(p) for p in parts]
    tape = _result_tape(*parts)
    value = np.concatenate([p.value for p in parts], axis=axis)
    sizes = [p.value.shape[axis] for p in parts]

    def vjp(g):
        outs = []
        start = 0
        for p, n in zip(parts, sizes):
            idx = [slice(None)] * g.value.ndim
            idx[axis] = slice(start, start + n)
            outs.append(slice_(g, tuple(idx)))
            start += n
        return tuple(outs)

    return _make(value, tape, "concat", tuple(parts), vjp)


def slice_(a, index) -> Variable:
    """Basic slicing with a tuple of ``slice`` objects."""
    a = _as_variable(a)
    tape = _result_tape(a)
    shape = a.value.shape

    def vjp(g):
        return (unslice(g, shape, index),)

    return _make(a.value[index], tape, "slice", (a,), vjp)


def unslice(g, shape, index) -> Variable:
    """Scatter ``g`` into a zero tensor of ``shape`` at ``index`` (adjoint of slice_)."""
    g = _as_variable(g)
    tape = _result_tape(g)
    value = np.zeros(shape, dtype=np.float64)
    value[index] = g.value

    def vjp(gg):
        return (slice_(gg, index),)

    return _make(value, tape, "unslice", (g,), vjp)


def sum_(a, axis=None, keepdims=False) -> Variable:
    a = _as_variable(a)
    tape = _result_tape(a)
    value = np.sum(a.value, axis=axis, keepdims=keepdims)
    in_shape = a.value.shape
    if axis is None:
        axes = tuple(range(len(in_shape)))
    elif isinstance(axis, int):
        axes = (axis % len(in_shape),)
    else:
        axes = tuple(ax % len(in_shape) for ax in axis)
    kd_shape = tuple(1 if i in axes else n for i, n in enumerate(in_shape))

    def vjp(g):
        gk = reshape(g, kd_shape) if g.value.shape != kd_shape else g
        return (mul(gk, Variable(np.ones(in_shape))),)

    return _make(value, tape, "sum", (a,), vjp)


def mean_(a, axis=None, keepdims=False) -> Variable:
    a = _as_variable(a)
    if axis is None:
        n = a.value.size
    elif isinstance(axis, int):
        n = a.value.shape[axis]
    else:
        n = int(np.prod([a.value.shape[ax] for ax in axis]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tanh(a) -> Variable:
    a = _as_variable(a)
    tape = _result_tape(a)
    value = kernels.tanh_fwd(a.value)
    out_holder = []

    def vjp(g):
        y = out_holder[0]
        if not _RECORDING[-1] or (g.tape is None and y.tape is None):
            return (Variable(kernels.tanh_bwd(y.value, g.value)),)
        return (mul(g, sub(1.0, mul(y, y))),)

    out = _make(value, tape, "tanh", (a,), vjp)
    out_holder.append(out)
    return out


def softplus(a) -> Variable:
    a = _as_variable(a)
    tape = _result_tape(a)
    value = kernels.softplus_fwd(a.value)

    def vjp(g):
        if not _RECORDING[-1] or (g.tape is None and a.tape is None):
            return (Variable(kernels.softplus_bwd(a.value, g.value)),)
        sig = mul(add(tanh(mul(a, 0.5)), 1.0), 0.5)
        return (mul(g, sig),)

    return _make(value, tape, "softplus", (a,), vjp)


def exp(a) -> Variable:
    a = _as_variable(a)
    tape = _result_tape(a)
    out_holder = []

    def vjp(g):
        return (mul(g, out_holder[0]),)

    out = _make(np.exp(a.value), tape, "exp", (a,), vjp)
    out_holder.append(out)
    return out


def log(a) -> Variable:
    a = _as_variable(a)
    tape = _result_tape(a)

    def vjp(g):
        return (div(g, a),)

    return _make(np.log(a.value), tape, "log", (a,), vjp)


def square(a) -> Variable:
    a = _as_variable(a)
    return mul(a, a)


def sqrt(a) -> Variable:
    a = _as_variable(a)
    tape = _result_tape(a)
    out_holder = []

    def vjp(g):
        return (div(g, mul(out_holder[0], 2.0)),)

    out = _make(np.sqrt(a.value), tape, "sqrt", (a,), vjp)
    out_holder.append(out)
    return out


def elu_bijection(a) -> Variable:
    """C1 bijection R -> (-1, inf): identity for x >= 0, e^x - 1 below."""
    a = _as_variable(a)
    tape = _result_tape(a)
    value = kernels.elu_bij_fwd(a.value)
    pos = Variable((a.value >= 0.0).astype(np.float64))
    negm = Variable((a.value < 0.0).astype(np.float64))

    def vjp(g):
        if not _RECORDING[-1] or (g.tape is None and a.tape is None):
            return (Variable(kernels.elu_bij_bwd(a.value, g.value)),)
        # derivative: 1 on x>=0, e^x on x<0; masks are locally constant
        return (mul(g, add(pos, mul(negm, exp(a)))),)

    return _make(value, tape, "elu_bij", (a,), vjp)


def elu_bijection_inverse(a) -> Variable:
    """Closed-form inverse of :func:`elu_bijection`: y for y >= 0, ln(1+y) below.

    Below y = -1 + 1e-6 (outside the bijection's range) the inverse is
    continued C1-linearly so arbitrary encoder inputs stay finite.
    """
    a = _as_variable(a)
    tape = _result_tape(a)
    value = kernels.elu_bij_inv(a.value)
    floor = kernels.INV_FLOOR
    lo = -1.0 + floor
    pos = Variable((a.value >= 0.0).astype(np.float64))
    mid = Variable(((a.value < 0.0) & (a.value >= lo)).astype(np.float64))
    low = Variable((a.value < lo).astype(np.float64))
    a_safe = Variable(np.clip(a.value, lo, None))

    def vjp(g):
        # derivative: 1 on y>=0, 1/(1+y) on the log branch, 1/floor on the continuation
        deriv = add(pos, add(div(mid, add(_keep_graph(a, a_safe), 1.0)), mul(low, 1.0 / floor)))
        return (mul(g, deriv),)

    return _make(value, tape, "elu_bij_inv", (a,), vjp)


def _keep_graph(a: Variable, a_safe: Variable) -> Variable:
    # clip only affects the masked-out continuation region, where the mid mask
    # is zero; keep the graph connection through `a` when it is tracked
    if a.tape is None:
        return a_safe
    offset = Variable(a_safe.value - a.value)
    return add(a, offset)


# ---------------------------------------------------------------------------
# composites


def dot(a, b) -> Variable:
    a, b = _as_variable(a), _as_variable(b)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"dot shapes differ: {a.value.shape} vs {b.value.shape}")
    return sum_(mul(a, b))


def quadratic_form(p, a) -> Variable:
    """qf(p, A) = p^T A p, batched over leading axes of ``p``/``A``."""
    p, a = _as_variable(p), _as_variable(a)
    n = p.value.shape[-1]
    if a.value.shape[-2:] != (n, n):
        raise ShapeError(f"quadratic_form: vector {p.value.shape} vs matrix {a.value.shape}")
    col = reshape(p, p.value.shape[:-1] + (n, 1))
    ap = matmul(a, col)
    return sum_(mul(col, ap), axis=(-2, -1))


def matvec(a, x) -> Variable:
    """A @ x for a (..., n, n) matrix and (..., n) vector."""
    x = _as_variable(x)
    n = x.value.shape[-1]
    col = reshape(x, x.value.shape[:-1] + (n, 1))
    out = matmul(a, col)
    return reshape(out, out.value.shape[:-1])


# ---------------------------------------------------------------------------
# gradients


def grad(output: Variable, wrt: Sequence[Variable], create_graph: bool = False) -> list[Variable]:
    """Reverse-mode gradient of a tracked scalar ``output`` w.r.t. ``wrt``.

    With ``create_graph=True`` the backward pass is recorded on the same tape,
    so the returned Variables can be differentiated again (second order).
    Variables in ``wrt`` that the output does not depend on get zeros.
    """
    if not isinstance(output, Variable) or output.tape is None:
        raise ValueError(
            "grad: output is not tracked on a tape; if it came from a prior "
            "grad() call, second-order was not enabled (pass create_graph=True)"
        )
    if output.value.size != 1:
        raise ValueError(f"grad: output must be scalar, got shape {output.value.shape}")
    tape = output.tape
    for w in wrt:
        if w.tape is not None and w.tape is not tape:
            raise ValueError("grad: wrt variable lives on a different tape")

    adjoints: dict[int, Variable] = {
        output.node: Variable(np.ones_like(output.value))
    }

    def _run():
        for nid in range(output.node, -1, -1):
            g = adjoints.get(nid)
            if g is None:
                continue
            node = tape.nodes[nid]
            if node.vjp is None:
                continue
            gs = node.vjp(g)
            for inp, gi in zip(node.inputs, gs):
                if gi is None or inp.node is None:
                    continue
                prev = adjoints.get(inp.node)
                adjoints[inp.node] = gi if prev is None else add(prev, gi)

    if create_graph:
        _run()
    else:
        with no_recording():
            _run()

    out = []
    for w in wrt:
        g = adjoints.get(w.node) if w.node is not None else None
        out.append(g if g is not None else _zeros_like(w))
    return out


def check_grad(f: Callable[[Variable], Variable], x, eps: float = 1e-5) -> float:
    """Max relative error between analytic gradient of ``f`` and central differences."""
    x = tensor(x)
    tape = Tape()
    xv = tape.var(x)
    out = f(xv)
    (analytic,) = grad(out, [xv])
    analytic = analytic.value

    numeric = np.zeros_like(x)
    flat = x.ravel()
    nflat = numeric.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Variable(x.copy())).value.item()
        flat[i] = orig - eps
        lo = f(Variable(x.copy())).value.item()
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * eps)

    denom = np.abs(analytic) + eps
    return float(np.max(np.abs(analytic - numeric) / denom)) if x.size else 0.0
