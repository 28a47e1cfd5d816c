"""Reverse-mode differentiation over dense real64 / complex128 numpy arrays.

A `Tape` records every primitive evaluated during a forward pass together with
a vector-Jacobian product (VJP) closure. `Tape.backward` walks the record in
strict reverse order and accumulates cotangents for every leaf.

Complex cotangents follow the convention grad(z) = dL/dRe(z) + i dL/dIm(z) for
a real scalar L, so that the VJP of a complex-linear map A is A^H and the
gradient of a complex parameter splits into independent real and imaginary
partials. Parameters themselves are always real leaves; complex weights are
assembled on the tape with `complex_from_pair`.

All transforms use the unitary ("ortho") normalization, so `fft` and `ifft`
are each other's adjoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import expit, softmax as _softmax

from .errors import NonFiniteError, ShapeError, TapeError, ValidationError

REAL = np.dtype(np.float64)
COMPLEX = np.dtype(np.complex128)


@dataclass
class Node:
    kind: str
    parents: tuple
    value: np.ndarray
    vjp: Callable | None
    requires_grad: bool
    name: str | None = None


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def node(self) -> Node:
        return self.tape.nodes[self.index]

    @property
    def value(self) -> np.ndarray:
        return self.node.value

    @property
    def shape(self) -> tuple:
        return self.node.value.shape

    @property
    def dtype(self) -> np.dtype:
        return self.node.value.dtype

    def __add__(self, other):
        return add(self, _lift(self.tape, other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(self.tape, other))

    def __rsub__(self, other):
        return sub(_lift(self.tape, other), self)

    def __mul__(self, other):
        if isinstance(other, Var):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return div(self, other)
        return scale(self, 1.0 / np.asarray(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var({self.node.kind}#{self.index}, shape={self.shape}, dtype={self.dtype})"


def _lift(tape, x):
    return x if isinstance(x, Var) else tape.constant(x)


def _as_tensor(value) -> np.ndarray:
    arr = np.asarray(value)
    if np.iscomplexobj(arr):
        return np.array(arr, dtype=COMPLEX)
    return np.array(arr, dtype=REAL)


class Gradients:
    """Leaf gradients returned by `Tape.backward`, looked up by Var or leaf name."""

    def __init__(self, tape: Tape, grads: dict):
        self._tape = tape
        self._grads = grads
        self._names = {n.name: i for i, n in enumerate(tape.nodes) if n.name is not None}

    def __getitem__(self, key) -> np.ndarray:
        index = key.index if isinstance(key, Var) else self._names[key]
        node = self._tape.nodes[index]
        return self._grads.get(index, np.zeros_like(node.value))

    def named(self) -> dict:
        return {name: self[name] for name in self._names}


class Tape:
    """Append-only record of a forward evaluation. Use a fresh tape per loss."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, name: str | None = None) -> Var:
        arr = _as_tensor(value)
        if arr.dtype != REAL:
            raise ValidationError(f"leaf {name!r}: parameters must be real, store complex weights as two leaves")
        return self._append(Node("leaf", (), arr, None, True, name))

    def constant(self, value) -> Var:
        return self._append(Node("const", (), _as_tensor(value), None, False))

    def leaves(self, table: Mapping[str, np.ndarray]) -> dict:
        return {name: self.leaf(value, name) for name, value in table.items()}

    def record(self, kind: str, parents: Sequence[Var], value: np.ndarray, vjp: Callable) -> Var:
        for p in parents:
            if p.tape is not self:
                raise TapeError(f"{kind}: operand recorded on a different tape")
        requires = any(p.node.requires_grad for p in parents)
        node = Node(kind, tuple(p.index for p in parents), value, vjp if requires else None, requires)
        return self._append(node)

    def _append(self, node: Node) -> Var:
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    def backward(self, out: Var) -> Gradients:
        if not self.nodes or out.tape is not self or out.index >= len(self.nodes):
            raise TapeError("backward called before a forward pass recorded the output")
        value = out.value
        if value.size != 1 or value.dtype != REAL:
            raise TapeError(f"backward needs a real scalar output, got shape {value.shape} {value.dtype}")
        grads = {out.index: np.ones_like(value)}
        for index in range(out.index, -1, -1):
            g = grads.get(index)
            node = self.nodes[index]
            if g is None or node.vjp is None:
                continue
            parent_grads = node.vjp(g)
            for pidx, pg in zip(node.parents, parent_grads):
                parent = self.nodes[pidx]
                if pg is None or not parent.requires_grad:
                    continue
                if parent.value.dtype == REAL and np.iscomplexobj(pg):
                    pg = pg.real
                if pidx in grads:
                    grads[pidx] = grads[pidx] + pg
                else:
                    grads[pidx] = np.array(pg, dtype=parent.value.dtype)
        leaf_grads = {i: g for i, g in grads.items() if self.nodes[i].kind == "leaf"}
        return Gradients(self, leaf_grads)


# ---------------------------------------------------------------------------
# checks


def _same(kind, a: Var, b: Var):
    if a.shape != b.shape:
        raise ShapeError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ValidationError(f"{kind}: dtype mismatch {a.dtype} vs {b.dtype}")


def _real(kind, a: Var):
    if a.dtype != REAL:
        raise ValidationError(f"{kind}: expects a real tensor, got {a.dtype}")


def _complex(kind, a: Var):
    if a.dtype != COMPLEX:
        raise ValidationError(f"{kind}: expects a complex tensor, got {a.dtype}")


# ---------------------------------------------------------------------------
# elementwise


def add(a: Var, b: Var) -> Var:
    _same("add", a, b)
    return a.tape.record("add", (a, b), a.value + b.value, lambda g: (g, g))


def sub(a: Var, b: Var) -> Var:
    _same("sub", a, b)
    return a.tape.record("sub", (a, b), a.value - b.value, lambda g: (g, -g))


def mul(a: Var, b: Var) -> Var:
    """Hadamard product."""
    _same("hadamard", a, b)
    av, bv = a.value, b.value
    return a.tape.record("hadamard", (a, b), av * bv, lambda g: (g * np.conj(bv), g * np.conj(av)))


def div(a: Var, b: Var) -> Var:
    _same("div", a, b)
    _real("div", a)
    av, bv = a.value, b.value
    out = av / bv
    return a.tape.record("div", (a, b), out, lambda g: (g / bv, -g * out / bv))


def scale(x: Var, c) -> Var:
    """Multiply by a constant (scalar or array broadcastable to x without growing it)."""
    c = np.asarray(c)
    if x.dtype == REAL and np.iscomplexobj(c):
        raise ValidationError("scale: complex constant on a real tensor, convert explicitly")
    out = x.value * c
    if out.shape != x.shape:
        raise ShapeError(f"scale: shape mismatch {x.shape} vs {c.shape}")
    cc = np.conj(c)
    return x.tape.record("scale", (x,), out.astype(x.dtype, copy=False), lambda g: (g * cc,))


def _unary(kind, x: Var, fwd, dfwd) -> Var:
    _real(kind, x)
    xv = x.value
    out = fwd(xv)
    return x.tape.record(kind, (x,), out, lambda g: (g * dfwd(xv, out),))


def tanh(x: Var) -> Var:
    return _unary("tanh", x, np.tanh, lambda xv, y: 1.0 - y * y)


def softplus(x: Var) -> Var:
    return _unary("softplus", x, lambda v: np.logaddexp(0.0, v), lambda xv, y: expit(xv))


def sin(x: Var) -> Var:
    return _unary("sin", x, np.sin, lambda xv, y: np.cos(xv))


def cos(x: Var) -> Var:
    return _unary("cos", x, np.cos, lambda xv, y: -np.sin(xv))


def exp(x: Var) -> Var:
    return _unary("exp", x, np.exp, lambda xv, y: y)


def log(x: Var) -> Var:
    return _unary("log", x, np.log, lambda xv, y: 1.0 / xv)


def square(x: Var) -> Var:
    return _unary("square", x, np.square, lambda xv, y: 2.0 * xv)


def abs2(z: Var) -> Var:
    """Complex modulus squared, |z|^2, as a real tensor."""
    _complex("abs2", z)
    zv = z.value
    return z.tape.record("abs2", (z,), (zv.real ** 2 + zv.imag ** 2), lambda g: (2.0 * g * zv,))


def complex_from_pair(re: Var, im: Var) -> Var:
    _same("complex-from-pair", re, im)
    _real("complex-from-pair", re)
    return re.tape.record("complex-from-pair", (re, im), re.value + 1j * im.value,
                          lambda g: (g.real, g.imag))


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(x: Var, w: Var) -> Var:
    """x (..., k) @ w (k, n), the pointwise channel map."""
    if w.value.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {x.shape} vs {w.shape}")
    if x.dtype != w.dtype:
        raise ValidationError(f"matmul: dtype mismatch {x.dtype} vs {w.dtype}")
    xv, wv = x.value, w.value

    def vjp(g):
        gx = g @ np.conj(wv).T
        gw = np.conj(xv.reshape(-1, xv.shape[-1])).T @ g.reshape(-1, g.shape[-1])
        return gx, gw

    return x.tape.record("matmul", (x, w), xv @ wv, vjp)


def mode_matmul(g: Var, x: Var) -> Var:
    """Per-wavenumber matrix-vector product.

    g has shape (K..., o, i), x has shape (B, K..., i); the result has shape
    (B, K..., o).
    """
    modes = g.shape[:-2]
    if x.shape[1:-1] != modes or x.shape[-1] != g.shape[-1]:
        raise ShapeError(f"mode-matmul: shape mismatch {g.shape} vs {x.shape}")
    _complex("mode-matmul", g)
    _complex("mode-matmul", x)
    o, i = g.shape[-2:]
    b = x.shape[0]
    k = int(np.prod(modes, dtype=np.int64))
    gv = g.value.reshape(k, o, i)
    xv = x.value.reshape(b, k, i)
    out = np.einsum("koi,bki->bko", gv, xv).reshape(x.shape[:-1] + (o,))

    def vjp(gy):
        gy = gy.reshape(b, k, o)
        gg = np.einsum("bko,bki->koi", gy, np.conj(xv)).reshape(g.shape)
        gx = np.einsum("koi,bko->bki", np.conj(gv), gy).reshape(x.shape)
        return gg, gx

    return g.tape.record("mode-matmul", (g, x), out, vjp)


def bias(x: Var, b: Var) -> Var:
    if b.value.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias: shape mismatch {x.shape} vs {b.shape}")
    n = b.shape[0]
    return x.tape.record("bias", (x, b), x.value + b.value,
                         lambda g: (g, g.reshape(-1, n).sum(axis=0)))


def total(x: Var) -> Var:
    """Sum of all entries, as a 0-d tensor."""
    shape = x.shape
    return x.tape.record("sum", (x,), np.sum(x.value), lambda g: (np.full(shape, g, dtype=x.dtype),))


def mean(x: Var) -> Var:
    shape, n = x.shape, x.value.size
    return x.tape.record("mean", (x,), np.mean(x.value), lambda g: (np.full(shape, g / n, dtype=x.dtype),))


def concat(xs: Sequence[Var], axis: int = -1) -> Var:
    tape = xs[0].tape
    ref = xs[0].shape
    ax = axis % len(ref)
    for x in xs[1:]:
        if x.shape[:ax] + x.shape[ax + 1:] != ref[:ax] + ref[ax + 1:] or x.dtype != xs[0].dtype:
            raise ShapeError(f"concat: shape mismatch {ref} vs {x.shape}")
    edges = np.cumsum([x.shape[ax] for x in xs])[:-1]
    return tape.record("concat", tuple(xs), np.concatenate([x.value for x in xs], axis=ax),
                       lambda g: tuple(np.split(g, edges, axis=ax)))


def split(x: Var, sizes: Sequence[int], axis: int = -1) -> list:
    ax = axis % x.value.ndim
    if sum(sizes) != x.shape[ax]:
        raise ShapeError(f"split: sizes {tuple(sizes)} do not cover axis of length {x.shape[ax]}")
    out = []
    start = 0
    for size in sizes:
        sl = [slice(None)] * x.value.ndim
        sl[ax] = slice(start, start + size)
        sl = tuple(sl)

        def vjp(g, sl=sl):
            full = np.zeros_like(x.value)
            full[sl] = g
            return (full,)

        out.append(x.tape.record("split", (x,), x.value[sl].copy(), vjp))
        start += size
    return out


def softmax(x: Var, axis: int = -1) -> Var:
    _real("softmax", x)
    s = _softmax(x.value, axis=axis)

    def vjp(g):
        return (s * (g - np.sum(g * s, axis=axis, keepdims=True)),)

    return x.tape.record("softmax", (x,), s, vjp)


def broadcast(x: Var, shape: Sequence[int]) -> Var:
    """Explicit numpy-style broadcast; the adjoint sums over the broadcast axes."""
    shape = tuple(shape)
    try:
        out = np.array(np.broadcast_to(x.value, shape))
    except ValueError:
        raise ShapeError(f"broadcast: shape mismatch {x.shape} vs {shape}") from None
    return x.tape.record("broadcast", (x,), out, lambda g: (_unbroadcast(g, x.shape),))


def _unbroadcast(g, shape):
    lead = g.ndim - len(shape)
    g = g.sum(axis=tuple(range(lead))) if lead else g
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


def reshape(x: Var, shape: Sequence[int]) -> Var:
    old = x.shape
    return x.tape.record("reshape", (x,), x.value.reshape(shape), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------------------
# spectral primitives


def fft(x: Var, axes: Sequence[int]) -> Var:
    _complex("fft", x)
    axes = tuple(axes)
    return x.tape.record("fft", (x,), np.fft.fftn(x.value, axes=axes, norm="ortho"),
                         lambda g: (np.fft.ifftn(g, axes=axes, norm="ortho"),))


def ifft(x: Var, axes: Sequence[int]) -> Var:
    _complex("ifft", x)
    axes = tuple(axes)
    return x.tape.record("ifft", (x,), np.fft.ifftn(x.value, axes=axes, norm="ortho"),
                         lambda g: (np.fft.fftn(g, axes=axes, norm="ortho"),))


def rfft(x: Var, axes: Sequence[int]) -> Var:
    """Real-input transform; the last axis in `axes` keeps n//2 + 1 modes."""
    _real("rfft", x)
    axes = tuple(axes)
    n_last = x.shape[axes[-1]]

    def vjp(g):
        pad = [(0, 0)] * g.ndim
        pad[axes[-1]] = (0, n_last - g.shape[axes[-1]])
        return (np.fft.ifftn(np.pad(g, pad), axes=axes, norm="ortho").real,)

    return x.tape.record("rfft", (x,), np.fft.rfftn(x.value, axes=axes, norm="ortho"), vjp)


def irfft(c: Var, axes: Sequence[int], sizes: Sequence[int]) -> Var:
    """Inverse of `rfft`; `sizes` are the physical lengths along `axes`."""
    _complex("irfft", c)
    axes, sizes = tuple(axes), tuple(sizes)
    weights = hermitian_weights(sizes[-1])
    wshape = [1] * c.value.ndim
    wshape[axes[-1]] = weights.size
    weights = weights.reshape(wshape)
    out = np.fft.irfftn(c.value, s=sizes, axes=axes, norm="ortho")
    return c.tape.record("irfft", (c,), out,
                         lambda g: (np.fft.rfftn(g, axes=axes, norm="ortho") * weights,))


def hermitian_weights(n: int) -> np.ndarray:
    """Multiplicity of each half-spectrum bin in the full spectrum of a real signal."""
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


def _ix(shape, axes, indices):
    full = [np.arange(s) for s in shape]
    for ax, idx in zip(axes, indices):
        full[ax] = np.asarray(idx)
    return np.ix_(*full)


def mode_truncate(x: Var, axes: Sequence[int], indices: Sequence[np.ndarray]) -> Var:
    """Keep only the listed mode indices along each spectral axis (gather)."""
    axes = tuple(a % x.value.ndim for a in axes)
    shape = x.shape
    ix = _ix(shape, axes, indices)

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[ix] = g
        return (full,)

    return x.tape.record("mode-truncate", (x,), x.value[ix], vjp)


def mode_pad(x: Var, axes: Sequence[int], indices: Sequence[np.ndarray], shape: Sequence[int]) -> Var:
    """Adjoint of `mode_truncate`: scatter retained modes into a zero spectrum."""
    axes = tuple(a % x.value.ndim for a in axes)
    shape = tuple(shape)
    ix = _ix(shape, axes, indices)
    out = np.zeros(shape, dtype=x.dtype)
    out[ix] = x.value
    return x.tape.record("mode-pad", (x,), out, lambda g: (g[ix],))


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    analytic: dict = field(repr=False, default_factory=dict)
    numeric: dict = field(repr=False, default_factory=dict)


def value_and_grad(f: Callable, theta: Mapping[str, np.ndarray]):
    tape = Tape()
    leaves = tape.leaves(theta)
    out = f(tape, leaves)
    grads = tape.backward(out)
    return float(out.value), {name: grads[var] for name, var in leaves.items()}


def _evaluate(f, theta):
    tape = Tape()
    return float(f(tape, tape.leaves(theta)).value)


def grad_check(f: Callable, theta0, step: float = 1e-5, tol: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients of f(tape, leaves) -> scalar Var with central differences.

    The error is max |analytic - numeric| normalized by the largest gradient
    magnitude of either estimate; an identically zero pair reports 0.
    """
    if not isinstance(theta0, Mapping):
        theta0 = {"x": theta0}
    theta0 = {k: np.array(v, dtype=REAL) for k, v in theta0.items()}
    value, analytic = value_and_grad(f, theta0)
    if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in analytic.values()):
        raise NonFiniteError("grad_check: non-finite value or gradient at theta0")

    numeric = {}
    for name, base in theta0.items():
        est = np.zeros_like(base)
        for i in np.ndindex(base.shape):
            shifted = dict(theta0)
            plus = base.copy()
            plus[i] += step
            shifted[name] = plus
            fp = _evaluate(f, shifted)
            minus = base.copy()
            minus[i] -= step
            shifted[name] = minus
            fm = _evaluate(f, shifted)
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError(f"grad_check: non-finite value perturbing {name}{list(i)}")
            est[i] = (fp - fm) / (2.0 * step)
        numeric[name] = est

    diff = max((float(np.max(np.abs(analytic[k] - numeric[k]), initial=0.0)) for k in theta0), default=0.0)
    scale_ = max((float(np.max(np.abs(g), initial=0.0)) for g in (*analytic.values(), *numeric.values())),
                 default=0.0)
    err = 0.0 if diff == 0.0 else diff / max(scale_, np.finfo(float).tiny)
    return GradCheckReport(err, err < tol, analytic, numeric)
