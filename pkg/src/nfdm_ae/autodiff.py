"""A small reverse-mode differentiation tape.

Only the operations this simulator needs are available, each registered as a
:class:`Primitive` with an explicit adjoint rule. Complex values follow one
convention throughout: the adjoint carried for a complex variable ``z`` is
``dL/dRe(z) + 1j * dL/dIm(z)`` for the real loss ``L``, so a first-order
change is ``dL = Re(conj(adj) * dz)``. For a holomorphic map ``y = f(x)`` this
gives ``adj_x = conj(f'(x)) * adj_y``; adjoints flowing into real-valued
variables are projected onto their real part.

Typical use::

    out, tape = record_forward(program, {"w": w0})
    grads = backward(tape)          # {"w": dL/dw}
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import fft as _fft

_REGISTRY: dict[str, "Primitive"] = {}
_ACTIVE: list["Tape"] = []


class UnregisteredPrimitiveError(TypeError):
    pass


class Primitive:
    """Forward map plus adjoint rule.

    ``vjp`` receives the output adjoint, the input values, the output value
    and the constants passed at call time, and returns one adjoint per input
    (``None`` for inputs that carry no gradient).
    """

    name: str = ""

    def forward(self, *xs, **consts):
        raise NotImplementedError

    def vjp(self, g, xs, y, **consts):
        raise NotImplementedError


def register(cls):
    """Class decorator adding a primitive to the registry."""
    if not cls.name:
        raise ValueError("primitive needs a name")
    if cls.name in _REGISTRY:
        raise ValueError(f"primitive {cls.name!r} registered twice")
    _REGISTRY[cls.name] = cls()
    return cls


def registered() -> list[str]:
    return sorted(_REGISTRY)


class Var:
    __slots__ = ("value", "tape", "name")
    # make ndarray op Var defer to the reflected Var operator
    __array_ufunc__ = None

    def __init__(self, value, tape=None, name=None):
        self.value = value
        self.tape = tape
        self.name = name

    @property
    def shape(self):
        return np.shape(self.value)

    def __add__(self, o):
        return apply("add", self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return apply("sub", self, o)

    def __rsub__(self, o):
        return apply("sub", o, self)

    def __mul__(self, o):
        return apply("mul", self, o)

    __rmul__ = __mul__

    def __neg__(self):
        return apply("mul", self, -1.0)

    def __getitem__(self, index):
        return apply("getitem", self, index=index)

    def __repr__(self):
        return f"Var(shape={self.shape}, name={self.name!r})"


@dataclass
class _Node:
    prim: object
    inputs: tuple
    output: Var
    consts: dict


@dataclass
class Tape:
    nodes: list = field(default_factory=list)
    leaves: dict = field(default_factory=dict)
    output: Var | None = None

    def leaf(self, value, name=None) -> Var:
        v = Var(np.asarray(value), self, name)
        if name is not None:
            self.leaves[name] = v
        return v

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)

    def backward(self, output: Var | None = None, seed=None) -> dict:
        return backward(self, seed, output=output)


def _current():
    return _ACTIVE[-1] if _ACTIVE else None


@contextlib.contextmanager
def no_record():
    """Evaluate primitives without recording them."""
    saved = _ACTIVE[:]
    _ACTIVE.clear()
    try:
        yield
    finally:
        _ACTIVE[:] = saved


def value_of(x):
    return x.value if isinstance(x, Var) else x


def apply(name: str, *args, **consts):
    prim = _REGISTRY.get(name)
    if prim is None:
        raise UnregisteredPrimitiveError(f"no primitive named {name!r}")
    y = prim.forward(*(value_of(a) for a in args), **consts)
    tape = _current()
    if tape is not None and any(isinstance(a, Var) and a.tape is tape for a in args):
        out = Var(y, tape)
        tape.nodes.append(_Node(prim, args, out, consts))
        return out
    return Var(y) if any(isinstance(a, Var) for a in args) else y


class _Checkpoint:
    """Tape node for a segment that is recomputed during the backward pass."""

    name = "checkpoint"

    def __init__(self, fn):
        self.fn = fn

    def vjp(self, g, xs, y, **consts):
        sub = Tape()
        with sub:
            leaves = [sub.leaf(x) for x in xs]
            out = self.fn(*leaves)
        adj = _run_backward(sub, out, g)
        return tuple(adj.get(id(v)) for v in leaves)


def checkpoint(fn: Callable, *xs):
    """Run ``fn(*xs)`` storing only its inputs; replay it when differentiating.

    ``fn`` must be deterministic (noise draws are captured as constants) so
    that the replay reproduces the forward values bit for bit.
    """
    tape = _current()
    vals = [value_of(x) for x in xs]
    with no_record():
        y = value_of(fn(*[Var(v) for v in vals]))
    if tape is None or not any(isinstance(x, Var) and x.tape is tape for x in xs):
        return y
    out = Var(y, tape)
    tape.nodes.append(_Node(_Checkpoint(fn), xs, out, {}))
    return out


def record_forward(program: Callable, params: dict):
    """Evaluate ``program(vars)`` on a fresh tape; returns ``(output, tape)``."""
    tape = Tape()
    with tape:
        leaves = {k: tape.leaf(v, name=k) for k, v in params.items()}
        out = program(leaves)
    tape.output = out
    return out, tape


def _accumulate(adj, var, g):
    if g is None:
        return
    if not np.iscomplexobj(var.value) and np.iscomplexobj(g):
        g = g.real
    key = id(var)
    if key in adj:
        adj[key] = adj[key] + g
    else:
        adj[key] = g


def _run_backward(tape, output, seed):
    adj = {}
    if seed is None:
        if np.size(output.value) != 1:
            raise ValueError("a seed adjoint is required for non-scalar outputs")
        seed = np.ones_like(output.value)
    seed = np.asarray(seed)
    if seed.shape != np.shape(output.value):
        raise ValueError(f"seed shape {seed.shape} != output shape {np.shape(output.value)}")
    adj[id(output)] = seed
    for i in range(len(tape.nodes) - 1, -1, -1):
        node = tape.nodes[i]
        g = adj.pop(id(node.output), None)
        if g is None:
            continue
        xs = tuple(value_of(a) for a in node.inputs)
        grads = node.prim.vjp(g, xs, node.output.value, **node.consts)
        for a, ga in zip(node.inputs, grads):
            if isinstance(a, Var) and a.tape is tape and ga is not None:
                if not np.all(np.isfinite(ga)):
                    raise FloatingPointError(
                        f"non-finite adjoint produced by node #{i} ({node.prim.name})")
                _accumulate(adj, a, ga)
    return adj


def backward(tape: Tape, seed_adjoint=None, output: Var | None = None) -> dict:
    """Adjoints of the tape output with respect to every named leaf."""
    output = tape.output if output is None else output
    if not isinstance(output, Var) or output.tape is not tape:
        raise ValueError("output was not recorded on this tape")
    adj = _run_backward(tape, output, seed_adjoint)
    grads = {}
    for name, leaf in tape.leaves.items():
        g = adj.get(id(leaf))
        if g is None:
            g = np.zeros_like(leaf.value)
        elif not np.iscomplexobj(leaf.value):
            g = np.real(g)
        grads[name] = np.reshape(g, np.shape(leaf.value))
    return grads


# --------------------------------------------------------------------------
# primitives


def _unbroadcast(g, shape):
    g = np.asarray(g)
    shape = tuple(shape)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


@register
class _Add(Primitive):
    name = "add"

    def forward(self, a, b):
        return a + b

    def vjp(self, g, xs, y):
        a, b = xs
        return _unbroadcast(g, np.shape(a)), _unbroadcast(g, np.shape(b))


@register
class _Sub(Primitive):
    name = "sub"

    def forward(self, a, b):
        return a - b

    def vjp(self, g, xs, y):
        a, b = xs
        return _unbroadcast(g, np.shape(a)), _unbroadcast(-g, np.shape(b))


@register
class _Mul(Primitive):
    name = "mul"

    def forward(self, a, b):
        return a * b

    def vjp(self, g, xs, y):
        a, b = xs
        return (_unbroadcast(g * np.conj(b), np.shape(a)),
                _unbroadcast(g * np.conj(a), np.shape(b)))


@register
class _Power(Primitive):
    """Real power ``x**p`` for a constant exponent."""

    name = "power"

    def forward(self, x, p):
        return np.power(x, p)

    def vjp(self, g, xs, y, p):
        (x,) = xs
        return (g * p * np.power(x, p - 1),)


@register
class _Sum(Primitive):
    name = "sum"

    def forward(self, x, axis=None):
        return np.sum(x, axis=axis)

    def vjp(self, g, xs, y, axis=None):
        (x,) = xs
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, np.shape(x)).copy(),)


@register
class _Mean(Primitive):
    name = "mean"

    def forward(self, x, axis=None):
        return np.mean(x, axis=axis)

    def vjp(self, g, xs, y, axis=None):
        (x,) = xs
        n = np.size(x) if axis is None else np.shape(x)[axis]
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, np.shape(x)).copy(),)


@register
class _Abs2(Primitive):
    name = "abs2"

    def forward(self, x):
        return x.real**2 + x.imag**2 if np.iscomplexobj(x) else x * x

    def vjp(self, g, xs, y):
        (x,) = xs
        return (2.0 * g * x,)


@register
class _Reshape(Primitive):
    name = "reshape"

    def forward(self, x, shape):
        return np.reshape(x, shape)

    def vjp(self, g, xs, y, shape):
        return (np.reshape(g, np.shape(xs[0])),)


@register
class _GetItem(Primitive):
    name = "getitem"

    def forward(self, x, index):
        return x[index]

    def vjp(self, g, xs, y, index):
        (x,) = xs
        out = np.zeros(np.shape(x), dtype=np.result_type(x, g))
        np.add.at(out, index, g)
        return (out,)


@register
class _Take(Primitive):
    """Gather rows ``x[idx]`` along the first axis."""

    name = "take"

    def forward(self, x, idx):
        return x[idx]

    def vjp(self, g, xs, y, idx):
        (x,) = xs
        out = np.zeros(np.shape(x), dtype=np.result_type(x, g))
        np.add.at(out, idx, g)
        return (out,)


@register
class _Interleave(Primitive):
    """Complex ``(..., n)`` to real ``(..., 2n)`` laid out as Re, Im, Re, Im, ..."""

    name = "interleave"

    def forward(self, x):
        out = np.empty(x.shape[:-1] + (2 * x.shape[-1],))
        out[..., 0::2] = x.real
        out[..., 1::2] = x.imag
        return out

    def vjp(self, g, xs, y):
        return (g[..., 0::2] + 1j * g[..., 1::2],)


@register
class _FFT(Primitive):
    name = "fft"

    def forward(self, x):
        return _fft.fft(x)

    def vjp(self, g, xs, y):
        # adjoint of the unnormalized DFT is n * IDFT
        return (_fft.ifft(g) * g.shape[-1],)


@register
class _IFFT(Primitive):
    name = "ifft"

    def forward(self, x):
        return _fft.ifft(x)

    def vjp(self, g, xs, y):
        return (_fft.fft(g) / g.shape[-1],)


@register
class _MatMul(Primitive):
    name = "matmul"

    def forward(self, a, b):
        return a @ b

    def vjp(self, g, xs, y):
        a, b = xs
        return g @ np.conj(b).T, np.conj(a).T @ g


SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


@register
class _Selu(Primitive):
    name = "selu"

    def forward(self, x):
        return SELU_SCALE * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))

    def vjp(self, g, xs, y):
        (x,) = xs
        d = SELU_SCALE * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))
        return (g * d,)


@register
class _Softmax(Primitive):
    name = "softmax"

    def forward(self, x):
        z = x - np.max(x, axis=-1, keepdims=True)
        e = np.exp(z)
        return e / np.sum(e, axis=-1, keepdims=True)

    def vjp(self, g, xs, y):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)


PROB_FLOOR = 1e-12


@register
class _CrossEntropy(Primitive):
    """Mean of ``-log p[label]`` with probabilities floored at 1e-12."""

    name = "cross_entropy"

    def forward(self, p, labels):
        rows = np.arange(p.shape[0])
        return np.mean(-np.log(np.maximum(p[rows, labels], PROB_FLOOR)))

    def vjp(self, g, xs, y, labels):
        (p,) = xs
        rows = np.arange(p.shape[0])
        pl = p[rows, labels]
        out = np.zeros_like(p)
        out[rows, labels] = np.where(pl >= PROB_FLOOR, -1.0 / np.maximum(pl, PROB_FLOOR), 0.0)
        return (g * out / p.shape[0],)


# thin wrappers -------------------------------------------------------------


def add(a, b):
    return apply("add", a, b)


def mul(a, b):
    return apply("mul", a, b)


def power(x, p):
    return apply("power", x, p=p)


def sqrt(x):
    return apply("power", x, p=0.5)


def vsum(x, axis=None):
    return apply("sum", x, axis=axis)


def mean(x, axis=None):
    return apply("mean", x, axis=axis)


def abs2(x):
    return apply("abs2", x)


def reshape(x, shape):
    return apply("reshape", x, shape=tuple(shape))


def take(x, idx):
    return apply("take", x, idx=np.asarray(idx))


def interleave(x):
    return apply("interleave", x)


def fft(x):
    return apply("fft", x)


def ifft(x):
    return apply("ifft", x)


def matmul(a, b):
    return apply("matmul", a, b)


def selu(x):
    return apply("selu", x)


def softmax(x):
    return apply("softmax", x)


def cross_entropy(p, labels):
    return apply("cross_entropy", p, labels=np.asarray(labels))


# gradient checking ----------------------------------------------------------


@dataclass
class GradcheckReport:
    max_rel_error: float
    rel_errors: list
    analytic: list
    numeric: list

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def gradcheck(program: Callable, params: dict, n_probes: int = 10, *, eps: float = 1e-6,
              rng=None, active=None) -> GradcheckReport:
    """Compare taped gradients with central differences along random directions.

    ``active`` restricts the probed parameters (all by default). Directions
    are drawn with unit RMS per parameter array.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    names = list(params) if active is None else list(active)

    def f(p):
        with no_record():
            return float(np.real(value_of(program({k: Var(np.asarray(v)) for k, v in p.items()}))))

    _, tape = record_forward(program, params)
    grads = backward(tape)
    rel, ana, num = [], [], []
    for _ in range(n_probes):
        v = {}
        for k in names:
            x = np.asarray(params[k])
            d = rng.standard_normal(x.shape)
            if np.iscomplexobj(x):
                d = d + 1j * rng.standard_normal(x.shape)
            v[k] = d / np.sqrt(np.mean(np.abs(d) ** 2))
        a = sum(float(np.sum(np.real(np.conj(grads[k]) * v[k]))) for k in names)
        plus = dict(params)
        minus = dict(params)
        for k in names:
            plus[k] = np.asarray(params[k]) + eps * v[k]
            minus[k] = np.asarray(params[k]) - eps * v[k]
        n = (f(plus) - f(minus)) / (2 * eps)
        rel.append(abs(a - n) / max(abs(a), abs(n), 1e-300))
        ana.append(a)
        num.append(n)
    return GradcheckReport(max(rel), rel, ana, num)
