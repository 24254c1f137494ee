"""Small reverse-mode autodiff engine over dense float64 arrays of rank <= 2.

Every operation returns a :class:`Value`. When at least one input requires a
gradient the output keeps references to its inputs plus a local backward rule,
so calling :func:`backward` on a scalar root walks the graph in reverse
topological order and accumulates ``d root / d node`` into ``node.grad``.

There is no broadcasting: elementwise operators insist on identical shapes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

COSINE_EPS = 1e-12


class ShapeError(ValueError):
    """Raised when operand shapes are invalid for an operator."""

    def __init__(self, op: str, *shapes: tuple, detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class DomainError(ValueError):
    """Raised when an operator is evaluated outside its domain."""


class NumericalError(RuntimeError):
    """Raised when an objective becomes non-finite."""


class Value:
    """A node in the differentiation graph.

    ``grad`` reads as zeros until a backward pass reaches the node.
    """

    __slots__ = ("data", "_grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (),
                 backward_fn: Callable | None = None, op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeError(op, arr.shape, detail="rank must be <= 2")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def grad(self):
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._grad = value

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Value(shape={self.shape}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        if _as_value(other).data.ndim == 1:
            return matvec(self, other)
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def _as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def constant(x) -> Value:
    return Value(x, requires_grad=False)


def parameter(x) -> Value:
    return Value(np.array(x, dtype=np.float64), requires_grad=True)


def _make(data: np.ndarray, inputs: tuple[Value, ...], backward_fn, op: str) -> Value:
    # internal fast path: data is already a float64 array of rank <= 2
    v = object.__new__(Value)
    v.data = data
    v._grad = None
    v.op = op
    for x in inputs:
        if x.requires_grad:
            v.requires_grad = True
            v.parents = inputs
            v.backward_fn = backward_fn
            return v
    v.requires_grad = False
    v.parents = ()
    v.backward_fn = None
    return v


def _same_shape(op: str, a: Value, b: Value) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(op, a.data.shape, b.data.shape)


# elementwise -----------------------------------------------------------------

def add(a, b) -> Value:
    a, b = _as_value(a), _as_value(b)
    _same_shape("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Value:
    a, b = _as_value(a), _as_value(b)
    _same_shape("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Value:
    a, b = _as_value(a), _as_value(b)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    ra, rb = a.requires_grad, b.requires_grad
    return _make(ad * bd, (a, b), lambda g: (g * bd if ra else None, g * ad if rb else None), "mul")


def scale(a, s: float) -> Value:
    """Multiply by a fixed python scalar."""
    a = _as_value(a)
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,), "scale")


def neg(a) -> Value:
    a = _as_value(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def sigmoid(a) -> Value:
    a = _as_value(a)
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Value:
    a = _as_value(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Value:
    a = _as_value(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def abs_(a) -> Value:
    a = _as_value(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def log(a) -> Value:
    a = _as_value(a)
    if np.any(a.data <= 0):
        raise DomainError(f"log: non-positive input (min={a.data.min()!r})")
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,), "log")


def exp(a) -> Value:
    a = _as_value(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


# linear algebra ----------------------------------------------------------------

def matmul(a, b) -> Value:
    a, b = _as_value(a), _as_value(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    ad, bd = a.data, b.data
    ra, rb = a.requires_grad, b.requires_grad
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T if ra else None, ad.T @ g if rb else None), "matmul")


def matvec(w, x) -> Value:
    w, x = _as_value(w), _as_value(x)
    if w.data.ndim != 2 or x.data.ndim != 1 or w.data.shape[1] != x.data.shape[0]:
        raise ShapeError("matvec", w.data.shape, x.data.shape)
    wd, xd = w.data, x.data
    rw, rx = w.requires_grad, x.requires_grad
    return _make(wd @ xd, (w, x),
                 lambda g: (np.outer(g, xd) if rw else None, g @ wd if rx else None), "matvec")


def reshape(a, shape: tuple) -> Value:
    a = _as_value(a)
    src = a.data.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", src, tuple(shape)) from None
    if out.ndim > 2:
        raise ShapeError("reshape", src, tuple(shape), detail="rank must be <= 2")
    return _make(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a) -> Value:
    a = _as_value(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.data.shape, detail="expects rank-2 input")
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def normalize_rows(a) -> Value:
    """Divide each row by its L2 norm plus ``COSINE_EPS`` (a vector counts as one row)."""
    a = _as_value(a)
    if a.data.ndim == 0:
        raise ShapeError("normalize_rows", a.data.shape, detail="needs rank >= 1")
    x = a.data
    r = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    n = r + COSINE_EPS
    u = x / n
    safe_r = np.where(r > 0, r, 1.0)

    def bw(g):
        # d(x/n) = g/n - x * <g, x> / (n^2 r)
        return (g / n - x * (g * x).sum(axis=-1, keepdims=True) / (n * n * safe_r),)

    return _make(u, (a,), bw, "normalize_rows")


def concat(values: Sequence) -> Value:
    """Concatenate rank-1 values end to end."""
    vals = tuple(_as_value(v) for v in values)
    if not vals or any(v.data.ndim != 1 for v in vals):
        raise ShapeError("concat", *(v.data.shape for v in vals), detail="expects rank-1 inputs")
    sizes = [v.data.shape[0] for v in vals]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([v.data for v in vals]), vals,
                 lambda g: tuple(np.split(g, cuts)), "concat")


# reductions ----------------------------------------------------------------

def sum_(a) -> Value:
    a = _as_value(a)
    shape = a.data.shape
    return _make(np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")


def mean(a) -> Value:
    a = _as_value(a)
    shape, n = a.data.shape, a.data.size
    return _make(np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),), "mean")


def l1_norm(a) -> Value:
    a = _as_value(a)
    sign = np.sign(a.data)
    return _make(np.array(np.abs(a.data).sum()), (a,), lambda g: (float(g) * sign,), "l1_norm")


def _softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a) -> Value:
    """Softmax over the last axis (row-wise for matrices)."""
    a = _as_value(a)
    if a.data.ndim == 0:
        raise ShapeError("softmax", a.data.shape, detail="needs rank >= 1")
    p = _softmax_np(a.data)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (a,), bw, "softmax")


def cosine_similarity(a, b) -> Value:
    a, b = _as_value(a), _as_value(b)
    if a.data.ndim != 1:
        raise ShapeError("cosine_similarity", a.data.shape, b.data.shape, detail="expects rank-1 inputs")
    _same_shape("cosine_similarity", a, b)
    ad, bd = a.data, b.data
    na = np.sqrt(ad @ ad) + COSINE_EPS
    nb = np.sqrt(bd @ bd) + COSINE_EPS
    dot = ad @ bd
    c = dot / (na * nb)

    def bw(g):
        g = float(g)
        # d/da of dot/(|a|+e)(|b|+e); the norm eps is treated as a constant
        ra = np.sqrt(ad @ ad)
        rb = np.sqrt(bd @ bd)
        ga = bd / (na * nb) - (dot / (na * na * nb)) * (ad / ra if ra > 0 else 0.0)
        gb = ad / (na * nb) - (dot / (na * nb * nb)) * (bd / rb if rb > 0 else 0.0)
        return g * ga, g * gb

    return _make(np.array(c), (a, b), bw, "cosine_similarity")


def cross_entropy(logits, label: int) -> Value:
    """Negative log-likelihood of ``label`` under softmax(logits), via log-sum-exp."""
    z = _as_value(logits)
    if z.data.ndim != 1:
        raise ShapeError("cross_entropy", z.data.shape, detail="expects rank-1 logits")
    n = z.data.shape[0]
    if not 0 <= label < n:
        raise ValueError(f"cross_entropy: label {label} out of range for {n} classes")
    zd = z.data
    m = zd.max()
    lse = m + np.log(np.exp(zd - m).sum())
    p = np.exp(zd - lse)

    def bw(g):
        grad = p.copy()
        grad[label] -= 1.0
        return (float(g) * grad,)

    return _make(np.array(lse - zd[label]), (z,), bw, "cross_entropy")


OPS: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "matmul": matmul,
    "matvec": matvec,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "abs": abs_,
    "neg": neg,
    "log": log,
    "exp": exp,
    "softmax": softmax,
    "concat": lambda *xs: concat(xs),
    "mean": mean,
    "sum": sum_,
    "l1_norm": l1_norm,
    "cosine_similarity": cosine_similarity,
    "cross_entropy": cross_entropy,
}


def op_forward(kind: str, inputs: Sequence):
    """Apply the operator named ``kind``; ``cross_entropy`` takes (logits, label)."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown operator {kind!r}") from None
    return fn(*inputs)


# backward ------------------------------------------------------------------

def topological_order(root: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Value) -> None:
    """Accumulate d root / d node into every grad-requiring ancestor."""
    if root.data.size != 1:
        raise ShapeError("backward", root.data.shape, detail="root must be scalar")
    if not root.requires_grad:
        return
    order = topological_order(root)
    adjoint: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        node._grad = g if node._grad is None else node._grad + g
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + pg
            else:
                adjoint[key] = pg


def zero_grad(params: Sequence[Value]) -> None:
    for p in params:
        p.zero_grad()


def grad_check(f: Callable[[Value], Value], x: Value, eps: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |central difference|)."""
    if not x.requires_grad:
        x.requires_grad = True
    x.grad = np.zeros_like(x.data)
    backward(f(x))
    analytic = x.grad.copy()
    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x).item()
        flat[i] = orig - eps
        lo = f(x).item()
        flat[i] = orig
        num_flat[i] = (hi - lo) / (2 * eps)
    x.grad = np.zeros_like(x.data)
    if numeric.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


def param_grad_check(param: Value, loss_fn: Callable[[], Value], eps: float = 1e-5) -> float:
    """Like :func:`grad_check`, but perturbs ``param`` in place and re-runs ``loss_fn()``.

    Suits parameters buried inside a model, where wrapping them as the
    argument of ``f`` is awkward. The parameter's grad is reset afterwards.
    """
    param.zero_grad()
    backward(loss_fn())
    analytic = param.grad.copy().reshape(-1)
    param.zero_grad()
    flat = param.data.reshape(-1)
    numeric = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = loss_fn().item()
        flat[i] = orig - eps
        lo = loss_fn().item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2 * eps)
    if numeric.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


# optimisation ----------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: Sequence[Value], state: AdamState) -> None:
    """One bias-corrected Adam update in place. Gradients are left for the caller to zero."""
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(state.m) != len(params):
        raise ShapeError("adam_step", (len(state.m),), (len(params),), detail="parameter count drift")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p, m, v in zip(params, state.m, state.v):
        if m.shape != p.data.shape:
            raise ShapeError("adam_step", m.shape, p.data.shape, detail="moment/parameter shape drift")
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def step_decay(base_lr: float, epoch: int, every: int = 50, factor: float = 0.5) -> float:
    """Learning rate for a zero-based ``epoch`` under a step schedule."""
    return base_lr * factor ** (epoch // every)
