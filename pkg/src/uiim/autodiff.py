"""Reverse-mode automatic differentiation over dense float64 arrays.

The engine is deliberately small: a :class:`Tensor` wraps a numpy float64
array of rank <= 3 together with an optional gradient and the backward rule
of the op that produced it.  A fresh graph (tape) is built on every forward
pass; parameters are persistent leaves that accumulate gradients until
explicitly cleared.  All reductions use numpy's fixed evaluation order, so
identical inputs always produce bitwise-identical outputs and gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NORM_EPS = 1e-12


class ShapeMismatch(ValueError):
    """Operand shapes do not conform to the op being applied."""


class DomainError(ValueError):
    """An input lies outside an op's documented domain (e.g. log of x <= 0)."""


class Tensor:
    """A node in the computation graph.

    ``data`` is a float64 ndarray of rank <= 3.  ``grad`` starts as ``None``
    and is allocated lazily during :func:`backward`.  Nodes produced by ops
    carry their parents and a backward closure; leaves carry neither.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_rule", "_backward_done")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ShapeMismatch(f"rank-{arr.ndim} tensor unsupported (max rank 3), shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_rule = None
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def is_leaf(self) -> bool:
        return self._backward_rule is None

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars are treated as constants.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _result(data, parents, backward_rule) -> Tensor:
    """Wrap an op result, attaching the tape entry only when gradients flow."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_rule = backward_rule
    return out


def _as_constant(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b) -> Tensor:
    b = _as_constant(b)
    if b.ndim != 0 and a.ndim != 0:
        _check_same_shape("add", a, b)

    def backward(g):
        a.accumulate_grad(np.broadcast_to(g, a.shape) if a.ndim == 0 else g)
        if b.ndim == 0:
            b.accumulate_grad(np.sum(g))
        else:
            b.accumulate_grad(g)

    return _result(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b) -> Tensor:
    b = _as_constant(b)
    if b.ndim != 0 and a.ndim != 0:
        _check_same_shape("sub", a, b)

    def backward(g):
        a.accumulate_grad(g)
        if b.ndim == 0:
            b.accumulate_grad(-np.sum(g))
        else:
            b.accumulate_grad(-g)

    return _result(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; ``b`` may be a same-shape tensor or a scalar."""
    b = _as_constant(b)
    if b.ndim != 0 and a.ndim != 0:
        _check_same_shape("mul", a, b)

    def backward(g):
        ga = g * b.data
        a.accumulate_grad(np.sum(ga) if a.ndim == 0 and np.ndim(ga) > 0 else ga)
        gb = g * a.data
        b.accumulate_grad(np.sum(gb) if b.ndim == 0 and np.ndim(gb) > 0 else gb)

    return _result(a.data * b.data, (a, b), backward)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    return mul(a, float(c))


def div(a: Tensor, b) -> Tensor:
    """Elementwise quotient; caller guarantees the denominator is nonzero."""
    b = _as_constant(b)
    if b.ndim != 0 and a.ndim != 0:
        _check_same_shape("div", a, b)

    def backward(g):
        ga = g / b.data
        a.accumulate_grad(np.sum(ga) if a.ndim == 0 and np.ndim(ga) > 0 else ga)
        gb = -g * a.data / (b.data * b.data)
        b.accumulate_grad(np.sum(gb) if b.ndim == 0 and np.ndim(gb) > 0 else gb)

    return _result(a.data / b.data, (a, b), backward)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        a.accumulate_grad(g * (1.0 - y * y))

    return _result(y, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)

    def backward(g):
        a.accumulate_grad(g * y * (1.0 - y))

    return _result(y, (a,), backward)


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)

    def backward(g):
        a.accumulate_grad(g * (a.data > 0.0))

    return _result(y, (a,), backward)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def backward(g):
        a.accumulate_grad(g * y)

    return _result(y, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError(f"log: non-positive input (min {a.data.min()})")

    def backward(g):
        a.accumulate_grad(g / a.data)

    return _result(np.log(a.data), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError(f"sqrt: non-positive input (min {a.data.min()})")
    y = np.sqrt(a.data)

    def backward(g):
        a.accumulate_grad(g / (2.0 * y))

    return _result(y, (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim > 2 or b.ndim > 2:
        raise ShapeMismatch(f"matmul: ranks {a.ndim} and {b.ndim}; use matmul3/bmm for rank-3")
    inner_a = a.shape[-1]
    inner_b = b.shape[0]
    if inner_a != inner_b:
        raise ShapeMismatch(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    y = np.matmul(a.data, b.data)

    def backward(g):
        if a.ndim == 2 and b.ndim == 2:
            a.accumulate_grad(g @ b.data.T)
            b.accumulate_grad(a.data.T @ g)
        elif a.ndim == 2 and b.ndim == 1:
            a.accumulate_grad(np.outer(g, b.data))
            b.accumulate_grad(a.data.T @ g)
        elif a.ndim == 1 and b.ndim == 2:
            a.accumulate_grad(b.data @ g)
            b.accumulate_grad(np.outer(a.data, g))
        else:  # 1-D dot via matmul
            a.accumulate_grad(g * b.data)
            b.accumulate_grad(g * a.data)

    return _result(y, (a, b), backward)


def matmul3(a: Tensor, b: Tensor) -> Tensor:
    """Batched (B, m, k) @ (k, n) -> (B, m, n) with a shared rank-2 rhs."""
    if a.ndim != 3 or b.ndim != 2 or a.shape[2] != b.shape[0]:
        raise ShapeMismatch(f"matmul3: {a.shape} @ {b.shape}")

    def backward(g):
        a.accumulate_grad(g @ b.data.T)
        b.accumulate_grad(np.tensordot(a.data, g, axes=([0, 1], [0, 1])))

    return _result(np.matmul(a.data, b.data), (a, b), backward)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched (B, m, k) @ (B, k, n) -> (B, m, n)."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeMismatch(f"bmm: {a.shape} @ {b.shape}")

    def backward(g):
        a.accumulate_grad(np.matmul(g, b.data.swapaxes(1, 2)))
        b.accumulate_grad(np.matmul(a.data.swapaxes(1, 2), g))

    return _result(np.matmul(a.data, b.data), (a, b), backward)


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 1 or b.ndim != 1:
        raise ShapeMismatch(f"dot: expects two vectors, got {a.shape} and {b.shape}")
    _check_same_shape("dot", a, b)

    def backward(g):
        a.accumulate_grad(g * b.data)
        b.accumulate_grad(g * a.data)

    return _result(np.dot(a.data, b.data), (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeMismatch(f"transpose: expects a matrix, got shape {a.shape}")

    def backward(g):
        a.accumulate_grad(g.T)

    return _result(a.data.T, (a,), backward)


def transpose_last2(a: Tensor) -> Tensor:
    if a.ndim != 3:
        raise ShapeMismatch(f"transpose_last2: expects rank 3, got shape {a.shape}")

    def backward(g):
        a.accumulate_grad(g.swapaxes(1, 2))

    return _result(a.data.swapaxes(1, 2), (a,), backward)


def add_rowvec(a: Tensor, v: Tensor) -> Tensor:
    """Matrix plus a vector broadcast across rows."""
    if a.ndim != 2 or v.ndim != 1 or a.shape[1] != v.shape[0]:
        raise ShapeMismatch(f"add_rowvec: {a.shape} + {v.shape}")

    def backward(g):
        a.accumulate_grad(g)
        v.accumulate_grad(g.sum(axis=0))

    return _result(a.data + v.data, (a, v), backward)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        a.accumulate_grad(g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), backward)


def flatten(a: Tensor) -> Tensor:
    return reshape(a, (a.size,))


def slice_axis0(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.shape[0]):
        raise ShapeMismatch(f"slice: [{start}:{stop}] out of range for axis of extent {a.shape[0]}")

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[start:stop] = g
        a.accumulate_grad(ga)

    return _result(a.data[start:stop].copy(), (a,), backward)


def concat_last_axis(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeMismatch("concat_last_axis: no inputs")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeMismatch(f"concat_last_axis: leading shapes differ, {[p.shape for p in parts]}")
    sizes = [p.shape[-1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p.accumulate_grad(g[..., lo:hi])

    return _result(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), backward)


def concat_rows(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeMismatch("concat_rows: no inputs")
    trail = parts[0].shape[1:]
    for p in parts[1:]:
        if p.shape[1:] != trail:
            raise ShapeMismatch(f"concat_rows: trailing shapes differ, {[p.shape for p in parts]}")
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p.accumulate_grad(g[lo:hi])

    return _result(np.concatenate([p.data for p in parts], axis=0), tuple(parts), backward)


def stack_rows(vectors) -> Tensor:
    """Stack k same-length vectors into a (k, d) matrix."""
    vectors = list(vectors)
    if not vectors or any(v.ndim != 1 for v in vectors):
        raise ShapeMismatch("stack_rows: expects a nonempty list of vectors")
    d = vectors[0].shape[0]
    if any(v.shape[0] != d for v in vectors):
        raise ShapeMismatch(f"stack_rows: lengths differ, {[v.shape for v in vectors]}")

    def backward(g):
        for i, v in enumerate(vectors):
            v.accumulate_grad(g[i])

    return _result(np.stack([v.data for v in vectors], axis=0), tuple(vectors), backward)


def stack_axis1(mats) -> Tensor:
    """Stack k same-shape (m, d) matrices into an (m, k, d) tensor."""
    mats = list(mats)
    if not mats or any(m.ndim != 2 for m in mats):
        raise ShapeMismatch("stack_axis1: expects a nonempty list of matrices")
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise ShapeMismatch(f"stack_axis1: shapes differ, {[m.shape for m in mats]}")

    def backward(g):
        for i, m in enumerate(mats):
            m.accumulate_grad(g[:, i, :])

    return _result(np.stack([m.data for m in mats], axis=1), tuple(mats), backward)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Row lookup by integer index; gradients scatter-add into the table."""
    ids = np.asarray(ids, dtype=np.intp)
    if table.ndim != 2 or ids.ndim != 1:
        raise ShapeMismatch(f"gather_rows: table {table.shape}, ids rank {ids.ndim}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatch(f"gather_rows: id out of range for table of {table.shape[0]} rows")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        table.accumulate_grad(gt)

    return _result(table.data[ids], (table,), backward)


def take_per_row(a: Tensor, cols) -> Tensor:
    """Pick one entry per row of a matrix: out[i] = a[i, cols[i]]."""
    cols = np.asarray(cols, dtype=np.intp)
    if a.ndim != 2 or cols.shape != (a.shape[0],):
        raise ShapeMismatch(f"take_per_row: matrix {a.shape}, cols shape {cols.shape}")
    rows = np.arange(a.shape[0])

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[rows, cols] = g
        a.accumulate_grad(ga)

    return _result(a.data[rows, cols].copy(), (a,), backward)


# ---------------------------------------------------------------------------
# reductions and norms


def tensor_sum(a: Tensor) -> Tensor:
    def backward(g):
        a.accumulate_grad(np.full(a.shape, float(g)))

    return _result(np.sum(a.data), (a,), backward)


def mean(a: Tensor) -> Tensor:
    n = a.size

    def backward(g):
        a.accumulate_grad(np.full(a.shape, float(g) / n))

    return _result(np.mean(a.data), (a,), backward)


def row_sum(a: Tensor) -> Tensor:
    """Sum over the last axis."""
    if a.ndim < 1:
        raise ShapeMismatch("row_sum: expects rank >= 1")

    def backward(g):
        a.accumulate_grad(np.repeat(np.expand_dims(g, -1), a.shape[-1], axis=-1))

    return _result(np.sum(a.data, axis=-1), (a,), backward)


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    x = a.data
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=-1, keepdims=True)

    def backward(g):
        gy = y * (g - np.sum(g * y, axis=-1, keepdims=True))
        a.accumulate_grad(gy)

    return _result(y, (a,), backward)


def l2_norm(a: Tensor, eps: float = NORM_EPS) -> Tensor:
    """sqrt(sum(a^2) + eps) of a vector; the eps keeps zero vectors safe."""
    if a.ndim != 1:
        raise ShapeMismatch(f"l2_norm: expects a vector, got shape {a.shape}")
    n = np.sqrt(np.sum(a.data * a.data) + eps)

    def backward(g):
        a.accumulate_grad(g * a.data / n)

    return _result(n, (a,), backward)


def rows_l2norm(a: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Per-row sqrt(sum(x^2) + eps) of a matrix, result shape (rows,)."""
    if a.ndim != 2:
        raise ShapeMismatch(f"rows_l2norm: expects a matrix, got shape {a.shape}")
    n = np.sqrt(np.sum(a.data * a.data, axis=1) + eps)

    def backward(g):
        a.accumulate_grad((g / n)[:, None] * a.data)

    return _result(n, (a,), backward)


# ---------------------------------------------------------------------------
# op registry and generic dispatcher

OPS = {
    "matmul": matmul,
    "matmul3": matmul3,
    "bmm": bmm,
    "add": add,
    "sub": sub,
    "elementwise_mul": mul,
    "scalar_mul": scalar_mul,
    "div": div,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "softmax_rows": softmax_rows,
    "concat_last_axis": concat_last_axis,
    "concat_rows": concat_rows,
    "stack_rows": stack_rows,
    "stack_axis1": stack_axis1,
    "slice": slice_axis0,
    "sum": tensor_sum,
    "mean": mean,
    "row_sum": row_sum,
    "transpose": transpose,
    "transpose_last2": transpose_last2,
    "add_rowvec": add_rowvec,
    "reshape": reshape,
    "flatten": flatten,
    "l2_norm": l2_norm,
    "rows_l2norm": rows_l2norm,
    "dot": dot,
    "gather_rows": gather_rows,
    "take_per_row": take_per_row,
}


def tensor_op(op_kind: str, *args):
    """Apply a registered op by name; raises ValueError for unknown kinds."""
    try:
        fn = OPS[op_kind]
    except KeyError:
        raise ValueError(f"unknown op kind {op_kind!r}; known: {sorted(OPS)}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: Tensor):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


def backward(root: Tensor) -> dict[int, np.ndarray]:
    """Run reverse-mode accumulation from a scalar root.

    Returns a map from ``id(leaf)`` to the gradient array of every
    requires-grad leaf reached.  Leaf ``grad`` fields accumulate across calls
    on fresh graphs; calling backward twice on the same graph is an error.
    """
    if root.shape not in ((), (1,)):
        raise ShapeMismatch(f"backward: root must be scalar, got shape {root.shape}")
    if root._backward_done:
        raise RuntimeError("backward already ran on this graph; rebuild the forward pass")
    if not root.requires_grad:
        root._backward_done = True
        return {}

    order = _toposort(root)
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward_rule is not None and node.grad is not None:
            node._backward_rule(node.grad)
    root._backward_done = True

    leaf_grads: dict[int, np.ndarray] = {}
    for node in order:
        if node.is_leaf() and node.requires_grad and node.grad is not None:
            leaf_grads[id(node)] = node.grad
    return leaf_grads


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    per_param: dict[str, float] = field(default_factory=dict)


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(f, params, h: float = 1e-5, tol: float = 1e-4,
               max_components: int | None = None, rng=None,
               tiny_floor: float | None = None) -> GradCheckReport:
    """Compare analytic gradients of ``f(params)`` against central differences.

    ``f`` must be deterministic and return a scalar Tensor; ``params`` is a
    list of (name, leaf Tensor) pairs or bare leaf Tensors.  When
    ``max_components`` is given, at most that many coordinates per parameter
    are checked, chosen by ``rng``; otherwise every coordinate is.  Failures
    are reported, never raised.

    ``tiny_floor`` handles components below the resolution of the oracle: a
    central difference carries ~eps*|f|/(2h) of rounding noise, so when both
    the analytic and the numeric derivative sit under the floor the ratio is
    pure noise and the component is skipped.  A component where only one side
    is tiny still fails loudly.
    """
    named = [(p if isinstance(p, tuple) else (f"param{i}", p)) for i, p in enumerate(params)]
    for _, p in named:
        p.zero_grad()
    out = f()
    backward(out)
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in named}
    for _, p in named:
        p.zero_grad()

    max_err = 0.0
    per_param: dict[str, float] = {}
    for name, p in named:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_components is not None and n > max_components:
            if rng is None:
                rng = np.random.default_rng(0)
            idxs = rng.choice(n, size=max_components, replace=False)
        else:
            idxs = np.arange(n)
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a_i = float(a_flat[i])
            if tiny_floor is not None and abs(a_i) < tiny_floor and abs(numeric) < tiny_floor:
                continue
            worst = max(worst, _rel_err(a_i, numeric))
        per_param[name] = worst
        max_err = max(max_err, worst)
    return GradCheckReport(max_rel_err=max_err, passed=max_err < tol, per_param=per_param)
