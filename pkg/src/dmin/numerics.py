"""Dense float64 tensors plus a reverse-mode differentiation tape.

Everything else in the package is written against this module: vectors and
matrices are immutable :class:`Tensor` values, and training records forward
operations on a :class:`Tape` so that :func:`backward` can accumulate exact
adjoints for every leaf parameter.

Conventions:

- scalars are rank-0, vectors rank-1, matrices rank-2; no broadcasting other
  than scalar-times-tensor in :func:`mul`,
- every public operation validates that its result is finite and raises
  :class:`NumericError` otherwise (silent NaN/Inf propagation is a bug),
- a result is recorded on a tape iff at least one input is recorded; mixing
  inputs from two different tapes is an error,
- norm and variance denominators are guarded by ``EPS = 1e-12``: squash maps
  (near-)zero vectors to zero, cosine of a (near-)zero vector is 0.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

EPS = 1e-12

__all__ = [
    "EPS",
    "NumericError",
    "Tensor",
    "Tape",
    "constant",
    "add",
    "sub",
    "mul",
    "scale",
    "matvec",
    "vecmat",
    "linear_rows",
    "tanh",
    "exp",
    "squash",
    "squash_rows",
    "softmax",
    "softmax_rows",
    "logsumexp",
    "dot",
    "index",
    "col",
    "concat",
    "stack_rows",
    "stack_cols",
    "center",
    "center_rows",
    "cosine",
    "cosine_rows",
    "pccs",
    "pccs_rows",
    "backward",
]


class NumericError(Exception):
    """A numeric invariant was violated (non-finite value, divergence)."""


_F64 = np.dtype(np.float64)


def _as_f64(array) -> np.ndarray:
    # Fast path: freshly computed op results are already float64 ndarrays.
    if type(array) is np.ndarray and array.dtype == _F64 and (
            array.ndim == 0 or array.flags["C_CONTIGUOUS"]):
        return array
    # np.ascontiguousarray would promote rank-0 to rank-1; keep scalars rank-0.
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


class Tensor:
    """Immutable dense array of float64, optionally recorded on a tape."""

    __slots__ = ("array", "tape", "node_id")

    def __init__(self, array, tape: "Tape | None" = None, node_id: int | None = None):
        self.array = _as_f64(array)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def ndim(self) -> int:
        return self.array.ndim

    def item(self) -> float:
        return float(self.array)

    def __repr__(self) -> str:
        tag = f", node_id={self.node_id}" if self.node_id is not None else ""
        return f"Tensor(shape={self.shape}{tag})"


class _Node:
    __slots__ = ("op", "parent_ids", "value", "vjp")

    def __init__(self, op, parent_ids, value, vjp):
        self.op = op
        self.parent_ids = parent_ids
        self.value = value
        self.vjp = vjp


class Tape:
    """Append-only record of forward operations.

    Node ids are topologically ordered by construction: an operation can only
    consume tensors that already exist, so every parent id is smaller than the
    id of the node itself.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def leaf(self, array) -> Tensor:
        """Record ``array`` as a differentiable leaf and return its Tensor."""
        value = _as_f64(array)
        _ensure_finite("leaf", value)
        self.nodes.append(_Node("leaf", (), value, None))
        return Tensor(value, self, len(self.nodes) - 1)

    def _record(self, op, value, parent_ids, vjp) -> int:
        self.nodes.append(_Node(op, parent_ids, value, vjp))
        return len(self.nodes) - 1


def constant(array) -> Tensor:
    """Wrap an array as an un-recorded Tensor (no gradient flows into it)."""
    value = _as_f64(array)
    _ensure_finite("constant", value)
    return Tensor(value)


def _ensure_finite(op: str, value: np.ndarray) -> None:
    # Summing is far cheaper than isfinite().all() and any nan/inf entry
    # makes the sum non-finite.  A finite array can still overflow in the
    # sum, so confirm with the exact check before raising.
    if not math.isfinite(value.sum()) and not np.isfinite(value).all():
        raise NumericError(f"{op}: non-finite result")


def _common_tape(parents: Sequence[Tensor]) -> Tape | None:
    tape = None
    for p in parents:
        if p.tape is None:
            continue
        if tape is None:
            tape = p.tape
        elif tape is not p.tape:
            raise ValueError("inputs recorded on different tapes")
    return tape


def _result(op: str, value, parents: Sequence[Tensor],
            vjp: Callable[[np.ndarray], tuple] | None) -> Tensor:
    value = _as_f64(value)
    _ensure_finite(op, value)
    tape = _common_tape(parents)
    if tape is None:
        return Tensor(value)
    parent_ids = tuple(p.node_id if p.tape is not None else None for p in parents)
    node_id = tape._record(op, value, parent_ids, vjp)
    return Tensor(value, tape, node_id)


def _need_shape(op: str, t: Tensor, ndim: int) -> None:
    if t.ndim != ndim:
        raise ValueError(f"{op}: expected rank-{ndim} tensor, got shape {t.shape}")


# ---------------------------------------------------------------------------
# elementwise and linear-algebra operations
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _result("add", a.array + b.array, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub: shape mismatch {a.shape} vs {b.shape}")
    return _result("sub", a.array - b.array, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; one operand may be a scalar (rank-0)."""
    av, bv = a.array, b.array
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")

    def vjp(g):
        ga = g * bv
        gb = g * av
        if a.ndim == 0 and g.ndim != 0:
            ga = np.sum(g * bv)
        if b.ndim == 0 and g.ndim != 0:
            gb = np.sum(g * av)
        return ga, gb

    return _result("mul", av * bv, (a, b), vjp)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a plain (non-differentiated) float constant."""
    c = float(c)
    return _result("scale", x.array * c, (x,), lambda g: (g * c,))


def matvec(w: Tensor, x: Tensor) -> Tensor:
    """Matrix-vector product ``w @ x``."""
    _need_shape("matvec", w, 2)
    _need_shape("matvec", x, 1)
    if w.shape[1] != x.shape[0]:
        raise ValueError(f"matvec: shape mismatch {w.shape} @ {x.shape}")
    wv, xv = w.array, x.array
    return _result("matvec", wv @ xv, (w, x),
                   lambda g: (np.outer(g, xv), wv.T @ g))


def vecmat(w: Tensor, m: Tensor) -> Tensor:
    """Row mixture ``w @ m`` = sum_i w_i * m[i].

    The reduction over rows is done with exactly rounded summation
    (``math.fsum``) so the result is bit-identical under any permutation of
    the rows together with ``w``.  This is the only place a memory-indexed
    sum occurs in dynamic routing, which makes routing output exactly
    permutation invariant.
    """
    _need_shape("vecmat", w, 1)
    _need_shape("vecmat", m, 2)
    if w.shape[0] != m.shape[0]:
        raise ValueError(f"vecmat: shape mismatch {w.shape} @ {m.shape}")
    wv, mv = w.array, m.array
    prods = wv[:, None] * mv
    out = np.array([math.fsum(prods[:, k]) for k in range(mv.shape[1])])
    return _result("vecmat", out, (w, m),
                   lambda g: (mv @ g, np.outer(wv, g)))


def linear_rows(m: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Apply one affine map to every row: ``m @ w.T + b``."""
    _need_shape("linear_rows", m, 2)
    _need_shape("linear_rows", w, 2)
    _need_shape("linear_rows", b, 1)
    if m.shape[1] != w.shape[1] or w.shape[0] != b.shape[0]:
        raise ValueError(
            f"linear_rows: shape mismatch m={m.shape} w={w.shape} b={b.shape}")
    mv, wv = m.array, w.array
    return _result("linear_rows", mv @ wv.T + b.array, (m, w, b),
                   lambda g: (g @ wv, g.T @ mv, g.sum(axis=0)))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.array)
    return _result("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.array)
    return _result("exp", y, (x,), lambda g: (g * y,))


# ---------------------------------------------------------------------------
# capsule nonlinearity
# ---------------------------------------------------------------------------

def _squash_factor(sq_norm):
    # ||out|| = n^2/(1+n^2) < 1, direction preserved: factor = n/(1+n^2).
    return np.sqrt(sq_norm) / (1.0 + sq_norm)


def squash(x: Tensor) -> Tensor:
    """Norm-bounding nonlinearity: ``x * ||x|| / (1 + ||x||^2)``.

    Maps zero (up to the EPS guard) to zero; otherwise preserves direction
    and maps the norm to ``n^2/(1+n^2)``, which lies in [0, 1).
    """
    _need_shape("squash", x, 1)
    xv = x.array
    n2 = float(xv @ xv)
    if n2 <= EPS * EPS:
        z = np.zeros_like(xv)
        return _result("squash", z, (x,), lambda g: (np.zeros_like(xv),))
    n = math.sqrt(n2)
    f = n / (1.0 + n2)
    fp = (1.0 - n2) / ((1.0 + n2) ** 2)  # d/dn of n/(1+n^2)

    def vjp(g):
        return (f * g + (fp / n) * float(g @ xv) * xv,)

    return _result("squash", f * xv, (x,), vjp)


def squash_rows(m: Tensor) -> Tensor:
    """Row-wise squash of a matrix; zero rows stay zero."""
    _need_shape("squash_rows", m, 2)
    mv = m.array
    n2 = np.einsum("ij,ij->i", mv, mv)
    live = n2 > EPS * EPS
    n = np.sqrt(np.where(live, n2, 1.0))
    f = np.where(live, n / (1.0 + n2), 0.0)
    fp = np.where(live, (1.0 - n2) / ((1.0 + n2) ** 2), 0.0)

    def vjp(g):
        gdotx = np.einsum("ij,ij->i", g, mv)
        coef = np.where(live, fp * gdotx / n, 0.0)
        return (f[:, None] * g + coef[:, None] * mv,)

    return _result("squash_rows", f[:, None] * mv, (m,), vjp)


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------

def softmax(x: Tensor) -> Tensor:
    """Stable softmax of a vector (max-subtracted; entries sum to 1)."""
    _need_shape("softmax", x, 1)
    z = np.exp(x.array - np.max(x.array))
    y = z / z.sum()
    return _result("softmax", y, (x,), lambda g: (y * (g - float(g @ y)),))


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise stable softmax of a matrix."""
    _need_shape("softmax_rows", a, 2)
    av = a.array
    z = np.exp(av - av.max(axis=1, keepdims=True))
    y = z / z.sum(axis=1, keepdims=True)

    def vjp(g):
        inner = np.einsum("ij,ij->i", g, y)
        return (y * (g - inner[:, None]),)

    return _result("softmax_rows", y, (a,), vjp)


def logsumexp(x: Tensor) -> Tensor:
    """Stable log(sum(exp(x))) as a scalar."""
    _need_shape("logsumexp", x, 1)
    m = float(np.max(x.array))
    z = np.exp(x.array - m)
    s = float(z.sum())
    return _result("logsumexp", m + math.log(s), (x,), lambda g: (float(g) * z / s,))


# ---------------------------------------------------------------------------
# reductions, selection and assembly
# ---------------------------------------------------------------------------

def dot(a: Tensor, b: Tensor) -> Tensor:
    _need_shape("dot", a, 1)
    _need_shape("dot", b, 1)
    if a.shape != b.shape:
        raise ValueError(f"dot: shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.array, b.array
    return _result("dot", av @ bv, (a, b),
                   lambda g: (float(g) * bv, float(g) * av))


def index(x: Tensor, i: int) -> Tensor:
    """Select entry ``i`` of a vector as a scalar."""
    _need_shape("index", x, 1)
    i = int(i)
    if not 0 <= i < x.shape[0]:
        raise ValueError(f"index: {i} out of range for length {x.shape[0]}")

    def vjp(g):
        gx = np.zeros(x.shape)
        gx[i] = float(g)
        return (gx,)

    return _result("index", x.array[i], (x,), vjp)


def col(a: Tensor, j: int) -> Tensor:
    """Select column ``j`` of a matrix as a vector."""
    _need_shape("col", a, 2)
    j = int(j)
    if not 0 <= j < a.shape[1]:
        raise ValueError(f"col: {j} out of range for {a.shape[1]} columns")

    def vjp(g):
        ga = np.zeros(a.shape)
        ga[:, j] = g
        return (ga,)

    return _result("col", a.array[:, j].copy(), (a,), vjp)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate vectors into one vector."""
    if not parts:
        raise ValueError("concat: empty input")
    for p in parts:
        _need_shape("concat", p, 1)
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[offsets[k]:offsets[k + 1]] for k in range(len(parts)))

    return _result("concat", np.concatenate([p.array for p in parts]), tuple(parts), vjp)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors as the rows of a matrix."""
    if not rows:
        raise ValueError("stack_rows: empty input")
    for r in rows:
        _need_shape("stack_rows", r, 1)
    if len({r.shape[0] for r in rows}) != 1:
        raise ValueError("stack_rows: rows have differing lengths")

    def vjp(g):
        return tuple(g[k] for k in range(len(rows)))

    return _result("stack_rows", np.stack([r.array for r in rows]), tuple(rows), vjp)


def stack_cols(cols: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors as the columns of a matrix."""
    if not cols:
        raise ValueError("stack_cols: empty input")
    for c in cols:
        _need_shape("stack_cols", c, 1)
    if len({c.shape[0] for c in cols}) != 1:
        raise ValueError("stack_cols: columns have differing lengths")

    def vjp(g):
        return tuple(g[:, k] for k in range(len(cols)))

    return _result("stack_cols", np.stack([c.array for c in cols], axis=1),
                   tuple(cols), vjp)


# ---------------------------------------------------------------------------
# correlation and similarity
# ---------------------------------------------------------------------------

def center(x: Tensor) -> Tensor:
    """Subtract the mean of the entries; the VJP is the same projection."""
    _need_shape("center", x, 1)
    return _result("center", x.array - x.array.mean(), (x,),
                   lambda g: (g - g.mean(),))


def center_rows(m: Tensor) -> Tensor:
    _need_shape("center_rows", m, 2)
    return _result("center_rows", m.array - m.array.mean(axis=1, keepdims=True),
                   (m,), lambda g: (g - g.mean(axis=1, keepdims=True),))


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity as a scalar, 0 if either norm is below EPS."""
    _need_shape("cosine", a, 1)
    _need_shape("cosine", b, 1)
    if a.shape != b.shape:
        raise ValueError(f"cosine: shape mismatch {a.shape} vs {b.shape}")
    av, bv = a.array, b.array
    na = math.sqrt(float(av @ av))
    nb = math.sqrt(float(bv @ bv))
    if na <= EPS or nb <= EPS:
        z = np.zeros(())
        return _result("cosine", z, (a, b),
                       lambda g: (np.zeros_like(av), np.zeros_like(bv)))
    c = float(av @ bv) / (na * nb)

    def vjp(g):
        gv = float(g)
        return (gv * (bv / (na * nb) - c * av / (na * na)),
                gv * (av / (na * nb) - c * bv / (nb * nb)))

    return _result("cosine", np.clip(c, -1.0, 1.0), (a, b), vjp)


def cosine_rows(m: Tensor, q: Tensor) -> Tensor:
    """Cosine similarity of every row of ``m`` against ``q``."""
    _need_shape("cosine_rows", m, 2)
    _need_shape("cosine_rows", q, 1)
    if m.shape[1] != q.shape[0]:
        raise ValueError(f"cosine_rows: shape mismatch {m.shape} vs {q.shape}")
    mv, qv = m.array, q.array
    nq = math.sqrt(float(qv @ qv))
    nrows = np.sqrt(np.einsum("ij,ij->i", mv, mv))
    live = (nrows > EPS) & (nq > EPS)
    safe_rows = np.where(live, nrows, 1.0)
    safe_q = nq if nq > EPS else 1.0
    c = np.where(live, (mv @ qv) / (safe_rows * safe_q), 0.0)

    def vjp(g):
        gl = np.where(live, g, 0.0)
        gm = (gl / (safe_rows * safe_q))[:, None] * qv \
            - (gl * c / (safe_rows * safe_rows))[:, None] * mv
        gq = mv.T @ (gl / (safe_rows * safe_q)) - qv * float(np.sum(gl * c)) / (safe_q * safe_q)
        return gm, gq

    return _result("cosine_rows", np.clip(c, -1.0, 1.0), (m, q), vjp)


def pccs(a: Tensor, b: Tensor) -> Tensor:
    """Pearson correlation of two vectors, entries treated as paired samples.

    Equal to the cosine of the mean-centered vectors.  Vectors with (near)
    zero variance yield 0, a neutral value for routing.  Requires length 2 or
    more; a single sample has no variance to correlate.
    """
    if a.ndim != 1 or a.shape[0] < 2:
        raise ValueError(f"pccs: need a vector of length >= 2, got shape {a.shape}")
    return cosine(center(a), center(b))


def pccs_rows(m: Tensor, q: Tensor) -> Tensor:
    """Row-wise Pearson correlation of every row of ``m`` against ``q``.

    Semantically ``cosine_rows(center_rows(m), center(q))``, fused into one
    node: gate computation dominates the routing profile and the centering
    projections fold directly into the VJP (centering is a symmetric
    projection, so it applies unchanged to the incoming gradients).
    """
    if m.ndim != 2 or m.shape[1] < 2:
        raise ValueError(f"pccs_rows: need rows of length >= 2, got shape {m.shape}")
    if q.ndim != 1 or m.shape[1] != q.shape[0]:
        raise ValueError(f"pccs_rows: shape mismatch {m.shape} vs {q.shape}")
    uv = m.array - m.array.mean(axis=1, keepdims=True)
    wv = q.array - q.array.mean()
    nw = math.sqrt(float(wv @ wv))
    nrows = np.sqrt(np.einsum("ij,ij->i", uv, uv))
    live = (nrows > EPS) & (nw > EPS)
    safe_rows = np.where(live, nrows, 1.0)
    safe_w = nw if nw > EPS else 1.0
    c = np.where(live, (uv @ wv) / (safe_rows * safe_w), 0.0)

    def vjp(g):
        gl = np.where(live, g, 0.0)
        gu = (gl / (safe_rows * safe_w))[:, None] * wv \
            - (gl * c / (safe_rows * safe_rows))[:, None] * uv
        gw = uv.T @ (gl / (safe_rows * safe_w)) \
            - wv * float(np.sum(gl * c)) / (safe_w * safe_w)
        return gu - gu.mean(axis=1, keepdims=True), gw - gw.mean()

    return _result("pccs_rows", np.clip(c, -1.0, 1.0), (m, q), vjp)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def backward(tape: Tape, root: Tensor) -> dict[int, np.ndarray]:
    """Accumulate adjoints from a recorded scalar root back to every leaf.

    Visits nodes exactly once in reverse id order (valid because parent ids
    are always smaller).  Returns a dict mapping each leaf's node id to the
    gradient of ``root`` with respect to that leaf; leaves the root does not
    depend on get zero gradients.
    """
    if root.tape is not tape or root.node_id is None:
        raise ValueError("backward: root is not recorded on this tape")
    if root.ndim != 0:
        raise ValueError(f"backward: root must be a scalar, got shape {root.shape}")

    adjoints: list[np.ndarray | None] = [None] * len(tape.nodes)
    adjoints[root.node_id] = np.ones(())
    for k in range(root.node_id, -1, -1):
        g = adjoints[k]
        node = tape.nodes[k]
        if g is None or node.vjp is None:
            continue
        for pid, pg in zip(node.parent_ids, node.vjp(g)):
            if pid is None or pg is None:
                continue
            if adjoints[pid] is None:
                adjoints[pid] = np.asarray(pg, dtype=np.float64)
            else:
                adjoints[pid] = adjoints[pid] + pg

    grads: dict[int, np.ndarray] = {}
    for k, node in enumerate(tape.nodes):
        if node.op != "leaf":
            continue
        g = adjoints[k]
        if g is None:
            g = np.zeros_like(node.value)
        else:
            g = np.asarray(g, dtype=np.float64)
            _ensure_finite("backward", g)
        grads[k] = g
    return grads
