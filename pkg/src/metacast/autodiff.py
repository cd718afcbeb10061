"""Reverse-mode automatic differentiation over dense float64 tensors.

A small tape: ops executed while a :class:`Graph` is active become nodes that
remember their kind, parents and any cached values the backward rule needs.
Backward rules are themselves written in terms of the same ops, so a gradient
computed with ``create_graph=True`` is a graph node that can be differentiated
again.  That closure is what makes gradients-of-gradients (and hence
second-order meta-updates) work without any special casing.

The op set is closed-world: there is no general broadcasting, every admissible
shape combination is an explicit rule with an explicit backward.  Finiteness
is enforced where values enter the graph from outside (``leaf``/``const``/
``tensor_op``) and re-checked by callers at loss/gradient boundaries; every op
in the set maps finite inputs of forecaster magnitude to finite outputs.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Operand shapes violate an op's shape rule."""


class DomainError(ValueError):
    """Non-finite values where finite ones are required."""


class GraphError(ValueError):
    """Misuse of the differentiation graph (unreachable tensor, non-scalar loss)."""


_tls = threading.local()


def _active() -> "Graph | None":
    return getattr(_tls, "graph", None)


class Graph:
    """Append-only record of ops, confined to one thread.

    Use as a context manager; ops run inside record nodes.  When
    ``differentiable_backward`` is False, ``grad`` ignores ``create_graph``
    and always returns constants.
    """

    __slots__ = ("recording", "differentiable_backward", "counter")

    def __init__(self, differentiable_backward: bool = True):
        self.recording = True
        self.differentiable_backward = differentiable_backward
        self.counter = 0

    def __enter__(self) -> "Graph":
        if _active() is not None:
            raise GraphError("a Graph is already active on this thread")
        _tls.graph = self
        return self

    def __exit__(self, *exc) -> None:
        _tls.graph = None


class Tensor:
    """Dense float64 array, optionally a node of the active graph.

    ``op is None`` marks a leaf: either a constant (``req=False``) or a
    differentiation target such as a parameter (``req=True``).
    """

    __slots__ = ("data", "op", "parents", "ctx", "gid", "req")

    def __init__(self, data: np.ndarray, op: str | None = None,
                 parents: tuple = (), ctx=None, gid: int = -1, req: bool = False):
        self.data = data
        self.op = op
        self.parents = parents
        self.ctx = ctx
        self.gid = gid
        self.req = req

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = self.op or ("leaf" if self.req else "const")
        return f"Tensor({tag}, shape={self.data.shape})"


def const(values) -> Tensor:
    """Constant tensor; validates dtype and finiteness at the graph boundary."""
    a = np.asarray(values, dtype=np.float64)
    if not np.isfinite(a).all():
        raise DomainError("non-finite values in tensor constant")
    return Tensor(a)


def leaf(values) -> Tensor:
    """Differentiation target (parameter-like leaf)."""
    t = const(values)
    t.req = True
    return t


def _node(data: np.ndarray, op: str, parents: tuple, ctx=None) -> Tensor:
    g = _active()
    if g is not None and g.recording:
        g.counter += 1
        req = False
        for p in parents:
            if p.req:
                req = True
                break
        return Tensor(data, op, parents, ctx, g.counter, req)
    return Tensor(data)


# ---------------------------------------------------------------------------
# Forward ops.  Shape rules are explicit; anything else is a ShapeError.
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a+b (same shape), or matrix + column-broadcast vector
    (shapes [m,n] + [m])."""
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        return _node(a.data + b.data, "add", (a, b))
    if len(sa) == 2 and sb == (sa[0],):
        return _node(a.data + b.data[:, None], "addcv", (a, b))
    raise ShapeError(f"add: incompatible shapes {sa} and {sb}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: incompatible shapes {a.data.shape} and {b.data.shape}")
    return _node(a.data - b.data, "sub", (a, b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a*b (same shape), or scalar tensor * any-shape tensor."""
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        return _node(a.data * b.data, "mul", (a, b))
    if sa == ():
        return _node(a.data * b.data, "muls", (a, b))
    if sb == ():
        return _node(b.data * a.data, "muls", (b, a))
    raise ShapeError(f"mul_elementwise: incompatible shapes {sa} and {sb}")


def scalar_mul(k: float, a: Tensor) -> Tensor:
    """Multiply by a plain (non-learnable) scalar."""
    return _node(k * a.data, "kmul", (a,), k)


def matvec(w: Tensor, x: Tensor) -> Tensor:
    """[m,n] @ [n] -> [m]."""
    if w.data.ndim != 2 or x.data.shape != (w.data.shape[1],):
        raise ShapeError(f"matvec: incompatible shapes {w.data.shape} and {x.data.shape}")
    return _node(w.data @ x.data, "matvec", (w, x))


def matvec_t(w: Tensor, y: Tensor) -> Tensor:
    """W^T @ y: [m,n],[m] -> [n]."""
    if w.data.ndim != 2 or y.data.shape != (w.data.shape[0],):
        raise ShapeError(f"matvec_t: incompatible shapes {w.data.shape} and {y.data.shape}")
    return _node(w.data.T @ y.data, "matvec_t", (w, y))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """[m,k] @ [k,n] -> [m,n]."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] == 1:
        # rank-1 product: broadcasting is ~3x faster than BLAS here
        return _node(a.data * b.data, "matmul", (a, b))
    return _node(a.data @ b.data, "matmul", (a, b))


def matmul_nt(a: Tensor, b: Tensor) -> Tensor:
    """A @ B^T: [m,k],[n,k] -> [m,n]."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise ShapeError(f"matmul_nt: incompatible shapes {a.data.shape} and {b.data.shape}")
    return _node(a.data @ b.data.T, "matmul_nt", (a, b))


def matmul_tn(a: Tensor, b: Tensor) -> Tensor:
    """A^T @ B: [m,k],[m,n] -> [k,n]."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"matmul_tn: incompatible shapes {a.data.shape} and {b.data.shape}")
    return _node(a.data.T @ b.data, "matmul_tn", (a, b))


def sigmoid(a: Tensor) -> Tensor:
    return _node(expit(a.data), "sigmoid", (a,))


def tanh(a: Tensor) -> Tensor:
    return _node(np.tanh(a.data), "tanh", (a,))


def affine(a: Tensor, k0: float, k1: float) -> Tensor:
    """k0 + k1 * a with plain scalar coefficients."""
    return _node(k0 + k1 * a.data, "affine", (a,), k1)


def sigmoid_bwd(c: Tensor, s: Tensor) -> Tensor:
    """c * s * (1 - s): the sigmoid chain term fused into one node."""
    if c.data.shape != s.data.shape:
        raise ShapeError(f"sigmoid_bwd: incompatible shapes {c.data.shape} and {s.data.shape}")
    sv = s.data
    out = sv - sv * sv
    out *= c.data
    return _node(out, "sigmoid_bwd", (c, s))


def tanh_bwd(c: Tensor, t: Tensor) -> Tensor:
    """c * (1 - t^2): the tanh chain term fused into one node."""
    if c.data.shape != t.data.shape:
        raise ShapeError(f"tanh_bwd: incompatible shapes {c.data.shape} and {t.data.shape}")
    tv = t.data
    out = 1.0 - tv * tv
    out *= c.data
    return _node(out, "tanh_bwd", (c, t))


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, "square", (a,))


def reduce_sum(a: Tensor) -> Tensor:
    """Sum of all elements -> scalar."""
    return _node(np.asarray(a.data.sum()), "sum", (a,))


def reduce_mean(a: Tensor) -> Tensor:
    """Mean of all elements -> scalar."""
    return _node(np.asarray(a.data.mean()), "mean", (a,))


def add_n(parts: Sequence[Tensor]) -> Tensor:
    """Sum of same-shape tensors in one node (cotangent fan-in)."""
    if len(parts) == 1:
        return parts[0]
    shape = parts[0].data.shape
    for p in parts[1:]:
        if p.data.shape != shape:
            raise ShapeError(f"add_n: incompatible shapes {shape} and {p.data.shape}")
    out = parts[0].data + parts[1].data
    for p in parts[2:]:
        out += p.data
    return _node(out, "add_n", tuple(parts))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack along axis 0; all trailing dims must agree."""
    trailing = {p.data.shape[1:] for p in parts}
    if not parts or len(trailing) != 1:
        raise ShapeError(f"concat_rows: incompatible shapes {[p.data.shape for p in parts]}")
    offsets = []
    off = 0
    for p in parts:
        offsets.append(off)
        off += p.data.shape[0]
    return _node(np.concatenate([p.data for p in parts], axis=0),
                 "concat_rows", tuple(parts), tuple(offsets))


def slice_rows(a: Tensor, r0: int, r1: int) -> Tensor:
    """Rows [r0, r1) of a (view, never mutated)."""
    n = a.data.shape[0]
    if not (0 <= r0 < r1 <= n):
        raise ShapeError(f"slice_rows: rows [{r0},{r1}) out of range for shape {a.data.shape}")
    return _node(a.data[r0:r1], "slice_rows", (a,), (r0, r1, n))


def pad_rows(a: Tensor, r0: int, total: int) -> Tensor:
    """Embed a into a zero tensor with `total` rows, starting at row r0."""
    rows = a.data.shape[0]
    if r0 < 0 or r0 + rows > total:
        raise ShapeError(f"pad_rows: rows [{r0},{r0 + rows}) exceed total {total}")
    out = np.zeros((total,) + a.data.shape[1:])
    out[r0:r0 + rows] = a.data
    return _node(out, "pad_rows", (a,), (r0, rows))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: need 2-D, got shape {a.data.shape}")
    return _node(a.data.T, "transpose", (a,))


def outer(a: Tensor, b: Tensor) -> Tensor:
    """[m],[n] -> [m,n]."""
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ShapeError(f"outer: need vectors, got shapes {a.data.shape} and {b.data.shape}")
    return _node(np.outer(a.data, b.data), "outer", (a, b))


def reshape(a: Tensor, shape: tuple) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot reshape {a.data.shape} to {shape}")
    return _node(a.data.reshape(shape), "reshape", (a,), a.data.shape)


_DISPATCH: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul_elementwise": mul,
    "matvec": matvec,
    "matmul": matmul,
    "scalar_mul": scalar_mul,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "sum": reduce_sum,
    "mean": reduce_mean,
    "square": square,
    "concat_rows": lambda *parts: concat_rows(parts),
    "slice_rows": slice_rows,
    "transpose": transpose,
    "outer": outer,
}


def tensor_op(kind: str, *inputs) -> Tensor:
    """Uniform entry point over the op set; validates finiteness of inputs."""
    fn = _DISPATCH.get(kind)
    if fn is None:
        raise ValueError(f"unknown op kind {kind!r}")
    for x in inputs:
        if isinstance(x, Tensor) and not np.isfinite(x.data).all():
            raise DomainError(f"{kind}: non-finite input values")
    return fn(*inputs)


# ---------------------------------------------------------------------------
# Backward rules.  Each rule is expressed with the ops above, so recorded
# backward passes are themselves differentiable.
# ---------------------------------------------------------------------------

def _live(t: Tensor) -> bool:
    # Constants need no cotangent; grad() rejects them as wrt up front.
    return t.req or t.op is not None


def _bw_add(node, c, acc):
    a, b = node.parents
    if _live(a):
        acc(a, c)
    if _live(b):
        acc(b, c)


def _bw_add_n(node, c, acc):
    for p in node.parents:
        if _live(p):
            acc(p, c)


def _bw_addcv(node, c, acc):
    a, v = node.parents
    if _live(a):
        acc(a, c)
    if _live(v):
        acc(v, matvec(c, const(np.ones(c.data.shape[1]))))


def _bw_sub(node, c, acc):
    a, b = node.parents
    if _live(a):
        acc(a, c)
    if _live(b):
        acc(b, scalar_mul(-1.0, c))


def _bw_mul(node, c, acc):
    a, b = node.parents
    if _live(a):
        acc(a, mul(c, b))
    if _live(b):
        acc(b, mul(c, a))


def _bw_muls(node, c, acc):
    s, a = node.parents
    if _live(s):
        acc(s, reduce_sum(mul(c, a)))
    if _live(a):
        acc(a, mul(s, c))


def _bw_kmul(node, c, acc):
    (a,) = node.parents
    if _live(a):
        acc(a, scalar_mul(node.ctx, c))


def _bw_matvec(node, c, acc):
    w, x = node.parents
    if _live(w):
        acc(w, outer(c, x))
    if _live(x):
        acc(x, matvec_t(w, c))


def _bw_matvec_t(node, c, acc):
    w, y = node.parents
    if _live(w):
        acc(w, outer(y, c))
    if _live(y):
        acc(y, matvec(w, c))


def _bw_matmul(node, c, acc):
    a, b = node.parents
    if _live(a):
        acc(a, matmul_nt(c, b))
    if _live(b):
        acc(b, matmul_tn(a, c))


def _bw_matmul_nt(node, c, acc):
    a, b = node.parents
    if _live(a):
        acc(a, matmul(c, b))
    if _live(b):
        acc(b, matmul_tn(c, a))


def _bw_matmul_tn(node, c, acc):
    a, b = node.parents
    if _live(a):
        acc(a, matmul_nt(b, c))
    if _live(b):
        acc(b, matmul(a, c))


def _bw_sigmoid(node, c, acc):
    # d sigma = sigma (1 - sigma), written with the recorded output
    (a,) = node.parents
    if _live(a):
        acc(a, sigmoid_bwd(c, node))


def _bw_tanh(node, c, acc):
    # d tanh = 1 - tanh^2
    (a,) = node.parents
    if _live(a):
        acc(a, tanh_bwd(c, node))


def _bw_affine(node, c, acc):
    (a,) = node.parents
    if _live(a):
        acc(a, scalar_mul(node.ctx, c))


def _bw_sigmoid_bwd(node, c, acc):
    # f(c, s) = c s (1-s):  df/dc = s(1-s),  df/ds = c (1-2s)
    cin, s = node.parents
    if _live(cin):
        acc(cin, sigmoid_bwd(c, s))
    if _live(s):
        acc(s, mul(mul(c, cin), affine(s, 1.0, -2.0)))


def _bw_tanh_bwd(node, c, acc):
    # f(c, t) = c (1-t^2):  df/dc = 1-t^2,  df/dt = -2 c t
    cin, t = node.parents
    if _live(cin):
        acc(cin, tanh_bwd(c, t))
    if _live(t):
        acc(t, mul(mul(c, cin), scalar_mul(-2.0, t)))


def _bw_square(node, c, acc):
    (a,) = node.parents
    if _live(a):
        acc(a, scalar_mul(2.0, mul(c, a)))


def _bw_sum(node, c, acc):
    (a,) = node.parents
    if _live(a):
        acc(a, mul(c, const(np.ones(a.data.shape))))


def _bw_mean(node, c, acc):
    (a,) = node.parents
    if _live(a):
        acc(a, mul(c, const(np.full(a.data.shape, 1.0 / a.data.size))))


def _bw_concat(node, c, acc):
    offsets = node.ctx
    for p, off in zip(node.parents, offsets):
        if _live(p):
            acc(p, slice_rows(c, off, off + p.data.shape[0]))


def _bw_slice(node, c, acc):
    (a,) = node.parents
    r0, _r1, total = node.ctx
    if _live(a):
        acc(a, pad_rows(c, r0, total))


def _bw_pad(node, c, acc):
    (a,) = node.parents
    r0, rows = node.ctx
    if _live(a):
        acc(a, slice_rows(c, r0, r0 + rows))


def _bw_transpose(node, c, acc):
    (a,) = node.parents
    if _live(a):
        acc(a, transpose(c))


def _bw_outer(node, c, acc):
    a, b = node.parents
    if _live(a):
        acc(a, matvec(c, b))
    if _live(b):
        acc(b, matvec_t(c, a))


def _bw_reshape(node, c, acc):
    (a,) = node.parents
    if _live(a):
        acc(a, reshape(c, node.ctx))


_BACKWARD = {
    "add": _bw_add,
    "add_n": _bw_add_n,
    "addcv": _bw_addcv,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "muls": _bw_muls,
    "kmul": _bw_kmul,
    "matvec": _bw_matvec,
    "matvec_t": _bw_matvec_t,
    "matmul": _bw_matmul,
    "matmul_nt": _bw_matmul_nt,
    "matmul_tn": _bw_matmul_tn,
    "sigmoid": _bw_sigmoid,
    "tanh": _bw_tanh,
    "affine": _bw_affine,
    "sigmoid_bwd": _bw_sigmoid_bwd,
    "tanh_bwd": _bw_tanh_bwd,
    "square": _bw_square,
    "sum": _bw_sum,
    "mean": _bw_mean,
    "concat_rows": _bw_concat,
    "slice_rows": _bw_slice,
    "pad_rows": _bw_pad,
    "transpose": _bw_transpose,
    "outer": _bw_outer,
    "reshape": _bw_reshape,
}


def grad(loss: Tensor, wrt: Sequence[Tensor], create_graph: bool = False) -> list[Tensor]:
    """d loss / d wrt[i] for a scalar loss, in reverse topological order.

    With ``create_graph`` the backward pass is recorded on the active graph,
    so returned gradients can be differentiated again.  Without it they are
    constants: exactly the first-order approximation of any enclosing
    differentiation.
    """
    if loss.data.shape != ():
        raise GraphError(f"grad: loss must be scalar, got shape {loss.data.shape}")

    # Reachable op nodes; creation order (gid) is a topological order.
    nodes: list[Tensor] = []
    seen: set[int] = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        i = id(t)
        if i in seen:
            continue
        seen.add(i)
        if t.op is not None:
            nodes.append(t)
            stack.extend(t.parents)
    for w in wrt:
        if id(w) not in seen:
            raise GraphError("grad: tensor not reachable from the loss")
        if not (w.req or w.op is not None):
            raise GraphError("grad: wrt tensor was created as a constant (use leaf())")
    nodes.sort(key=lambda t: t.gid, reverse=True)

    # Contributions per node are buffered and summed once the node is
    # processed; reverse topological order guarantees completeness by then.
    cot: dict[int, list[Tensor]] = {id(loss): [const(np.ones(()))]}

    def acc(parent: Tensor, contrib: Tensor) -> None:
        parts = cot.get(id(parent))
        if parts is None:
            cot[id(parent)] = [contrib]
        else:
            parts.append(contrib)

    g = _active()
    prev_recording = None
    if g is not None:
        prev_recording = g.recording
        g.recording = bool(create_graph) and g.differentiable_backward
    try:
        backward = _BACKWARD
        for node in nodes:
            # Entries are kept after processing because a wrt tensor may
            # itself be an interior node, e.g. adapted parameters.
            parts = cot.get(id(node))
            if parts is None:
                continue
            c = parts[0] if len(parts) == 1 else add_n(parts)
            cot[id(node)] = [c]
            backward[node.op](node, c, acc)

        out = []
        for w in wrt:
            parts = cot.get(id(w))
            if parts is None:
                # Reachable but on a dead branch (e.g. a zero-weighted term):
                # the derivative is zero.
                out.append(const(np.zeros(w.data.shape)))
            else:
                c = parts[0] if len(parts) == 1 else add_n(parts)
                cot[id(w)] = [c]
                out.append(c)
    finally:
        if g is not None:
            g.recording = prev_recording
    return out


def finite_diff_gradient(f, at, h: float = 1e-5):
    """Central-difference gradient oracle over a ParamSet-like container.

    ``at`` must expose ``tensors()`` (ordered list of Tensors) and
    ``with_arrays(list_of_ndarrays)`` returning a congruent container.
    Returns the gradient as a container of the same shape.
    """
    arrays = [t.data.copy() for t in at.tensors()]
    grads = [np.zeros_like(a) for a in arrays]

    def feval() -> float:
        v = f(at.with_arrays([a.copy() for a in arrays]))
        return v.item() if isinstance(v, Tensor) else float(v)

    for a, ga in zip(arrays, grads):
        flat = a.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = feval()
            flat[i] = orig - h
            fm = feval()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
    return at.with_arrays(grads)
