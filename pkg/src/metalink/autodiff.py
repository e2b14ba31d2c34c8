"""Reverse-mode automatic differentiation over float64 numpy payloads.

The backward pass is itself built out of the same primitives, so gradients are
ordinary graph nodes and can be differentiated again (Hessian-vector products
via double backward). Supported payloads are scalars, 1-D vectors and 2-D
matrices; that is all the dense networks here need.
"""

from __future__ import annotations

import itertools
import math
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ParamVector",
    "GraphError",
    "NumericError",
    "leaf",
    "constant",
    "no_grad",
    "grad",
    "grad_of_grad_dot",
    "grad_tensor",
    "apply_sgd",
    "segment_tensors",
    "add",
    "sub",
    "mul",
    "neg",
    "matvec",
    "tmatvec",
    "outer",
    "tanh",
    "elu",
    "exp",
    "log",
    "powc",
    "sumall",
    "vslice",
    "vpad",
    "concat",
    "reshape",
    "clip_min",
    "softmax_xent",
    "logsumexp",
    "softmax",
]


class GraphError(ValueError):
    """Structural misuse of the graph (shapes, non-scalar outputs, ...)."""


class NumericError(FloatingPointError):
    """NaN or Inf encountered in a forward value.

    Carries the id of the offending node in ``node_id``.
    """

    def __init__(self, message: str, node_id: int):
        super().__init__(message)
        self.node_id = node_id


_ids = itertools.count()
_grad_enabled = ContextVar("metalink_grad_enabled", default=True)


@contextmanager
def no_grad():
    """Disable graph recording; forward values are still computed.

    Context-local, so concurrent evaluation lanes do not interfere.
    """
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """One node of the computation graph: an op, its value, its parents."""

    __slots__ = ("data", "op", "parents", "attrs", "tid", "requires_grad", "_finite_ok")

    def __init__(self, data, op="const", parents=(), attrs=None, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.op = op
        self.attrs = attrs
        self.tid = next(_ids)
        if _grad_enabled.get():
            self.parents = parents
            self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        else:
            self.parents = ()
            self.requires_grad = False
        self._finite_ok = False

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, tid={self.tid})"

    # arithmetic sugar; scalars are lifted to constants
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        other = _lift(other)
        return mul(self, powc(other, -1.0))

    def __pow__(self, c):
        return powc(self, float(c))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(data) -> Tensor:
    """A graph constant; gradients never flow into it."""
    return Tensor(data)


def leaf(data) -> Tensor:
    """A differentiable input node (parameters)."""
    return Tensor(data, op="leaf", requires_grad=_grad_enabled.get())


# --- primitives -------------------------------------------------------------
#
# Every op returns a new Tensor; its entry in _VJPS is a tuple of per-parent
# cotangent builders (out, cot, parents) -> Tensor built from these same
# primitives, which is what makes second derivatives exact.


def _unbroadcast(cot: Tensor, shape) -> Tensor:
    if cot.data.shape == shape:
        return cot
    if shape == () or shape == (1,):
        s = sumall(cot)
        return s if shape == () else reshape(s, (1,))
    raise GraphError(f"cannot reduce cotangent of shape {cot.data.shape} to {shape}")


def _check_broadcast(a: Tensor, b: Tensor, opname: str):
    # only same-shape or scalar-vs-array combinations are supported
    if a.data.shape != b.data.shape and a.data.size != 1 and b.data.size != 1:
        raise GraphError(f"{opname}: incompatible shapes {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")
    return Tensor(a.data + b.data, "add", (a, b))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")
    return Tensor(a.data - b.data, "sub", (a, b))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")
    return Tensor(a.data * b.data, "mul", (a, b))


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, "neg", (a,))


def matvec(a: Tensor, v: Tensor) -> Tensor:
    """Matrix (r,c) times vector (c,) -> (r,)."""
    if a.data.ndim != 2 or v.data.ndim != 1 or a.data.shape[1] != v.data.shape[0]:
        raise GraphError(f"matvec: shapes {a.data.shape} @ {v.data.shape}")
    return Tensor(a.data @ v.data, "matvec", (a, v))


def tmatvec(a: Tensor, v: Tensor) -> Tensor:
    """Transposed matrix-vector product: (r,c)^T @ (r,) -> (c,)."""
    if a.data.ndim != 2 or v.data.ndim != 1 or a.data.shape[0] != v.data.shape[0]:
        raise GraphError(f"tmatvec: shapes {a.data.shape}^T @ {v.data.shape}")
    return Tensor(a.data.T @ v.data, "tmatvec", (a, v))


def outer(u: Tensor, v: Tensor) -> Tensor:
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise GraphError("outer expects two vectors")
    return Tensor(np.outer(u.data, v.data), "outer", (u, v))


def tanh(a: Tensor) -> Tensor:
    return Tensor(np.tanh(a.data), "tanh", (a,))


def elu(a: Tensor) -> Tensor:
    x = a.data
    pos = x > 0.0
    out = np.where(pos, x, np.expm1(np.minimum(x, 0.0)))
    return Tensor(out, "elu", (a,), attrs=pos.astype(np.float64))


def exp(a: Tensor) -> Tensor:
    return Tensor(np.exp(a.data), "exp", (a,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), "log", (a,))


def powc(a: Tensor, c: float) -> Tensor:
    return Tensor(a.data ** c, "powc", (a,), attrs=float(c))


def sumall(a: Tensor) -> Tensor:
    return Tensor(a.data.sum(), "sumall", (a,), attrs=a.data.shape)


def vslice(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 1 or not (0 <= start <= stop <= a.data.shape[0]):
        raise GraphError(f"vslice [{start}:{stop}] of shape {a.data.shape}")
    return Tensor(a.data[start:stop], "vslice", (a,), attrs=(start, stop, a.data.shape[0]))


def vpad(a: Tensor, start: int, total: int) -> Tensor:
    """Embed a vector into zeros of length ``total`` at offset ``start``."""
    if a.data.ndim != 1 or start + a.data.shape[0] > total:
        raise GraphError("vpad: segment does not fit")
    out = np.zeros(total)
    out[start:start + a.data.shape[0]] = a.data
    return Tensor(out, "vpad", (a,), attrs=(start, a.data.shape[0]))


def concat(parts: Sequence[Tensor]) -> Tensor:
    parts = tuple(parts)
    if not parts or any(p.data.ndim != 1 for p in parts):
        raise GraphError("concat expects a non-empty sequence of vectors")
    sizes = tuple(p.data.shape[0] for p in parts)
    return Tensor(np.concatenate([p.data for p in parts]), "concat", parts, attrs=sizes)


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor(a.data.reshape(shape), "reshape", (a,), attrs=a.data.shape)


def clip_min(a: Tensor, c: float) -> Tensor:
    x = a.data
    mask = (x > c).astype(np.float64)
    return Tensor(np.maximum(x, c), "clip_min", (a,), attrs=mask)


def softmax_xent(logits: Tensor, label: int) -> Tensor:
    """Fused cross-entropy of softmax(logits) against a 0-based label.

    Stabilised by max subtraction; the subtracted max is an exact constant
    shift, so gradients through the backward expression stay exact.
    """
    z = logits.data
    if z.ndim != 1:
        raise GraphError("softmax_xent expects a logit vector")
    if not (0 <= label < z.shape[0]):
        raise GraphError(f"label {label} outside [0, {z.shape[0]})")
    c = z.max()
    val = c + math.log(np.exp(z - c).sum()) - z[label]
    return Tensor(val, "sxent", (logits,), attrs=(int(label), float(c)))


# composite expressions (not primitives)

def logsumexp(logits: Tensor) -> Tensor:
    c = constant(logits.data.max())
    return add(log(sumall(exp(sub(logits, c)))), c)


def softmax(logits: Tensor) -> Tensor:
    return exp(sub(logits, logsumexp(logits)))


def _vjp_sxent(out, cot, a):
    label, _ = out.attrs
    onehot = np.zeros(a.data.shape[0])
    onehot[label] = 1.0
    return mul(cot, sub(softmax(a), constant(onehot)))


_VJPS: dict[str, tuple[Callable, ...]] = {
    "add": (
        lambda out, cot, a, b: _unbroadcast(cot, a.data.shape),
        lambda out, cot, a, b: _unbroadcast(cot, b.data.shape),
    ),
    "sub": (
        lambda out, cot, a, b: _unbroadcast(cot, a.data.shape),
        lambda out, cot, a, b: _unbroadcast(neg(cot), b.data.shape),
    ),
    "mul": (
        lambda out, cot, a, b: _unbroadcast(mul(cot, b), a.data.shape),
        lambda out, cot, a, b: _unbroadcast(mul(cot, a), b.data.shape),
    ),
    "neg": (lambda out, cot, a: neg(cot),),
    "matvec": (
        lambda out, cot, a, v: outer(cot, v),
        lambda out, cot, a, v: tmatvec(a, cot),
    ),
    "tmatvec": (
        lambda out, cot, a, v: outer(v, cot),
        lambda out, cot, a, v: matvec(a, cot),
    ),
    "outer": (
        lambda out, cot, u, v: matvec(cot, v),
        lambda out, cot, u, v: tmatvec(cot, u),
    ),
    "tanh": (lambda out, cot, a: mul(cot, sub(constant(1.0), mul(out, out))),),
    # elu' = 1 on the positive side, elu+1 = e^x on the other; attrs holds the mask
    "elu": (
        lambda out, cot, a: mul(
            cot,
            add(constant(out.attrs), mul(constant(1.0 - out.attrs), add(out, constant(1.0)))),
        ),
    ),
    "exp": (lambda out, cot, a: mul(cot, out),),
    "log": (lambda out, cot, a: mul(cot, powc(a, -1.0)),),
    "powc": (
        lambda out, cot, a: mul(cot, mul(constant(out.attrs), powc(a, out.attrs - 1.0))),
    ),
    "sumall": (lambda out, cot, a: mul(cot, constant(np.ones(out.attrs))),),
    "vslice": (lambda out, cot, a: vpad(cot, out.attrs[0], out.attrs[2]),),
    "vpad": (lambda out, cot, a: vslice(cot, out.attrs[0], out.attrs[0] + out.attrs[1]),),
    "concat": None,  # handled specially (variadic)
    "reshape": (lambda out, cot, a: reshape(cot, out.attrs),),
    "clip_min": (lambda out, cot, a: mul(cot, constant(out.attrs)),),
    "sxent": (_vjp_sxent,),
}


def _parent_cotangent(node: Tensor, cot: Tensor, i: int) -> Tensor:
    if node.op == "concat":
        off = sum(node.attrs[:i])
        return vslice(cot, off, off + node.attrs[i])
    return _VJPS[node.op][i](node, cot, *node.parents)


def _reachable(out: Tensor) -> list[Tensor]:
    seen = {out.tid: out}
    stack = [out]
    while stack:
        node = stack.pop()
        for p in node.parents:
            if p.tid not in seen:
                seen[p.tid] = p
                stack.append(p)
    return list(seen.values())


def grad_tensor(out: Tensor, wrt: Tensor, check_finite: bool = True) -> Tensor:
    """Cotangent of scalar ``out`` at node ``wrt``; differentiable again.

    Raises GraphError for non-scalar outputs, NumericError (with the node id)
    if any forward value reachable from ``out`` is NaN/Inf.
    """
    if out.data.shape != ():
        raise GraphError(f"gradient target must be scalar, got shape {out.data.shape}")
    nodes = _reachable(out)
    if check_finite:
        for node in nodes:
            if not node._finite_ok:
                if not np.all(np.isfinite(node.data)):
                    raise NumericError(
                        f"non-finite forward value in op {node.op!r} (node {node.tid})",
                        node.tid,
                    )
                node._finite_ok = True
    nodes.sort(key=lambda n: n.tid, reverse=True)
    # descending creation order is a reverse topological order, so by the time
    # the walk reaches wrt every contribution to it has been accumulated
    cots: dict[int, Tensor] = {out.tid: constant(1.0)}
    for node in nodes:
        cot = cots.pop(node.tid, None)
        if cot is None:
            continue
        if node.tid == wrt.tid:
            return cot
        for i, parent in enumerate(node.parents):
            if not parent.requires_grad and parent.tid != wrt.tid:
                continue
            contrib = _parent_cotangent(node, cot, i)
            prev = cots.get(parent.tid)
            cots[parent.tid] = contrib if prev is None else add(prev, contrib)
    return constant(np.zeros_like(wrt.data))


# --- flat parameter vectors --------------------------------------------------


@dataclass(frozen=True)
class ParamVector:
    """Flat float64 vector with named, shaped segments.

    Immutable value type; arithmetic produces new vectors.
    """

    values: np.ndarray
    segments: tuple[tuple[str, int, tuple[int, ...]], ...]

    def __post_init__(self):
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "segments", tuple(
            (name, int(off), tuple(int(s) for s in shape))
            for name, off, shape in self.segments
        ))
        total = sum(int(np.prod(shape, dtype=int)) for _, _, shape in self.segments)
        if total != self.values.shape[0]:
            raise GraphError(
                f"segment sizes sum to {total}, vector has {self.values.shape[0]}"
            )

    @classmethod
    def from_arrays(cls, named: Sequence[tuple[str, np.ndarray]]) -> "ParamVector":
        segs, flats, off = [], [], 0
        for name, arr in named:
            arr = np.asarray(arr, dtype=np.float64)
            segs.append((name, off, arr.shape))
            flats.append(arr.ravel())
            off += arr.size
        return cls(np.concatenate(flats) if flats else np.zeros(0), tuple(segs))

    def segment(self, name: str) -> np.ndarray:
        for seg_name, off, shape in self.segments:
            if seg_name == name:
                size = int(np.prod(shape, dtype=int))
                return self.values[off:off + size].reshape(shape)
        raise KeyError(name)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        if np.shape(values) != self.values.shape:
            raise GraphError("replacement values have a different length")
        return ParamVector(values, self.segments)

    def __len__(self):
        return self.values.shape[0]


def segment_tensors(pt: Tensor, pv: ParamVector) -> dict[str, Tensor]:
    """Slice a flat parameter Tensor into named, shaped sub-tensors."""
    out = {}
    for name, off, shape in pv.segments:
        size = int(np.prod(shape, dtype=int))
        t = vslice(pt, off, off + size)
        if shape != (size,):
            t = reshape(t, shape)
        out[name] = t
    return out


def _as_scalar_graph(f, p: ParamVector) -> tuple[Tensor, Tensor]:
    pt = leaf(p.values)
    out = f(pt)
    if not isinstance(out, Tensor):
        raise GraphError("graph-building function must return a Tensor")
    if out.data.shape != ():
        raise GraphError(f"graph output must be scalar, got shape {out.data.shape}")
    return out, pt


def grad(f, p: ParamVector) -> ParamVector:
    """Gradient of the scalar graph built by ``f`` at ``p``."""
    out, pt = _as_scalar_graph(f, p)
    g = grad_tensor(out, pt)
    return p.with_values(g.data)


def grad_of_grad_dot(f, p: ParamVector, v: ParamVector) -> ParamVector:
    """Hessian-vector product H(p) @ v via double backward on <grad f, v>."""
    if len(v) != len(p):
        raise GraphError("direction vector length mismatch")
    out, pt = _as_scalar_graph(f, p)
    g = grad_tensor(out, pt)
    s = sumall(mul(g, constant(v.values)))
    h = grad_tensor(s, pt)
    return p.with_values(h.data)


def apply_sgd(p: ParamVector, g: ParamVector, lr: float) -> ParamVector:
    """One gradient-descent step p - lr * g; inputs are left untouched."""
    if len(g) != len(p):
        raise GraphError("gradient length mismatch")
    if not math.isfinite(lr):
        raise GraphError("learning rate must be finite")
    return p.with_values(p.values - lr * g.values)
