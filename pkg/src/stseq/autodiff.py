"""Minimal reverse-mode autodiff over dense numpy arrays.

An :class:`Array` wraps a float32/float64 ndarray. Operations executed while
a :class:`Tape` is active (and gradients are enabled) append entries to the
tape; ``Tape.backward(loss)`` replays them in reverse, filling ``.grad`` on
every reachable leaf created with ``requires_grad=True``.

Broadcasting in binary elementwise ops is deliberately narrow: the second
operand may be a scalar, or its shape may equal the trailing dimensions of
the first (so a length-d vector broadcasts over (n, d) rows, and a (k, d)
block over (t, k, d)). Anything richer raises ``DimensionError``.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError

RMSNORM_EPS = 1e-5

_node_ids = itertools.count()
_TAPE_STACK: list["Tape"] = []
_grad_enabled = True


class Array:
    """Dense float array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "node_id")

    def __init__(self, data: np.ndarray, requires_grad: bool = False):
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Array(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def array(values, dtype=None, requires_grad: bool = False) -> Array:
    """Create an Array, defaulting to float64 for non-float input."""
    data = np.asarray(values, dtype=dtype)
    if data.dtype not in (np.float32, np.float64):
        data = data.astype(np.float64)
    return Array(data, requires_grad=requires_grad)


def param(values, dtype=None) -> Array:
    return array(values, dtype=dtype, requires_grad=True)


class TapeEntry:
    __slots__ = ("kind", "inputs", "input_ids", "output_id", "backward_fn")

    def __init__(self, kind, inputs, output_id, backward_fn):
        self.kind = kind
        self.inputs = inputs
        self.input_ids = tuple(a.node_id for a in inputs)
        self.output_id = output_id
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of executed ops; append order is topological."""

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def record(self, kind: str, inputs: Sequence[Array], output: Array,
               backward_fn: Callable) -> None:
        self.entries.append(TapeEntry(kind, tuple(inputs), output.node_id, backward_fn))
        self._produced.add(output.node_id)

    def backward(self, loss: Array) -> None:
        """Reverse replay from a scalar loss; fills .grad on reachable leaves."""
        if loss.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            gout = grads.pop(entry.output_id, None)
            if gout is None:
                continue
            in_grads = entry.backward_fn(gout)
            for arr, ig in zip(entry.inputs, in_grads):
                if ig is None:
                    continue
                if arr.node_id in self._produced:
                    cur = grads.get(arr.node_id)
                    # never mutate stored buffers in place: backward_fns may alias
                    grads[arr.node_id] = ig if cur is None else cur + ig
                elif arr.requires_grad:
                    if arr.grad is None:
                        arr.grad = np.zeros_like(arr.data)
                    arr.grad += ig


@contextmanager
def no_grad():
    """Disable recording; everything computed inside is a constant."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _result(kind: str, inputs: tuple[Array, ...], out_data: np.ndarray,
            backward_fn: Callable) -> Array:
    if _grad_enabled and _TAPE_STACK and any(a.requires_grad for a in inputs):
        out = Array(out_data, requires_grad=True)
        _TAPE_STACK[-1].record(kind, inputs, out, backward_fn)
        return out
    return Array(out_data)


def _check_same_dtype(a: Array, b: Array, op: str) -> None:
    if a.data.dtype != b.data.dtype:
        raise DimensionError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Array, b: Array) -> Array:
    """Matrix product; 2-d, or 3-d with equal leading (batch) dimension."""
    _check_same_dtype(a, b, "matmul")
    ad, bd = a.data, b.data
    if ad.ndim != bd.ndim or ad.ndim not in (2, 3):
        raise DimensionError(f"matmul: unsupported ranks {ad.shape} x {bd.shape}")
    if ad.shape[-1] != bd.shape[-2] or (ad.ndim == 3 and ad.shape[0] != bd.shape[0]):
        raise DimensionError(f"matmul: incompatible shapes {ad.shape} x {bd.shape}")
    out = np.matmul(ad, bd)

    def bwd(g):
        ga = np.matmul(g, bd.swapaxes(-1, -2)) if a.requires_grad else None
        gb = np.matmul(ad.swapaxes(-1, -2), g) if b.requires_grad else None
        return ga, gb

    return _result("matmul", (a, b), out, bwd)


def transpose_last2(a: Array) -> Array:
    out = a.data.swapaxes(-1, -2)

    def bwd(g):
        return (g.swapaxes(-1, -2),)

    return _result("transpose_last2", (a,), out, bwd)


def permute(a: Array, axes: tuple[int, ...]) -> Array:
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    inv = np.argsort(axes)

    def bwd(g):
        return (np.ascontiguousarray(np.transpose(g, inv)),)

    return _result("permute", (a,), out, bwd)


def reshape(a: Array, shape: tuple[int, ...]) -> Array:
    old = a.data.shape
    out = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(old),)

    return _result("reshape", (a,), out, bwd)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _broadcast_kind(a: Array, b: Array, op: str) -> str:
    """'equal', 'scalar' (b is size-1) or 'trailing' (b matches a's trailing dims)."""
    if a.data.shape == b.data.shape:
        return "equal"
    if b.data.size == 1:
        return "scalar"
    nd = b.data.ndim
    if nd <= a.data.ndim and a.data.shape[a.data.ndim - nd:] == b.data.shape:
        return "trailing"
    raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} are not broadcastable "
                         "(allowed: equal, scalar, or trailing-dimension match)")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...], kind: str) -> np.ndarray:
    if kind == "equal":
        return g
    if kind == "scalar":
        return g.sum().reshape(shape)
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead)))


def add(a: Array, b: Array) -> Array:
    _check_same_dtype(a, b, "add")
    kind = _broadcast_kind(a, b, "add")
    out = a.data + b.data

    def bwd(g):
        ga = g if a.requires_grad else None
        gb = _reduce_to(g, b.data.shape, kind) if b.requires_grad else None
        return ga, gb

    return _result("add", (a, b), out, bwd)


def sub(a: Array, b: Array) -> Array:
    _check_same_dtype(a, b, "sub")
    kind = _broadcast_kind(a, b, "sub")
    out = a.data - b.data

    def bwd(g):
        ga = g if a.requires_grad else None
        gb = -_reduce_to(g, b.data.shape, kind) if b.requires_grad else None
        return ga, gb

    return _result("sub", (a, b), out, bwd)


def mul(a: Array, b: Array) -> Array:
    _check_same_dtype(a, b, "mul")
    kind = _broadcast_kind(a, b, "mul")
    ad, bd = a.data, b.data
    out = ad * bd

    def bwd(g):
        ga = g * bd if a.requires_grad else None
        gb = _reduce_to(g * ad, bd.shape, kind) if b.requires_grad else None
        return ga, gb

    return _result("mul", (a, b), out, bwd)


def scale(a: Array, s: float) -> Array:
    ad = a.data
    out = ad * ad.dtype.type(s)

    def bwd(g):
        return (g * ad.dtype.type(s),)

    return _result("scale", (a,), out, bwd)


def gelu(a: Array) -> Array:
    ad = a.data
    flat = np.ascontiguousarray(ad).ravel()
    out = kernels.gelu_fwd(flat).reshape(ad.shape)

    def bwd(g):
        gf = np.ascontiguousarray(g).ravel()
        return (kernels.gelu_bwd(flat, gf).reshape(ad.shape),)

    return _result("gelu", (a,), out, bwd)


# ---------------------------------------------------------------------------
# normalization / attention pieces
# ---------------------------------------------------------------------------

def softmax_lastdim(a: Array) -> Array:
    ad = a.data
    if ad.ndim < 1 or ad.shape[-1] == 0:
        raise DimensionError(f"softmax_lastdim: empty last dimension in shape {ad.shape}")
    rows = np.ascontiguousarray(ad).reshape(-1, ad.shape[-1])
    y = kernels.softmax_rows_fwd(rows)
    out = y.reshape(ad.shape)

    def bwd(g):
        g2 = np.ascontiguousarray(g).reshape(-1, ad.shape[-1])
        return (kernels.softmax_rows_bwd(y, g2).reshape(ad.shape),)

    return _result("softmax_lastdim", (a,), out, bwd)


def rmsnorm(a: Array, gain: Array) -> Array:
    """Normalize the last dim to unit RMS, then scale by gain. eps is fixed."""
    _check_same_dtype(a, gain, "rmsnorm")
    ad = a.data
    if gain.data.ndim != 1 or gain.data.shape[0] != ad.shape[-1]:
        raise DimensionError(f"rmsnorm: gain shape {gain.data.shape} does not match last dim of {ad.shape}")
    x2 = np.ascontiguousarray(ad).reshape(-1, ad.shape[-1])
    y, inv_rms = kernels.rmsnorm_fwd(x2, gain.data, RMSNORM_EPS)
    out = y.reshape(ad.shape)

    def bwd(g):
        g2 = np.ascontiguousarray(g).reshape(-1, ad.shape[-1])
        gx, ggain = kernels.rmsnorm_bwd(x2, gain.data, inv_rms, g2)
        return (gx.reshape(ad.shape) if a.requires_grad else None,
                ggain if gain.requires_grad else None)

    return _result("rmsnorm", (a, gain), out, bwd)


def rope(a: Array, cos: np.ndarray, sin: np.ndarray) -> Array:
    """Rotate interleaved feature pairs of a (heads, length, head_dim) array.

    cos/sin are (length, head_dim/2) constants precomputed from position ids.
    """
    ad = a.data
    if ad.ndim != 3 or ad.shape[2] % 2 != 0:
        raise DimensionError(f"rope: need (heads, length, even head_dim), got {ad.shape}")
    if cos.shape != (ad.shape[1], ad.shape[2] // 2):
        raise DimensionError(f"rope: cos/sin shape {cos.shape} does not match input {ad.shape}")
    out = kernels.rope_fwd(np.ascontiguousarray(ad), cos, sin)

    def bwd(g):
        return (kernels.rope_fwd(np.ascontiguousarray(g), cos, -sin),)

    return _result("rope", (a,), out, bwd)


# ---------------------------------------------------------------------------
# gather / scatter / concat
# ---------------------------------------------------------------------------

def embed(table: Array, ids: Sequence[int]) -> Array:
    idx = np.asarray(ids, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError(f"embed: id out of range [0, {table.data.shape[0]}) in {ids}")
    out = table.data[idx]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _result("embed", (table,), out, bwd)


def take_rows(a: Array, indices: Sequence[int]) -> Array:
    """Select along axis 0; backward scatter-adds into the source."""
    idx = np.asarray(indices, dtype=np.intp)
    out = a.data[idx]

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _result("take_rows", (a,), out, bwd)


def concat_rows(parts: Sequence[Array]) -> Array:
    parts = tuple(parts)
    trailing = {p.data.shape[1:] for p in parts}
    if len(trailing) != 1:
        raise DimensionError(f"concat_rows: trailing dims differ: {[p.data.shape for p in parts]}")
    out = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(g[offsets[i]:offsets[i + 1]] if p.requires_grad else None
                     for i, p in enumerate(parts))

    return _result("concat_rows", parts, out, bwd)


# ---------------------------------------------------------------------------
# reductions / losses
# ---------------------------------------------------------------------------

def mean_axis0(a: Array) -> Array:
    n = a.data.shape[0]
    out = a.data.mean(axis=0)

    def bwd(g):
        return (np.broadcast_to(g / n, a.data.shape),)

    return _result("mean_axis0", (a,), out, bwd)


def sum_all(a: Array) -> Array:
    out = a.data.sum()

    def bwd(g):
        return (np.broadcast_to(g, a.data.shape),)

    return _result("sum_all", (a,), np.asarray(out), bwd)


def cross_entropy(logits: Array, targets: Sequence[int], ignore: Sequence[bool]) -> Array:
    """Mean next-token NLL over non-ignored positions.

    targets[t] is the vocabulary id expected at row t of logits; rows where
    ignore[t] is True do not contribute.
    """
    ld = logits.data
    n, vocab = ld.shape
    if len(targets) != n or len(ignore) != n:
        raise DimensionError(f"cross_entropy: {n} logit rows but {len(targets)} targets / {len(ignore)} ignore flags")
    keep = np.flatnonzero(~np.asarray(ignore, dtype=bool))
    if keep.size == 0:
        raise ContractError("cross_entropy: every position is ignored")
    tgt = np.asarray(targets, dtype=np.intp)[keep]
    if tgt.min() < 0 or tgt.max() >= vocab:
        raise IndexError(f"cross_entropy: target id out of vocabulary range [0, {vocab})")

    rows = ld[keep]
    m = rows.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(rows - m).sum(axis=1))
    nll = lse - rows[np.arange(keep.size), tgt]
    out = np.asarray(nll.mean(), dtype=ld.dtype)

    def bwd(g):
        p = np.exp(rows - lse[:, None])
        p[np.arange(keep.size), tgt] -= 1.0
        gl = np.zeros_like(ld)
        gl[keep] = p * (g / ld.dtype.type(keep.size))
        return (gl,)

    return _result("cross_entropy", (logits,), out, bwd)


def mse_pairs(a: Array, b) -> Array:
    """Mean of elementwise squared difference; b is treated as a constant."""
    bd = b.data if isinstance(b, Array) else np.asarray(b)
    if a.data.shape != bd.shape:
        raise DimensionError(f"mse_pairs: shapes {a.data.shape} and {bd.shape} differ")
    diff = a.data - bd
    out = np.asarray(np.mean(diff * diff), dtype=a.data.dtype)

    def bwd(g):
        return (g * diff * a.data.dtype.type(2.0 / diff.size),)

    return _result("mse_pairs", (a,), out, bwd)
