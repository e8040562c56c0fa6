"""Dense float64 arrays with reverse-mode automatic differentiation.

The design is define-by-run: every operation whose inputs live on a Tape
records a backward rule onto that tape, and ``Tape.backward`` replays the
records in reverse to accumulate gradients. Arrays without a tape behave as
constants, so the same forward code serves both training and evaluation.
"""

from __future__ import annotations

import numpy as np

from .. import _kernels
from ..errors import ContractError, DomainError, ShapeMismatchError

__all__ = [
    "NumArray",
    "Tape",
    "array",
    "constant",
    "matmul",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "exp",
    "log",
    "tanh",
    "square",
    "sqrt",
    "relu",
    "reduce_sum",
    "reduce_mean",
    "softmax",
    "reshape",
    "transpose",
    "concat",
    "gather_rows",
    "window_concat",
    "masked_max",
    "l2_normalize",
    "sq_euclidean",
]


class NumArray:
    """A dense float64 array, optionally attached to a differentiation tape."""

    __slots__ = ("values", "tape", "node_id")

    def __init__(self, values, tape: "Tape | None" = None, node_id: int | None = None):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.tape = tape
        if tape is not None and node_id is None:
            node_id = tape.new_id()
        self.node_id = node_id

    @property
    def shape(self):
        return list(self.values.shape)

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() requires a scalar, got shape {self.shape}")
        return float(self.values.reshape(()))

    def __repr__(self):
        return f"NumArray(shape={self.shape}, tape={'yes' if self.tape else 'no'})"


class Tape:
    """Ordered record of operations for reverse-mode differentiation.

    Records are appended in execution order, so replaying them in reverse is
    a valid topological traversal; each node's gradient is accumulated before
    any of its producers are visited.
    """

    def __init__(self):
        self._records: list[tuple[int, tuple[int, ...], object]] = []
        self._next_id = 0

    def new_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def record(self, out_id: int, in_ids: tuple[int, ...], backward_fn) -> None:
        self._records.append((out_id, in_ids, backward_fn))

    def __len__(self):
        return len(self._records)

    def backward(self, loss: NumArray) -> dict[int, np.ndarray]:
        """Gradient of a scalar loss w.r.t. every node reachable from it."""
        if loss.tape is not self or loss.node_id is None:
            raise ContractError("loss was not produced on this tape")
        if loss.values.size != 1:
            raise ContractError(f"loss must be scalar, got shape {list(loss.values.shape)}")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.values)}
        for out_id, in_ids, backward_fn in reversed(self._records):
            g_out = grads.get(out_id)
            if g_out is None:
                continue
            for in_id, g_in in zip(in_ids, backward_fn(g_out)):
                if in_id is None or g_in is None:
                    continue
                acc = grads.get(in_id)
                grads[in_id] = g_in if acc is None else acc + g_in
        return grads


def array(values, tape: Tape | None = None) -> NumArray:
    """Create a (leaf) array, registering it on the tape if one is given."""
    return NumArray(values, tape=tape)


def constant(values) -> NumArray:
    return NumArray(values, tape=None)


def _coerce(x) -> NumArray:
    if isinstance(x, NumArray):
        return x
    return NumArray(np.asarray(x, dtype=np.float64))


def _tape_of(*arrays: NumArray) -> Tape | None:
    tape = None
    for a in arrays:
        if a.tape is not None:
            if tape is not None and tape is not a.tape:
                raise ContractError("operands live on different tapes")
            tape = a.tape
    return tape


def _result(values, inputs: tuple[NumArray, ...], backward_fn) -> NumArray:
    """Wrap op output; record the backward rule if any input is on a tape."""
    tape = _tape_of(*inputs)
    out = NumArray(values, tape=tape)
    if tape is not None:
        in_ids = tuple(a.node_id if a.tape is tape else None for a in inputs)
        tape.record(out.node_id, in_ids, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# binary / unary elementwise


def add(a, b) -> NumArray:
    a, b = _coerce(a), _coerce(b)
    out = a.values + b.values
    sa, sb = a.values.shape, b.values.shape
    return _result(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> NumArray:
    a, b = _coerce(a), _coerce(b)
    out = a.values - b.values
    sa, sb = a.values.shape, b.values.shape
    return _result(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> NumArray:
    a, b = _coerce(a), _coerce(b)
    out = a.values * b.values
    sa, sb = a.values.shape, b.values.shape
    av, bv = a.values, b.values
    return _result(out, (a, b), lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)))


def div(a, b) -> NumArray:
    a, b = _coerce(a), _coerce(b)
    out = a.values / b.values
    sa, sb = a.values.shape, b.values.shape
    av, bv = a.values, b.values
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, sa), _unbroadcast(-g * av / (bv * bv), sb)),
    )


def neg(a) -> NumArray:
    a = _coerce(a)
    return _result(-a.values, (a,), lambda g: (-g,))


def exp(a) -> NumArray:
    a = _coerce(a)
    out = np.exp(a.values)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> NumArray:
    a = _coerce(a)
    if np.any(a.values <= 0.0):
        raise DomainError("log requires strictly positive input")
    av = a.values
    return _result(np.log(av), (a,), lambda g: (g / av,))


def tanh(a) -> NumArray:
    a = _coerce(a)
    out = np.tanh(a.values)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def square(a) -> NumArray:
    a = _coerce(a)
    av = a.values
    return _result(av * av, (a,), lambda g: (2.0 * g * av,))


def sqrt(a) -> NumArray:
    a = _coerce(a)
    if np.any(a.values < 0.0):
        raise DomainError("sqrt requires nonnegative input")
    out = np.sqrt(a.values)
    return _result(out, (a,), lambda g: (g / (2.0 * out),))


def relu(a) -> NumArray:
    a = _coerce(a)
    mask = a.values > 0.0
    return _result(np.where(mask, a.values, 0.0), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# linear algebra / structure


def matmul(a, b) -> NumArray:
    a, b = _coerce(a), _coerce(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.values.shape[1] != b.values.shape[0]:
        raise ShapeMismatchError(
            f"matmul requires (m,k)x(k,n), got {list(a.values.shape)} and {list(b.values.shape)}"
        )
    av, bv = a.values, b.values
    return _result(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def reshape(a, shape) -> NumArray:
    a = _coerce(a)
    old = a.values.shape
    return _result(a.values.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a) -> NumArray:
    a = _coerce(a)
    if a.values.ndim != 2:
        raise ShapeMismatchError(f"transpose requires a matrix, got shape {a.shape}")
    return _result(a.values.T.copy(), (a,), lambda g: (g.T,))


def concat(arrays, axis: int = 0) -> NumArray:
    arrays = [_coerce(a) for a in arrays]
    if not arrays:
        raise ContractError("concat requires at least one array")
    out = np.concatenate([a.values for a in arrays], axis=axis)
    sizes = [a.values.shape[axis] for a in arrays]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _result(out, tuple(arrays), backward)


def reduce_sum(a, axis=None, keepdims: bool = False) -> NumArray:
    a = _coerce(a)
    shape = a.values.shape
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(out, (a,), backward)


def reduce_mean(a, axis=None, keepdims: bool = False) -> NumArray:
    a = _coerce(a)
    shape = a.values.shape
    count = a.values.size if axis is None else shape[axis]
    out = a.values.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy() / count,)

    return _result(out, (a,), backward)


def softmax(a, axis: int = -1) -> NumArray:
    """Stable softmax along an axis; each slice sums to 1."""
    a = _coerce(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return _result(out, (a,), backward)


def gather_rows(table, idx) -> NumArray:
    """Select rows of a matrix by integer index (duplicates allowed)."""
    table = _coerce(table)
    idx = np.asarray(idx, dtype=np.int64)
    if table.values.ndim != 2:
        raise ShapeMismatchError(f"gather_rows requires a matrix, got shape {table.shape}")
    tv = table.values
    out = tv[idx]

    def backward(g):
        gt = np.zeros_like(tv)
        np.add.at(gt, idx, g)
        return (gt,)

    return _result(out, (table,), backward)


def window_concat(a, window: int) -> NumArray:
    """Per-position concatenation of a sliding window of rows (im2col).

    a: (B, L, D) -> (B, L, window*D), zero padded at the sequence edges.
    """
    a = _coerce(a)
    if a.values.ndim != 3:
        raise ShapeMismatchError(f"window_concat requires (B,L,D), got shape {a.shape}")
    d = a.values.shape[2]
    out = _kernels.window_concat_forward(a.values, window)
    return _result(out, (a,), lambda g: (_kernels.window_concat_backward(g, window, d),))


def masked_max(a, lengths) -> NumArray:
    """Max over the first lengths[b] sequence positions. a: (B, L, H) -> (B, H)."""
    a = _coerce(a)
    if a.values.ndim != 3:
        raise ShapeMismatchError(f"masked_max requires (B,L,H), got shape {a.shape}")
    lengths = np.asarray(lengths, dtype=np.int64)
    if np.any(lengths < 1):
        raise ContractError("masked_max requires every length >= 1")
    seq_len = a.values.shape[1]
    out, arg = _kernels.masked_max_forward(a.values, lengths)
    return _result(out, (a,), lambda g: (_kernels.masked_max_backward(g, arg, seq_len),))


# ---------------------------------------------------------------------------
# composites used throughout the model


def l2_normalize(a) -> NumArray:
    """Scale a vector to unit Euclidean norm; rejects near-zero vectors."""
    a = _coerce(a)
    norm = float(np.linalg.norm(a.values))
    if norm <= 1e-12:
        raise DomainError(f"cannot normalize near-zero vector (norm={norm:.3e})")
    return div(a, sqrt(reduce_sum(square(a))))


def sq_euclidean(a, b) -> NumArray:
    """Squared Euclidean distance between two equal-length vectors."""
    a, b = _coerce(a), _coerce(b)
    if a.values.shape != b.values.shape:
        raise ShapeMismatchError(
            f"sq_euclidean requires equal shapes, got {list(a.values.shape)} and {list(b.values.shape)}"
        )
    return reduce_sum(square(sub(a, b)))
