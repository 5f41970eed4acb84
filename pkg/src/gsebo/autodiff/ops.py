"""Primitive operations recorded on a :class:`Tape`.

Each primitive has a numpy ``forward`` and a ``backward`` that builds the
input cotangents out of other primitives, which is what makes second-order
differentiation work.
"""
import numpy as np

from ..exceptions import ContractError
from .tape import Node


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    return None


def _apply(op, *inputs, **aux):
    # plain arrays in, plain array out: handy outside of any tape
    tape = _tape_of(*inputs)
    if tape is None:
        return op.forward(*(np.asarray(x, dtype=np.float64) for x in inputs), **aux)
    return tape.record(op, inputs, **aux)


class Op:
    name = "op"

    @staticmethod
    def forward(*values, **aux):
        raise NotImplementedError

    @staticmethod
    def backward(node, g, needs):
        raise NotImplementedError


# -- elementwise ---------------------------------------------------------------


class Add(Op):
    name = "add"

    @staticmethod
    def forward(a, b):
        return a + b

    @staticmethod
    def backward(node, g, needs):
        return g, g


class Sub(Op):
    name = "sub"

    @staticmethod
    def forward(a, b):
        return a - b

    @staticmethod
    def backward(node, g, needs):
        return g, (scale(g, -1.0) if needs[1] else None)


class Scale(Op):
    name = "scale"

    @staticmethod
    def forward(a, c):
        return a * c

    @staticmethod
    def backward(node, g, needs):
        return (scale(g, node.aux["c"]),)


class Mul(Op):
    name = "mul"

    @staticmethod
    def forward(a, b):
        return a * b

    @staticmethod
    def backward(node, g, needs):
        a, b = node.inputs
        return (mul(g, b) if needs[0] else None, mul(g, a) if needs[1] else None)


class MulConst(Op):
    name = "mul_const"

    @staticmethod
    def forward(a, c):
        return a * c

    @staticmethod
    def backward(node, g, needs):
        return (mul_const(g, node.aux["c"]),)


class Dropout(MulConst):
    """Multiplication by a recorded, pre-scaled keep mask."""

    name = "dropout"


class ScaleBy(Op):
    """Array times a scalar node."""

    name = "scale_by"

    @staticmethod
    def forward(x, s):
        return x * s

    @staticmethod
    def backward(node, g, needs):
        x, s = node.inputs
        gx = scale_by(g, s) if needs[0] else None
        gs = sum(mul(g, x)) if needs[1] else None
        return gx, gs


class Relu(Op):
    name = "relu"

    @staticmethod
    def forward(x):
        return np.maximum(x, 0.0)

    @staticmethod
    def backward(node, g, needs):
        x = node.inputs[0].value
        return (mul_const(g, (x > 0).astype(np.float64)),)


class LeakyRelu(Op):
    name = "leaky_relu"

    @staticmethod
    def forward(x, slope):
        return np.where(x > 0, x, slope * x)

    @staticmethod
    def backward(node, g, needs):
        x = node.inputs[0].value
        return (mul_const(g, np.where(x > 0, 1.0, node.aux["slope"])),)


class Clamp01(Op):
    name = "clamp01"

    @staticmethod
    def forward(x):
        return np.minimum(np.maximum(x, 0.0), 1.0)

    @staticmethod
    def backward(node, g, needs):
        x = node.inputs[0].value
        return (mul_const(g, ((x > 0) & (x < 1)).astype(np.float64)),)


# -- reductions and shape --------------------------------------------------------


class Sum(Op):
    name = "sum"

    @staticmethod
    def forward(x):
        return np.asarray(x.sum())

    @staticmethod
    def backward(node, g, needs):
        return (broadcast(g, node.inputs[0].shape),)


class Broadcast(Op):
    name = "broadcast"

    @staticmethod
    def forward(s, shape):
        return np.full(shape, float(s))

    @staticmethod
    def backward(node, g, needs):
        return (sum(g),)


class Reshape(Op):
    name = "reshape"

    @staticmethod
    def forward(x, shape):
        return x.reshape(shape)

    @staticmethod
    def backward(node, g, needs):
        return (reshape(g, node.inputs[0].shape),)


class Transpose(Op):
    name = "transpose"

    @staticmethod
    def forward(x):
        return np.ascontiguousarray(x.T)

    @staticmethod
    def backward(node, g, needs):
        return (transpose(g),)


class ConcatCols(Op):
    name = "concat_cols"

    @staticmethod
    def forward(*xs):
        return np.concatenate(xs, axis=1)

    @staticmethod
    def backward(node, g, needs):
        out, start = [], 0
        for x, m in zip(node.inputs, needs):
            stop = start + x.shape[1]
            out.append(slice_cols(g, start, stop) if m else None)
            start = stop
        return tuple(out)


class SliceCols(Op):
    name = "slice_cols"

    @staticmethod
    def forward(x, start, stop):
        return np.ascontiguousarray(x[:, start:stop])

    @staticmethod
    def backward(node, g, needs):
        x = node.inputs[0]
        rows, cols = x.shape
        start, stop = node.aux["start"], node.aux["stop"]
        tape = node.tape
        left = tape.constant(np.zeros((rows, start)))
        right = tape.constant(np.zeros((rows, cols - stop)))
        return (concat_cols(left, g, right),)


class Take(Op):
    """Gather along the first axis."""

    name = "take"

    @staticmethod
    def forward(x, idx):
        return x[idx]

    @staticmethod
    def backward(node, g, needs):
        return (scatter_add(g, node.aux["idx"], node.inputs[0].shape[0]),)


class ScatterAdd(Op):
    name = "scatter_add"

    @staticmethod
    def forward(x, idx, size):
        out = np.zeros((size,) + x.shape[1:])
        np.add.at(out, idx, x)
        return out

    @staticmethod
    def backward(node, g, needs):
        return (take(g, node.aux["idx"]),)


# -- linear algebra ----------------------------------------------------------------


class MatMul(Op):
    name = "matmul"

    @staticmethod
    def forward(a, b):
        return a @ b

    @staticmethod
    def backward(node, g, needs):
        a, b = node.inputs
        ga = matmul(g, transpose(b)) if needs[0] else None
        gb = matmul(transpose(a), g) if needs[1] else None
        return ga, gb


class SpMM(Op):
    """``out[i] = sum_j values[ij] * dense[j]`` over the stored entries of row i."""

    name = "spmm"

    @staticmethod
    def forward(values, dense, pattern):
        # scipy's CSR kernel accumulates each row in stored (ascending column) order
        return np.asarray(pattern.to_scipy(values) @ dense)

    @staticmethod
    def backward(node, g, needs):
        values, dense = node.inputs
        pattern = node.aux["pattern"]
        gv = sddmm(pattern, g, dense) if needs[0] else None
        gd = spmm(pattern, take(values, pattern.transpose_perm), g) if needs[1] else None
        return gv, gd


class SDDMM(Op):
    """Per stored entry ``(i, j)``: dot product of ``left[i]`` and ``right[j]``."""

    name = "sddmm"

    @staticmethod
    def forward(left, right, pattern):
        return np.einsum("ij,ij->i", left[pattern.rows], right[pattern.col_indices])

    @staticmethod
    def backward(node, g, needs):
        left, right = node.inputs
        pattern = node.aux["pattern"]
        gl = spmm(pattern, g, right) if needs[0] else None
        gr = spmm(pattern, take(g, pattern.transpose_perm), left) if needs[1] else None
        return gl, gr


# -- softmax family -------------------------------------------------------------


def _softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class Softmax(Op):
    name = "softmax"

    @staticmethod
    def forward(x):
        return _softmax_rows(x)

    @staticmethod
    def backward(node, g, needs):
        inner = sub(g, rowsum_bcast(mul(g, node)))
        return (mul(node, inner),)


class RowSumBcast(Op):
    """Row sums broadcast back over the row (self-adjoint)."""

    name = "rowsum_bcast"

    @staticmethod
    def forward(x):
        return np.broadcast_to(x.sum(axis=1, keepdims=True), x.shape).copy()

    @staticmethod
    def backward(node, g, needs):
        return (rowsum_bcast(g),)


class SegmentSoftmax(Op):
    """Softmax of per-entry scores within each CSR row."""

    name = "segment_softmax"

    @staticmethod
    def forward(e, pattern):
        if e.size == 0:
            return e.copy()
        rows = pattern.rows
        row_max = np.full(pattern.n, -np.inf)
        np.maximum.at(row_max, rows, e)
        ex = np.exp(e - row_max[rows])
        denom = np.bincount(rows, weights=ex, minlength=pattern.n)
        return ex / denom[rows]

    @staticmethod
    def backward(node, g, needs):
        pattern = node.aux["pattern"]
        inner = sub(g, segsum_bcast(mul(g, node), pattern))
        return (mul(node, inner),)


class SegSumBcast(Op):
    name = "segsum_bcast"

    @staticmethod
    def forward(x, pattern):
        sums = np.bincount(pattern.rows, weights=x, minlength=pattern.n)
        return sums[pattern.rows]

    @staticmethod
    def backward(node, g, needs):
        return (segsum_bcast(g, node.aux["pattern"]),)


class MaskedSoftmaxCE(Op):
    name = "masked_softmax_cross_entropy"

    @staticmethod
    def forward(logits, labels, mask):
        z = logits[mask]
        shifted = z - z.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(shifted).sum(axis=1))
        picked = shifted[np.arange(mask.size), labels[mask]]
        return np.asarray(np.mean(logsum - picked))

    @staticmethod
    def backward(node, g, needs):
        logits = node.inputs[0]
        labels, mask = node.aux["labels"], node.aux["mask"]
        n_rows, n_cls = logits.shape
        target = np.zeros((n_rows, n_cls))
        target[mask, labels[mask]] = 1.0
        weight = np.zeros((n_rows, n_cls))
        weight[mask] = 1.0 / mask.size
        diff = sub(softmax(logits), node.tape.constant(target))
        return (scale_by(mul_const(diff, weight), g),)


# -- public functional API -----------------------------------------------------------


def add(a, b):
    return _apply(Add, a, b)


def sub(a, b):
    return _apply(Sub, a, b)


def scale(a, c):
    return _apply(Scale, a, c=float(c))


def mul(a, b):
    return _apply(Mul, a, b)


def mul_const(a, c):
    return _apply(MulConst, a, c=np.asarray(c, dtype=np.float64))


def scale_by(x, s):
    return _apply(ScaleBy, x, s)


def sum(x):  # noqa: A001 - mirrors numpy naming
    return _apply(Sum, x)


def broadcast(s, shape):
    return _apply(Broadcast, s, shape=tuple(shape))


def reshape(x, shape):
    return _apply(Reshape, x, shape=tuple(shape))


def transpose(x):
    return _apply(Transpose, x)


def take(x, idx):
    return _apply(Take, x, idx=np.asarray(idx, dtype=np.int64))


def scatter_add(x, idx, size):
    return _apply(ScatterAdd, x, idx=np.asarray(idx, dtype=np.int64), size=int(size))


def relu(x):
    return _apply(Relu, x)


def leaky_relu(x, slope=0.2):
    return _apply(LeakyRelu, x, slope=float(slope))


def clamp01(x):
    return _apply(Clamp01, x)


def softmax(x):
    return _apply(Softmax, x)


def rowsum_bcast(x):
    return _apply(RowSumBcast, x)


def segment_softmax(e, pattern):
    return _apply(SegmentSoftmax, e, pattern=pattern)


def segsum_bcast(x, pattern):
    return _apply(SegSumBcast, x, pattern=pattern)


def matmul(a, b):
    sa, sb = _shape(a), _shape(b)
    if len(sa) != 2 or len(sb) != 2 or sa[1] != sb[0]:
        raise ContractError(f"matmul shape mismatch: {sa} @ {sb}")
    return _apply(MatMul, a, b)


def dense_matmul(a, b):
    return matmul(a, b)


def spmm(pattern, values, dense):
    sv, sd = _shape(values), _shape(dense)
    if sv != (pattern.nnz,):
        raise ContractError(f"edge values shape {sv} does not match nnz={pattern.nnz}")
    if len(sd) != 2 or sd[0] != pattern.n:
        raise ContractError(f"spmm: pattern has {pattern.n} nodes, dense has shape {sd}")
    return _apply(SpMM, values, dense, pattern=pattern)


def sddmm(pattern, left, right):
    return _apply(SDDMM, left, right, pattern=pattern)


def concat_cols(*xs):
    rows = {_shape(x)[0] for x in xs}
    if len(rows) != 1:
        raise ContractError(f"concat_cols row mismatch: {sorted(rows)}")
    return _apply(ConcatCols, *xs)


def slice_cols(x, start, stop):
    return _apply(SliceCols, x, start=int(start), stop=int(stop))


def dropout(x, rate, rng=None, training=True, mask=None):
    """Inverted dropout.

    Pass ``mask`` to re-apply a previously drawn keep mask (already scaled by
    ``1/(1-rate)``); otherwise one is drawn from ``rng``. Returns
    ``(output, mask)``; the mask is ``None`` when dropout is inactive.
    """
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    if mask is None:
        keep = rng.uniform(size=_shape(x)) >= rate
        mask = keep / (1.0 - rate)
    return _apply(Dropout, x, c=mask), mask


def masked_softmax_cross_entropy(logits, labels, mask):
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask, dtype=np.int64)
    shape = _shape(logits)
    if mask.size == 0:
        raise ContractError("cross-entropy mask is empty")
    if shape[0] != labels.size:
        raise ContractError("logits rows must match labels length")
    if mask.min() < 0 or mask.max() >= shape[0]:
        raise ContractError("mask index out of range")
    return _apply(MaskedSoftmaxCE, logits, labels=labels, mask=mask)


def _shape(x):
    return x.shape if isinstance(x, Node) else np.shape(x)
