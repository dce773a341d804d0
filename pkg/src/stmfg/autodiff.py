"""Reverse-mode automatic differentiation over dense float64 matrices.

Everything is rank-2: scalars are 1x1, row vectors 1xd. The op set is
exactly what the dual-view encoder, the ZINB decoder and the loss terms
need; there is no broadcasting beyond scalar and row-vector patterns.
Graph adjacency enters as a constant sparse operator (`SparseMatrix`),
so no gradient ever flows into graph structure.

`backward` computes one gradient total per tensor per pass and folds it
into ``.grad`` with a single addition, which keeps repeated passes
exactly additive. Resetting gradients is explicit (``zero_grad``).
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse
from scipy.special import digamma as _digamma
from scipy.special import gammaln as _gammaln

from .errors import ContractError, DimensionError, DomainError

# Guard added inside row norms (l2 normalization, cosine similarity) so
# zero rows map to zero instead of NaN. Gradients go through the guarded
# expression.
NORM_EPS = 1e-12

__all__ = [
    "NORM_EPS",
    "Tensor",
    "SparseMatrix",
    "matmul",
    "spmm",
    "transpose",
    "add",
    "sub",
    "hadamard",
    "div",
    "scale",
    "neg",
    "relu",
    "leaky_relu",
    "sigmoid",
    "exp",
    "log",
    "softplus",
    "lgamma",
    "clip",
    "maximum",
    "concat_cols",
    "slice_cols",
    "row_sums",
    "sum_all",
    "mean_all",
    "col_broadcast_mul",
    "diag_part",
    "row_l2_normalize",
    "softmax_rows",
    "cosine_similarity_matrix",
    "backward",
    "zero_grad",
    "grad_check",
]


def _as_matrix(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"tensors are rank-2, got ndim={arr.ndim}")
    return arr


class Tensor:
    """Dense float64 matrix participating in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = _as_matrix(data)
        if not np.isfinite(arr).all():
            raise DomainError("tensor values must be finite")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray, Callable], None] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # Operator sugar; the module-level functions are the canonical API.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return hadamard(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)


def _from_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    needs = any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        # Constant subgraphs are pruned so masks and fixed inputs cost nothing.
        out._parents = ()
        out._backward = None
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and out.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def _broadcastable(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return all(x == y or x == 1 or y == 1 for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def backward_fn(g, accum):
        if a.requires_grad:
            accum(a, g @ b.data.T)
        if b.requires_grad:
            accum(b, a.data.T @ g)

    return _from_op(out_data, (a, b), backward_fn)


def transpose(a: Tensor) -> Tensor:
    out_data = np.ascontiguousarray(a.data.T)

    def backward_fn(g, accum):
        accum(a, g.T)

    return _from_op(out_data, (a,), backward_fn)


def spmm(s: "SparseMatrix", d: Tensor) -> Tensor:
    """Sparse-operator times dense tensor; the operator is a constant."""
    if s.n != d.rows:
        raise DimensionError(f"spmm: operator n={s.n} vs tensor rows={d.rows}")
    out_data = s.csr() @ d.data

    def backward_fn(g, accum):
        accum(d, s.csr().T @ g)

    return _from_op(out_data, (d,), backward_fn)


# ---------------------------------------------------------------------------
# pointwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape and not _broadcastable(a.data.shape, b.data.shape):
        raise DimensionError(f"add: shapes {a.data.shape} and {b.data.shape}")
    out_data = a.data + b.data

    def backward_fn(g, accum):
        if a.requires_grad:
            accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            accum(b, _unbroadcast(g, b.data.shape))

    return _from_op(out_data, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape and not _broadcastable(a.data.shape, b.data.shape):
        raise DimensionError(f"sub: shapes {a.data.shape} and {b.data.shape}")
    out_data = a.data - b.data

    def backward_fn(g, accum):
        if a.requires_grad:
            accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            accum(b, _unbroadcast(-g, b.data.shape))

    return _from_op(out_data, (a, b), backward_fn)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "hadamard")
    out_data = a.data * b.data

    def backward_fn(g, accum):
        if a.requires_grad:
            accum(a, g * b.data)
        if b.requires_grad:
            accum(b, g * a.data)

    return _from_op(out_data, (a, b), backward_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape and b.data.shape != (1, 1):
        raise DimensionError(f"div: shapes {a.data.shape} and {b.data.shape}")
    if np.any(b.data == 0.0):
        raise DomainError("div: zero divisor")
    out_data = a.data / b.data

    def backward_fn(g, accum):
        if a.requires_grad:
            accum(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            accum(b, _unbroadcast(-g * out_data / b.data, b.data.shape))

    return _from_op(out_data, (a, b), backward_fn)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    out_data = a.data * factor

    def backward_fn(g, accum):
        accum(a, g * factor)

    return _from_op(out_data, (a,), backward_fn)


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def backward_fn(g, accum):
        accum(a, g * (a.data > 0.0))

    return _from_op(out_data, (a,), backward_fn)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    slope = float(slope)
    out_data = np.where(a.data > 0.0, a.data, slope * a.data)

    def backward_fn(g, accum):
        accum(a, g * np.where(a.data > 0.0, 1.0, slope))

    return _from_op(out_data, (a,), backward_fn)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward_fn(g, accum):
        accum(a, g * out_data * (1.0 - out_data))

    return _from_op(out_data, (a,), backward_fn)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward_fn(g, accum):
        accum(a, g * out_data)

    return _from_op(out_data, (a,), backward_fn)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("log: inputs must be strictly positive")
    out_data = np.log(a.data)

    def backward_fn(g, accum):
        accum(a, g / a.data)

    return _from_op(out_data, (a,), backward_fn)


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.where(x > 0.0, x + np.log1p(np.exp(-np.abs(x))),
                        np.log1p(np.exp(-np.abs(x))))

    def backward_fn(g, accum):
        s = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        accum(a, g * s)

    return _from_op(out_data, (a,), backward_fn)


def lgamma(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError("lgamma: inputs must be strictly positive")
    out_data = _gammaln(a.data)

    def backward_fn(g, accum):
        accum(a, g * _digamma(a.data))

    return _from_op(out_data, (a,), backward_fn)


def clip(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    out_data = np.clip(a.data, lo, hi)

    def backward_fn(g, accum):
        mask = np.ones_like(a.data, dtype=bool)
        if lo is not None:
            mask &= a.data >= lo
        if hi is not None:
            mask &= a.data <= hi
        accum(a, g * mask)

    return _from_op(out_data, (a,), backward_fn)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties route the gradient to the first argument."""
    if a.data.shape != b.data.shape and b.data.shape != (1, 1):
        raise DimensionError(f"maximum: shapes {a.data.shape} and {b.data.shape}")
    take_a = a.data >= b.data
    out_data = np.where(take_a, a.data, b.data)

    def backward_fn(g, accum):
        if a.requires_grad:
            accum(a, g * take_a)
        if b.requires_grad:
            accum(b, _unbroadcast(g * ~take_a, b.data.shape))

    return _from_op(out_data, (a, b), backward_fn)


# ---------------------------------------------------------------------------
# structure


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.rows != b.rows:
        raise DimensionError(f"concat_cols: row counts {a.rows} and {b.rows}")
    out_data = np.concatenate([a.data, b.data], axis=1)
    split = a.cols

    def backward_fn(g, accum):
        if a.requires_grad:
            accum(a, g[:, :split])
        if b.requires_grad:
            accum(b, g[:, split:])

    return _from_op(out_data, (a, b), backward_fn)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= a.cols):
        raise DimensionError(f"slice_cols: [{start}:{stop}] of width {a.cols}")
    out_data = a.data[:, start:stop].copy()

    def backward_fn(g, accum):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        accum(a, full)

    return _from_op(out_data, (a,), backward_fn)


def row_sums(a: Tensor) -> Tensor:
    out_data = a.data.sum(axis=1, keepdims=True)

    def backward_fn(g, accum):
        accum(a, np.broadcast_to(g, a.data.shape))

    return _from_op(out_data, (a,), backward_fn)


def sum_all(a: Tensor) -> Tensor:
    out_data = np.array([[a.data.sum()]])

    def backward_fn(g, accum):
        accum(a, np.broadcast_to(g, a.data.shape))

    return _from_op(out_data, (a,), backward_fn)


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


def col_broadcast_mul(col: Tensor, mat: Tensor) -> Tensor:
    """Scale every row of ``mat`` by the matching entry of column ``col``."""
    if col.cols != 1 or col.rows != mat.rows:
        raise DimensionError(f"col_broadcast_mul: {col.data.shape} vs {mat.data.shape}")
    out_data = col.data * mat.data

    def backward_fn(g, accum):
        if col.requires_grad:
            accum(col, (g * mat.data).sum(axis=1, keepdims=True))
        if mat.requires_grad:
            accum(mat, g * col.data)

    return _from_op(out_data, (col, mat), backward_fn)


def diag_part(a: Tensor) -> Tensor:
    if a.rows != a.cols:
        raise DimensionError(f"diag_part: matrix is {a.data.shape}, not square")
    out_data = np.diag(a.data).reshape(-1, 1).copy()

    def backward_fn(g, accum):
        full = np.zeros_like(a.data)
        np.fill_diagonal(full, g[:, 0])
        accum(a, full)

    return _from_op(out_data, (a,), backward_fn)


# ---------------------------------------------------------------------------
# row-normalizing ops


def row_l2_normalize(a: Tensor) -> Tensor:
    """Divide each row by its guarded Euclidean norm; zero rows stay zero."""
    sq = (a.data * a.data).sum(axis=1, keepdims=True)
    norm = np.sqrt(sq + NORM_EPS)
    out_data = a.data / norm

    def backward_fn(g, accum):
        gx = (g * a.data).sum(axis=1, keepdims=True)
        accum(a, g / norm - a.data * gx / (norm ** 3))

    return _from_op(out_data, (a,), backward_fn)


def softmax_rows(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g, accum):
        dot = (g * out_data).sum(axis=1, keepdims=True)
        accum(a, out_data * (g - dot))

    return _from_op(out_data, (a,), backward_fn)


def cosine_similarity_matrix(z: Tensor) -> Tensor:
    """All-pairs cosine similarity of the rows of ``z`` (guarded norms)."""
    if z.cols < 1:
        raise DimensionError("cosine_similarity_matrix: need at least one column")
    zn = row_l2_normalize(z)
    return matmul(zn, transpose(zn))


# ---------------------------------------------------------------------------
# sparse constant operator


class SparseMatrix:
    """Constant n-by-n sparse matrix in coordinate form.

    Used for graph adjacency and its normalized form; never differentiated.
    Entries are unique (row, col) pairs; when ``symmetric`` is set the entry
    list must contain the exact mirror of every entry.
    """

    __slots__ = ("n", "row_idx", "col_idx", "values", "symmetric", "_csr")

    def __init__(self, n: int, rows, cols, values, symmetric: bool = False):
        if n < 1:
            raise ContractError(f"SparseMatrix: n must be >= 1, got {n}")
        row_idx = np.asarray(rows, dtype=np.int64).ravel()
        col_idx = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(values, dtype=np.float64).ravel()
        if not (row_idx.size == col_idx.size == vals.size):
            raise ContractError("SparseMatrix: index/value lengths differ")
        if row_idx.size and (row_idx.min() < 0 or row_idx.max() >= n
                             or col_idx.min() < 0 or col_idx.max() >= n):
            raise ContractError("SparseMatrix: index out of range")
        if not np.isfinite(vals).all():
            raise DomainError("SparseMatrix: values must be finite")
        keys = row_idx * n + col_idx
        if np.unique(keys).size != keys.size:
            raise ContractError("SparseMatrix: duplicate (row, col) entries")
        if symmetric:
            mirror = {(int(r), int(c)): v for r, c, v in zip(row_idx, col_idx, vals)}
            for (r, c), v in mirror.items():
                if mirror.get((c, r)) != v:
                    raise ContractError("SparseMatrix: symmetric flag set but entries are not")
        order = np.argsort(keys)
        self.n = int(n)
        self.row_idx = row_idx[order]
        self.col_idx = col_idx[order]
        self.values = vals[order]
        self.symmetric = bool(symmetric)
        self._csr = None

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def entries(self) -> Iterable[tuple[int, int, float]]:
        return zip(self.row_idx.tolist(), self.col_idx.tolist(), self.values.tolist())

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n, self.n))
        dense[self.row_idx, self.col_idx] = self.values
        return dense

    def csr(self) -> scipy.sparse.csr_matrix:
        if self._csr is None:
            self._csr = scipy.sparse.csr_matrix(
                (self.values, (self.row_idx, self.col_idx)), shape=(self.n, self.n)
            )
        return self._csr

    def __repr__(self) -> str:
        return f"SparseMatrix(n={self.n}, nnz={self.nnz}, symmetric={self.symmetric})"


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Accumulate gradients of ``loss`` into every reachable requires_grad tensor."""
    if loss.data.shape != (1, 1):
        raise ContractError(f"backward: loss must be scalar, got {loss.data.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    pending: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}

    def accum(t: Tensor, contribution: np.ndarray) -> None:
        key = id(t)
        buf = pending.get(key)
        if buf is None:
            pending[key] = np.array(contribution, dtype=np.float64)
        else:
            buf += contribution

    for node in reversed(topo):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is not None:
            node._backward(g, accum)
        if node.requires_grad:
            # Single += per pass: two passes double the gradient exactly.
            node.grad = g if node.grad is None else node.grad + g


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float) -> float:
    """Max relative error between AD and central-difference gradients of f at x.

    The relative error uses an absolute floor of 1e-8 in the denominator.
    ``x.data`` is perturbed in place and restored.
    """
    if not x.requires_grad:
        raise ContractError("grad_check: x must require gradients")
    out = f(x)
    if out.data.shape != (1, 1):
        raise ContractError("grad_check: f must be scalar-valued")
    x.grad = None
    backward(out)
    ad = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None

    fd = np.zeros_like(x.data)
    base = x.data
    for i, j in np.ndindex(*base.shape):
        orig = base[i, j]
        base[i, j] = orig + eps
        hi = f(x).data[0, 0]
        base[i, j] = orig - eps
        lo = f(x).data[0, 0]
        base[i, j] = orig
        fd[i, j] = (hi - lo) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(ad), np.abs(fd)), 1e-8)
    return float(np.max(np.abs(ad - fd) / denom))
