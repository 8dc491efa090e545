"""Tensor-train containers and linear algebra.

A tensor train represents a vector on a product grid as a chain of order-3
cores; a TTMatrix represents an operator through order-4 cores with paired
row/column indices.  All values are immutable after construction and every
operation returns a new object, so they are safe to share across threads.
"""

from __future__ import annotations

import struct
from math import sqrt

import numpy as np

from .errors import DimensionMismatchError

_MAGIC_VECTOR = b"TTV1"
_MAGIC_MATRIX = b"TTM1"

_DENSE_LIMIT = 1 << 22  # refuse accidental dense blow-ups


def _freeze(core: np.ndarray) -> np.ndarray:
    out = np.array(core, dtype=np.float64, order="C")
    out.flags.writeable = False
    return out


def _check_chain(shapes, order, kind):
    if not shapes:
        raise DimensionMismatchError(f"{kind} needs at least one core")
    for k, s in enumerate(shapes):
        if len(s) != order:
            raise DimensionMismatchError(
                f"{kind} core {k} must have order {order}, got shape {s}"
            )
        if any(d < 1 for d in s):
            raise DimensionMismatchError(f"{kind} core {k} has empty axis: {s}")
    if shapes[0][0] != 1 or shapes[-1][-1] != 1:
        raise DimensionMismatchError(f"{kind} boundary ranks must be 1")
    for k in range(len(shapes) - 1):
        if shapes[k][-1] != shapes[k + 1][0]:
            raise DimensionMismatchError(
                f"{kind} rank mismatch at bond {k + 1}: "
                f"{shapes[k][-1]} vs {shapes[k + 1][0]}"
            )


class TensorTrain:
    """Chain of order-3 cores; core k has shape (r_{k-1}, n_k, r_k)."""

    __slots__ = ("cores",)

    def __init__(self, cores):
        cores = tuple(_freeze(c) for c in cores)
        _check_chain([c.shape for c in cores], 3, "TensorTrain")
        self.cores = cores

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        """Bond dimensions r_0..r_d (boundaries included, always 1)."""
        return (1,) + tuple(c.shape[2] for c in self.cores)

    def __repr__(self):
        return f"TensorTrain(shape={self.shape}, ranks={self.ranks})"


class TTMatrix:
    """Chain of order-4 cores; core k has shape (r_{k-1}, m_k, n_k, r_k)."""

    __slots__ = ("cores",)

    def __init__(self, cores):
        cores = tuple(_freeze(c) for c in cores)
        _check_chain([c.shape for c in cores], 4, "TTMatrix")
        self.cores = cores

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def row_dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def col_dims(self) -> tuple[int, ...]:
        return tuple(c.shape[2] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return (1,) + tuple(c.shape[3] for c in self.cores)

    def fuse(self) -> TensorTrain:
        """Merge each (row, col) index pair into one axis of size m_k*n_k."""
        return TensorTrain(
            [c.reshape(c.shape[0], c.shape[1] * c.shape[2], c.shape[3]) for c in self.cores]
        )

    @staticmethod
    def unfuse(tt: TensorTrain, row_dims, col_dims) -> "TTMatrix":
        """Inverse of :meth:`fuse` for the given per-core row/col dims."""
        cores = []
        for c, m, n in zip(tt.cores, row_dims, col_dims):
            if c.shape[1] != m * n:
                raise DimensionMismatchError(
                    f"cannot unfuse axis of size {c.shape[1]} into ({m}, {n})"
                )
            cores.append(c.reshape(c.shape[0], m, n, c.shape[2]))
        return TTMatrix(cores)

    def __repr__(self):
        return (
            f"TTMatrix(rows={self.row_dims}, cols={self.col_dims}, ranks={self.ranks})"
        )


# ---------------------------------------------------------------------------
# constructors
# ---------------------------------------------------------------------------

def tt_ones(shape) -> TensorTrain:
    return TensorTrain([np.ones((1, n, 1)) for n in shape])


def tt_zeros(shape) -> TensorTrain:
    return TensorTrain([np.zeros((1, n, 1)) for n in shape])


def tt_basis(shape, idx) -> TensorTrain:
    """Selector train: 1 at ``idx``, 0 everywhere else."""
    cores = []
    for n, i in zip(shape, idx):
        c = np.zeros((1, n, 1))
        c[0, i, 0] = 1.0
        cores.append(c)
    return TensorTrain(cores)


def max_ranks(shape) -> list[int]:
    """Largest possible interior bond dimensions for ``shape`` (d-1 values)."""
    d = len(shape)
    pre = np.cumprod(shape)[:-1]
    suf = np.cumprod(shape[::-1])[:-1][::-1]
    return [int(min(p, s)) for p, s in zip(pre, suf)][: d - 1]


def random_tt(shape, rank, rng) -> TensorTrain:
    """Gaussian random train with interior ranks min(rank, feasible max)."""
    caps = [min(int(rank), m) for m in max_ranks(shape)]
    ranks = [1] + caps + [1]
    cores = [
        rng.standard_normal((ranks[k], n, ranks[k + 1])) for k, n in enumerate(shape)
    ]
    return TensorTrain(cores)


def random_ttmatrix(row_dims, col_dims, rank, rng) -> TTMatrix:
    caps = [min(int(rank), m) for m in max_ranks([r * c for r, c in zip(row_dims, col_dims)])]
    ranks = [1] + caps + [1]
    cores = [
        rng.standard_normal((ranks[k], m, n, ranks[k + 1]))
        for k, (m, n) in enumerate(zip(row_dims, col_dims))
    ]
    return TTMatrix(cores)


def ttmat_identity(dims) -> TTMatrix:
    return TTMatrix([np.eye(n).reshape(1, n, n, 1) for n in dims])


def tt_from_dense(arr: np.ndarray, eps: float = 0.0, max_rank: int | None = None) -> TensorTrain:
    """Exact (eps=0) or truncated train built by successive SVDs."""
    arr = np.asarray(arr, dtype=np.float64)
    shape = arr.shape
    d = arr.ndim
    if d == 1:
        return TensorTrain([arr.reshape(1, -1, 1)])
    norm = np.linalg.norm(arr)
    delta = eps * norm / sqrt(d - 1) if norm > 0 else 0.0
    cores = []
    r_prev = 1
    rest = arr.reshape(shape)
    for k in range(d - 1):
        mat = rest.reshape(r_prev * shape[k], -1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        r = _rank_from_tail(s, delta)
        if max_rank is not None:
            r = min(r, max_rank)
        cores.append(u[:, :r].reshape(r_prev, shape[k], r))
        rest = s[:r, None] * vt[:r]
        r_prev = r
    cores.append(rest.reshape(r_prev, shape[-1], 1))
    return TensorTrain(cores)


# ---------------------------------------------------------------------------
# evaluation and dense contraction
# ---------------------------------------------------------------------------

def tt_eval(tt: TensorTrain, idx) -> float:
    """Entry of the represented tensor at multi-index ``idx``."""
    if len(idx) != tt.d:
        raise DimensionMismatchError(f"index length {len(idx)} != {tt.d} cores")
    v = None
    for k, (c, i) in enumerate(zip(tt.cores, idx)):
        i = int(i)
        if not 0 <= i < c.shape[1]:
            raise IndexError(f"index {i} out of range for core {k} of dim {c.shape[1]}")
        v = c[:, i, :] if v is None else v @ c[:, i, :]
    return float(v[0, 0])


def tt_eval_batch(tt: TensorTrain, idx: np.ndarray) -> np.ndarray:
    """Vectorized :func:`tt_eval` for an integer index array of shape (B, d)."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 2 or idx.shape[1] != tt.d:
        raise DimensionMismatchError(f"index batch must have shape (B, {tt.d})")
    for k, c in enumerate(tt.cores):
        col = idx[:, k]
        if col.min(initial=0) < 0 or col.max(initial=0) >= c.shape[1]:
            raise IndexError(f"index out of range for core {k}")
    v = tt.cores[0][0, idx[:, 0], :]  # (B, r1)
    for k in range(1, tt.d):
        slices = tt.cores[k][:, idx[:, k], :]  # (r, B, r')
        v = np.einsum("br,brs->bs", v, slices.transpose(1, 0, 2))
    return v[:, 0]


def tt_to_dense(tt: TensorTrain) -> np.ndarray:
    total = int(np.prod(tt.shape))
    if total > _DENSE_LIMIT:
        raise MemoryError(f"refusing to densify {total} entries")
    m = np.ones((1, 1))
    for c in tt.cores:
        m = np.tensordot(m, c, axes=(1, 0)).reshape(-1, c.shape[2])
    return m[:, 0].reshape(tt.shape)


def ttmat_to_dense(tm: TTMatrix) -> np.ndarray:
    rows, cols = tm.row_dims, tm.col_dims
    dense = tt_to_dense(tm.fuse())
    inter = dense.reshape([x for mn in zip(rows, cols) for x in mn])
    d = tm.d
    perm = list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2))
    return inter.transpose(perm).reshape(int(np.prod(rows)), int(np.prod(cols)))


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def tt_add(a: TensorTrain, b: TensorTrain) -> TensorTrain:
    """Entrywise sum; interior bond ranks add."""
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a.d
    if d == 1:
        return TensorTrain([a.cores[0] + b.cores[0]])
    cores = []
    for k in range(d):
        ca, cb = a.cores[k], b.cores[k]
        ra, n, sa = ca.shape
        rb, _, sb = cb.shape
        if k == 0:
            c = np.concatenate([ca, cb], axis=2)
        elif k == d - 1:
            c = np.concatenate([ca, cb], axis=0)
        else:
            c = np.zeros((ra + rb, n, sa + sb))
            c[:ra, :, :sa] = ca
            c[ra:, :, sa:] = cb
        cores.append(c)
    return TensorTrain(cores)


def tt_scale(a: TensorTrain, w: float) -> TensorTrain:
    cores = list(a.cores)
    cores[0] = cores[0] * float(w)
    return TensorTrain(cores)


def tt_dot(a: TensorTrain, b: TensorTrain) -> float:
    """Full inner product over all grid entries."""
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    g = np.ones((1, 1))
    for ca, cb in zip(a.cores, b.cores):
        g = np.einsum("ab,aic,bid->cd", g, ca, cb, optimize=True)
    return float(g[0, 0])


def tt_norm(a: TensorTrain) -> float:
    return sqrt(max(tt_dot(a, a), 0.0))


def _rank_from_tail(s: np.ndarray, delta: float) -> int:
    """Smallest rank whose discarded tail has Frobenius mass <= delta."""
    if delta <= 0:
        return max(1, int(np.sum(s > 0)))
    tail = np.cumsum(s[::-1] ** 2)[::-1]
    keep = int(np.searchsorted(-tail, -delta * delta))
    return max(1, keep)


def tt_round(a: TensorTrain, eps: float, max_rank: int | None = None) -> TensorTrain:
    """Recompress within relative Frobenius error eps; ranks never grow.

    Left-to-right QR orthogonalization followed by a right-to-left truncated
    SVD sweep with per-bond budget eps/sqrt(d-1).
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    d = a.d
    if d == 1:
        return TensorTrain(a.cores)
    cores = [np.array(c) for c in a.cores]
    for k in range(d - 1):
        r, n, s = cores[k].shape
        q, rmat = np.linalg.qr(cores[k].reshape(r * n, s))
        cores[k] = q.reshape(r, n, q.shape[1])
        cores[k + 1] = np.tensordot(rmat, cores[k + 1], axes=(1, 0))
    norm = np.linalg.norm(cores[-1])
    if norm == 0.0:
        return tt_zeros(a.shape)
    delta = eps * norm / sqrt(d - 1)
    for k in range(d - 1, 0, -1):
        r, n, s = cores[k].shape
        u, sv, vt = np.linalg.svd(cores[k].reshape(r, n * s), full_matrices=False)
        rank = _rank_from_tail(sv, delta)
        if max_rank is not None:
            rank = min(rank, max_rank)
        cores[k] = vt[:rank].reshape(rank, n, s)
        cores[k - 1] = np.tensordot(cores[k - 1], u[:, :rank] * sv[:rank], axes=(2, 0))
    return TensorTrain(cores)


def ttmat_apply(m: TTMatrix, v: TensorTrain) -> TensorTrain:
    """Matrix-vector product; output bond ranks multiply (round separately)."""
    if m.d != v.d or m.col_dims != v.shape:
        raise DimensionMismatchError(
            f"operator columns {m.col_dims} incompatible with vector {v.shape}"
        )
    out = []
    for cm, cv in zip(m.cores, v.cores):
        t = np.einsum("arsb,csd->acrbd", cm, cv, optimize=True)
        rl = cm.shape[0] * cv.shape[0]
        rr = cm.shape[3] * cv.shape[2]
        out.append(t.reshape(rl, cm.shape[1], rr))
    return TensorTrain(out)


def tt_kron(a, b):
    """Tensor (Kronecker) product: the core lists concatenate."""
    if isinstance(a, TensorTrain) and isinstance(b, TensorTrain):
        return TensorTrain(list(a.cores) + list(b.cores))
    if isinstance(a, TTMatrix) and isinstance(b, TTMatrix):
        return TTMatrix(list(a.cores) + list(b.cores))
    raise TypeError(f"tt_kron needs two values of the same kind, got "
                    f"{type(a).__name__} and {type(b).__name__}")


def ttmat_round(m: TTMatrix, eps: float, max_rank: int | None = None) -> TTMatrix:
    """Round an operator by fusing each (row, col) pair into one index."""
    return TTMatrix.unfuse(tt_round(m.fuse(), eps, max_rank), m.row_dims, m.col_dims)


# ---------------------------------------------------------------------------
# serialization: little-endian binary, bit-exact round trip
# ---------------------------------------------------------------------------

def tt_to_bytes(tt: TensorTrain) -> bytes:
    buf = bytearray(_MAGIC_VECTOR)
    buf += struct.pack("<I", tt.d)
    for c in tt.cores:
        buf += struct.pack("<III", *c.shape)
        buf += c.astype("<f8", copy=False).tobytes(order="C")
    return bytes(buf)


def tt_from_bytes(data: bytes) -> TensorTrain:
    if data[:4] != _MAGIC_VECTOR:
        raise ValueError(f"bad magic {data[:4]!r}, expected {_MAGIC_VECTOR!r}")
    off = 4
    (d,) = struct.unpack_from("<I", data, off)
    off += 4
    cores = []
    for _ in range(d):
        r, n, s = struct.unpack_from("<III", data, off)
        off += 12
        count = r * n * s
        core = np.frombuffer(data, dtype="<f8", count=count, offset=off)
        off += 8 * count
        cores.append(core.reshape(r, n, s))
    if off != len(data):
        raise ValueError("trailing bytes after last core")
    return TensorTrain(cores)


def ttmat_to_bytes(tm: TTMatrix) -> bytes:
    buf = bytearray(_MAGIC_MATRIX)
    buf += struct.pack("<I", tm.d)
    for c in tm.cores:
        buf += struct.pack("<IIII", *c.shape)
        buf += c.astype("<f8", copy=False).tobytes(order="C")
    return bytes(buf)


def ttmat_from_bytes(data: bytes) -> TTMatrix:
    if data[:4] != _MAGIC_MATRIX:
        raise ValueError(f"bad magic {data[:4]!r}, expected {_MAGIC_MATRIX!r}")
    off = 4
    (d,) = struct.unpack_from("<I", data, off)
    off += 4
    cores = []
    for _ in range(d):
        r, m, n, s = struct.unpack_from("<IIII", data, off)
        off += 16
        count = r * m * n * s
        core = np.frombuffer(data, dtype="<f8", count=count, offset=off)
        off += 8 * count
        cores.append(core.reshape(r, m, n, s))
    if off != len(data):
        raise ValueError("trailing bytes after last core")
    return TTMatrix(cores)


def save_tt(tt: TensorTrain, path) -> None:
    with open(path, "wb") as fh:
        fh.write(tt_to_bytes(tt))


def load_tt(path) -> TensorTrain:
    with open(path, "rb") as fh:
        return tt_from_bytes(fh.read())


def save_ttmat(tm: TTMatrix, path) -> None:
    with open(path, "wb") as fh:
        fh.write(ttmat_to_bytes(tm))


def load_ttmat(path) -> TTMatrix:
    with open(path, "rb") as fh:
        return ttmat_from_bytes(fh.read())
