"""Cross approximation: maxvol pivoting and black-box tensor-train sweeps.

The sweep algorithm builds a train from a function sampled only at nested
cross index sets, never materializing the full tensor.  A forward pass grows
the left sets bond by bond, then the direction reverses and the right sets
are rebuilt from the previous pass's pivots.
"""

from __future__ import annotations

import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import BudgetExceededError, DimensionMismatchError, SingularPivotError
from .tt import TensorTrain, max_ranks, tt_eval_batch

MAXVOL_TOL = 0.01
MAXVOL_MAX_ITER = 100


class MaxvolWarning(UserWarning):
    """Emitted when maxvol returns a non-converged pivot set."""


# ---------------------------------------------------------------------------
# pivot selection on dense matrices
# ---------------------------------------------------------------------------

def _initial_pivots(m: np.ndarray) -> np.ndarray:
    """Row pivots from Gaussian elimination with partial pivoting."""
    a = np.array(m)
    n_rows, r = a.shape
    piv = np.arange(n_rows)
    scale = np.max(np.abs(a)) or 1.0
    for k in range(r):
        i = k + int(np.argmax(np.abs(a[k:, k])))
        if abs(a[i, k]) < 1e-14 * scale:
            raise SingularPivotError(f"rank-deficient matrix at column {k}")
        if i != k:
            a[[k, i]] = a[[i, k]]
            piv[[k, i]] = piv[[i, k]]
        a[k + 1:, k:] -= np.outer(a[k + 1:, k] / a[k, k], a[k, k:])
    return piv[:r]


def maxvol(m: np.ndarray, tol: float = MAXVOL_TOL, max_iter: int = MAXVOL_MAX_ITER) -> np.ndarray:
    """Select r rows of an N x r matrix spanning a near-maximal-volume block.

    Starting from partial-pivoted LU rows, repeatedly swaps in the row of the
    largest entry of ``m @ inv(m[rows])`` until every entry is bounded by
    1 + tol in magnitude.

    Returns the sorted row indices.  A non-converged run returns the best set
    found so far and emits :class:`MaxvolWarning`.
    """
    m = np.asarray(m, dtype=np.float64)
    n_rows, r = m.shape
    if n_rows < r:
        raise DimensionMismatchError(f"need at least {r} rows, got {n_rows}")
    if n_rows == r:
        return np.arange(r)
    piv = _initial_pivots(m)
    b = np.linalg.solve(m[piv].T, m.T).T  # rows piv of b form the identity
    for _ in range(max_iter):
        i, j = np.unravel_index(np.argmax(np.abs(b)), b.shape)
        if abs(b[i, j]) <= 1.0 + tol:
            return np.sort(piv)
        piv[j] = i
        col = b[:, j].copy()
        row = b[i, :].copy()
        row[j] -= 1.0
        b -= np.outer(col / b[i, j], row)
    warnings.warn("maxvol did not converge, returning best pivots found", MaxvolWarning)
    return np.sort(piv)


def _solve_cross(ahat: np.ndarray, rhs: np.ndarray, bond=None) -> np.ndarray:
    """Solve ahat @ x = rhs with one jittered retry on singular pivots."""
    try:
        return np.linalg.solve(ahat, rhs)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * max(np.max(np.abs(ahat)), 1.0)
        try:
            return np.linalg.solve(ahat + jitter * np.eye(ahat.shape[0]), rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularPivotError(
                f"intersection matrix singular after jitter (bond {bond})", bond=bond
            ) from exc


def matrix_cross(a: np.ndarray, row_set, col_set) -> np.ndarray:
    """Cross reconstruction a[:, cols] inv(a[rows, cols]) a[rows, :].

    Exact when the pivot sets have size equal to rank(a).
    """
    a = np.asarray(a, dtype=np.float64)
    rows = np.asarray(row_set, dtype=np.int64)
    cols = np.asarray(col_set, dtype=np.int64)
    if rows.size != cols.size:
        raise DimensionMismatchError("row and column pivot sets must have equal size")
    ahat = a[np.ix_(rows, cols)]
    x = _solve_cross(ahat, a[rows, :])
    return a[:, cols] @ x


# ---------------------------------------------------------------------------
# black-box function contract
# ---------------------------------------------------------------------------

class BlackBoxPricer(ABC):
    """Batched tensor-entry evaluator with call accounting.

    Implementations must be deterministic per multi-index (stochastic pricers
    derive a per-index seed) and safe for concurrent batch evaluation.
    """

    def __init__(self, shape):
        self._shape = tuple(int(n) for n in shape)
        self._eval_count = 0

    @property
    def shape(self) -> tuple[int, ...]:
        return self._shape

    @property
    def eval_count(self) -> int:
        """Cumulative number of entries evaluated."""
        return self._eval_count

    def eval_batch(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if idx.ndim != 2 or idx.shape[1] != len(self._shape):
            raise DimensionMismatchError(
                f"index batch must have shape (B, {len(self._shape)})"
            )
        self._eval_count += idx.shape[0]
        return np.asarray(self._evaluate(idx), dtype=np.float64)

    @abstractmethod
    def _evaluate(self, idx: np.ndarray) -> np.ndarray:
        """Map an (B, d) integer index array to B tensor entries."""


class GridFunction(BlackBoxPricer):
    """Wrap a vectorized callable ``f(idx) -> values`` as a pricer."""

    def __init__(self, shape, fn):
        super().__init__(shape)
        self._fn = fn

    def _evaluate(self, idx):
        return self._fn(idx)


class TensorTrainFunction(BlackBoxPricer):
    """Black box backed by an existing train (testing / self-consistency)."""

    def __init__(self, tt: TensorTrain):
        super().__init__(tt.shape)
        self._tt = tt

    def _evaluate(self, idx):
        return tt_eval_batch(self._tt, idx)


class CappedPricer(BlackBoxPricer):
    """Enforce a hard evaluation budget around another pricer."""

    def __init__(self, inner: BlackBoxPricer, budget: int):
        super().__init__(inner.shape)
        self._inner = inner
        self.budget = int(budget)

    def _evaluate(self, idx):
        if self.eval_count > self.budget:
            raise BudgetExceededError(
                f"evaluation budget {self.budget} exceeded ({self.eval_count} requested)"
            )
        return self._inner.eval_batch(idx)


class TimedPricer(BlackBoxPricer):
    """Accumulate wall-clock seconds spent inside another pricer."""

    def __init__(self, inner: BlackBoxPricer):
        super().__init__(inner.shape)
        self._inner = inner
        self.seconds = 0.0

    def _evaluate(self, idx):
        import time

        t0 = time.perf_counter()
        out = self._inner.eval_batch(idx)
        self.seconds += time.perf_counter() - t0
        return out


# ---------------------------------------------------------------------------
# index sets
# ---------------------------------------------------------------------------

@dataclass
class IndexSets:
    """Nested cross index sets per bond.

    ``left[k]`` is an (r_k, k) array of row multi-indices over the first k
    axes and ``right[k]`` an (r_k, d-k) array over the remaining axes, for
    k = 0..d; the boundary sets hold the single empty tuple.
    """

    left: list[np.ndarray]
    right: list[np.ndarray]

    @property
    def d(self) -> int:
        return len(self.left) - 1

    def ranks(self) -> list[int]:
        return [len(self.right[k]) for k in range(1, self.d)]

    def validate_nested(self, shape) -> None:
        d = self.d
        if len(self.right) != d + 1 or len(shape) != d:
            raise DimensionMismatchError("index set arity inconsistent with shape")
        for k in range(1, d):
            rt = self.right[k]
            if rt.shape[1] != d - k:
                raise DimensionMismatchError(f"right set at bond {k} has bad width")
            parents = {tuple(t) for t in self.right[k + 1]}
            for t in rt:
                if tuple(t[1:]) not in parents:
                    raise DimensionMismatchError(
                        f"right set at bond {k} is not nested into bond {k + 1}"
                    )
            lf = self.left[k]
            if lf.size and k > 1:
                parents = {tuple(t) for t in self.left[k - 1]}
                for t in lf:
                    if tuple(t[:-1]) not in parents:
                        raise DimensionMismatchError(
                            f"left set at bond {k} is not nested into bond {k - 1}"
                        )


def feasible_ranks(shape, rank) -> list[int]:
    """Per-bond caps: the requested rank clipped to the structural maximum."""
    return [min(int(rank), m) for m in max_ranks(shape)]


def init_index_sets(shape, rank, seed) -> IndexSets:
    """Random nested right sets of the requested per-bond sizes; empty lefts.

    ``rank`` may be a scalar or a per-bond sequence; an infeasible request
    (more tuples than a bond can support) raises a dimension error.
    """
    shape = tuple(int(n) for n in shape)
    d = len(shape)
    caps = max_ranks(shape)
    if np.isscalar(rank):
        ranks = [int(rank)] * (d - 1)
    else:
        ranks = [int(r) for r in rank]
        if len(ranks) != d - 1:
            raise DimensionMismatchError(f"need {d - 1} bond ranks, got {len(ranks)}")
    for k, (r, cap) in enumerate(zip(ranks, caps)):
        if r < 1 or r > cap:
            raise DimensionMismatchError(
                f"rank {r} infeasible at bond {k + 1} (max {cap} for shape {shape})"
            )
    rng = np.random.default_rng(seed)
    right: list[np.ndarray] = [None] * (d + 1)
    right[d] = np.zeros((1, 0), dtype=np.int64)
    for k in range(d - 1, 0, -1):
        r_k = ranks[k - 1]
        if r_k > shape[k] * len(right[k + 1]):
            raise DimensionMismatchError(
                f"rank {r_k} at bond {k} cannot nest into bond {k + 1} "
                f"(only {shape[k] * len(right[k + 1])} extensions exist)"
            )
        chosen: set[tuple[int, ...]] = set()
        rows = []
        while len(rows) < r_k:
            parent = right[k + 1][rng.integers(len(right[k + 1]))]
            cand = (int(rng.integers(shape[k])),) + tuple(int(v) for v in parent)
            if cand not in chosen:
                chosen.add(cand)
                rows.append(cand)
        right[k] = np.array(rows, dtype=np.int64).reshape(r_k, d - k)
    right[0] = np.zeros((1, 0), dtype=np.int64)
    left = [np.zeros((1, 0), dtype=np.int64)] + [
        np.zeros((0, k), dtype=np.int64) for k in range(1, d + 1)
    ]
    return IndexSets(left=left, right=right)


# ---------------------------------------------------------------------------
# the sweep algorithm
# ---------------------------------------------------------------------------

@dataclass
class CrossReport:
    """Run summary attached to every trained surrogate."""

    sweeps_run: int
    ranks: list[int]
    evals_used: int
    validation_error: float | None
    converged: bool
    max_superblock_entries: int
    peak_value_entries: int
    index_sets: IndexSets | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "sweeps_run": self.sweeps_run,
            "ranks": list(self.ranks),
            "evals_used": self.evals_used,
            "validation_error": self.validation_error,
            "converged": self.converged,
            "max_superblock_entries": self.max_superblock_entries,
            "peak_value_entries": self.peak_value_entries,
        }


def predicted_sweep_evals(shape, ranks) -> int:
    """Entries one directional sweep samples: superblocks plus boundary core."""
    d = len(shape)
    r = [1] + list(ranks) + [1]
    total = sum(r[k] * shape[k] * r[k + 1] for k in range(d - 1))
    total += r[d - 1] * shape[d - 1]
    return total


def _superblock(f: BlackBoxPricer, lefts: np.ndarray, k: int, rights: np.ndarray) -> np.ndarray:
    """Sample f on lefts x [0, n_k) x rights, flat in (left, i, right) order."""
    n_k = f.shape[k]
    n_l, n_r = len(lefts), len(rights)
    d = len(f.shape)
    rows = n_l * n_k * n_r
    idx = np.empty((rows, d), dtype=np.int64)
    if k > 0:
        idx[:, :k] = np.repeat(lefts, n_k * n_r, axis=0)
    idx[:, k] = np.tile(np.repeat(np.arange(n_k), n_r), n_l)
    if k < d - 1:
        idx[:, k + 1:] = np.tile(rights, (n_l * n_k, 1))
    return f.eval_batch(idx)


def _orth_maxvol(mat: np.ndarray, bond: int) -> np.ndarray:
    """Row pivots via maxvol on the column-pivoted-QR orthogonal factor."""
    q = scipy.linalg.qr(mat, mode="economic", pivoting=True)[0]
    try:
        return maxvol(q)
    except SingularPivotError as exc:
        raise SingularPivotError(str(exc), bond=bond) from exc


def tt_cross(
    f: BlackBoxPricer,
    init: IndexSets,
    ranks=None,
    n_sweeps: int = 4,
    tol: float | None = None,
    seed: int = 0,
    validation_size: int = 256,
) -> tuple[TensorTrain, CrossReport]:
    """Approximate the tensor behind ``f`` by alternating cross sweeps.

    Sweeps alternate direction (forward grows left sets, backward rebuilds
    right sets) and stop after ``n_sweeps`` or once the relative error on a
    fixed random validation sample changes by less than ``tol``.  Bond ranks
    stay at the sizes of the initial sets.

    Returns the train together with a :class:`CrossReport`; the report keeps
    the final index sets for inspection but serializes without them.
    """
    shape = f.shape
    d = len(shape)
    bond_ranks = init.ranks()
    if ranks is not None:
        caps = [int(r) for r in (ranks if not np.isscalar(ranks) else [ranks] * (d - 1))]
        if any(r > c for r, c in zip(bond_ranks, caps)):
            raise DimensionMismatchError("initial index sets exceed the rank caps")
    left = [np.array(s) for s in init.left]
    right = [np.array(s) for s in init.right]

    evals_before = f.eval_count
    max_super = 0
    peak_values = 0

    rng = np.random.default_rng(seed)
    val_idx = None
    val_ref = None
    if validation_size > 0:
        val_idx = np.column_stack([rng.integers(n, size=validation_size) for n in shape])
        val_ref = f.eval_batch(val_idx)
        peak_values = validation_size

    cores: list[np.ndarray | None] = [None] * d
    prev_err = None
    final_err = None
    converged = False
    sweeps_run = 0

    for sweep in range(n_sweeps):
        forward = sweep % 2 == 0
        if forward:
            for k in range(d - 1):
                r_l, r_r = len(left[k]), len(right[k + 1])
                n_k = shape[k]
                vals = _superblock(f, left[k], k, right[k + 1])
                max_super = max(max_super, vals.size)
                peak_values = max(peak_values, vals.size + (validation_size or 0))
                c = vals.reshape(r_l * n_k, r_r)
                sel = _orth_maxvol(c, bond=k + 1)
                core = _solve_cross(c[sel].T, c.T, bond=k + 1).T
                cores[k] = core.reshape(r_l, n_k, r_r)
                left[k + 1] = np.column_stack([left[k][sel // n_k], sel % n_k])
            tail = _superblock(f, left[d - 1], d - 1, right[d])
            cores[d - 1] = tail.reshape(len(left[d - 1]), shape[d - 1], 1)
        else:
            for k in range(d - 1, 0, -1):
                r_l, r_r = len(left[k]), len(right[k + 1])
                n_k = shape[k]
                vals = _superblock(f, left[k], k, right[k + 1])
                max_super = max(max_super, vals.size)
                peak_values = max(peak_values, vals.size + (validation_size or 0))
                r_mat = vals.reshape(r_l, n_k * r_r)
                sel = _orth_maxvol(r_mat.T, bond=k)
                core = _solve_cross(r_mat[:, sel], r_mat, bond=k)
                cores[k] = core.reshape(r_l, n_k, r_r)
                right[k] = np.column_stack(
                    [sel // r_r, right[k + 1][sel % r_r]]
                )
            head = _superblock(f, left[0], 0, right[1])
            cores[0] = head.reshape(1, shape[0], len(right[1]))
        sweeps_run = sweep + 1

        if val_idx is not None:
            tt = TensorTrain(cores)
            resid = tt_eval_batch(tt, val_idx) - val_ref
            scale = np.linalg.norm(val_ref)
            final_err = float(np.linalg.norm(resid) / scale) if scale > 0 else float(
                np.linalg.norm(resid)
            )
            if tol is not None and prev_err is not None and abs(prev_err - final_err) < tol:
                converged = True
                break
            prev_err = final_err

    report = CrossReport(
        sweeps_run=sweeps_run,
        ranks=bond_ranks,
        evals_used=f.eval_count - evals_before,
        validation_error=final_err,
        converged=converged,
        max_superblock_entries=max_super,
        peak_value_entries=peak_values,
        index_sets=IndexSets(left=[np.array(s) for s in left],
                             right=[np.array(s) for s in right]),
    )
    return TensorTrain(cores), report
