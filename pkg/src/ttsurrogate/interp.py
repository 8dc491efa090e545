"""Off-grid evaluation of trained surfaces.

Bracketing weights come either from the conditional mean of an exponential
bridge (sinh weights at finite length-scale) or from its large length-scale
limit, plain linear interpolation.  The weight vector for one feature has at
most two nonzeros, so its train has rank 1 while the binary expansions of
the two bracket indices agree and rank 2 afterwards; multi-feature weights
are the tensor product of the per-feature trains.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import sinh

import numpy as np

from .errors import DimensionMismatchError
from .grid import FeatureGrid, grid_index_map
from .tt import TensorTrain, tt_dot, tt_kron

MODES = ("linear", "sinh")


@dataclass(frozen=True)
class BridgeWeights:
    """Weights (c0, c1) on the bracketing grid values (k0, k0 + 1)."""

    c0: float
    c1: float
    k0: int

    @property
    def k1(self) -> int:
        return self.k0 + 1


def bridge_weights(x0: float, x1: float, x_star: float, length_scale: float | None = None,
                   mode: str = "linear", k0: int = 0) -> BridgeWeights:
    """Endpoint weights for inference between two conditioned values.

    sinh mode returns the conditional mean weights of an exponential-kernel
    bridge; linear mode is the large length-scale limit.  Both satisfy the
    endpoint conditions (1, 0) at x0 and (0, 1) at x1; sinh weights need not
    sum to 1.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not x0 < x1:
        raise ValueError(f"degenerate bracket [{x0}, {x1}]")
    if not (x0 - 1e-12 <= x_star <= x1 + 1e-12):
        raise ValueError(f"query {x_star} outside bracket [{x0}, {x1}]")
    if mode == "linear":
        c1 = (x_star - x0) / (x1 - x0)
        return BridgeWeights(c0=1.0 - c1, c1=c1, k0=k0)
    if length_scale is None or length_scale <= 0:
        raise ValueError("sinh mode needs a positive length-scale")
    den = sinh((x1 - x0) / length_scale)
    c0 = sinh((x1 - x_star) / length_scale) / den
    c1 = sinh((x_star - x0) / length_scale) / den
    return BridgeWeights(c0=c0, c1=c1, k0=k0)


@lru_cache(maxsize=4096)
def _bracket_layout(bits: int, k0: int) -> tuple[int, tuple[int, ...], tuple[int, ...]]:
    """Common-prefix length and bit strings of the bracket pair (k0, k0+1)."""
    b0 = tuple((k0 >> s) & 1 for s in range(bits - 1, -1, -1))
    b1 = tuple(((k0 + 1) >> s) & 1 for s in range(bits - 1, -1, -1))
    split = next(p for p in range(bits) if b0[p] != b1[p])
    return split, b0, b1


def coeff_tt_1d(grid_points: int, k0: int, c0: float, c1: float) -> TensorTrain:
    """Train of the length-``grid_points`` vector with c0 at k0, c1 at k0+1.

    ``grid_points`` must be a power of two.  Bond ranks are 1 while the
    binary expansions of k0 and k0+1 share a prefix and 2 from the first
    differing bit onward.
    """
    n = int(grid_points)
    if n < 2 or n & (n - 1):
        raise DimensionMismatchError(f"grid size {grid_points} is not a power of two >= 2")
    bits = n.bit_length() - 1
    if not 0 <= k0 < n - 1:
        raise IndexError(f"bracket {k0} out of range for {n} points")
    split, b0, b1 = _bracket_layout(bits, k0)
    cores = []
    for p in range(split):
        c = np.zeros((1, 2, 1))
        c[0, b0[p], 0] = 1.0
        cores.append(c)
    if split == bits - 1:
        c = np.zeros((1, 2, 1))
        c[0, b0[-1], 0] = c0
        c[0, b1[-1], 0] = c1
        cores.append(c)
        return TensorTrain(cores)
    c = np.zeros((1, 2, 2))
    c[0, b0[split], 0] = 1.0
    c[0, b1[split], 1] = 1.0
    cores.append(c)
    for p in range(split + 1, bits - 1):
        c = np.zeros((2, 2, 2))
        c[0, b0[p], 0] = 1.0
        c[1, b1[p], 1] = 1.0
        cores.append(c)
    c = np.zeros((2, 2, 1))
    c[0, b0[-1], 0] = c0
    c[1, b1[-1], 0] = c1
    cores.append(c)
    return TensorTrain(cores)


def _query_weights(grid: FeatureGrid, x, mode: str, length_scale: float | None):
    """Per-feature bracket/weight pairs for one query point."""
    k0, theta = grid_index_map(grid, x)
    out = []
    for i, f in enumerate(grid.features):
        if mode == "linear":
            out.append(BridgeWeights(c0=1.0 - theta[i], c1=float(theta[i]), k0=int(k0[i])))
        else:
            # normalized coordinates so one length-scale spans all features
            dx = 1.0 / (f.points - 1)
            x0 = k0[i] * dx
            out.append(
                bridge_weights(x0, x0 + dx, x0 + theta[i] * dx, length_scale,
                               mode="sinh", k0=int(k0[i]))
            )
    return out


def coeff_tt(grid: FeatureGrid, x, mode: str = "linear",
             length_scale: float | None = None) -> TensorTrain:
    """Full coefficient train for one query: tensor product over features."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    parts = [
        coeff_tt_1d(grid.features[i].points, w.k0, w.c0, w.c1)
        for i, w in enumerate(_query_weights(grid, x, mode, length_scale))
    ]
    out = parts[0]
    for p in parts[1:]:
        out = tt_kron(out, p)
    return out


def interp_eval(y_tt: TensorTrain, grid: FeatureGrid, x, mode: str = "linear",
                length_scale: float | None = None) -> float:
    """Evaluate a gridded train at an off-grid point.

    Contracts the coefficient train against ``y_tt``; equivalently a weighted
    sum over the 2**F corners of the bracketing hypercube.  Exact on grid
    points and, in linear mode, on multilinear functions.
    """
    if y_tt.shape != grid.shape:
        raise DimensionMismatchError("train does not match the grid's core layout")
    return tt_dot(coeff_tt(grid, x, mode, length_scale), y_tt)


def interp_eval_batch(y_tt: TensorTrain, grid: FeatureGrid, xs, mode: str = "linear",
                      length_scale: float | None = None) -> np.ndarray:
    """Vectorized :func:`interp_eval` over rows of ``xs``.

    Streams the contraction query by query; the bracket bit layouts are
    cached, so batches that revisit brackets skip the index arithmetic.
    """
    if y_tt.shape != grid.shape:
        raise DimensionMismatchError("train does not match the grid's core layout")
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    out = np.empty(xs.shape[0])
    for q in range(xs.shape[0]):
        weights = _query_weights(grid, xs[q], mode, length_scale)
        v = np.ones((1, 1))
        core_iter = iter(y_tt.cores)
        for i, f in enumerate(grid.features):
            w = weights[i]
            split, b0, b1 = _bracket_layout(f.bits, w.k0)
            for p in range(f.bits):
                yc = next(core_iter)
                if p < split:
                    v = v @ yc[:, b0[p], :]
                elif p == split == f.bits - 1:
                    v = v @ (w.c0 * yc[:, b0[p], :] + w.c1 * yc[:, b1[p], :])
                elif p == split:
                    v = np.hstack([v @ yc[:, b0[p], :], v @ yc[:, b1[p], :]])
                elif p < f.bits - 1:
                    r = yc.shape[2]
                    nxt = np.empty((v.shape[0], 2 * r))
                    nxt[:, :r] = v[:, : yc.shape[0]] @ yc[:, b0[p], :]
                    nxt[:, r:] = v[:, yc.shape[0]:] @ yc[:, b1[p], :]
                    v = nxt
                else:
                    v = w.c0 * (v[:, : yc.shape[0]] @ yc[:, b0[p], :]) + w.c1 * (
                        v[:, yc.shape[0]:] @ yc[:, b1[p], :]
                    )
        out[q] = v[0, 0]
    return out
