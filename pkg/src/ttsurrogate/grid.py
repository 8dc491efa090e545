"""Uniform feature lattices with quantized (binary) core encoding.

Each feature spans ``2**bits`` equally spaced points; the global core order
is feature-major with the most significant bit first, so a grid with bit
counts (4, 5, 3) is a 12-core train of local dimension 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError


@dataclass(frozen=True)
class Feature:
    name: str
    lo: float
    hi: float
    bits: int

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DimensionMismatchError(f"feature {self.name!r}: need min < max")
        if self.bits < 1:
            raise DimensionMismatchError(f"feature {self.name!r}: bits must be >= 1")

    @property
    def points(self) -> int:
        return 1 << self.bits

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.points - 1)


class FeatureGrid:
    """Product lattice over named features with a fixed bit layout."""

    def __init__(self, features):
        feats = []
        for f in features:
            feats.append(f if isinstance(f, Feature) else Feature(*f))
        if not feats:
            raise DimensionMismatchError("grid needs at least one feature")
        names = [f.name for f in feats]
        if len(set(names)) != len(names):
            raise DimensionMismatchError("feature names must be unique")
        self.features = tuple(feats)
        offsets = np.cumsum([0] + [f.bits for f in feats])
        self._offsets = offsets
        self.total_cores = int(offsets[-1])

    @property
    def n_features(self) -> int:
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def shape(self) -> tuple[int, ...]:
        return (2,) * self.total_cores

    @property
    def n_points(self) -> float:
        return float(np.prod([float(f.points) for f in self.features]))

    def feature_slice(self, i: int) -> slice:
        return slice(int(self._offsets[i]), int(self._offsets[i + 1]))

    # -- coordinate mappings ------------------------------------------------

    def lattice_to_bits(self, lattice) -> np.ndarray:
        """Per-feature lattice indices -> full bit multi-index (MSB first)."""
        lattice = np.atleast_2d(np.asarray(lattice, dtype=np.int64))
        out = np.empty((lattice.shape[0], self.total_cores), dtype=np.int64)
        for i, f in enumerate(self.features):
            idx = lattice[:, i]
            if np.any(idx < 0) or np.any(idx >= f.points):
                raise IndexError(f"lattice index out of range for feature {f.name!r}")
            shifts = np.arange(f.bits - 1, -1, -1)
            out[:, self.feature_slice(i)] = (idx[:, None] >> shifts) & 1
        return out

    def bits_to_lattice(self, bits) -> np.ndarray:
        bits = np.atleast_2d(np.asarray(bits, dtype=np.int64))
        if bits.shape[1] != self.total_cores:
            raise DimensionMismatchError(
                f"multi-index has {bits.shape[1]} cores, grid has {self.total_cores}"
            )
        out = np.empty((bits.shape[0], self.n_features), dtype=np.int64)
        for i, f in enumerate(self.features):
            chunk = bits[:, self.feature_slice(i)]
            weights = 1 << np.arange(f.bits - 1, -1, -1)
            out[:, i] = chunk @ weights
        return out

    def points_of_bits(self, bits) -> np.ndarray:
        """Bit multi-indices -> feature-space coordinates, shape (B, F)."""
        lattice = self.bits_to_lattice(bits)
        lo = np.array([f.lo for f in self.features])
        dx = np.array([f.spacing for f in self.features])
        return lo + lattice * dx

    def normalize(self, x) -> np.ndarray:
        """Affine map of feature coordinates onto [0, 1] per feature."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        lo = np.array([f.lo for f in self.features])
        hi = np.array([f.hi for f in self.features])
        return (x - lo) / (hi - lo)

    def validate_in_range(self, x) -> None:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise DimensionMismatchError(
                f"point has {x.shape[1]} coordinates, grid has {self.n_features} features"
            )
        for i, f in enumerate(self.features):
            if np.any(x[:, i] < f.lo - 1e-12 * abs(f.lo)) or np.any(
                x[:, i] > f.hi + 1e-12 * abs(f.hi)
            ):
                raise ValueError(f"coordinate out of range for feature {f.name!r}")

    def random_points(self, rng, n: int) -> np.ndarray:
        """Uniform samples over the continuous feature box."""
        lo = np.array([f.lo for f in self.features])
        hi = np.array([f.hi for f in self.features])
        return rng.uniform(lo, hi, size=(n, self.n_features))

    # -- serialization --------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "features": [
                {"name": f.name, "min": f.lo, "max": f.hi, "bits": f.bits}
                for f in self.features
            ]
        }

    @staticmethod
    def from_json(blob: dict) -> "FeatureGrid":
        return FeatureGrid(
            [Feature(f["name"], f["min"], f["max"], f["bits"]) for f in blob["features"]]
        )

    def __eq__(self, other):
        return isinstance(other, FeatureGrid) and self.features == other.features

    def __repr__(self):
        inner = ", ".join(f"{f.name}[{f.points}]" for f in self.features)
        return f"FeatureGrid({inner})"


def grid_index_map(grid: FeatureGrid, x) -> tuple[np.ndarray, np.ndarray]:
    """Bracketing lattice indices and fractional offsets for point(s) x.

    Per feature, returns ``k0 = floor((x - min) / spacing)`` clamped so the
    bracket (k0, k0 + 1) stays on the lattice; the offset is the fractional
    position within the bracket, so the top edge maps to (points - 2, 1.0).
    Bit multi-indices follow via :meth:`FeatureGrid.lattice_to_bits`.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    grid.validate_in_range(x)
    k0 = np.empty_like(x, dtype=np.int64)
    theta = np.empty_like(x)
    for i, f in enumerate(grid.features):
        t = (x[:, i] - f.lo) / f.spacing
        k = np.clip(np.floor(t).astype(np.int64), 0, f.points - 2)
        k0[:, i] = k
        theta[:, i] = np.clip(t - k, 0.0, 1.0)
    if single:
        return k0[0], theta[0]
    return k0, theta
