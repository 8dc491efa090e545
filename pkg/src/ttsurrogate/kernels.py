"""Closed-form tensor-train kernels on uniform binary lattices.

The exponential (L1) kernel on a lattice of 2**n points is a Toeplitz matrix
a**|i-j| with a = exp(-spacing / L).  Both the kernel and its noise-free
inverse admit exact low-rank train representations built core by core, which
makes GP posterior means computable without any dense factorization.  Across
features the kernel factorizes as a Kronecker product, so multi-feature
operators are just concatenated core chains.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError
from .grid import FeatureGrid
from .tt import TensorTrain, TTMatrix, tt_dot, tt_kron, ttmat_apply

_A_CLAMP = 1.0 - 1e-12

_I2 = np.eye(2)
_SP = np.array([[0.0, 1.0], [0.0, 0.0]])  # upper shift
_SM = _SP.T                               # lower shift
_P0 = np.diag([1.0, 0.0])
_P1 = np.diag([0.0, 1.0])


@dataclass(frozen=True)
class LatticeKernelSpec:
    """Per-feature lattice geometry plus one shared length-scale.

    ``spacings`` and ``origins`` are in the same units as the length-scale;
    building from a :class:`FeatureGrid` normalizes every feature onto [0, 1]
    first so a single L is meaningful across heterogeneous units.
    """

    spacings: tuple[float, ...]
    bits: tuple[int, ...]
    length_scale: float
    origins: tuple[float, ...] = field(default=None)

    def __post_init__(self):
        if self.length_scale <= 0:
            raise ValueError("length-scale must be positive")
        if any(dx <= 0 for dx in self.spacings):
            raise ValueError("lattice spacings must be positive")
        if any(n < 1 for n in self.bits):
            raise DimensionMismatchError("each feature needs at least one core")
        if self.origins is None:
            object.__setattr__(self, "origins", (0.0,) * len(self.spacings))

    @staticmethod
    def from_grid(grid: FeatureGrid, length_scale: float) -> "LatticeKernelSpec":
        spacings = tuple(1.0 / (f.points - 1) for f in grid.features)
        return LatticeKernelSpec(
            spacings=spacings,
            bits=tuple(f.bits for f in grid.features),
            length_scale=float(length_scale),
            origins=(0.0,) * grid.n_features,
        )

    @property
    def n_features(self) -> int:
        return len(self.spacings)

    def decay(self, feature: int) -> float:
        """a = exp(-spacing / L), clamped strictly below 1."""
        a = float(np.exp(-self.spacings[feature] / self.length_scale))
        return min(a, _A_CLAMP)

    def lattice_coordinate(self, feature: int, x: float) -> float:
        """Map a raw coordinate to its real-valued lattice position."""
        t = (x - self.origins[feature]) / self.spacings[feature]
        top = (1 << self.bits[feature]) - 1
        if t < -1e-9 or t > top + 1e-9:
            raise ValueError(
                f"query {x} outside lattice range for feature {feature}"
            )
        return float(np.clip(t, 0.0, top))


def _stack_right(blocks) -> np.ndarray:
    """Assemble a (1, 2, 2, len(blocks)) core from 2x2 slices."""
    return np.stack(blocks, axis=-1)[None, :, :, :]


def _stack_left(blocks) -> np.ndarray:
    """Assemble a (len(blocks), 2, 2, 1) core from 2x2 slices."""
    return np.stack(blocks, axis=0)[:, :, :, None]


def kernel_tt(spec: LatticeKernelSpec, feature: int) -> TTMatrix:
    """Exact rank-3 train of the Toeplitz kernel a**|i-j| for one feature.

    Peeling off the most significant bit splits the matrix into a same-half
    copy plus two geometric off-diagonal blocks, and the off-diagonal blocks
    reproduce themselves under the same split; three states therefore close
    the recursion at every level.
    """
    a = spec.decay(feature)
    n = spec.bits[feature]
    k1 = np.array([[1.0, a], [a, 1.0]])
    if n == 1:
        return TTMatrix([k1[None, :, :, None]])
    m1 = np.array([[a**2, a**3], [a, a**2]])
    cores = [_stack_right([_I2, _SP, _SM])]
    for lev in range(n - 2, 0, -1):
        up = a ** (2**lev) * _I2 + a ** (2 ** (lev + 1)) * _SP + _SM
        dn = a ** (2**lev) * _I2 + a ** (2 ** (lev + 1)) * _SM + _SP
        c = np.zeros((3, 2, 2, 3))
        c[0, :, :, 0] = _I2
        c[0, :, :, 1] = _SP
        c[0, :, :, 2] = _SM
        c[1, :, :, 1] = up
        c[2, :, :, 2] = dn
        cores.append(c)
    cores.append(_stack_left([k1, m1, m1.T]))
    return TTMatrix(cores)


def kernel_inv_tt(spec: LatticeKernelSpec, feature: int) -> TTMatrix:
    """Train of the analytic kernel inverse, interior bond ranks <= 5.

    The inverse is tridiagonal with corner diagonal entries 1: up to the
    prefactor 1/(1-a^2) it equals (1+a^2) I - a (S + S^T) - a^2 (corners),
    where S is the one-step shift.  The five states {tridiagonal band, two
    wrap-around corners of the shift recursion, two diagonal corners} close
    the bit-peeling recursion exactly.
    """
    a = spec.decay(feature)
    if a >= 1.0:
        raise ValueError("kernel inverse undefined at a = 1 (infinite length-scale)")
    n = spec.bits[feature]
    pref = 1.0 / (1.0 - a * a)
    b, c = 1.0 + a * a, -a
    band1 = np.array([[b, c], [c, b]])
    if n == 1:
        core = pref * np.array([[1.0, -a], [-a, 1.0]])
        return TTMatrix([core[None, :, :, None]])
    first = _stack_right(
        [pref * _I2, pref * c * _SM, pref * c * _SP, -pref * a * a * _P0, -pref * a * a * _P1]
    )
    middles = []
    for _ in range(n - 2):
        m = np.zeros((5, 2, 2, 5))
        m[0, :, :, 0] = _I2
        m[0, :, :, 1] = c * _SM
        m[0, :, :, 2] = c * _SP
        m[1, :, :, 1] = _SP
        m[2, :, :, 2] = _SM
        m[3, :, :, 3] = _P0
        m[4, :, :, 4] = _P1
        middles.append(m)
    last = _stack_left([band1, _SP, _SM, _P0, _P1])
    return TTMatrix([first, *middles, last])


def multi_kernel_tt(spec: LatticeKernelSpec) -> TTMatrix:
    """Kronecker kernel over all features, in grid core order."""
    out = kernel_tt(spec, 0)
    for f in range(1, spec.n_features):
        out = tt_kron(out, kernel_tt(spec, f))
    return out


def multi_kernel_inv_tt(spec: LatticeKernelSpec) -> TTMatrix:
    out = kernel_inv_tt(spec, 0)
    for f in range(1, spec.n_features):
        out = tt_kron(out, kernel_inv_tt(spec, f))
    return out


def _cross_kernel_feature_cores(a: float, n: int, t: float) -> list[np.ndarray]:
    """Cores of the vector a**|t - i| for a real lattice position t.

    Descending the bits of the integer bracket keeps one "center" state whose
    block still contains t, while sibling blocks turn into plain geometric
    tails; with the two tail orientations that is three states, so every bond
    has rank at most 3.  States are ordered [center, above-t, below-t].
    """
    top = (1 << n) - 1
    k = min(int(np.floor(t)), top)
    if n == 1:
        return [np.array([a ** abs(t - 0.0), a ** abs(t - 1.0)]).reshape(1, 2, 1)]
    cores = []
    for p in range(n - 1):
        lev = n - 1 - p  # bits remaining to the right
        prefix = k >> lev
        bit = prefix & 1
        c = np.zeros((3, 2, 3))
        if bit == 0:
            sib_start = (prefix + 1) << lev
            c[0, 0, 0] = 1.0
            c[0, 1, 1] = a ** (sib_start - t)
        else:
            sib_end = (prefix << lev) - 1
            c[0, 1, 0] = 1.0
            c[0, 0, 2] = a ** (t - sib_end)
        c[1, 0, 1] = 1.0
        c[1, 1, 1] = a ** (1 << lev)
        c[2, 0, 2] = a ** (1 << lev)
        c[2, 1, 2] = 1.0
        cores.append(c)
    base = (k >> 1) << 1
    lastc = np.zeros((3, 2, 1))
    lastc[0, 0, 0] = a ** abs(t - base)
    lastc[0, 1, 0] = a ** abs(t - base - 1.0)
    lastc[1, 0, 0] = 1.0
    lastc[1, 1, 0] = a
    lastc[2, 0, 0] = a
    lastc[2, 1, 0] = 1.0
    cores.append(lastc)
    cores[0] = cores[0][:1]  # root is always the center state
    return cores


def cross_kernel_vector_tt(spec: LatticeKernelSpec, x_star) -> TensorTrain:
    """Kernel column k(x*, X) over the full lattice as a rank-<=3 train."""
    x_star = np.atleast_1d(np.asarray(x_star, dtype=np.float64))
    if x_star.size != spec.n_features:
        raise DimensionMismatchError(
            f"query has {x_star.size} coordinates, spec has {spec.n_features} features"
        )
    parts = []
    for f in range(spec.n_features):
        t = spec.lattice_coordinate(f, x_star[f])
        parts.append(TensorTrain(_cross_kernel_feature_cores(spec.decay(f), spec.bits[f], t)))
    out = parts[0]
    for p in parts[1:]:
        out = tt_kron(out, p)
    return out


def stn_gpr_mean(y_tt: TensorTrain, spec: LatticeKernelSpec, x_star) -> float:
    """Noise-free GP posterior mean k(x*, X) K^{-1} y, entirely in TT form.

    On a lattice point this returns the stored grid value; between points the
    exponential kernel's Markov structure reduces it to sinh-weighted
    interpolation of the bracketing values.
    """
    expected = tuple(2 for n in spec.bits for _ in range(n))
    if y_tt.shape != expected:
        raise DimensionMismatchError("training train does not match the kernel lattice")
    weights = ttmat_apply(multi_kernel_inv_tt(spec), y_tt)
    return tt_dot(cross_kernel_vector_tt(spec, x_star), weights)


class GpInference:
    """Reusable posterior-mean evaluator: K^{-1} y is applied once."""

    def __init__(self, spec: LatticeKernelSpec, y_tt: TensorTrain):
        expected = tuple(2 for n in spec.bits for _ in range(n))
        if y_tt.shape != expected:
            raise DimensionMismatchError("training train does not match the kernel lattice")
        self.spec = spec
        self._weights = ttmat_apply(multi_kernel_inv_tt(spec), y_tt)

    def mean(self, x_star) -> float:
        return tt_dot(cross_kernel_vector_tt(self.spec, x_star), self._weights)
