import logging
import warnings
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import List, Optional, Tuple

import numpy as np
import pywt

from gpam.fields import Field, Grid2D

logger = logging.getLogger(__name__)

DIMENSION = 2
ORIENTATIONS = ("horizontal", "vertical", "diagonal")
DEFAULT_WAVELET = "db20"
COARSEST_SIZE = 2

# Hoelder exponent of the Daubechies wavelets (smoothness r of the basis).
# db11..db20 continue the db8..db10 trend with a smaller step, as lower bounds.
DAUBECHIES_REGULARITY = {
    "db2": 0.550,
    "db3": 1.088,
    "db4": 1.618,
    "db5": 1.969,
    "db6": 2.189,
    "db7": 2.460,
    "db8": 2.761,
    "db9": 3.074,
    "db10": 3.361,
    "db11": 3.603,
    "db12": 3.833,
    "db13": 4.073,
    "db14": 4.317,
    "db15": 4.566,
    "db16": 4.817,
    "db17": 5.059,
    "db18": 5.292,
    "db19": 5.520,
    "db20": 5.755,
}


class WaveletError(Exception):
    pass


def max_depth(grid: Grid2D) -> int:
    """Deepest periodized decomposition: the scaling part keeps 2x2 coefficients."""
    return (grid.n // COARSEST_SIZE).bit_length() - 1


@dataclass(frozen=True)
class WaveletBasis:
    """
    Periodized orthonormal Daubechies basis on a Grid2D.

    Levels are counted from the coarsest (m = 0) to the finest (m = depth - 1);
    the wavelets of level m sit on a lattice of spacing 2^(depth - m) * dx.
    Coefficients use the continuum L2 normalization <f, psi> = dx * c_discrete.
    The default depth goes down to a 2x2 scaling grid, so n = 256 has levels 0..6;
    periodization keeps the transform orthonormal when the filter is longer
    than a coarse level.
    """
    grid: Grid2D
    name: str = DEFAULT_WAVELET
    depth: Optional[int] = None

    def __post_init__(self):
        if self.name not in DAUBECHIES_REGULARITY:
            raise WaveletError(f"Unsupported wavelet '{self.name}', expected one of {sorted(DAUBECHIES_REGULARITY)}")
        limit = max_depth(self.grid)
        if self.depth is None:
            object.__setattr__(self, "depth", limit)
        if not 1 <= self.depth <= limit:
            raise WaveletError(f"Depth {self.depth} too large for grid {self.grid.n} with {self.name} (max {limit})")

    @cached_property
    def wavelet(self) -> pywt.Wavelet:
        return pywt.Wavelet(self.name)

    @property
    def regularity(self) -> float:
        return DAUBECHIES_REGULARITY[self.name]

    @property
    def vanishing_moments(self) -> int:
        return self.wavelet.vanishing_moments_psi

    @property
    def r_prime(self) -> float:
        return np.floor(self.regularity / 2.0) + 1.0 + DIMENSION / 2.0

    def level_size(self, level: int) -> int:
        """Number of lattice points per side on a detail level."""
        self._check_level(level)
        return self.grid.n >> (self.depth - level)

    def level_stride(self, level: int) -> int:
        return self.grid.n // self.level_size(level)

    def _check_level(self, level: int) -> None:
        if not 0 <= level < self.depth:
            raise WaveletError(f"Level {level} outside 0..{self.depth - 1}")


@dataclass(frozen=True, eq=False)
class WaveletCoeffs:
    """approx holds the scaling coefficients, details[m] the three orientations of level m."""
    basis: WaveletBasis
    approx: np.ndarray
    details: Tuple[Tuple[np.ndarray, np.ndarray, np.ndarray], ...]

    def level(self, m: int) -> np.ndarray:
        """Detail coefficients of level m stacked as (orientation, i, j)."""
        return np.stack(self.details[m])

    def energy(self) -> float:
        total = float(np.sum(self.approx ** 2))
        for triple in self.details:
            total += sum(float(np.sum(d ** 2)) for d in triple)
        return total


def analyze(f: Field, basis: WaveletBasis) -> WaveletCoeffs:
    if f.grid != basis.grid:
        raise WaveletError("Field and wavelet basis live on different grids")
    with warnings.catch_warnings():
        # pywt warns past dwt_max_level; periodized transforms stay exact
        warnings.simplefilter("ignore", UserWarning)
        coeffs = pywt.wavedec2(f.values, basis.wavelet, mode="periodization", level=basis.depth)
    h = f.grid.spacing
    details = tuple(tuple(h * c for c in triple) for triple in coeffs[1:])
    return WaveletCoeffs(basis=basis, approx=h * coeffs[0], details=details)


def synthesize(coeffs: WaveletCoeffs) -> Field:
    h = coeffs.basis.grid.spacing
    raw = [coeffs.approx / h] + [tuple(c / h for c in triple) for triple in coeffs.details]
    values = pywt.waverec2(raw, coeffs.basis.wavelet, mode="periodization")
    return Field(coeffs.basis.grid, values)


def zero_coeffs(basis: WaveletBasis) -> WaveletCoeffs:
    size = basis.grid.n >> basis.depth
    details = tuple(
        tuple(np.zeros((basis.level_size(m), basis.level_size(m))) for _ in ORIENTATIONS)
        for m in range(basis.depth)
    )
    return WaveletCoeffs(basis=basis, approx=np.zeros((size, size)), details=details)


def wavelet_field(basis: WaveletBasis, level: int, orientation: int, position: Tuple[int, int]) -> Field:
    """The L2-normalized wavelet psi^level at a lattice position, as a Field."""
    basis._check_level(level)
    coeffs = zero_coeffs(basis)
    size = basis.level_size(level)
    coeffs.details[level][orientation][position[0] % size, position[1] % size] = 1.0
    return synthesize(coeffs)


def _circular_center(weights: np.ndarray, axis: int, n: int) -> float:
    profile = weights.sum(axis=1 - axis)
    angles = np.arange(n) * (2.0 * np.pi / n)
    mean = np.angle(np.sum(profile * np.exp(1j * angles)))
    return float(np.mod(mean * n / (2.0 * np.pi), n))


@lru_cache(maxsize=64)
def _reference_centers(basis: WaveletBasis, level: int) -> Tuple[Tuple[float, float], ...]:
    centers = []
    for o in range(len(ORIENTATIONS)):
        energy = wavelet_field(basis, level, o, (0, 0)).values ** 2
        centers.append((_circular_center(energy, 0, basis.grid.n), _circular_center(energy, 1, basis.grid.n)))
    return tuple(centers)


def level_centers(basis: WaveletBasis, level: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Grid indices of the energy centers of every level-m wavelet.

    Returns:
        two integer arrays of shape (3, size, size)
    """
    size = basis.level_size(level)
    stride = basis.level_stride(level)
    n = basis.grid.n
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    c1, c2 = [], []
    for ref1, ref2 in _reference_centers(basis, level):
        c1.append(np.mod(np.rint(ref1 + stride * ii), n).astype(int))
        c2.append(np.mod(np.rint(ref2 + stride * jj), n).astype(int))
    return np.stack(c1), np.stack(c2)


# Norm estimators

def _check_exponent(value: float, basis: WaveletBasis, name: str) -> None:
    if abs(value) >= basis.regularity:
        raise WaveletError(f"|{name}|={abs(value)} must stay below the basis regularity {basis.regularity}")


def sobolev_profile(f: Field, beta: float, basis: WaveletBasis) -> List[float]:
    """Per-level terms 2^(2 m beta) * sum_y <f, psi^m_y>^2."""
    _check_exponent(beta, basis, "beta")
    coeffs = analyze(f, basis)
    return [2.0 ** (2 * m * beta) * float(np.sum(coeffs.level(m) ** 2)) for m in range(basis.depth)]


def sobolev_norm(f: Field, beta: float, basis: WaveletBasis) -> float:
    _check_exponent(beta, basis, "beta")
    coeffs = analyze(f, basis)
    total = float(np.sum(coeffs.approx ** 2)) + sum(sobolev_profile(f, beta, basis))
    return float(np.sqrt(total))


def holder_profile(f: Field, alpha: float, basis: WaveletBasis) -> List[float]:
    """Per-level sups 2^(m (alpha + d/2)) * max_y |<f, psi^m_y>|."""
    _check_exponent(alpha, basis, "alpha")
    coeffs = analyze(f, basis)
    return [
        2.0 ** (m * (alpha + DIMENSION / 2.0)) * float(np.max(np.abs(coeffs.level(m))))
        for m in range(basis.depth)
    ]


def holder_estimate(f: Field, alpha: float, basis: WaveletBasis) -> float:
    coeffs = analyze(f, basis)
    return max([float(np.max(np.abs(coeffs.approx)))] + holder_profile(f, alpha, basis))


# Decorrelation of wavelet products

def triple_product_scan(
    basis: WaveletBasis,
    n: int,
    m: int,
    p: int,
    samples: int = 64,
    seed: int = 0,
) -> float:
    """
    Worst normalized triple product over sampled overlapping lattice triples.

    For levels n <= m <= p, computes |<psi^n_x psi^m_y, psi^p_z>| by grid
    quadrature and divides by 2^(n d/2) 2^(-r' (p - m)).

    Returns:
        the largest ratio found
    """
    if not 0 <= n <= m <= p < basis.depth:
        raise WaveletError(f"Need 0 <= n <= m <= p < {basis.depth}, got {(n, m, p)}")
    rng = np.random.default_rng(seed)
    h2 = basis.grid.spacing ** 2
    bound = 2.0 ** (n * DIMENSION / 2.0) * 2.0 ** (-basis.r_prime * (p - m))
    centers = {lvl: level_centers(basis, lvl) for lvl in {n, m, p}}

    def nearest(level, orientation, target):
        c1, c2 = centers[level]
        size = basis.level_size(level)
        half = basis.grid.n // 2
        d1 = np.abs(np.mod(c1[orientation] - target[0] + half, basis.grid.n) - half)
        d2 = np.abs(np.mod(c2[orientation] - target[1] + half, basis.grid.n) - half)
        idx = np.unravel_index(np.argmin(d1 + d2), (size, size))
        jitter = rng.integers(-1, 2, size=2)
        return (int(idx[0] + jitter[0]) % size, int(idx[1] + jitter[1]) % size)

    worst = 0.0
    for _ in range(samples):
        oz = int(rng.integers(3))
        size_p = basis.level_size(p)
        z = (int(rng.integers(size_p)), int(rng.integers(size_p)))
        target = (centers[p][0][oz][z], centers[p][1][oz][z])
        oy, ox = int(rng.integers(3)), int(rng.integers(3))
        y = nearest(m, oy, target)
        x = nearest(n, ox, target)
        value = h2 * np.sum(
            wavelet_field(basis, n, ox, x).values
            * wavelet_field(basis, m, oy, y).values
            * wavelet_field(basis, p, oz, z).values
        )
        worst = max(worst, abs(float(value)) / bound)
    logger.debug(f"Triple scan (n={n}, m={m}, p={p}): worst ratio {worst:.4e}")
    return worst
