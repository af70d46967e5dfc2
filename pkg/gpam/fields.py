import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Dict, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import fft as sfft
from scipy.interpolate import CubicSpline
from scipy.special import exp1

logger = logging.getLogger(__name__)

TORUS_SIDE = 2.0 * np.pi
MIN_GRID = 16
LAPLACIAN_SYMBOLS = ("spectral", "fd")
MOLLIFIER_PROFILES = ("bump", "bump_sq")
KERNEL_MAX_CONDITION = 1e12


class GridError(Exception):
    pass


class FieldError(Exception):
    pass


class UnderResolvedError(Exception):
    pass


class KernelError(Exception):
    pass


@lru_cache(maxsize=16)
def _wavenumbers(n: int) -> Tuple[np.ndarray, np.ndarray]:
    k = sfft.fftfreq(n, d=1.0 / n)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    k1.setflags(write=False)
    k2.setflags(write=False)
    return k1, k2


@lru_cache(maxsize=16)
def _coordinates(n: int) -> Tuple[np.ndarray, np.ndarray]:
    x = np.arange(n) * (TORUS_SIDE / n)
    x1, x2 = np.meshgrid(x, x, indexing="ij")
    x1.setflags(write=False)
    x2.setflags(write=False)
    return x1, x2


@dataclass(frozen=True)
class Grid2D:
    """Periodic n x n grid over the torus [0, 2pi)^2."""
    n: int = 256

    def __post_init__(self):
        if self.n < MIN_GRID or self.n & (self.n - 1):
            raise GridError(f"Grid size must be a power of two >= {MIN_GRID}, got {self.n}")

    @property
    def spacing(self) -> float:
        return TORUS_SIDE / self.n

    @property
    def coords(self) -> Tuple[np.ndarray, np.ndarray]:
        return _coordinates(self.n)

    @property
    def wavenumbers(self) -> Tuple[np.ndarray, np.ndarray]:
        return _wavenumbers(self.n)

    @property
    def ksq(self) -> np.ndarray:
        k1, k2 = self.wavenumbers
        return k1 ** 2 + k2 ** 2

    def point(self, index: Tuple[int, int]) -> Tuple[float, float]:
        return (index[0] * self.spacing, index[1] * self.spacing)

    def wrapped_offsets(self, center: Tuple[float, float]) -> Tuple[np.ndarray, np.ndarray]:
        """Componentwise torus displacement x - center, in [-pi, pi)."""
        x1, x2 = self.coords
        d1 = np.mod(x1 - center[0] + np.pi, TORUS_SIDE) - np.pi
        d2 = np.mod(x2 - center[1] + np.pi, TORUS_SIDE) - np.pi
        return d1, d2

    def laplacian_symbol(self, kind: str = "spectral") -> np.ndarray:
        """Nonnegative symbol lambda(k) of -Laplacian."""
        if kind == "spectral":
            return self.ksq
        if kind == "fd":
            k1, k2 = self.wavenumbers
            h = self.spacing
            return (4.0 / h ** 2) * (np.sin(k1 * h / 2.0) ** 2 + np.sin(k2 * h / 2.0) ** 2)
        raise GridError(f"Unknown Laplacian symbol '{kind}', expected one of {LAPLACIAN_SYMBOLS}")


@dataclass(frozen=True, eq=False)
class Field:
    """
    Real function sampled on a Grid2D; values[i, j] sits at (i*dx, j*dx).
    Values are copied on construction and read-only afterwards.
    """
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n, self.grid.n):
            raise FieldError(f"Expected shape {(self.grid.n, self.grid.n)}, got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise FieldError("Field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, grid: Grid2D, value: float) -> "Field":
        return cls(grid, np.full((grid.n, grid.n), float(value)))

    @classmethod
    def zeros(cls, grid: Grid2D) -> "Field":
        return cls.constant(grid, 0.0)

    @classmethod
    def from_function(cls, grid: Grid2D, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "Field":
        x1, x2 = grid.coords
        return cls(grid, np.broadcast_to(fn(x1, x2), (grid.n, grid.n)))

    def _other(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise GridError(f"Grid mismatch: {self.grid.n} vs {other.grid.n}")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._other(other))

    def __mul__(self, other):
        return Field(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(self.grid, -self.values)

    def spectrum(self) -> np.ndarray:
        return sfft.fft2(self.values)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def mean(self) -> float:
        return float(np.mean(self.values))

    def inner(self, other: "Field") -> float:
        return float(np.sum(self.values * self._other(other)) * self.grid.spacing ** 2)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.values ** 2)) * self.grid.spacing)

    def l2_norm_spectral(self) -> float:
        spec = self.spectrum()
        return float(np.sqrt(np.sum(np.abs(spec) ** 2)) * self.grid.spacing / self.grid.n)

    def h2_norm(self) -> float:
        spec = self.spectrum()
        weight = (1.0 + self.grid.ksq) ** 2
        return float(np.sqrt(np.sum(weight * np.abs(spec) ** 2)) * self.grid.spacing / self.grid.n)

    def translate(self, shift: Tuple[int, int]) -> "Field":
        return Field(self.grid, np.roll(self.values, shift, axis=(0, 1)))

    def at(self, index: Tuple[int, int]) -> float:
        return float(self.values[index[0] % self.grid.n, index[1] % self.grid.n])


def _apply_multiplier(f: Field, multiplier: np.ndarray) -> Field:
    return Field(f.grid, sfft.ifft2(f.spectrum() * multiplier).real)


# White noise

def sample_white_noise(seed: int, grid: Grid2D) -> Field:
    """
    Spatial white noise on the grid by Fourier synthesis.

    Independent complex Gaussians per frequency are symmetrized into a
    Hermitian spectrum with unit variance per mode, so that <xi, phi> has
    variance ||phi||^2_{L2} and the grid values are iid N(0, 1/dx^2).
    """
    rng = np.random.default_rng(seed)
    n = grid.n
    a = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    a_neg = np.conj(np.roll(np.flip(a, axis=(0, 1)), 1, axis=(0, 1)))
    z = (a + a_neg) / np.sqrt(2.0)
    values = n * sfft.ifft2(z).real / grid.spacing
    return Field(grid, values)


# Mollification

def _smooth_zero(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    pos = u > 0
    out[pos] = np.exp(-1.0 / u[pos])
    return out


def smooth_step(u: np.ndarray) -> np.ndarray:
    """C-infinity step: 1 for u <= 0, 0 for u >= 1."""
    a = _smooth_zero(1.0 - np.asarray(u, dtype=float))
    b = _smooth_zero(np.asarray(u, dtype=float))
    return a / (a + b)


@dataclass(frozen=True)
class Mollifier:
    """
    Compactly supported radial bump rho_eps with unit integral on the grid.

    Args:
        epsilon: support radius
        profile: "bump" = exp(1 - 1/(1 - s^2)), "bump_sq" = its square
    """
    epsilon: float = 0.0625
    profile: str = "bump"

    def __post_init__(self):
        if self.profile not in MOLLIFIER_PROFILES:
            raise ValueError(f"Unknown mollifier profile '{self.profile}', expected one of {MOLLIFIER_PROFILES}")
        if self.epsilon <= 0:
            raise ValueError("Mollifier scale must be positive")

    def shape(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        inside = s < 1.0
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
        return out ** 2 if self.profile == "bump_sq" else out

    def check_resolution(self, grid: Grid2D) -> None:
        if self.epsilon < 2.0 * grid.spacing:
            raise UnderResolvedError(
                f"under-resolved mollifier: epsilon={self.epsilon} < 2*dx={2.0 * grid.spacing:.5f}"
            )
        if self.epsilon >= np.pi:
            raise GridError(f"Mollifier support {self.epsilon} does not fit in the torus")

    def kernel(self, grid: Grid2D) -> Field:
        self.check_resolution(grid)
        d1, d2 = grid.wrapped_offsets((0.0, 0.0))
        values = self.shape(np.hypot(d1, d2) / self.epsilon)
        values = values / (np.sum(values) * grid.spacing ** 2)
        return Field(grid, values)

    def multiplier(self, grid: Grid2D) -> np.ndarray:
        return _mollifier_multiplier(self, grid)


@lru_cache(maxsize=64)
def _mollifier_multiplier(rho: Mollifier, grid: Grid2D) -> np.ndarray:
    spec = sfft.fft2(rho.kernel(grid).values).real * grid.spacing ** 2
    spec.setflags(write=False)
    return spec


def mollify(xi: Field, rho: Mollifier) -> Field:
    return _apply_multiplier(xi, rho.multiplier(xi.grid))


# Heat calculus

def phi1(lam: np.ndarray, t: float) -> np.ndarray:
    """(1 - exp(-lam t)) / lam, equal to t where lam = 0."""
    lam = np.asarray(lam, dtype=float)
    out = np.full_like(lam, float(t))
    pos = lam > 0
    out[pos] = -np.expm1(-lam[pos] * t) / lam[pos]
    return out


def heat_semigroup(f: Field, t: float, symbol: str = "spectral") -> Field:
    if t < 0:
        raise ValueError(f"Heat semigroup needs t >= 0, got {t}")
    if t == 0:
        return f
    return _apply_multiplier(f, np.exp(-f.grid.laplacian_symbol(symbol) * t))


def heat_integral(f: Field, t: float, symbol: str = "spectral") -> Field:
    """int_0^t heat_semigroup(f, s) ds."""
    if t < 0:
        raise ValueError(f"Heat integral needs t >= 0, got {t}")
    return _apply_multiplier(f, phi1(f.grid.laplacian_symbol(symbol), t))


def green_convolve(f: Field, kernel: "KernelK" = None) -> Field:
    kernel = kernel or build_kernel_k(f.grid)
    if kernel.grid != f.grid:
        raise GridError("Kernel and field live on different grids")
    return _apply_multiplier(f, kernel.spectrum)


def ball_indicator(grid: Grid2D, center: Tuple[float, float], radius: float) -> Field:
    d1, d2 = grid.wrapped_offsets(center)
    return Field(grid, (np.hypot(d1, d2) < radius).astype(float))


def smooth_bump(grid: Grid2D, center: Tuple[float, float], inner: float, outer: float) -> Field:
    """1 on B(center, inner), 0 outside B(center, outer), smooth in between."""
    if not 0 < inner < outer:
        raise ValueError("smooth_bump needs 0 < inner < outer")
    d1, d2 = grid.wrapped_offsets(center)
    r = np.hypot(d1, d2)
    return Field(grid, smooth_step((r - inner) / (outer - inner)))


# Singular kernel K

def composite_gauss(a: float, b: float, panels: int, order: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


BUMP_NORMALIZER = np.exp(8.0)
RHO_MAX = 12.0
DEFAULT_QUADRATURE = (64, 20)
# (radial power p, time power q) of the annihilated moments 1, |x|^2, t
MOMENT_ROWS = ((0, 0), (2, 0), (0, 1))


def kernel_cutoff(s: np.ndarray) -> np.ndarray:
    """chi(s): 1 for s <= 1/2, 0 for s >= 1, where s = |x|^2 + t."""
    return smooth_step(2.0 * np.asarray(s, dtype=float) - 1.0)


def correction_space(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return BUMP_NORMALIZER * _smooth_zero(s - 0.5) * _smooth_zero(1.0 - s)


def correction_time(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return BUMP_NORMALIZER * _smooth_zero(t) * _smooth_zero(0.5 - t)


def heat_kernel(t: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    t, x1, x2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t, x1, x2)))
    out = np.zeros(t.shape)
    pos = t > 0
    tp = t[pos]
    out[pos] = np.exp(-(x1[pos] ** 2 + x2[pos] ** 2) / (4.0 * tp)) / (4.0 * np.pi * tp)
    return out


def _angular_moment(a: int, b: int, points: int = 64) -> float:
    theta = np.arange(points) * (2.0 * np.pi / points)
    return float(np.sum(np.cos(theta) ** a * np.sin(theta) ** b) * (2.0 * np.pi / points))


def _radial_heat_moment(p: int, q: int, panels: int, order: int) -> float:
    """int int chi(|x|^2 + t) G(t, x) r^p t^q r dr dt over r > 0, t > 0."""
    rho, w_rho = composite_gauss(0.0, RHO_MAX, panels, order)
    radial = np.sum(w_rho * rho ** (p + 1) * np.exp(-rho ** 2 / 4.0) * (1.0 + rho ** 2) ** (-(p / 2.0 + q + 1.0)))
    s, w_s = composite_gauss(0.0, 1.0, panels, order)
    temporal = np.sum(w_s * kernel_cutoff(s) * s ** (p / 2.0 + q))
    return float(radial * temporal / (4.0 * np.pi))


def _radial_correction_moments(p: int, q: int, panels: int, order: int) -> np.ndarray:
    """Moments of theta(t) b(|x|^2 + t) * {1, |x|^2, t} against r^p t^q r dr dt."""
    t, w_t = composite_gauss(0.0, 0.5, panels, order)
    s, w_s = composite_gauss(0.5, 1.0, panels, order)
    tt, ss = np.meshgrid(t, s, indexing="ij")
    weight = np.outer(w_t, w_s) * correction_time(tt) * correction_space(ss)
    u = ss - tt
    base = 0.5 * weight * u ** (p / 2.0) * tt ** q
    return np.array([np.sum(base), np.sum(base * u), np.sum(base * tt)])


@lru_cache(maxsize=4)
def kernel_coefficients(panels: int = DEFAULT_QUADRATURE[0], order: int = DEFAULT_QUADRATURE[1]) -> Tuple[Tuple[float, float, float], float]:
    """
    Solves the moment system for the correction coefficients (a0, a1, a2).

    Returns:
        coefficients and the condition number of the 3x3 system
    """
    matrix = np.array([_radial_correction_moments(p, q, panels, order) for p, q in MOMENT_ROWS])
    rhs = np.array([_radial_heat_moment(p, q, panels, order) for p, q in MOMENT_ROWS])
    condition = float(np.linalg.cond(matrix))
    if not np.isfinite(condition) or condition > KERNEL_MAX_CONDITION:
        raise KernelError(f"Moment system is ill-conditioned (cond={condition:.3e})")
    coeffs = np.linalg.solve(matrix, rhs)
    logger.info(f"Kernel correction solved: a={coeffs.tolist()}, cond={condition:.3e}")
    return tuple(float(c) for c in coeffs), condition


@dataclass(frozen=True, eq=False)
class KernelK:
    """
    Singular part K of the heat kernel and its time integral N.

    K(t, x) = chi(|x|^2 + t) G(t, x) - theta(t) b(|x|^2 + t) (a0 + a1 |x|^2 + a2 t)
    agrees with the heat kernel G on {|x|^2 + t < 1/2}, vanishes outside
    {|x|^2 + t < 1} and for t <= 0, and kills every polynomial of parabolic
    degree < 3.
    """
    grid: Grid2D
    coefficients: Tuple[float, float, float]
    condition: float
    spectrum: np.ndarray = field(repr=False)

    def correction(self, t: np.ndarray, rsq: np.ndarray) -> np.ndarray:
        a0, a1, a2 = self.coefficients
        return correction_time(t) * correction_space(rsq + t) * (a0 + a1 * rsq + a2 * t)

    def heat(self, t, x1, x2) -> np.ndarray:
        return heat_kernel(t, x1, x2)

    def evaluate(self, t, x1, x2) -> np.ndarray:
        t, x1, x2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t, x1, x2)))
        rsq = x1 ** 2 + x2 ** 2
        value = kernel_cutoff(rsq + t) * heat_kernel(t, x1, x2) - self.correction(t, rsq)
        return np.where(t > 0, value, 0.0)

    def moments(self, panels: int = 48, order: int = 24) -> Dict[str, float]:
        """Moments of K against 1, x1, x2, x1^2, x1x2, x2^2, t."""
        a = np.array(self.coefficients)
        out = {}
        for name, (e1, e2, q) in {
            "1": (0, 0, 0), "x1": (1, 0, 0), "x2": (0, 1, 0),
            "x1^2": (2, 0, 0), "x1*x2": (1, 1, 0), "x2^2": (0, 2, 0), "t": (0, 0, 1),
        }.items():
            p = e1 + e2
            radial = _radial_heat_moment(p, q, panels, order) - float(a @ _radial_correction_moments(p, q, panels, order))
            out[name] = _angular_moment(e1, e2) * radial
        return out

    @cached_property
    def table(self) -> Field:
        """N(z) = int_0^infty K(t, z) dt on the grid (zero-mean convention)."""
        return Field(self.grid, sfft.ifft2(self.spectrum).real / self.grid.spacing ** 2)


def _remainder_profile(coefficients, samples: int = 1025, panels: int = 80, order: int = 16) -> CubicSpline:
    """
    D(q) = int_0^1 (1 - chi) G dt + int theta b (a0 + a1 q + a2 t) dt at |x|^2 = q in [0, 1],
    i.e. the part of int_0^1 G dt that N does not keep.
    """
    a0, a1, a2 = coefficients
    q = np.linspace(0.0, 1.0, samples)
    t, w = composite_gauss(0.0, 1.0, panels, order)
    qq, tt = np.meshgrid(q, t, indexing="ij")
    gauss = np.exp(-qq / (4.0 * tt)) / (4.0 * np.pi * tt)
    outer = np.sum(w * (1.0 - kernel_cutoff(qq + tt)) * gauss, axis=1)
    ts, ws = composite_gauss(0.0, 0.5, panels, order)
    qq, tt = np.meshgrid(q, ts, indexing="ij")
    corr = np.sum(ws * correction_time(tt) * correction_space(qq + tt) * (a0 + a1 * qq + a2 * tt), axis=1)
    return CubicSpline(q, outer + corr)


def _remainder(rsq: np.ndarray, spline: CubicSpline) -> np.ndarray:
    out = np.empty_like(rsq)
    near = rsq < 1.0
    out[near] = spline(rsq[near])
    out[~near] = exp1(rsq[~near] / 4.0) / (4.0 * np.pi)
    return out


@lru_cache(maxsize=8)
def build_kernel_k(grid: Grid2D) -> KernelK:
    """
    Builds K and the Fourier table of N on the grid.

    N-hat(k) = (1 - exp(-|k|^2)) / |k|^2 - D-hat(k), where D is periodized over
    the nearest images; the zero mode is set to 0.
    """
    coefficients, condition = kernel_coefficients()
    spline = _remainder_profile(coefficients)
    d1, d2 = grid.wrapped_offsets((0.0, 0.0))
    remainder = np.zeros((grid.n, grid.n))
    for m1 in range(-2, 3):
        for m2 in range(-2, 3):
            rsq = (d1 + TORUS_SIDE * m1) ** 2 + (d2 + TORUS_SIDE * m2) ** 2
            remainder += _remainder(rsq, spline)
    remainder_hat = sfft.fft2(remainder).real * grid.spacing ** 2
    ksq = grid.ksq
    spectrum = phi1(ksq, 1.0) - remainder_hat
    spectrum[0, 0] = 0.0
    spectrum.setflags(write=False)
    logger.info(f"Kernel table built on {grid.n}x{grid.n} grid")
    return KernelK(grid=grid, coefficients=coefficients, condition=condition, spectrum=spectrum)
