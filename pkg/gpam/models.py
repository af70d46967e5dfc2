import copy
import logging
from abc import ABC, abstractmethod
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field as PydanticField

from gpam.fields import (
    Field,
    Grid2D,
    KernelK,
    Mollifier,
    build_kernel_k,
    green_convolve,
    mollify,
    sample_white_noise,
)
from gpam.rs_group import (
    Character,
    GammaMatrix,
    RenormMap,
    compose,
    gamma_matrix,
    gamma_terms,
    invert,
    translate_character,
    translate_symbol,
)
from gpam.rs_symbols import (
    HH,
    XI,
    Basis,
    H,
    Integ,
    One,
    Prod,
    Structure,
    StructureParams,
    Symbol,
    X,
    Xi,
    contains_h,
    enumerate_basis,
    homogeneity,
)
from gpam.wavelets import DIMENSION, WaveletBasis, analyze, level_centers

logger = logging.getLogger(__name__)

BASE_POINT = (0, 0)


class ModelError(Exception):
    pass


def _as_value(a):
    return float(a) if np.ndim(a) == 0 else a


class AdmissibilityReport(BaseModel):
    model: str = PydanticField(..., description="Model class name")
    structure: str = PydanticField(..., description="Tg or TgH")
    samples: int = PydanticField(..., description="Number of random (x, y, tau) triples")
    max_error: float = PydanticField(..., description="Sup error of Pi_x Gamma_xy tau - Pi_y tau")
    worst_symbol: Optional[str] = PydanticField(None, description="Symbol attaining the max error")


class ModelNormProfile(BaseModel):
    symbol: str = PydanticField(..., description="Basis symbol")
    homogeneity: float = PydanticField(..., description="|tau|")
    level_sups: List[float] = PydanticField(..., description="s_m per wavelet level, coarse to fine")
    scaling_sup: float = PydanticField(..., description="max_m s_m")


class AdmissibleModel(ABC):
    """
    Concrete model (Pi, f) on grid base points, evaluated lazily from its
    leaf fields.

    Pi_x tau is a Field for every basis symbol tau and grid index x; the
    integration symbols are realized with the kernel table N and vanish at
    the base point.
    """

    structure: Structure = Structure.TG

    def __init__(self, params: Optional[StructureParams] = None, C: float = 0.0, kernel: Optional[KernelK] = None):
        self.params = params or StructureParams()
        self.C = float(C)
        self._kernel = kernel
        self._integrated: Dict[Symbol, Field] = {}

    @property
    def grid(self) -> Grid2D:
        return self.leaf(XI).grid

    @property
    def kernel(self) -> KernelK:
        if self._kernel is None:
            self._kernel = build_kernel_k(self.grid)
        return self._kernel

    @property
    def basis(self) -> Basis:
        return enumerate_basis(self.structure, self.params)

    @abstractmethod
    def leaf(self, symbol: Symbol) -> Field:
        """Realization of a noise leaf (Xi, or H on the extended structure)."""

    def integrated(self, symbol: Symbol) -> Field:
        """N * (realization of a noise leaf)."""
        if symbol not in self._integrated:
            self._integrated[symbol] = green_convolve(self.leaf(symbol), self.kernel)
        return self._integrated[symbol]

    def _check_point(self, x) -> Tuple[int, int]:
        n = self.grid.n
        return (int(x[0]) % n, int(x[1]) % n)

    def _recipe(self, tau: Symbol, x: Tuple[int, int]) -> np.ndarray:
        n = self.grid.n
        if isinstance(tau, One):
            return np.ones((n, n))
        if isinstance(tau, (Xi, H)):
            return self.leaf(tau).values
        if isinstance(tau, X):
            coord = self.grid.coords[tau.i - 1]
            return (coord - self.grid.point(x)[tau.i - 1]) ** tau.power
        if isinstance(tau, Integ):
            if not isinstance(tau.child, (Xi, H)):
                raise ModelError(f"No realization rule for {tau}")
            integ = self.integrated(tau.child).values
            return integ - integ[x]
        if isinstance(tau, Prod):
            out = self._realize_raw(tau.factors[0], x)
            for factor in tau.factors[1:]:
                out = out * self._realize_raw(factor, x)
            return out
        raise ModelError(f"Unknown symbol type: {type(tau).__name__}")

    def _realize_raw(self, tau: Symbol, x: Tuple[int, int]) -> np.ndarray:
        return self._recipe(tau, x)

    def realize(self, tau: Symbol, x=BASE_POINT) -> Field:
        if tau not in self.basis:
            raise ModelError(f"{tau} is not a basis symbol of {self.structure.value}")
        x = self._check_point(x)
        image = RenormMap(self.C, self.structure).apply_symbol(tau)
        values = float(image.pop(tau)) * self._realize_raw(tau, x)
        # only the unit symbol is left: the subtracted constant
        for coeff in image.values():
            values = values + float(coeff)
        return Field(self.grid, values)

    def f_char(self, x) -> Character:
        """
        Character f_x: f_x(J(L)) = -(N * L)(x) for each noise leaf L and
        f_x(X_i) = -x_i. Accepts a grid index or a pair of index arrays.
        """
        i, j = np.mod(x[0], self.grid.n), np.mod(x[1], self.grid.n)
        h = self.grid.spacing
        j_h = -self.integrated(HH).values[i, j] if self.structure == Structure.TGH else 0.0
        return Character(
            jXi=_as_value(-self.integrated(XI).values[i, j]),
            jH=_as_value(j_h),
            x1=_as_value(-h * np.asarray(i, dtype=float)),
            x2=_as_value(-h * np.asarray(j, dtype=float)),
        )

    def gamma(self, x, y) -> GammaMatrix:
        return gamma_matrix(compose(invert(self.f_char(x)), self.f_char(y)), self.basis)

    def renormalize(self, dC: float) -> "AdmissibleModel":
        out = copy.copy(self)
        out.C = self.C + float(dC)
        return out

    def __repr__(self) -> str:
        return f"{type(self).__name__}(structure={self.structure.value}, n={self.grid.n}, C={self.C})"


class CanonicalModel(AdmissibleModel):
    """Canonical lift of smooth leaf fields: products realized pointwise."""

    def __init__(self, xi: Field, h: Optional[Field] = None, **kwargs):
        super().__init__(**kwargs)
        self._leaves = {XI: xi}
        if h is not None:
            if h.grid != xi.grid:
                raise ModelError("Noise and shift live on different grids")
            self._leaves[HH] = h
            self.structure = Structure.TGH

    def leaf(self, symbol: Symbol) -> Field:
        try:
            return self._leaves[symbol]
        except KeyError as e:
            raise ModelError(f"{type(self).__name__} on {self.structure.value} has no leaf {symbol}") from e


class ExtendedModel(AdmissibleModel):
    """
    E_h Z: the TgH model realizing H as the L2 field h, agreeing with the
    base model on every Tg symbol.
    """

    structure = Structure.TGH

    def __init__(self, base: AdmissibleModel, h: Field):
        if base.structure != Structure.TG:
            raise ModelError("Extension expects a Tg model")
        if h.grid != base.grid:
            raise ModelError(f"Grid mismatch: model {base.grid.n} vs h {h.grid.n}")
        super().__init__(params=base.params, C=0.0, kernel=base.kernel)
        self.base = base
        self.h = h

    def leaf(self, symbol: Symbol) -> Field:
        if isinstance(symbol, H):
            return self.h
        return self.base.leaf(symbol)

    def integrated(self, symbol: Symbol) -> Field:
        if isinstance(symbol, Xi):
            return self.base.integrated(symbol)
        return super().integrated(symbol)

    def _realize_raw(self, tau: Symbol, x: Tuple[int, int]) -> np.ndarray:
        if not contains_h(tau):
            return self.base.realize(tau, x).values
        return self._recipe(tau, x)


class TranslatedModel(AdmissibleModel):
    """T_h Z = E_h Z composed with tau_H: the model of the shifted noise."""

    def __init__(self, base: AdmissibleModel, h: Field):
        super().__init__(params=base.params, C=0.0, kernel=base.kernel)
        self.extension = ExtendedModel(base, h)
        self.base = base
        self.h = h
        self._noise = base.leaf(XI) + h

    def leaf(self, symbol: Symbol) -> Field:
        if isinstance(symbol, Xi):
            return self._noise
        raise ModelError(f"Translated model has no leaf {symbol}")

    def _realize_raw(self, tau: Symbol, x: Tuple[int, int]) -> np.ndarray:
        values = None
        for sigma, coeff in translate_symbol(tau).items():
            term = float(coeff) * self.extension.realize(sigma, x).values
            values = term if values is None else values + term
        return values

    def f_char(self, x) -> Character:
        return translate_character(self.extension.f_char(x))


def canonical_model(
    xi_eps: Field,
    structure: Structure = Structure.TG,
    h: Optional[Field] = None,
    params: Optional[StructureParams] = None,
    C: float = 0.0,
) -> CanonicalModel:
    structure = Structure(structure)
    if structure == Structure.TGH and h is None:
        raise ModelError("A canonical TgH model needs the field realizing H")
    model = CanonicalModel(xi_eps, h if structure == Structure.TGH else None, params=params, C=C)
    logger.debug(f"Built {model!r}")
    return model


def renormalize(model: AdmissibleModel, C: float) -> AdmissibleModel:
    return model.renormalize(C)


def extend(model: AdmissibleModel, h: Field) -> ExtendedModel:
    return ExtendedModel(model, h)


def translate(model: AdmissibleModel, h: Field) -> TranslatedModel:
    if model.structure != Structure.TG:
        raise ModelError("Translation expects a Tg model")
    if h.grid != model.grid:
        raise ModelError(f"Grid mismatch: model {model.grid.n} vs h {h.grid.n}")
    return TranslatedModel(model, h)


def model_from_seed(
    seed: int,
    grid: Grid2D,
    epsilon: float,
    profile: str = "bump",
    C: float = 0.0,
    params: Optional[StructureParams] = None,
) -> CanonicalModel:
    xi_eps = mollify(sample_white_noise(seed, grid), Mollifier(epsilon, profile))
    return canonical_model(xi_eps, params=params, C=C)


# Admissibility

def check_admissibility(model: AdmissibleModel, samples: int = 1000, seed: int = 0) -> AdmissibilityReport:
    """Sup error of Pi_x Gamma_xy tau - Pi_y tau over random grid triples."""
    rng = np.random.default_rng(seed)
    symbols = model.basis.symbols
    n = model.grid.n
    worst, worst_symbol = 0.0, None
    for _ in range(samples):
        x = tuple(int(v) for v in rng.integers(n, size=2))
        y = tuple(int(v) for v in rng.integers(n, size=2))
        tau = symbols[int(rng.integers(len(symbols)))]
        column = model.gamma(x, y).column(tau)
        lhs = np.zeros((n, n))
        for sigma, coeff in column.items():
            lhs = lhs + float(coeff) * model.realize(sigma, x).values
        err = float(np.max(np.abs(lhs - model.realize(tau, y).values)))
        if err > worst:
            worst, worst_symbol = err, str(tau)
    logger.info(f"Admissibility of {model!r}: max error {worst:.3e} over {samples} triples")
    return AdmissibilityReport(
        model=type(model).__name__,
        structure=model.structure.value,
        samples=samples,
        max_error=worst,
        worst_symbol=worst_symbol,
    )


# Renormalization constant

def renorm_constant(epsilon: float, rho: Optional[Mollifier] = None, grid: Optional[Grid2D] = None) -> float:
    """
    C_eps = E[(N * xi_eps) xi_eps] = (2 pi)^-2 sum_k N-hat(k) rho-hat_eps(k)^2.
    """
    grid = grid or Grid2D()
    rho = rho or Mollifier(epsilon)
    if rho.epsilon != epsilon:
        rho = Mollifier(epsilon, rho.profile)
    spectrum = build_kernel_k(grid).spectrum
    multiplier = rho.multiplier(grid)
    return float(np.sum(spectrum * multiplier ** 2) / (2.0 * np.pi) ** 2)


def renorm_constant_mc(
    epsilon: float,
    rho: Optional[Mollifier] = None,
    grid: Optional[Grid2D] = None,
    seeds=range(10_000),
) -> Tuple[float, float]:
    """
    Monte-Carlo estimate of C_eps from spatial means of (N * xi_eps) xi_eps.

    Returns:
        (mean, standard error) over the seeds
    """
    grid = grid or Grid2D()
    rho = Mollifier(epsilon, rho.profile if rho else "bump")
    kernel = build_kernel_k(grid)
    samples = []
    for seed in seeds:
        xi_eps = mollify(sample_white_noise(seed, grid), rho)
        samples.append((green_convolve(xi_eps, kernel) * xi_eps).mean())
    samples = np.asarray(samples)
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(len(samples)))


# Wavelet-measured model norms

def _recentered_levels(model: AdmissibleModel, tau: Symbol, basis: WaveletBasis, x0=BASE_POINT) -> List[np.ndarray]:
    """
    <Pi_x tau, psi^m_x> with x the energy center of each wavelet, computed as
    Pi_x0 Gamma_{x0 x} tau so that only one transform per symbol is needed.
    """
    if basis.grid != model.grid:
        raise ModelError("Wavelet basis and model live on different grids")
    terms = gamma_terms(tau, model.basis)
    transforms = {sigma: analyze(model.realize(sigma, x0), basis) for sigma, _, _ in terms}
    f0 = model.f_char(x0)
    levels = []
    for m in range(basis.depth):
        c1, c2 = level_centers(basis, m)
        f = compose(invert(f0), model.f_char((c1, c2)))
        acc = np.zeros(c1.shape)
        for sigma, mono, coeff in terms:
            acc = acc + float(coeff) * f.evaluate(mono) * transforms[sigma].level(m)
        levels.append(acc)
    return levels


def measure_model_norm(model: AdmissibleModel, tau: Symbol, basis: WaveletBasis, x0=BASE_POINT) -> ModelNormProfile:
    """
    Per-level scaling sups s_m = 2^(m (|tau| + d/2)) max_x |<Pi_x tau, psi^m_x>|.
    """
    level_homogeneity = homogeneity(tau, model.params)
    sups = [
        2.0 ** (m * (level_homogeneity + DIMENSION / 2.0)) * float(np.max(np.abs(level)))
        for m, level in enumerate(_recentered_levels(model, tau, basis, x0))
    ]
    return ModelNormProfile(symbol=str(tau), homogeneity=level_homogeneity, level_sups=sups, scaling_sup=max(sups))


def model_distance(model_a: AdmissibleModel, model_b: AdmissibleModel, tau: Symbol, basis: WaveletBasis) -> float:
    """Wavelet semidistance between two models on one symbol."""
    if model_a.structure != model_b.structure:
        raise ModelError("Models on different structures")
    level_homogeneity = homogeneity(tau, model_a.params)
    levels_a = _recentered_levels(model_a, tau, basis)
    levels_b = _recentered_levels(model_b, tau, basis)
    return max(
        2.0 ** (m * (level_homogeneity + DIMENSION / 2.0)) * float(np.max(np.abs(a - b)))
        for m, (a, b) in enumerate(zip(levels_a, levels_b))
    )
