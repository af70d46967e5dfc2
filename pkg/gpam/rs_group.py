import logging
import operator
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache, reduce
from math import comb, factorial
from typing import Any, Dict, Iterable, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from gpam.rs_symbols import (
    HH,
    ONE,
    XI,
    AlgebraError,
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
    polynomial,
    polynomial_degree,
    product,
)

logger = logging.getLogger(__name__)

ZERO = Fraction(0)
UNIT = Fraction(1)


# T+ generators and monomials

@dataclass(frozen=True)
class PlusGen:
    """Generator of T+: X_i (kind 'X') or J_l(tau) (kind 'J')."""
    kind: str
    index: Tuple[int, int] = (0, 0)
    symbol: Optional[Symbol] = None

    def __str__(self) -> str:
        if self.kind == "X":
            return f"X{self.index[0]}"
        if self.index == (0, 0):
            return f"J({self.symbol})"
        return f"J_{self.index[0]}{self.index[1]}({self.symbol})"


Monomial = Tuple[Tuple[PlusGen, int], ...]
Combination = Dict[Symbol, Fraction]
Tensor = Dict[Tuple[Symbol, Monomial], Fraction]

UNIT_MONOMIAL: Monomial = ()
GEN_X1 = PlusGen("X", (1, 0))
GEN_X2 = PlusGen("X", (2, 0))


def gen_j(tau: Symbol, index: Tuple[int, int] = (0, 0)) -> PlusGen:
    return PlusGen("J", tuple(index), tau)


def monomial(*pairs: Tuple[PlusGen, int]) -> Monomial:
    powers: Dict[PlusGen, int] = {}
    for gen, exp in pairs:
        if exp:
            powers[gen] = powers.get(gen, 0) + exp
    return tuple(sorted(((g, e) for g, e in powers.items() if e), key=lambda p: str(p[0])))


def monomial_mul(a: Monomial, b: Monomial) -> Monomial:
    return monomial(*a, *b)


def monomial_str(m: Monomial) -> str:
    if not m:
        return "1"
    return "*".join(str(g) if e == 1 else f"{g}^{e}" for g, e in m)


def x_monomial(k1: int, k2: int) -> Monomial:
    return monomial((GEN_X1, k1), (GEN_X2, k2))


def _add(target: Dict, key, coeff: Fraction) -> None:
    value = target.get(key, ZERO) + coeff
    if value == 0:
        target.pop(key, None)
    else:
        target[key] = value


def _tensor_mul(a: Tensor, b: Tensor) -> Tensor:
    out: Tensor = {}
    for (sa, ma), ca in a.items():
        for (sb, mb), cb in b.items():
            _add(out, (product(sa, sb), monomial_mul(ma, mb)), ca * cb)
    return out


def _multi_indices(max_total: int) -> Iterable[Tuple[int, int]]:
    for k1 in range(max_total + 1):
        for k2 in range(max_total + 1 - k1):
            yield (k1, k2)


# Coproduct

def coproduct(tau: Symbol, params: Optional[StructureParams] = None) -> Tensor:
    """
    Exact coproduct Delta(tau) as a map (symbol, T+ monomial) -> coefficient.

    Multiplicative on products, Delta X_i = X_i (x) 1 + 1 (x) X_i, noise leaves
    are primitive on the left, and

        Delta I(t) = (I (x) Id) Delta t + sum_{k,l} X^k/k! (x) X^l/l! J_{k+l}(t)

    where the J factors with |t| + 2 - |k+l| <= 0 are omitted.
    """
    params = params or StructureParams()
    return dict(_coproduct(tau, params))


@lru_cache(maxsize=512)
def _coproduct(tau: Symbol, params: StructureParams) -> Tuple[Tuple[Tuple[Symbol, Monomial], Fraction], ...]:
    return tuple(_coproduct_impl(tau, params).items())


def _coproduct_impl(tau: Symbol, params: StructureParams) -> Tensor:
    if isinstance(tau, One):
        return {(ONE, UNIT_MONOMIAL): UNIT}
    if isinstance(tau, (Xi, H)):
        return {(tau, UNIT_MONOMIAL): UNIT}
    if isinstance(tau, X):
        out: Tensor = {}
        gen = GEN_X1 if tau.i == 1 else GEN_X2
        for j in range(tau.power + 1):
            left = X(tau.i, j) if j else ONE
            _add(out, (left, monomial((gen, tau.power - j))), Fraction(comb(tau.power, j)))
        return out
    if isinstance(tau, Prod):
        result: Tensor = {(ONE, UNIT_MONOMIAL): UNIT}
        for factor in tau.factors:
            result = _tensor_mul(result, dict(_coproduct(factor, params)))
        return result
    if isinstance(tau, Integ):
        child = tau.child
        out = {}
        for (left, mono), coeff in _coproduct(child, params):
            if polynomial_degree(left) is not None:
                continue
            _add(out, (Integ(left), mono), coeff)
        if polynomial_degree(child) is not None:
            return out
        budget = homogeneity(child, params) + 2.0
        if budget <= 0:
            return out
        max_total = int(np.ceil(budget)) + 1
        for k in _multi_indices(max_total):
            for l in _multi_indices(max_total - sum(k)):
                total = (k[0] + l[0], k[1] + l[1])
                if budget - sum(total) <= 0:
                    continue
                coeff = Fraction(1, factorial(k[0]) * factorial(k[1]) * factorial(l[0]) * factorial(l[1]))
                mono = monomial_mul(x_monomial(*l), monomial((gen_j(child, total), 1)))
                _add(out, (polynomial(*k), mono), coeff)
        return out
    raise AlgebraError(f"Unknown symbol type: {type(tau).__name__}")


def coproduct_terms(tau: Symbol, params: Optional[StructureParams] = None) -> List[Tuple[Symbol, Monomial, Fraction]]:
    """Coproduct as an ordered list of (symbol, monomial, coefficient)."""
    terms = coproduct(tau, params)
    return sorted(((s, m, c) for (s, m), c in terms.items()), key=lambda t: (str(t[0]), monomial_str(t[1])))


# Characters

@dataclass(frozen=True)
class Character:
    """
    Multiplicative functional on T+, fixed by its values on J(Xi), J(H), X_1, X_2.

    Values may be Fractions, floats or numpy arrays of a common shape (one
    character per base point).
    """
    jXi: Any = ZERO
    jH: Any = ZERO
    x1: Any = ZERO
    x2: Any = ZERO

    def generator_value(self, gen: PlusGen):
        if gen.kind == "X":
            return self.x1 if gen.index[0] == 1 else self.x2
        if gen.index == (0, 0) and isinstance(gen.symbol, Xi):
            return self.jXi
        if gen.index == (0, 0) and isinstance(gen.symbol, H):
            return self.jH
        raise AlgebraError(f"Generator {gen} is inert in the truncated structure")

    def evaluate(self, mono: Monomial):
        factors = [self.generator_value(gen) ** exp for gen, exp in mono]
        if not factors:
            return UNIT
        return reduce(operator.mul, factors)

    def __add__(self, other: "Character") -> "Character":
        return compose(self, other)

    def __neg__(self) -> "Character":
        return invert(self)


def scale(coeff: Fraction, value):
    """coeff * value, keeping numpy arrays in float dtype."""
    if isinstance(value, np.ndarray):
        return float(coeff) * value
    return coeff * value


def compose(f1: Character, f2: Character) -> Character:
    return Character(f1.jXi + f2.jXi, f1.jH + f2.jH, f1.x1 + f2.x1, f1.x2 + f2.x2)


def invert(f: Character) -> Character:
    return Character(-f.jXi, -f.jH, -f.x1, -f.x2)


# Structure group

@dataclass(frozen=True)
class GammaMatrix:
    """
    Matrix of Gamma_f over an ordered basis; column j holds Gamma_f applied to
    basis symbol j.
    """
    basis: Basis
    values: np.ndarray = field(compare=False)

    @property
    def structure(self) -> Structure:
        return self.basis.structure

    def entry(self, row: Symbol, col: Symbol):
        return self.values[self.basis.index[row], self.basis.index[col]]

    def column(self, tau: Symbol) -> Combination:
        j = self.basis.index[tau]
        return {s: self.values[i, j] for i, s in enumerate(self.basis.symbols) if self.values[i, j] != 0}

    def apply(self, vector: Combination) -> Combination:
        out: Combination = {}
        for tau, coeff in vector.items():
            for sigma, value in self.column(tau).items():
                _add(out, sigma, coeff * value)
        return out

    def as_float(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    def __matmul__(self, other: "GammaMatrix") -> "GammaMatrix":
        if other.basis != self.basis:
            raise AlgebraError("Cannot multiply matrices over different bases")
        return GammaMatrix(self.basis, self.values.dot(other.values))

    def equals(self, other: "GammaMatrix") -> bool:
        return self.basis == other.basis and bool(np.all(self.values == other.values))

    def is_identity(self) -> bool:
        return bool(np.all(self.values == _identity(len(self.basis))))


def _identity(size: int) -> np.ndarray:
    eye = np.full((size, size), ZERO, dtype=object)
    for i in range(size):
        eye[i, i] = UNIT
    return eye


def _basis_of(structure_or_basis, params: Optional[StructureParams]) -> Basis:
    if isinstance(structure_or_basis, Basis):
        return structure_or_basis
    return enumerate_basis(Structure(structure_or_basis), params or StructureParams())


def gamma_terms(tau: Symbol, basis: Basis) -> List[Tuple[Symbol, Monomial, Fraction]]:
    """Coproduct of a basis symbol with every left factor checked against the basis."""
    terms = coproduct_terms(tau, basis.params)
    for sigma, _, _ in terms:
        if sigma not in basis:
            raise AlgebraError(f"Coproduct of {tau} leaves the basis through {sigma}")
    return terms


def gamma_matrix(f: Character, structure=Structure.TG, params: Optional[StructureParams] = None) -> GammaMatrix:
    """
    Gamma_f tau = (Id (x) f) Delta tau over the ordered basis.

    Args:
        f: character (scalar values)
        structure: Structure tag or an already enumerated Basis
        params: structure parameters when a tag is given

    Returns:
        GammaMatrix with exact entries when f holds Fractions
    """
    basis = _basis_of(structure, params)
    size = len(basis)
    values = np.full((size, size), ZERO, dtype=object)
    index = basis.index
    for j, tau in enumerate(basis.symbols):
        for sigma, mono, coeff in gamma_terms(tau, basis):
            values[index[sigma], j] = values[index[sigma], j] + coeff * f.evaluate(mono)
    return GammaMatrix(basis, values)


# Translation maps

def _combo_mul(a: Combination, b: Combination) -> Combination:
    out: Combination = {}
    for sa, ca in a.items():
        for sb, cb in b.items():
            _add(out, product(sa, sb), ca * cb)
    return out


def translate_symbol(tau: Symbol) -> Combination:
    """
    tau_H: Xi -> Xi + H, extended multiplicatively, commuting with I and
    fixing polynomials.
    """
    if contains_h(tau):
        raise AlgebraError(f"translate_symbol expects a T_g symbol, got {tau}")
    return dict(_translate(tau))


@lru_cache(maxsize=256)
def _translate(tau: Symbol) -> Tuple[Tuple[Symbol, Fraction], ...]:
    if isinstance(tau, (One, X)):
        out = {tau: UNIT}
    elif isinstance(tau, Xi):
        out = {XI: UNIT, HH: UNIT}
    elif isinstance(tau, Integ):
        out = {}
        for sigma, coeff in _translate(tau.child):
            _add(out, Integ(sigma), coeff)
    elif isinstance(tau, Prod):
        out = {ONE: UNIT}
        for factor in tau.factors:
            out = _combo_mul(out, dict(_translate(factor)))
    else:
        raise AlgebraError(f"Cannot translate {tau}")
    return tuple(out.items())


def translate_plus(mono: Monomial) -> Dict[Monomial, Fraction]:
    """tau_H^+ on a T+ monomial: J_l(t) -> J_l(tau_H(t)) expanded linearly, X fixed."""
    result: Dict[Monomial, Fraction] = {UNIT_MONOMIAL: UNIT}
    for gen, exp in mono:
        if gen.kind == "X":
            image = {monomial((gen, 1)): UNIT}
        else:
            image = {}
            for sigma, coeff in translate_symbol(gen.symbol).items():
                _add(image, monomial((gen_j(sigma, gen.index), 1)), coeff)
        for _ in range(exp):
            nxt: Dict[Monomial, Fraction] = {}
            for ma, ca in result.items():
                for mb, cb in image.items():
                    _add(nxt, monomial_mul(ma, mb), ca * cb)
            result = nxt
    return result


def translate_tensor(tensor: Tensor) -> Tensor:
    """(tau_H (x) tau_H^+) applied to a tensor."""
    out: Tensor = {}
    for (sigma, mono), coeff in tensor.items():
        for s, cs in translate_symbol(sigma).items():
            for m, cm in translate_plus(mono).items():
                _add(out, (s, m), coeff * cs * cm)
    return out


def translate_character(f: Character) -> Character:
    """f o tau_H^+: the character of the translated model seen on T_g."""

    def pulled(gen: PlusGen):
        terms = [scale(coeff, f.evaluate(mono)) for mono, coeff in translate_plus(monomial((gen, 1))).items()]
        return reduce(operator.add, terms)

    return Character(jXi=pulled(gen_j(XI)), jH=ZERO, x1=f.x1, x2=f.x2)


# Renormalization

RENORMALIZED_SYMBOL = product(Integ(XI), XI)


@dataclass(frozen=True)
class RenormMap:
    """M(C): I(Xi)Xi -> I(Xi)Xi - C*1, identity on every other basis symbol."""
    C: Any = ZERO
    structure: Structure = Structure.TG

    def apply_symbol(self, tau: Symbol) -> Combination:
        if tau == RENORMALIZED_SYMBOL:
            out = {tau: UNIT}
            _add(out, ONE, -self.C)
            return out
        return {tau: UNIT}

    def apply(self, vector: Combination) -> Combination:
        out: Combination = {}
        for tau, coeff in vector.items():
            for sigma, c in self.apply_symbol(tau).items():
                _add(out, sigma, coeff * c)
        return out

    def compose(self, other: "RenormMap") -> "RenormMap":
        return replace(self, C=self.C + other.C)


def renorm_matrix(m: RenormMap, params: Optional[StructureParams] = None) -> np.ndarray:
    basis = enumerate_basis(m.structure, params or StructureParams())
    values = _identity(len(basis))
    index = basis.index
    for j, tau in enumerate(basis.symbols):
        for sigma, coeff in m.apply_symbol(tau).items():
            values[index[sigma], j] = coeff
    return values


# Identity suite

class IdentityResult(BaseModel):
    identity: str = Field(..., description="Name of the checked identity")
    structure: str = Field(..., description="Tg or TgH")
    symbol: str = Field(..., description="Basis symbol the identity was checked on")
    status: str = Field(..., description="pass or fail")
    mismatch: Optional[str] = Field(None, description="First mismatching term when failing")


def _tensor_str(tensor: Tensor) -> str:
    return " + ".join(f"{c}*{s}(x){monomial_str(m)}" for (s, m), c in sorted(tensor.items(), key=lambda kv: (str(kv[0][0]), monomial_str(kv[0][1])))) or "0"


def _combo_str(combo: Combination) -> str:
    return " + ".join(f"{c}*{s}" for s, c in sorted(combo.items(), key=lambda kv: str(kv[0]))) or "0"


def _diff(a: Dict, b: Dict) -> Dict:
    out = dict(a)
    for key, coeff in b.items():
        _add(out, key, -coeff)
    return out


def generic_character(rng: random.Random) -> Character:
    def draw():
        return Fraction(rng.randint(-50, 50), rng.randint(1, 12))

    return Character(draw(), draw(), draw(), draw())


def check_identities(
    params: Optional[StructureParams] = None,
    C: Fraction = Fraction(2),
    samples: int = 100,
    seed: int = 0,
) -> List[IdentityResult]:
    """
    Machine check of the algebraic identities on every basis symbol.

    Args:
        params: structure parameters
        C: renormalization constant used for the commutation check
        samples: number of random rational character pairs for the group law
        seed: seed of the character generator

    Returns:
        One IdentityResult per (identity, structure, symbol)
    """
    params = params or StructureParams()
    rng = random.Random(seed)
    results: List[IdentityResult] = []

    def record(identity, structure, symbol, mismatch):
        results.append(IdentityResult(
            identity=identity,
            structure=structure.value,
            symbol=str(symbol),
            status="pass" if mismatch is None else "fail",
            mismatch=mismatch,
        ))

    generic = Character(Fraction(2), Fraction(3), Fraction(5), Fraction(7))
    pairs = [(generic_character(rng), generic_character(rng)) for _ in range(samples)]

    for structure in (Structure.TG, Structure.TGH):
        basis = enumerate_basis(structure, params)
        gamma = gamma_matrix(generic, basis)
        products = [(gamma_matrix(f1, basis) @ gamma_matrix(f2, basis), gamma_matrix(compose(f1, f2), basis)) for f1, f2 in pairs]
        inverse = gamma_matrix(generic, basis) @ gamma_matrix(invert(generic), basis)

        for tau in basis.symbols:
            level = homogeneity(tau, params)
            bad = [
                f"{sigma}: {coeff}"
                for sigma, coeff in gamma.column(tau).items()
                if sigma != tau and homogeneity(sigma, params) >= level - 1e-12
            ]
            if gamma.entry(tau, tau) != 1:
                bad.append(f"diagonal {gamma.entry(tau, tau)}")
            record("triangular", structure, tau, "; ".join(bad) or None)

            mismatch = None
            for lhs, rhs in products:
                if _diff(lhs.column(tau), rhs.column(tau)):
                    mismatch = f"{_combo_str(lhs.column(tau))} != {_combo_str(rhs.column(tau))}"
                    break
            if mismatch is None and _diff(inverse.column(tau), {tau: UNIT}):
                mismatch = f"inverse gives {_combo_str(inverse.column(tau))}"
            record("group_law", structure, tau, mismatch)

        m1, m2 = RenormMap(C, structure), RenormMap(Fraction(-3, 7), structure)
        lhs = renorm_matrix(m1, params).dot(renorm_matrix(m2, params))
        rhs = renorm_matrix(m1.compose(m2), params)
        record("renorm_group", structure, RENORMALIZED_SYMBOL, None if np.all(lhs == rhs) else "M(C1)M(C2) != M(C1+C2)")

    tg = enumerate_basis(Structure.TG, params)
    m, m_h = RenormMap(C, Structure.TG), RenormMap(C, Structure.TGH)
    for tau in tg.symbols:
        lhs = translate_tensor(coproduct(tau, params))
        rhs: Tensor = {}
        for sigma, coeff in translate_symbol(tau).items():
            for key, c in coproduct(sigma, params).items():
                _add(rhs, key, coeff * c)
        delta = _diff(lhs, rhs)
        record("relcon", Structure.TG, tau, None if not delta else f"{_tensor_str(lhs)} != {_tensor_str(rhs)}")

        left: Combination = {}
        for sigma, coeff in m.apply_symbol(tau).items():
            for s, c in translate_symbol(sigma).items():
                _add(left, s, coeff * c)
        right = m_h.apply(translate_symbol(tau))
        record("renorm_translation", Structure.TG, tau, None if not _diff(left, right) else f"{_combo_str(left)} != {_combo_str(right)}")

    failed = [r for r in results if r.status != "pass"]
    if failed:
        logger.warning(f"{len(failed)} algebraic identities failed, first: {failed[0].identity} on {failed[0].symbol}")
    else:
        logger.info(f"All {len(results)} algebraic identity checks passed")
    return results
