import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property, lru_cache
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

logger = logging.getLogger(__name__)

HOMOGENEITY_TOL = 1e-12


class AlgebraError(Exception):
    pass


class Structure(str, Enum):
    TG = "Tg"
    TGH = "TgH"


class StructureParams(BaseModel):
    """
    Regularity parameters of the gPAM structure.

    alpha_min = -1 - kappa is derived; gamma and eta are checked against it.
    """
    model_config = ConfigDict(frozen=True)

    kappa: float = Field(0.05, gt=0.0, lt=1.0 / 3.0, description="Noise regularity loss")
    gamma: float = Field(1.1, description="Expansion order of modelled distributions")
    eta: float = Field(0.0, ge=0.0, description="Initial data regularity")

    @property
    def alpha_min(self) -> float:
        return -1.0 - self.kappa

    @model_validator(mode="after")
    def _check_ranges(self):
        if not (-self.alpha_min < self.gamma < 4.0 / 3.0):
            raise ValueError(f"gamma={self.gamma} must lie in ({-self.alpha_min}, 4/3)")
        if self.eta >= self.alpha_min + 2.0:
            raise ValueError(f"eta={self.eta} must be below alpha_min + 2 = {self.alpha_min + 2.0}")
        return self


# Symbols

class Symbol:
    """Base class of the tree-shaped basis elements."""

    def __mul__(self, other: "Symbol") -> "Symbol":
        return product(self, other)

    def __repr__(self) -> str:
        return f"Symbol({self})"


@dataclass(frozen=True, repr=False)
class One(Symbol):
    def __str__(self) -> str:
        return "1"


@dataclass(frozen=True, repr=False)
class Xi(Symbol):
    def __str__(self) -> str:
        return "Xi"


@dataclass(frozen=True, repr=False)
class H(Symbol):
    def __str__(self) -> str:
        return "H"


@dataclass(frozen=True, repr=False)
class X(Symbol):
    i: int
    power: int = 1

    def __post_init__(self):
        if self.i not in (1, 2):
            raise AlgebraError(f"X index must be 1 or 2, got {self.i}")
        if self.power < 1:
            raise AlgebraError(f"X power must be positive, got {self.power}")

    def __str__(self) -> str:
        return f"X{self.i}" if self.power == 1 else f"X{self.i}^{self.power}"


@dataclass(frozen=True, repr=False)
class Integ(Symbol):
    child: Symbol

    def __str__(self) -> str:
        return f"I({self.child})"


@dataclass(frozen=True, repr=False)
class Prod(Symbol):
    factors: Tuple[Symbol, ...]

    def __str__(self) -> str:
        return "*".join(str(f) for f in self.factors)


ONE = One()
XI = Xi()
HH = H()

_RANK = {Integ: 0, X: 1, Xi: 2, H: 3}


def _factor_key(symbol: Symbol) -> Tuple[int, str]:
    return (_RANK[type(symbol)], str(symbol))


def product(*factors: Symbol) -> Symbol:
    """
    Normalized product of symbols.

    Flattens nested products, drops units, merges powers of the same X_i and
    sorts the remaining factors canonically.
    """
    flat: List[Symbol] = []
    for factor in factors:
        if isinstance(factor, Prod):
            flat.extend(factor.factors)
        elif not isinstance(factor, One):
            flat.append(factor)

    powers = {1: 0, 2: 0}
    others = []
    for factor in flat:
        if isinstance(factor, X):
            powers[factor.i] += factor.power
        else:
            others.append(factor)
    others.extend(X(i, k) for i, k in powers.items() if k > 0)

    if not others:
        return ONE
    if len(others) == 1:
        return others[0]
    return Prod(tuple(sorted(others, key=_factor_key)))


def polynomial(k1: int, k2: int) -> Symbol:
    parts = []
    if k1:
        parts.append(X(1, k1))
    if k2:
        parts.append(X(2, k2))
    return product(*parts)


def polynomial_degree(symbol: Symbol) -> Optional[Tuple[int, int]]:
    """Multi-index of a pure monomial X^k, or None when the symbol is not one."""
    if isinstance(symbol, One):
        return (0, 0)
    if isinstance(symbol, X):
        return (symbol.power, 0) if symbol.i == 1 else (0, symbol.power)
    if isinstance(symbol, Prod) and all(isinstance(f, X) for f in symbol.factors):
        k = [0, 0]
        for f in symbol.factors:
            k[f.i - 1] += f.power
        return (k[0], k[1])
    return None


def contains_h(symbol: Symbol) -> bool:
    if isinstance(symbol, H):
        return True
    if isinstance(symbol, Integ):
        return contains_h(symbol.child)
    if isinstance(symbol, Prod):
        return any(contains_h(f) for f in symbol.factors)
    return False


def homogeneity(tau: Symbol, params: StructureParams) -> float:
    if isinstance(tau, One):
        return 0.0
    if isinstance(tau, (Xi, H)):
        return params.alpha_min
    if isinstance(tau, X):
        return float(tau.power)
    if isinstance(tau, Integ):
        return homogeneity(tau.child, params) + 2.0
    if isinstance(tau, Prod):
        return sum(homogeneity(f, params) for f in tau.factors)
    raise AlgebraError(f"Unknown symbol type: {type(tau).__name__}")


def leaves(structure: Structure) -> Tuple[Symbol, ...]:
    return (XI,) if structure == Structure.TG else (XI, HH)


def sector(tau: Symbol, structure: Structure) -> Optional[str]:
    """
    Returns "U" or "W" when tau is generated by the gPAM rules for the given
    structure, None otherwise.

    U holds the polynomials and I(w) for w in W; W holds u*L for u in U and a
    noise leaf L.
    """
    allowed = leaves(structure)
    if polynomial_degree(tau) is not None:
        return "U"
    if isinstance(tau, Integ):
        return "U" if sector(tau.child, structure) == "W" else None
    if isinstance(tau, (Xi, H)):
        return "W" if tau in allowed else None
    if isinstance(tau, Prod):
        noise = [f for f in tau.factors if isinstance(f, (Xi, H))]
        if len(noise) != 1 or noise[0] not in allowed:
            return None
        rest = product(*(f for f in tau.factors if f is not noise[0]))
        if polynomial_degree(rest) is not None:
            return "W"
        if isinstance(rest, Integ) and sector(rest, structure) == "U":
            return "W"
    return None


@dataclass(frozen=True)
class Basis:
    """
    Ordered finite basis of T_g or T_g^H.

    Args:
        structure: which regularity structure
        params: parameters used for the homogeneity cutoffs
        symbols: ordered by (homogeneity, string)
    """
    structure: Structure
    params: StructureParams
    symbols: Tuple[Symbol, ...]
    u_sector: Tuple[Symbol, ...]
    w_sector: Tuple[Symbol, ...]

    def __len__(self) -> int:
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def __contains__(self, tau: Symbol) -> bool:
        return tau in self.index

    @cached_property
    def index(self) -> Dict[Symbol, int]:
        return {s: i for i, s in enumerate(self.symbols)}

    @property
    def homogeneities(self) -> List[float]:
        return [homogeneity(s, self.params) for s in self.symbols]

    def homogeneity_set(self, digits: int = 10) -> List[float]:
        return sorted({round(h, digits) for h in self.homogeneities})


def _below(value: float, cutoff: float) -> bool:
    return value < cutoff - HOMOGENEITY_TOL


def enumerate_basis(structure: Structure, params: Optional[StructureParams] = None) -> Basis:
    params = params or StructureParams()
    return _enumerate_basis(Structure(structure), params)


@lru_cache(maxsize=32)
def _enumerate_basis(structure: Structure, params: StructureParams) -> Basis:
    gamma = params.gamma
    w_cut = gamma + params.alpha_min
    max_degree = math.ceil(gamma)

    polys = {
        polynomial(k1, k2)
        for k1 in range(max_degree + 1)
        for k2 in range(max_degree + 1)
        if _below(k1 + k2, gamma)
    }

    u_set, w_set = set(polys), set()
    while True:
        u_next = set(polys) | {
            Integ(w) for w in w_set if _below(homogeneity(w, params) + 2.0, gamma)
        }
        w_next = {
            product(u, leaf)
            for u in u_next
            for leaf in leaves(structure)
            if _below(homogeneity(u, params) + params.alpha_min, w_cut)
        }
        if u_next == u_set and w_next == w_set:
            break
        u_set, w_set = u_next, w_next

    def order(symbols):
        return tuple(sorted(symbols, key=lambda s: (round(homogeneity(s, params), 12), str(s))))

    symbols = order(u_set | w_set)
    logger.debug(f"Enumerated {len(symbols)} symbols for {structure.value}")
    return Basis(
        structure=structure,
        params=params,
        symbols=symbols,
        u_sector=order(u_set),
        w_sector=order(w_set),
    )


# Parsing

def _split_top_level(text: str) -> List[str]:
    parts, depth, start = [], 0, 0
    for pos, char in enumerate(text):
        if char == "(":
            depth += 1
        elif char == ")":
            depth -= 1
            if depth < 0:
                raise AlgebraError(f"Unbalanced parentheses in '{text}'")
        elif char == "*" and depth == 0:
            parts.append(text[start:pos])
            start = pos + 1
    if depth != 0:
        raise AlgebraError(f"Unbalanced parentheses in '{text}'")
    parts.append(text[start:])
    return parts


def _parse_atom(text: str) -> Symbol:
    if text == "1":
        return ONE
    if text == "Xi":
        return XI
    if text == "H":
        return HH
    if text.startswith("I(") and text.endswith(")"):
        return Integ(parse_symbol(text[2:-1]))
    if text.startswith("X") and len(text) >= 2 and text[1] in "12":
        power = 1
        if len(text) > 2:
            if text[2] != "^" or not text[3:].isdigit():
                raise AlgebraError(f"Malformed polynomial symbol '{text}'")
            power = int(text[3:])
        return X(int(text[1]), power)
    raise AlgebraError(f"Cannot parse symbol '{text}'")


def parse_symbol(text: str) -> Symbol:
    """Parses the ASCII grammar produced by str(symbol), e.g. 'I(Xi)*Xi'."""
    text = text.strip().replace(" ", "")
    if not text:
        raise AlgebraError("Empty symbol string")
    return product(*(_parse_atom(part) for part in _split_top_level(text)))
