import pytest
from pydantic import ValidationError

from gpam.rs_symbols import (
    HH,
    ONE,
    XI,
    AlgebraError,
    Integ,
    Structure,
    StructureParams,
    X,
    contains_h,
    enumerate_basis,
    homogeneity,
    parse_symbol,
    polynomial,
    polynomial_degree,
    product,
    sector,
)

TG_SYMBOLS = ["Xi", "I(Xi)*Xi", "X1*Xi", "X2*Xi", "1", "I(Xi)", "X1", "X2"]
TGH_SYMBOLS = {
    "Xi", "H", "I(Xi)*Xi", "I(Xi)*H", "I(H)*Xi", "I(H)*H", "X1*Xi", "X2*Xi",
    "X1*H", "X2*H", "1", "I(Xi)", "I(H)", "X1", "X2",
}


def test_tg_basis_is_ordered_by_homogeneity():
    basis = enumerate_basis(Structure.TG)
    assert [str(s) for s in basis.symbols] == TG_SYMBOLS
    levels = basis.homogeneities
    assert levels == sorted(levels)


def test_tgh_basis_has_fifteen_symbols():
    basis = enumerate_basis(Structure.TGH)
    assert len(basis) == 15
    assert {str(s) for s in basis} == TGH_SYMBOLS


def test_sectors_of_tg():
    basis = enumerate_basis(Structure.TG)
    assert {str(s) for s in basis.u_sector} == {"1", "X1", "X2", "I(Xi)"}
    assert {str(s) for s in basis.w_sector} == {"Xi", "X1*Xi", "X2*Xi", "I(Xi)*Xi"}
    for tau in basis.u_sector:
        assert sector(tau, Structure.TG) == "U"
    for tau in basis.w_sector:
        assert sector(tau, Structure.TG) == "W"


def test_homogeneity_values():
    params = StructureParams(kappa=0.05, gamma=1.1)
    assert homogeneity(XI, params) == pytest.approx(-1.05)
    assert homogeneity(product(Integ(XI), XI), params) == pytest.approx(-0.1)
    assert homogeneity(Integ(HH), params) == pytest.approx(0.95)
    assert homogeneity(X(2, 3), params) == 3.0
    assert enumerate_basis(Structure.TG, params).homogeneity_set() == pytest.approx([-1.05, -0.1, -0.05, 0.0, 0.95, 1.0])


def test_every_symbol_has_homogeneity_below_gamma():
    params = StructureParams()
    for structure in Structure:
        assert all(homogeneity(s, params) < params.gamma for s in enumerate_basis(structure, params))


def test_product_normalizes():
    assert product(X(1), X(1)) == X(1, 2)
    assert product(ONE, XI) == XI
    assert product() == ONE
    assert XI * Integ(XI) == product(Integ(XI), XI)
    assert product(product(X(1), XI), X(2)) == product(X(1), X(2), XI)
    assert polynomial(1, 2) == product(X(1), X(2, 2))
    assert polynomial_degree(polynomial(1, 2)) == (1, 2)
    assert polynomial_degree(XI) is None


def test_contains_h():
    assert contains_h(product(Integ(HH), XI))
    assert not contains_h(product(Integ(XI), XI))


def test_symbols_outside_the_rules_have_no_sector():
    assert sector(product(XI, XI), Structure.TG) is None
    assert sector(HH, Structure.TG) is None
    assert sector(HH, Structure.TGH) == "W"


@pytest.mark.parametrize("structure", list(Structure))
def test_parse_inverts_str(structure):
    for tau in enumerate_basis(structure):
        assert parse_symbol(str(tau)) == tau


def test_parse_powers_and_spacing():
    assert parse_symbol("X1^2 * Xi") == product(X(1, 2), XI)
    assert parse_symbol(" I( Xi ) * Xi ") == product(Integ(XI), XI)


@pytest.mark.parametrize("text", ["", "I(Xi", "Xi)", "Y", "X3", "X1^a", "I(Xi))*(Xi"])
def test_parse_rejects_malformed_text(text):
    with pytest.raises(AlgebraError):
        parse_symbol(text)


def test_polynomial_symbols_validate():
    with pytest.raises(AlgebraError):
        X(3)
    with pytest.raises(AlgebraError):
        X(1, 0)


@pytest.mark.parametrize("kwargs", [{"gamma": 1.0}, {"gamma": 1.5}, {"kappa": 0.5}, {"eta": 1.0}])
def test_structure_params_ranges(kwargs):
    with pytest.raises(ValidationError):
        StructureParams(**kwargs)


def test_alpha_min():
    assert StructureParams(kappa=0.1, gamma=1.2).alpha_min == pytest.approx(-1.1)
