from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpam.rs_group import (
    UNIT_MONOMIAL,
    Character,
    RenormMap,
    check_identities,
    compose,
    coproduct,
    gamma_matrix,
    gen_j,
    invert,
    monomial,
    renorm_matrix,
    translate_character,
    translate_plus,
    translate_symbol,
)
from gpam.rs_symbols import HH, ONE, XI, AlgebraError, Integ, Structure, StructureParams, X, enumerate_basis, homogeneity, product

I_XI = Integ(XI)
I_XI_XI = product(I_XI, XI)

fractions = st.fractions(min_value=-10, max_value=10, max_denominator=12)
characters = st.builds(Character, fractions, fractions, fractions, fractions)


def test_coproduct_of_integrated_noise():
    assert coproduct(I_XI) == {
        (I_XI, UNIT_MONOMIAL): 1,
        (ONE, monomial((gen_j(XI), 1))): 1,
    }


def test_coproduct_of_renormalized_symbol():
    assert coproduct(I_XI_XI) == {
        (I_XI_XI, UNIT_MONOMIAL): 1,
        (XI, monomial((gen_j(XI), 1))): 1,
    }


def test_gamma_shifts_the_product_symbol():
    f = Character(jXi=Fraction(3, 2))
    column = gamma_matrix(f).column(I_XI_XI)
    assert column == {I_XI_XI: 1, XI: Fraction(3, 2)}


def test_gamma_on_polynomials():
    f = Character(x1=Fraction(2), x2=Fraction(-1))
    gamma = gamma_matrix(f)
    assert gamma.column(ONE) == {ONE: 1}
    assert gamma.column(X(1)) == {X(1): 1, ONE: 2}
    assert gamma.column(X(2)) == {X(2): 1, ONE: -1}


@pytest.mark.parametrize("structure", list(Structure))
@settings(max_examples=30, deadline=None)
@given(f1=characters, f2=characters)
def test_gamma_is_a_group_morphism(structure, f1, f2):
    lhs = gamma_matrix(f1, structure) @ gamma_matrix(f2, structure)
    assert lhs.equals(gamma_matrix(compose(f1, f2), structure))


@settings(max_examples=30, deadline=None)
@given(f=characters)
def test_inverse_character_gives_identity(f):
    assert (gamma_matrix(f, Structure.TGH) @ gamma_matrix(invert(f), Structure.TGH)).is_identity()
    assert (gamma_matrix(f) @ gamma_matrix(-f)).is_identity()


@settings(max_examples=20, deadline=None)
@given(f=characters)
def test_gamma_is_unipotent_triangular(f):
    params = StructureParams()
    gamma = gamma_matrix(f, Structure.TGH, params)
    for tau in gamma.basis.symbols:
        assert gamma.entry(tau, tau) == 1
        for sigma, value in gamma.column(tau).items():
            if sigma != tau:
                assert homogeneity(sigma, params) < homogeneity(tau, params)


def test_renorm_maps_form_a_group():
    m1, m2 = RenormMap(Fraction(2)), RenormMap(Fraction(-1, 3))
    lhs = renorm_matrix(m1).dot(renorm_matrix(m2))
    assert np.all(lhs == renorm_matrix(m1.compose(m2)))
    assert RenormMap(Fraction(0)).apply_symbol(I_XI_XI) == {I_XI_XI: 1}
    assert RenormMap(Fraction(2)).apply_symbol(I_XI_XI) == {I_XI_XI: 1, ONE: -2}


@settings(max_examples=20, deadline=None)
@given(f=characters, C=fractions)
def test_renormalization_commutes_with_gamma(f, C):
    gamma = gamma_matrix(f).values
    m = renorm_matrix(RenormMap(C))
    assert np.all(gamma.dot(m) == m.dot(gamma))


def test_translate_symbol_expands_products():
    assert translate_symbol(XI) == {XI: 1, HH: 1}
    assert translate_symbol(ONE) == {ONE: 1}
    image = translate_symbol(I_XI_XI)
    assert image == {
        I_XI_XI: 1,
        product(I_XI, HH): 1,
        product(Integ(HH), XI): 1,
        product(Integ(HH), HH): 1,
    }


def test_translate_symbol_rejects_h_symbols():
    with pytest.raises(AlgebraError):
        translate_symbol(HH)
    with pytest.raises(AlgebraError):
        translate_symbol(product(Integ(HH), XI))


def test_translate_plus_on_generators():
    image = translate_plus(monomial((gen_j(XI), 2)))
    assert image == {
        monomial((gen_j(XI), 2)): 1,
        monomial((gen_j(XI), 1), (gen_j(HH), 1)): 2,
        monomial((gen_j(HH), 2)): 1,
    }


def test_translate_character_adds_the_h_value():
    f = Character(jXi=Fraction(1, 3), jH=Fraction(5), x1=Fraction(2))
    pulled = translate_character(f)
    assert pulled.jXi == Fraction(16, 3)
    assert pulled.x1 == 2


def test_inert_generators_raise():
    with pytest.raises(AlgebraError):
        Character().generator_value(gen_j(XI, (1, 0)))


def test_identity_suite_passes():
    results = check_identities(samples=10, seed=3)
    assert results
    assert all(r.status == "pass" for r in results), [r for r in results if r.status != "pass"][:3]
    checked = {(r.structure, r.symbol) for r in results}
    assert len(checked) == len(enumerate_basis(Structure.TG)) + len(enumerate_basis(Structure.TGH))
    assert {r.identity for r in results} == {"triangular", "group_law", "renorm_group", "relcon", "renorm_translation"}
