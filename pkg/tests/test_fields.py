import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpam.fields import (
    Field,
    FieldError,
    Grid2D,
    GridError,
    Mollifier,
    UnderResolvedError,
    ball_indicator,
    build_kernel_k,
    green_convolve,
    heat_integral,
    heat_semigroup,
    mollify,
    phi1,
    sample_white_noise,
    smooth_bump,
    smooth_step,
)


def sine(grid):
    return Field.from_function(grid, lambda x1, x2: np.sin(x1))


@pytest.mark.parametrize("n", [8, 48, 100, 0])
def test_grid_rejects_bad_sizes(n):
    with pytest.raises(GridError):
        Grid2D(n)


def test_grid_geometry(grid32):
    assert grid32.spacing == pytest.approx(2 * np.pi / 32)
    assert grid32.point((2, 3)) == pytest.approx((2 * grid32.spacing, 3 * grid32.spacing))
    d1, _ = grid32.wrapped_offsets((0.0, 0.0))
    assert d1.min() >= -np.pi and d1.max() < np.pi
    with pytest.raises(GridError):
        grid32.laplacian_symbol("nine-point")


def test_field_validation(grid32):
    with pytest.raises(FieldError):
        Field(grid32, np.zeros((16, 16)))
    values = np.zeros((32, 32))
    values[3, 4] = np.nan
    with pytest.raises(FieldError):
        Field(grid32, values)


def test_field_values_are_copied_and_frozen(grid32):
    raw = np.ones((32, 32))
    f = Field(grid32, raw)
    raw[0, 0] = 5.0
    assert f.at((0, 0)) == 1.0
    with pytest.raises(ValueError):
        f.values[0, 0] = 2.0


def test_field_arithmetic_checks_grids(grid32, grid64):
    with pytest.raises(GridError):
        Field.zeros(grid32) + Field.zeros(grid64)
    f = 2.0 * Field.constant(grid32, 1.5) - 1.0
    assert f.mean() == pytest.approx(2.0)
    assert f.at((33, -1)) == 2.0


def test_parseval(grid32):
    f = sample_white_noise(3, grid32)
    assert f.l2_norm() == pytest.approx(f.l2_norm_spectral(), rel=1e-12)
    assert Field.constant(grid32, 1.0).l2_norm() == pytest.approx(2 * np.pi)
    assert sine(grid32).inner(sine(grid32)) == pytest.approx(2 * np.pi ** 2)


def test_h2_norm_weights_each_mode(grid32):
    assert Field.constant(grid32, 1.0).h2_norm() == pytest.approx(2 * np.pi)
    assert sine(grid32).h2_norm() == pytest.approx(2.0 * sine(grid32).l2_norm())
    mode = Field.from_function(grid32, lambda x1, x2: np.cos(x1 + 2.0 * x2))
    assert mode.h2_norm() == pytest.approx(6.0 * mode.l2_norm())


def test_translate_rolls_values(grid32):
    f = sample_white_noise(1, grid32)
    assert f.translate((1, 2)).at((4, 5)) == f.at((3, 3))


shifts = st.tuples(st.integers(-40, 40), st.integers(-40, 40))


@settings(max_examples=25, deadline=None)
@given(shift=shifts, symbol=st.sampled_from(["spectral", "fd"]))
def test_smoothing_commutes_with_grid_translation(shift, symbol):
    xi = sample_white_noise(5, Grid2D(32))
    np.testing.assert_allclose(
        heat_semigroup(xi.translate(shift), 0.05, symbol).values,
        heat_semigroup(xi, 0.05, symbol).translate(shift).values,
        atol=1e-10,
    )
    rho = Mollifier(0.5)
    np.testing.assert_allclose(mollify(xi.translate(shift), rho).values, mollify(xi, rho).translate(shift).values, atol=1e-10)


def test_white_noise_is_seeded(grid32):
    a = sample_white_noise(11, grid32)
    b = sample_white_noise(11, grid32)
    c = sample_white_noise(12, grid32)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_white_noise_grid_variance():
    grid = Grid2D(128)
    xi = sample_white_noise(0, grid)
    assert abs(xi.mean()) < 5.0 / grid.n / grid.spacing
    assert np.var(xi.values) * grid.spacing ** 2 == pytest.approx(1.0, abs=0.05)


@pytest.mark.parametrize("profile", ["bump", "bump_sq"])
def test_mollifier_has_unit_mass(grid64, profile):
    rho = Mollifier(0.5, profile)
    kernel = rho.kernel(grid64)
    assert np.sum(kernel.values) * grid64.spacing ** 2 == pytest.approx(1.0)
    assert rho.multiplier(grid64)[0, 0] == pytest.approx(1.0)
    assert kernel.at((0, 0)) == kernel.values.max()


def test_mollifier_errors(grid32):
    with pytest.raises(UnderResolvedError):
        Mollifier(0.1).kernel(grid32)
    with pytest.raises(ValueError):
        Mollifier(0.5, "gaussian")
    with pytest.raises(ValueError):
        Mollifier(-1.0)


def test_mollify_preserves_mean(grid32):
    xi = sample_white_noise(5, grid32)
    smooth = mollify(xi, Mollifier(0.5))
    assert smooth.mean() == pytest.approx(xi.mean(), abs=1e-10)
    assert smooth.sup_norm() < xi.sup_norm()


def test_heat_semigroup_on_a_mode(grid32):
    t = 0.3
    np.testing.assert_allclose(heat_semigroup(sine(grid32), t).values, np.exp(-t) * sine(grid32).values, atol=1e-12)
    lam = 4.0 / grid32.spacing ** 2 * np.sin(grid32.spacing / 2) ** 2
    np.testing.assert_allclose(heat_semigroup(sine(grid32), t, "fd").values, np.exp(-lam * t) * sine(grid32).values, atol=1e-12)
    f = sine(grid32)
    assert heat_semigroup(f, 0.0) is f


def test_heat_integral(grid32):
    t = 0.7
    f = sine(grid32) + 2.0
    expected = (1.0 - np.exp(-t)) * sine(grid32).values + 2.0 * t
    np.testing.assert_allclose(heat_integral(f, t).values, expected, atol=1e-12)


def test_heat_rejects_negative_time(grid32):
    with pytest.raises(ValueError):
        heat_semigroup(sine(grid32), -0.1)
    with pytest.raises(ValueError):
        heat_integral(sine(grid32), -0.1)


def test_phi1():
    lam = np.array([0.0, 1.0, 1e-8, 50.0])
    out = phi1(lam, 2.0)
    assert out[0] == 2.0
    assert out[1] == pytest.approx(1.0 - np.exp(-2.0))
    assert out[2] == pytest.approx(2.0, rel=1e-7)
    assert out[3] == pytest.approx(1.0 / 50.0)


def test_smooth_step_and_bump(grid64):
    np.testing.assert_allclose(smooth_step(np.array([-1.0, 0.0, 0.5, 1.0, 2.0])), [1.0, 1.0, 0.5, 0.0, 0.0])
    bump = smooth_bump(grid64, (np.pi, np.pi), 0.5, 1.0)
    assert bump.at((32, 32)) == 1.0
    assert bump.at((0, 0)) == 0.0
    assert 0.0 <= bump.values.min() and bump.values.max() <= 1.0
    with pytest.raises(ValueError):
        smooth_bump(grid64, (0.0, 0.0), 1.0, 0.5)


def test_ball_indicator_wraps(grid64):
    ball = ball_indicator(grid64, (0.0, 0.0), 0.3)
    assert ball.at((0, 0)) == 1.0
    assert ball.at((-1, 0)) == 1.0
    assert ball.at((32, 32)) == 0.0


class TestKernel:
    def test_moments_vanish(self, grid32):
        moments = build_kernel_k(grid32).moments()
        assert set(moments) == {"1", "x1", "x2", "x1^2", "x1*x2", "x2^2", "t"}
        for name, value in moments.items():
            assert abs(value) < 1e-6, name

    def test_matches_heat_kernel_near_origin(self, grid32):
        kernel = build_kernel_k(grid32)
        t = np.array([0.05, 0.1, 0.2])
        x1 = np.array([0.1, 0.2, -0.3])
        x2 = np.array([0.0, 0.1, 0.2])
        np.testing.assert_allclose(kernel.evaluate(t, x1, x2), kernel.heat(t, x1, x2), rtol=1e-12)

    def test_vanishes_outside_support(self, grid32):
        kernel = build_kernel_k(grid32)
        assert kernel.evaluate(0.3, 0.8, 0.5) == 0.0
        assert kernel.evaluate(0.0, 0.1, 0.1) == 0.0
        assert kernel.evaluate(-0.2, 0.1, 0.1) == 0.0

    def test_table_is_cached_and_mean_free(self, grid32):
        kernel = build_kernel_k(grid32)
        assert build_kernel_k(grid32) is kernel
        assert kernel.spectrum[0, 0] == 0.0
        assert kernel.condition < 1e12
        assert green_convolve(sample_white_noise(2, grid32)).mean() == pytest.approx(0.0, abs=1e-10)

    def test_green_convolve_checks_the_grid(self, grid32, grid64):
        with pytest.raises(GridError):
            green_convolve(Field.zeros(grid64), build_kernel_k(grid32))

    @pytest.mark.parametrize("mode", [(1, 0), (3, 2), (8, 5), (0, 15)])
    def test_green_convolve_gains_two_derivatives(self, grid64, mode):
        kernel = build_kernel_k(grid64)
        h = Field.from_function(grid64, lambda x1, x2: np.sin(mode[0] * x1 + mode[1] * x2))
        gain = green_convolve(h, kernel).h2_norm() / h.l2_norm()
        assert 0.0 < gain < 5.0
        noisy = mollify(sample_white_noise(4, grid64), Mollifier(0.25))
        bound = float(np.max((1.0 + grid64.ksq) * np.abs(kernel.spectrum)))
        assert bound < 5.0
        assert green_convolve(noisy, kernel).h2_norm() <= bound * noisy.l2_norm() * (1.0 + 1e-12)
