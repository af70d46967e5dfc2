import numpy as np
import pytest
from pydantic import ValidationError

from gpam.fields import Field, heat_integral, heat_semigroup
from gpam.spde_solver import (
    NONLINEARITIES,
    PDEConfig,
    SolverError,
    Stepper,
    Trajectory,
    get_nonlinearity,
    solve_auxiliary_w,
    solve_gpam,
    solve_gpam_shifted,
    solve_tangent,
    solve_tangent_hom,
    stable_dt,
)


@pytest.fixture
def u0(grid32):
    return Field.from_function(grid32, lambda x1, x2: 0.3 * np.cos(x1 + 2.0 * x2))


@pytest.mark.parametrize("name", sorted(NONLINEARITIES))
def test_nonlinearity_derivatives(name):
    g = get_nonlinearity(name)
    u = np.linspace(-3.0, 3.0, 20001)
    du = u[1] - u[0]
    np.testing.assert_allclose(np.gradient(g.g(u), du)[1:-1], g.dg(u)[1:-1], atol=1e-5)
    np.testing.assert_allclose(np.gradient(g.dg(u), du)[1:-1], g.d2g(u)[1:-1], atol=1e-5)


def test_nonlinearity_lookup():
    assert get_nonlinearity("sin+2").name == "sin_plus"
    assert get_nonlinearity("1/(1+u^2)").name == "rational"
    with pytest.raises(SolverError):
        get_nonlinearity("tanh")


def test_config_checks_u0_grid(grid32, grid64):
    with pytest.raises(ValidationError):
        PDEConfig(grid=grid32, u0=Field.zeros(grid64))
    with pytest.raises(ValidationError):
        PDEConfig(grid=grid32, dt=0.0)


def test_frame_schedule(grid32):
    cfg = PDEConfig(grid=grid32, dt=0.0125, t_end=0.1, save_levels=2)
    assert cfg.n_steps == 8
    assert cfg.frame_steps() == [0, 2, 4, 6, 8]


def test_stable_dt(xi32):
    assert stable_dt(xi32) == pytest.approx(0.1 / xi32.sup_norm())


def test_unknown_scheme(grid32):
    with pytest.raises(SolverError):
        Stepper(grid32, 1e-3, "rk4")


def test_zero_nonlinearity_is_the_heat_flow(pde32, xi32, u0):
    cfg = pde32.model_copy(update={"u0": u0})
    traj = solve_gpam(cfg, "zero", xi32)
    np.testing.assert_allclose(traj.final.values, heat_semigroup(u0, cfg.t_end).values, atol=1e-12)
    assert not traj.blowup


@pytest.mark.parametrize("scheme", ["etd", "imex"])
def test_additive_noise(pde32, xi32, u0, scheme):
    cfg = pde32.model_copy(update={"u0": u0, "C": 3.0, "scheme": scheme})
    traj = solve_gpam(cfg, "one", xi32)
    expected = heat_semigroup(u0, cfg.t_end) + heat_integral(xi32, cfg.t_end)
    tolerance = 1e-10 if scheme == "etd" else 5e-2 * expected.sup_norm()
    np.testing.assert_allclose(traj.final.values, expected.values, atol=tolerance)


def test_saved_frames(pde32, xi32):
    cfg = pde32.model_copy(update={"save_levels": 3})
    traj = solve_gpam(cfg, "sin", xi32)
    assert traj.steps == tuple(cfg.frame_steps())
    assert traj.times[0] == 0.0
    assert traj.t_final == pytest.approx(cfg.t_end)
    assert traj.meta["g"] == "sin"


def test_blowup_is_reported(pde32, xi32, grid32):
    cfg = pde32.model_copy(update={"blowup_threshold": 1e-6, "u0": Field.zeros(grid32)})
    traj = solve_gpam(cfg, "one", xi32)
    assert traj.blowup
    assert traj.blowup_time == pytest.approx(cfg.step)
    assert traj.times == (0.0,)


def test_sin_solution_moves_away_from_its_datum(pde32, xi32):
    traj = solve_gpam(pde32, "sin", xi32)
    assert not traj.blowup
    assert traj.final.sup_norm() > 0.5
    assert (traj.final - heat_semigroup(pde32.initial(), pde32.t_end)).sup_norm() > 1e-3


def test_tangent_blowup_is_reported(pde32, xi32, h32):
    traj = solve_gpam(pde32, "sin", xi32)
    cfg = pde32.model_copy(update={"blowup_threshold": 10.0})
    v = solve_tangent(cfg, "sin", xi32, h32 * 1e6, traj)
    assert v.blowup
    assert v.blowup_time == pytest.approx(cfg.step)
    assert v.times == (0.0,)
    assert all(np.all(np.isfinite(frame.values)) for frame in v.frames)


def test_homogeneous_flow_blowup_is_reported(pde32, xi32, grid32):
    traj = solve_gpam(pde32, "sin", xi32)
    flow = solve_tangent_hom(pde32, "sin", xi32, traj, Field.constant(grid32, 1e7), start_step=5)
    assert flow.blowup
    assert flow.blowup_time == pytest.approx(6 * pde32.step)
    assert flow.steps == (5,)


def test_shifted_solve_is_the_solve_of_the_shifted_noise(pde32, xi32, h32):
    shifted = solve_gpam_shifted(pde32, "sin", xi32, h32)
    direct = solve_gpam(pde32, "sin", xi32 + h32)
    np.testing.assert_array_equal(shifted.final.values, direct.final.values)


def test_solver_rejects_foreign_fields(pde32, xi64):
    with pytest.raises(SolverError):
        solve_gpam(pde32, "sin", xi64)


def test_tangent_is_linear_in_h(pde32, xi32, h32):
    traj = solve_gpam(pde32, "sin", xi32)
    v1 = solve_tangent(pde32, "sin", xi32, h32, traj).final.values
    v2 = solve_tangent(pde32, "sin", xi32, h32 * 2.0, traj).final.values
    np.testing.assert_allclose(v2, 2.0 * v1, rtol=1e-12, atol=1e-14)


def test_tangent_matches_central_differences(pde32, xi32, h32):
    cfg = pde32.model_copy(update={"C": 0.4})
    traj = solve_gpam(cfg, "sin", xi32)
    v = solve_tangent(cfg, "sin", xi32, h32, traj).final
    delta = 1e-3
    plus = solve_gpam_shifted(cfg, "sin", xi32, h32 * delta).final
    minus = solve_gpam_shifted(cfg, "sin", xi32, h32 * -delta).final
    fd = (plus - minus) * (0.5 / delta)
    assert (fd - v).sup_norm() < 1e-4 * v.sup_norm()


def test_tangent_for_additive_noise(pde32, xi32, h32):
    traj = solve_gpam(pde32, "one", xi32)
    v = solve_tangent(pde32, "one", xi32, h32, traj)
    np.testing.assert_allclose(v.final.values, heat_integral(h32, pde32.t_end).values, atol=1e-12)
    assert v.frames[0].sup_norm() == 0.0


def test_tangent_rejects_a_foreign_trajectory(pde32, xi32, h32):
    traj = solve_gpam(pde32, "sin", xi32 + h32)
    with pytest.raises(SolverError):
        solve_tangent(pde32, "sin", xi32, h32, traj)


def test_homogeneous_flow(pde32, xi32, grid32):
    traj = solve_gpam(pde32, "zero", xi32)
    ones = Field.constant(grid32, 1.0)
    flow = solve_tangent_hom(pde32, "zero", xi32, traj, ones)
    np.testing.assert_allclose(flow.final.values, 1.0, atol=1e-12)

    traj = solve_gpam(pde32, "sin", xi32)
    flow = solve_tangent_hom(pde32, "sin", xi32, traj, ones, start_step=5)
    assert flow.steps[0] == 5
    assert flow.times[0] == pytest.approx(5 * pde32.step)
    assert min(frame.values.min() for frame in flow.frames) > 0.0
    with pytest.raises(SolverError):
        solve_tangent_hom(pde32, "sin", xi32, traj, ones, start_step=10 ** 6)


def test_auxiliary_w_for_additive_noise(pde32, xi32):
    traj = solve_gpam(pde32, "one", xi32)
    w = solve_auxiliary_w(pde32, "one", xi32, traj.reversed())
    np.testing.assert_allclose(w.final.values, pde32.t_end, rtol=1e-10)
    assert w.times[-1] == pytest.approx(pde32.t_end)


def test_auxiliary_w_is_nonnegative(pde32, xi32):
    cfg = pde32.model_copy(update={"laplacian": "fd"})
    traj = solve_gpam(cfg, "sin_plus", xi32)
    w = solve_auxiliary_w(cfg, "sin_plus", xi32, traj.reversed())
    assert min(frame.values.min() for frame in w.frames) >= 0.0


class TestTrajectory:
    @pytest.fixture
    def traj(self, pde32, xi32):
        return solve_gpam(pde32.model_copy(update={"save_levels": 2}), "one", xi32)

    def test_reversed(self, traj):
        back = traj.reversed()
        assert back.times[0] == 0.0
        assert back.times[-1] == pytest.approx(traj.t_final)
        assert back.frames[0] is traj.final
        assert back.meta["reversed"]

    def test_interpolation(self, traj):
        t0, t1 = traj.times[1], traj.times[2]
        mid = traj.at(0.5 * (t0 + t1))
        np.testing.assert_allclose(mid.values, 0.5 * (traj.frames[1].values + traj.frames[2].values))
        assert traj.at(t0) is traj.frames[1]
        with pytest.raises(SolverError):
            traj.at(traj.t_final + 1.0)

    def test_frame_lookup(self, traj):
        assert traj.frame_at(traj.times[2]) is traj.frames[2]
        with pytest.raises(SolverError):
            traj.frame_at(0.5 * traj.times[1])

    def test_times_must_increase(self, traj):
        with pytest.raises(SolverError):
            Trajectory(times=(0.0, 0.0), frames=traj.frames[:2], steps=(0, 1), dt=traj.dt)
        with pytest.raises(SolverError):
            Trajectory(times=(0.0,), frames=traj.frames[:2], steps=(0,), dt=traj.dt)
