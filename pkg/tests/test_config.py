import json

import numpy as np
import pytest

from gpam.config import ConfigError, HSpec, RunConfig, Settings, U0Spec, load_run_config
from gpam.field_io import write_field
from gpam.fields import Field, Grid2D, Mollifier
from gpam.models import renorm_constant
from gpam.spde_solver import stable_dt


@pytest.fixture(autouse=True)
def no_output_env(monkeypatch):
    monkeypatch.delenv("GPAM_OUT", raising=False)


def write_config(tmp_path, data):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def test_defaults():
    cfg = load_run_config()
    assert cfg.grid_n == 256
    assert cfg.g == "sin"
    assert cfg.scheme == "etd"
    assert cfg.C == "auto"
    assert cfg.eps_list == [0.5, 0.25, 0.125, 0.0625]
    assert cfg.output_dir is None
    assert cfg.wavelet == "db20"
    assert cfg.u0.kind == "constant" and cfg.u0.value == 1.0


def test_default_initial_datum_feeds_the_noise():
    cfg = RunConfig(grid_n=32, epsilon=0.5, t_end=0.05)
    u0 = cfg.pde_config(cfg.noise()).initial()
    assert float(np.min(np.abs(np.sin(u0.values)))) > 0.5


def test_file_and_overrides(tmp_path):
    path = write_config(tmp_path, {"grid_n": 64, "g": "cos", "seed": 3, "C": 1.25})
    cfg = load_run_config(path, {"g": "sin_plus", "seed": None, "t_end": 0.5})
    assert cfg.grid_n == 64
    assert cfg.g == "sin_plus"
    assert cfg.seed == 3
    assert cfg.t_end == 0.5
    assert cfg.resolve_C() == 1.25


@pytest.mark.parametrize("data", [
    {"grid_n": 48},
    {"g": "tanh"},
    {"unknown_key": 1},
    {"epsilon": -0.1},
    {"scheme": "rk4"},
    {"u0": {"kind": "spline"}},
])
def test_invalid_documents(tmp_path, data):
    with pytest.raises(ConfigError):
        load_run_config(write_config(tmp_path, data))


def test_unreadable_documents(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "absent.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_run_config(str(bad))
    with pytest.raises(ConfigError):
        load_run_config(write_config(tmp_path, [1, 2]))


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("GPAM_OUT", str(tmp_path / "env_out"))
    cfg = load_run_config(write_config(tmp_path, {"output_dir": "elsewhere"}))
    assert cfg.output_dir == str(tmp_path / "env_out")


def test_settings_from_environment(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("GPAM_JOBS", "3")
    monkeypatch.setenv("GPAM_LOG_LEVEL", "DEBUG")
    settings = Settings()
    assert settings.jobs == 3
    assert settings.log_level == "DEBUG"
    assert settings.out == "runs"


def test_auto_constant_uses_the_grid():
    cfg = RunConfig(grid_n=32, epsilon=0.5)
    assert cfg.resolve_C() == pytest.approx(renorm_constant(0.5, Mollifier(0.5), Grid2D(32)))
    assert cfg.resolve_C(1.0) < cfg.resolve_C()


def test_pde_config():
    cfg = RunConfig(grid_n=32, epsilon=0.5, t_end=0.2, C=0.0, u0=U0Spec(kind="constant", value=0.3))
    xi_eps = cfg.noise()
    pde = cfg.pde_config(xi_eps)
    assert pde.dt == pytest.approx(stable_dt(xi_eps))
    assert pde.t_end == 0.2
    assert pde.initial().mean() == pytest.approx(0.3)
    np.testing.assert_array_equal(xi_eps.values, cfg.noise(7).values)
    assert cfg.pde_config(xi_eps, C=2.0).C == 2.0


def test_initial_data_specs(grid32):
    bump = U0Spec(kind="bump", value=2.0, inner=0.5, outer=1.0).build(grid32)
    assert bump.sup_norm() == pytest.approx(2.0)
    assert U0Spec(kind="constant", value=-1.0).build(grid32).mean() == -1.0
    with pytest.raises(ConfigError):
        U0Spec(kind="file").build(grid32)


def test_shift_specs(grid32, tmp_path):
    rho = Mollifier(0.5)
    assert HSpec(kind="zero").build(grid32).sup_norm() == 0.0
    assert HSpec(kind="constant", value=0.5).build(grid32).mean() == 0.5
    sine = HSpec(kind="sine", value=2.0, mode=(0, 1)).build(grid32)
    assert sine.at((0, 8)) == pytest.approx(2.0)
    noise = HSpec(kind="noise", value=3.0, seed=4).build(grid32, rho)
    assert noise.l2_norm() == pytest.approx(3.0)

    path = write_field(tmp_path / "h.gpf", Field.constant(Grid2D(64), 1.0))
    with pytest.raises(ConfigError):
        HSpec(kind="file", path=str(path)).build(grid32)
    same = write_field(tmp_path / "h32.gpf", Field.constant(grid32, 1.0))
    assert HSpec(kind="file", path=str(same)).build(grid32).mean() == 1.0
