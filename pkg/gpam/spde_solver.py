import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PydanticField, model_validator
from scipy import fft as sfft

from gpam.fields import Field, Grid2D, phi1

logger = logging.getLogger(__name__)

STABILITY_FACTOR = 0.1
DEFAULT_BLOWUP = 1e6


class SolverError(Exception):
    pass


# Nonlinearities

@dataclass(frozen=True)
class Nonlinearity:
    """g with its first two derivatives."""
    name: str
    g: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    dg: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    d2g: Callable[[np.ndarray], np.ndarray] = field(repr=False)

    def __str__(self) -> str:
        return self.name


def _rational(u):
    return 1.0 / (1.0 + u ** 2)


NONLINEARITIES: Dict[str, Nonlinearity] = {
    "zero": Nonlinearity("zero", np.zeros_like, np.zeros_like, np.zeros_like),
    "one": Nonlinearity("one", np.ones_like, np.zeros_like, np.zeros_like),
    "sin": Nonlinearity("sin", np.sin, np.cos, lambda u: -np.sin(u)),
    "cos": Nonlinearity("cos", np.cos, lambda u: -np.sin(u), lambda u: -np.cos(u)),
    "rational": Nonlinearity(
        "rational",
        _rational,
        lambda u: -2.0 * u * _rational(u) ** 2,
        lambda u: (6.0 * u ** 2 - 2.0) * _rational(u) ** 3,
    ),
    "sin_plus": Nonlinearity("sin_plus", lambda u: 2.0 + np.sin(u), np.cos, lambda u: -np.sin(u)),
}
ALIASES = {"sin+2": "sin_plus", "1/(1+u^2)": "rational"}


def get_nonlinearity(g: Union[str, Nonlinearity]) -> Nonlinearity:
    if isinstance(g, Nonlinearity):
        return g
    name = ALIASES.get(g, g)
    if name not in NONLINEARITIES:
        raise SolverError(f"Unknown nonlinearity '{g}', expected one of {sorted(NONLINEARITIES) + sorted(ALIASES)}")
    return NONLINEARITIES[name]


# Configuration

class PDEConfig(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: Grid2D = PydanticField(default_factory=Grid2D, description="Periodic grid")
    epsilon: float = PydanticField(0.0625, gt=0.0, description="Mollification scale of the noise")
    C: float = PydanticField(0.0, description="Renormalization constant")
    dt: float = PydanticField(1e-3, gt=0.0, description="Requested time step")
    t_end: float = PydanticField(1.0, gt=0.0, description="Final time")
    u0: Optional[Field] = PydanticField(None, description="Initial data, zero when absent")
    blowup_threshold: float = PydanticField(DEFAULT_BLOWUP, gt=0.0, description="L-infinity blow-up level")
    scheme: Literal["etd", "imex"] = PydanticField("etd", description="Time integrator")
    laplacian: Literal["spectral", "fd"] = PydanticField("spectral", description="Symbol of the Laplacian")
    save_levels: int = PydanticField(6, ge=0, le=16, description="Frames at j*T/2^L, j=0..2^L")

    @model_validator(mode="after")
    def _check_u0(self):
        if self.u0 is not None and self.u0.grid != self.grid:
            raise ValueError(f"u0 lives on a {self.u0.grid.n} grid, config on {self.grid.n}")
        return self

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))

    @property
    def step(self) -> float:
        return self.t_end / self.n_steps

    def initial(self) -> Field:
        return self.u0 if self.u0 is not None else Field.zeros(self.grid)

    def frame_steps(self) -> List[int]:
        count = 2 ** self.save_levels
        return sorted({int(round(j * self.n_steps / count)) for j in range(count + 1)})


def stable_dt(xi_eps: Field, factor: float = STABILITY_FACTOR) -> float:
    """Explicit-reaction step rule dt <= factor / ||xi_eps||_inf."""
    return factor / max(xi_eps.sup_norm(), 1e-300)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Saved frames of one integration; frames stop before a blow-up."""
    times: Tuple[float, ...]
    frames: Tuple[Field, ...]
    steps: Tuple[int, ...]
    dt: float
    blowup: bool = False
    blowup_time: Optional[float] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) != len(self.frames) or len(self.steps) != len(self.frames):
            raise SolverError("Trajectory times, steps and frames differ in length")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise SolverError("Trajectory times must be strictly increasing")

    @property
    def final(self) -> Field:
        return self.frames[-1]

    @property
    def t_final(self) -> float:
        return self.times[-1]

    def frame_at(self, t: float) -> Field:
        idx = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        if abs(self.times[idx] - t) > 1e-9 * max(1.0, abs(t)):
            raise SolverError(f"No frame saved at t={t}")
        return self.frames[idx]

    def at(self, t: float) -> Field:
        """Linear interpolation between saved frames."""
        times = np.asarray(self.times)
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise SolverError(f"t={t} outside [{times[0]}, {times[-1]}]")
        idx = int(np.clip(np.searchsorted(times, t), 1, len(times) - 1))
        t0, t1 = times[idx - 1], times[idx]
        w = float(np.clip((t - t0) / (t1 - t0), 0.0, 1.0))
        if w == 0.0:
            return self.frames[idx - 1]
        if w == 1.0:
            return self.frames[idx]
        return self.frames[idx - 1] * (1.0 - w) + self.frames[idx] * w

    def reversed(self) -> "Trajectory":
        """s -> u(T - s) over the saved window."""
        end, last = self.times[-1], self.steps[-1]
        return Trajectory(
            times=tuple(end - t for t in reversed(self.times)),
            frames=tuple(reversed(self.frames)),
            steps=tuple(last - s for s in reversed(self.steps)),
            dt=self.dt,
            meta={**self.meta, "reversed": True},
        )


# Time stepping

class Stepper:
    """
    One linear step u -> A u + B F on spectra.

    "etd": A = exp(-lambda dt), B = (1 - exp(-lambda dt)) / lambda (exponential Euler)
    "imex": A = 1 / (1 + lambda dt), B = dt / (1 + lambda dt)
    """

    def __init__(self, grid: Grid2D, dt: float, scheme: str = "etd", laplacian: str = "spectral"):
        lam = grid.laplacian_symbol(laplacian)
        if scheme == "etd":
            self.decay = np.exp(-lam * dt)
            self.gain = phi1(lam, dt)
        elif scheme == "imex":
            self.decay = 1.0 / (1.0 + lam * dt)
            self.gain = dt * self.decay
        else:
            raise SolverError(f"Unknown scheme '{scheme}'")

    def step(self, values: np.ndarray, forcing: np.ndarray) -> np.ndarray:
        return sfft.ifft2(self.decay * sfft.fft2(values) + self.gain * sfft.fft2(forcing)).real


def _stepper(cfg: PDEConfig) -> Stepper:
    return Stepper(cfg.grid, cfg.step, cfg.scheme, cfg.laplacian)


def _check_inputs(cfg: PDEConfig, *fields: Field) -> None:
    for f in fields:
        if f.grid != cfg.grid:
            raise SolverError(f"Field on a {f.grid.n} grid, config on {cfg.grid.n}")


def _blown_up(values: np.ndarray, threshold: float) -> bool:
    return not np.all(np.isfinite(values)) or float(np.max(np.abs(values))) > threshold


def _march_u(cfg: PDEConfig, g: Nonlinearity, noise: np.ndarray, stepper: Stepper) -> Iterator[Tuple[int, Optional[np.ndarray]]]:
    """Yields (k, u_k); a None state marks the blow-up step."""
    u = cfg.initial().values
    yield 0, u
    for k in range(cfg.n_steps):
        forcing = g.g(u) * (noise - cfg.C * g.dg(u))
        u = stepper.step(u, forcing)
        if _blown_up(u, cfg.blowup_threshold):
            yield k + 1, None
            return
        yield k + 1, u


def _warn_dt(cfg: PDEConfig, noise: Field) -> None:
    limit = stable_dt(noise)
    if cfg.step > limit:
        logger.warning(f"Time step {cfg.step:.3e} exceeds the stability rule {limit:.3e}")


def _integrate(cfg: PDEConfig, g: Nonlinearity, noise: Field, label: str) -> Trajectory:
    _check_inputs(cfg, noise)
    _warn_dt(cfg, noise)
    save = set(cfg.frame_steps())
    times, frames, steps = [], [], []
    blowup_time = None
    for k, u in _march_u(cfg, g, noise.values, _stepper(cfg)):
        if u is None:
            blowup_time = k * cfg.step
            logger.warning(f"{label}: blow-up at t={blowup_time:.4f} (threshold {cfg.blowup_threshold:g})")
            break
        if k in save:
            times.append(k * cfg.step)
            frames.append(Field(cfg.grid, u))
            steps.append(k)
    logger.info(f"{label} finished: g={g}, {len(frames)} frames, t_end={times[-1]:.4f}")
    return Trajectory(
        times=tuple(times),
        frames=tuple(frames),
        steps=tuple(steps),
        dt=cfg.step,
        blowup=blowup_time is not None,
        blowup_time=blowup_time,
        meta={"equation": label, "g": g.name, "epsilon": cfg.epsilon, "C": cfg.C, "scheme": cfg.scheme},
    )


def solve_gpam(cfg: PDEConfig, g: Union[str, Nonlinearity], xi_eps: Field) -> Trajectory:
    """
    Renormalized gPAM: du/dt = Lap u + g(u) (xi_eps - C g'(u)), u(0) = u0.

    Blow-up (non-finite values or sup above the threshold) is reported on the
    Trajectory, never raised.
    """
    return _integrate(cfg, get_nonlinearity(g), xi_eps, "gpam")


def solve_gpam_shifted(cfg: PDEConfig, g: Union[str, Nonlinearity], xi_eps: Field, h_eps: Field) -> Trajectory:
    _check_inputs(cfg, h_eps)
    return _integrate(cfg, get_nonlinearity(g), xi_eps + h_eps, "gpam_shifted")


def _potential(cfg: PDEConfig, g: Nonlinearity, u: np.ndarray, noise: np.ndarray) -> np.ndarray:
    dg = g.dg(u)
    return dg * noise - cfg.C * (dg ** 2 + g.g(u) * g.d2g(u))


def _linear_along(
    cfg: PDEConfig,
    g: Nonlinearity,
    xi_eps: Field,
    u_traj: Trajectory,
    v0: np.ndarray,
    source: Optional[Callable[[np.ndarray], np.ndarray]],
    start_step: int,
    label: str,
) -> Trajectory:
    """
    Marches v_{k+1} = A v_k + B (v_k * potential(u_k) + source(u_k)) for
    k >= start_step, re-marching u and checking it against the saved frames.
    """
    _check_inputs(cfg, xi_eps)
    if u_traj.steps[-1] < start_step:
        raise SolverError(f"Start step {start_step} beyond the trajectory ({u_traj.steps[-1]} steps)")
    stepper = _stepper(cfg)
    saved = dict(zip(u_traj.steps, u_traj.frames))
    save = set(cfg.frame_steps()) | {start_step}
    last = u_traj.steps[-1]
    noise = xi_eps.values
    v = v0
    blowup_time = None
    times, frames, steps = [], [], []
    for k, u in _march_u(cfg, g, noise, stepper):
        if u is None or k > last:
            break
        if k in saved and not np.array_equal(u, saved[k].values):
            raise SolverError(f"{label}: trajectory does not match the configuration at step {k}")
        if k < start_step:
            continue
        if k in save:
            times.append(k * cfg.step)
            frames.append(Field(cfg.grid, v))
            steps.append(k)
        if k == last:
            break
        forcing = v * _potential(cfg, g, u, noise)
        if source is not None:
            forcing = forcing + source(u)
        v = stepper.step(v, forcing)
        if _blown_up(v, cfg.blowup_threshold):
            blowup_time = (k + 1) * cfg.step
            logger.warning(f"{label}: blow-up at t={blowup_time:.4f} (threshold {cfg.blowup_threshold:g})")
            break
    if blowup_time is None and u_traj.blowup:
        blowup_time = u_traj.blowup_time
        logger.warning(f"{label}: truncated at the blow-up of the base trajectory (t={blowup_time})")
    return Trajectory(
        times=tuple(times),
        frames=tuple(frames),
        steps=tuple(steps),
        dt=cfg.step,
        blowup=blowup_time is not None,
        blowup_time=blowup_time,
        meta={"equation": label, "g": g.name, "epsilon": cfg.epsilon, "C": cfg.C, "start_step": start_step},
    )


def solve_tangent(
    cfg: PDEConfig,
    g: Union[str, Nonlinearity],
    xi_eps: Field,
    h_eps: Field,
    u_traj: Trajectory,
) -> Trajectory:
    """
    Renormalized tangent equation along u_traj:

        dv/dt = Lap v + g(u) h + v (g'(u) xi - C (g'(u)^2 + g''(u) g(u))),  v(0) = 0

    The step is the exact derivative of the discrete gPAM step in the
    direction h, so finite differences of solve_gpam_shifted converge to it
    at second order.
    """
    g = get_nonlinearity(g)
    _check_inputs(cfg, h_eps)
    h = h_eps.values
    return _linear_along(cfg, g, xi_eps, u_traj, np.zeros_like(h), lambda u: g.g(u) * h, 0, "tangent")


def solve_tangent_hom(
    cfg: PDEConfig,
    g: Union[str, Nonlinearity],
    xi_eps: Field,
    u_traj: Trajectory,
    v0: Field,
    start_step: int = 0,
) -> Trajectory:
    """Homogeneous tangent flow started from v0 at step start_step."""
    _check_inputs(cfg, v0)
    return _linear_along(cfg, get_nonlinearity(g), xi_eps, u_traj, v0.values, None, start_step, "tangent_hom")


def solve_auxiliary_w(
    cfg: PDEConfig,
    g: Union[str, Nonlinearity],
    xi_eps: Field,
    u_traj_reversed: Trajectory,
) -> Trajectory:
    """
    dw/ds = Lap w + g(u_rev)^2 + 2 w (g'(u_rev) xi - C (g'(u_rev)^2 + g''(u_rev) g(u_rev))),  w(0) = 0

    u_rev(s) = u(T - s) is read from the reversed trajectory by linear
    interpolation between its frames.
    """
    g = get_nonlinearity(g)
    _check_inputs(cfg, xi_eps)
    stepper = _stepper(cfg)
    n_steps = min(cfg.n_steps, int(round(u_traj_reversed.t_final / cfg.step)))
    save = set(cfg.frame_steps())
    noise = xi_eps.values
    w = np.zeros((cfg.grid.n, cfg.grid.n))
    times, frames, steps = [], [], []
    for k in range(n_steps + 1):
        if k in save or k == n_steps:
            times.append(k * cfg.step)
            frames.append(Field(cfg.grid, w))
            steps.append(k)
        if k == n_steps:
            break
        u = u_traj_reversed.at(k * cfg.step).values
        forcing = g.g(u) ** 2 + 2.0 * w * _potential(cfg, g, u, noise)
        w = stepper.step(w, forcing)
        if _blown_up(w, cfg.blowup_threshold):
            logger.warning(f"auxiliary w blew up at s={(k + 1) * cfg.step:.4f}")
            return Trajectory(tuple(times), tuple(frames), tuple(steps), cfg.step, True, (k + 1) * cfg.step)
    return Trajectory(
        times=tuple(times),
        frames=tuple(frames),
        steps=tuple(steps),
        dt=cfg.step,
        meta={"equation": "auxiliary_w", "g": g.name, "epsilon": cfg.epsilon, "C": cfg.C},
    )
