import asyncio
import logging
import math
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field as PydanticField
from scipy import stats

from gpam.config import get_settings
from gpam.fields import (
    Field,
    Grid2D,
    Mollifier,
    ball_indicator,
    heat_integral,
    heat_semigroup,
    mollify,
    phi1,
    sample_white_noise,
    smooth_bump,
)
from gpam.models import (
    canonical_model,
    check_admissibility,
    extend,
    measure_model_norm,
    renorm_constant,
    translate,
)
from gpam.rs_symbols import HH, XI, Integ, Structure, enumerate_basis, product
from gpam.spde_solver import (
    Nonlinearity,
    PDEConfig,
    Stepper,
    get_nonlinearity,
    solve_auxiliary_w,
    solve_gpam,
    solve_gpam_shifted,
    solve_tangent,
    solve_tangent_hom,
    stable_dt,
)
from gpam.wavelets import WaveletBasis, analyze

logger = logging.getLogger(__name__)

STATUS_PASS = "pass"
STATUS_FAIL = "fail"
STATUS_INCONCLUSIVE = "inconclusive"

DEFAULT_DELTAS = tuple(2.0 ** -k for k in range(3, 8))
EXACT_REMAINDER = 1e-10
MIN_ORDER = 1.8
CAUCHY_CONTRACTION = 0.6
CAUCHY_FLOOR = 1e-10
LOG_FIT_MAX_EPS = 0.25
MIN_FIT_POINTS = 3
HEAT_CLAIM_LEVEL = 0.25


class Metric(BaseModel):
    name: str = PydanticField(..., description="Metric name")
    value: float = PydanticField(..., description="Measured value")
    tolerance: Optional[float] = PydanticField(None, description="Threshold the value is compared with")
    comparison: str = PydanticField(..., description="<=, <, >=, > or info")
    claim: str = PydanticField(..., description="Statement the metric tests")
    passed: bool = PydanticField(..., description="Whether the comparison holds")


class StudyReport(BaseModel):
    study: str = PydanticField(..., description="Study name")
    parameters: Dict[str, Any] = PydanticField(default_factory=dict, description="Inputs and recorded profiles")
    metrics: List[Metric] = PydanticField(default_factory=list, description="Per-case metrics")
    status: str = PydanticField(STATUS_PASS, description="pass, fail or inconclusive")
    notes: List[str] = PydanticField(default_factory=list, description="Free-form remarks")

    @property
    def passed(self) -> bool:
        return self.status == STATUS_PASS


_COMPARISONS: Dict[str, Callable[[float, float], bool]] = {
    "<=": lambda v, t: v <= t,
    "<": lambda v, t: v < t,
    ">=": lambda v, t: v >= t,
    ">": lambda v, t: v > t,
}


def metric(name: str, value: float, comparison: str, tolerance: Optional[float], claim: str) -> Metric:
    value = float(value)
    if comparison == "info":
        passed = True
    else:
        passed = bool(np.isfinite(value)) and _COMPARISONS[comparison](value, tolerance)
    return Metric(name=name, value=value, tolerance=tolerance, comparison=comparison, claim=claim, passed=passed)


def finish(study: str, parameters: Dict[str, Any], metrics: List[Metric], notes: Optional[List[str]] = None, inconclusive: bool = False) -> StudyReport:
    if inconclusive:
        status = STATUS_INCONCLUSIVE
    else:
        status = STATUS_PASS if all(m.passed for m in metrics) else STATUS_FAIL
    report = StudyReport(study=study, parameters=parameters, metrics=metrics, status=status, notes=notes or [])
    failed = [m.name for m in metrics if not m.passed]
    if status == STATUS_PASS:
        logger.info(f"Study {study}: pass ({len(metrics)} metrics)")
    elif status == STATUS_FAIL:
        logger.warning(f"Study {study}: fail on {failed}")
    else:
        logger.warning(f"Study {study}: inconclusive ({'; '.join(report.notes)})")
    return report


# Ensembles

async def _ensemble(fn: Callable, items: List, jobs: int) -> List:
    semaphore = asyncio.Semaphore(jobs)

    async def run(item):
        async with semaphore:
            return await asyncio.to_thread(fn, item)

    return await asyncio.gather(*(run(item) for item in items))


def run_ensemble(fn: Callable, items: Iterable, jobs: Optional[int] = None) -> List:
    """Runs fn over items on worker threads; results come back in input order."""
    items = list(items)
    jobs = jobs or get_settings().jobs
    logger.debug(f"Ensemble of {len(items)} tasks on {jobs} workers")
    return asyncio.run(_ensemble(fn, items, jobs))


def _fitted_order(deltas: Sequence[float], errors: Sequence[float]) -> float:
    fit = stats.linregress(np.log(deltas), np.log(errors))
    return float(fit.slope)


# Derivative studies

def gateaux_check(
    g: Union[str, Nonlinearity],
    xi_eps: Field,
    h: Field,
    cfg: PDEConfig,
    deltas: Sequence[float] = DEFAULT_DELTAS,
    t_probe: float = 0.25,
    x_probe: Optional[Tuple[int, int]] = None,
    check_scaling: bool = True,
    jobs: Optional[int] = None,
) -> StudyReport:
    """
    Finite differences of the shifted solution against the tangent solution.

    r(delta) = ||u^{delta h}(t) - u(t) - delta v^h(t)||_inf / delta must vanish
    with order >= 1.8 in delta (exactly, when the equation is affine in the
    noise). With check_scaling, r_{2h}(delta/2) = 2 r_h(delta) is verified.
    """
    g = get_nonlinearity(g)
    cfg = cfg.model_copy(update={"t_end": t_probe})
    params = {"g": g.name, "deltas": list(deltas), "t_probe": t_probe, "epsilon": cfg.epsilon, "C": cfg.C, "dt": cfg.step}
    base = solve_gpam(cfg, g, xi_eps)
    if base.blowup:
        return finish("gateaux", params, [], [f"base solution blew up at t={base.blowup_time}"], inconclusive=True)
    tangent = solve_tangent(cfg, g, xi_eps, h, base)
    if tangent.blowup:
        return finish("gateaux", params, [], [f"tangent solution blew up at t={tangent.blowup_time}"], inconclusive=True)
    v = tangent.final.values
    u = base.final.values

    def remainders(direction: Field, tangent: np.ndarray, steps: Sequence[float]):
        branches = run_ensemble(lambda d: solve_gpam_shifted(cfg, g, xi_eps, direction * d), steps, jobs)
        if any(b.blowup for b in branches):
            return None, None
        diffs = [b.final.values - u - d * tangent for b, d in zip(branches, steps)]
        return [float(np.max(np.abs(r))) / d for r, d in zip(diffs, steps)], diffs

    r, diffs = remainders(h, v, deltas)
    if r is None:
        return finish("gateaux", params, [], ["a shifted branch blew up"], inconclusive=True)
    params["remainders"] = r
    metrics = []
    if max(r) < EXACT_REMAINDER:
        metrics.append(metric("remainder_max", max(r), "<", EXACT_REMAINDER, "equation affine in the noise: exact linearization"))
    else:
        order = _fitted_order(deltas, [d * ri for d, ri in zip(deltas, r)])
        metrics.append(metric("order", order, ">=", MIN_ORDER, "Gateaux remainder is O(delta^2)"))
        metrics.append(metric("remainder_ratio", r[-1] / r[0], "<", 1.0, "r(delta) decreases to 0"))
    if x_probe is not None:
        probe = [abs(float(diff[x_probe])) / d for diff, d in zip(diffs, deltas)]
        params["probe_remainders"] = probe
        metrics.append(metric("probe_remainder", probe[-1], "info", None, f"pointwise remainder at {tuple(x_probe)}"))
    if check_scaling:
        v2 = solve_tangent(cfg, g, xi_eps, h * 2.0, base).final.values
        r2, _ = remainders(h * 2.0, v2, [d / 2.0 for d in deltas])
        if r2 is None:
            return finish("gateaux", params, metrics, ["a 2h branch blew up"], inconclusive=True)
        mismatch = max(abs(a - 2.0 * b) / max(abs(2.0 * b), 1e-300) for a, b in zip(r2, r))
        if max(r) < EXACT_REMAINDER:
            mismatch = 0.0
        metrics.append(metric("scaling_mismatch", mismatch, "<=", 1e-6, "r depends on delta*h only: r_2h(delta/2) = 2 r_h(delta)"))
    return finish("gateaux", params, metrics)


def translation_consistency(
    g: Union[str, Nonlinearity],
    xi_eps: Field,
    h: Field,
    cfg: PDEConfig,
    h2: Optional[Field] = None,
    points: int = 4,
    seed: int = 0,
) -> StudyReport:
    """
    Model and solver level identities of the noise shift:
    T_h Z(xi) = Z(xi + h), solve_gpam(xi + h) == solve_gpam_shifted(xi, h)
    bitwise, and T_h2 T_h = T_{h + h2}.
    """
    g = get_nonlinearity(g)
    grid = xi_eps.grid
    h2 = h2 if h2 is not None else h.translate((grid.n // 4, grid.n // 8))
    rng = np.random.default_rng(seed)
    base_points = [tuple(int(v) for v in rng.integers(grid.n, size=2)) for _ in range(points)]
    tg = enumerate_basis(Structure.TG)

    base = canonical_model(xi_eps, C=cfg.C)
    translated = translate(base, h)
    direct = canonical_model(xi_eps + h, C=cfg.C)
    twice = translate(translate(base, h), h2)
    once = translate(base, h + h2)

    def gap(a, b):
        worst = 0.0
        for x in base_points:
            for tau in tg:
                worst = max(worst, float(np.max(np.abs(a.realize(tau, x).values - b.realize(tau, x).values))))
            worst = max(worst, abs(a.f_char(x).jXi - b.f_char(x).jXi))
        return worst

    shifted = solve_gpam_shifted(cfg, g, xi_eps, h)
    fed = solve_gpam(cfg, g, xi_eps + h)
    if len(shifted.frames) != len(fed.frames):
        solver_gap = float("inf")
    else:
        solver_gap = max(float(np.max(np.abs(a.values - b.values))) for a, b in zip(shifted.frames, fed.frames))

    metrics = [
        metric("model_identity", gap(translated, direct), "<", 1e-10, "translated model equals the model of the shifted noise"),
        metric("solver_identity", solver_gap, "<=", 0.0, "shifted solver equals the solver fed with the shifted noise, bitwise"),
        metric("successive_translations", gap(twice, once), "<", 1e-10, "two translations compose additively"),
    ]
    params = {"g": g.name, "epsilon": cfg.epsilon, "C": cfg.C, "h_l2": h.l2_norm(), "points": [list(p) for p in base_points]}
    return finish("translation", params, metrics)


def duhamel_check(
    g: Union[str, Nonlinearity],
    xi_eps: Field,
    h: Field,
    cfg: PDEConfig,
    tolerance: float = 5e-4,
) -> StudyReport:
    """
    solve_tangent against the superposition sum_k P_{k+1 -> N}[B g(u_k) h]
    of homogeneous flows; the alternative reading with g'(u_k) h is recorded.
    """
    g = get_nonlinearity(g)
    cfg = cfg.model_copy(update={"save_levels": max(0, math.ceil(math.log2(cfg.n_steps)))})
    u = solve_gpam(cfg, g, xi_eps)
    params = {"g": g.name, "n_steps": cfg.n_steps, "t_end": cfg.t_end}
    if u.blowup:
        return finish("duhamel", params, [], ["base solution blew up"], inconclusive=True)
    tangent = solve_tangent(cfg, g, xi_eps, h, u)
    if tangent.blowup:
        return finish("duhamel", params, [], ["tangent solution blew up"], inconclusive=True)
    v = tangent.final.values
    stepper = Stepper(cfg.grid, cfg.step, cfg.scheme, cfg.laplacian)
    frames = dict(zip(u.steps, u.frames))
    zeros = np.zeros_like(v)

    def superpose(source):
        total = np.zeros_like(v)
        for k in range(cfg.n_steps):
            kick = Field(cfg.grid, stepper.step(zeros, source(frames[k].values) * h.values))
            total = total + solve_tangent_hom(cfg, g, xi_eps, u, kick, start_step=k + 1).final.values
        return total

    scale = max(float(np.max(np.abs(v))), 1e-300)
    gap = float(np.max(np.abs(superpose(g.g) - v))) / scale
    alt_gap = float(np.max(np.abs(superpose(g.dg) - v))) / scale
    metrics = [
        metric("relative_gap", gap, "<=", tolerance, "tangent solution is the Duhamel superposition of g(u_s) h"),
        metric("alternative_reading_gap", alt_gap, "info", None, "superposition of g'(u_s) h instead"),
    ]
    return finish("duhamel", params, metrics)


def dt_refinement_check(
    g: Union[str, Nonlinearity],
    xi_eps: Field,
    cfg: PDEConfig,
    ratio_range: Tuple[float, float] = (1.5, 2.5),
    jobs: Optional[int] = None,
) -> StudyReport:
    """First-order halving ratio ||u_dt - u_dt/2|| / ||u_dt/2 - u_dt/4|| of the scheme."""
    g = get_nonlinearity(g)
    dts = [cfg.step, cfg.step / 2.0, cfg.step / 4.0]
    runs = run_ensemble(lambda dt: solve_gpam(cfg.model_copy(update={"dt": dt}), g, xi_eps), dts, jobs)
    params = {"g": g.name, "dts": dts, "t_end": cfg.t_end, "scheme": cfg.scheme}
    if any(r.blowup for r in runs):
        return finish("dt_refinement", params, [], ["blow-up at some step size"], inconclusive=True)
    coarse = (runs[0].final - runs[1].final).sup_norm()
    fine = (runs[1].final - runs[2].final).sup_norm()
    params.update({"coarse_gap": coarse, "fine_gap": fine})
    if fine < 1e-12:
        return finish("dt_refinement", params, [], ["time stepping is exact for this nonlinearity"], inconclusive=True)
    low, high = ratio_range
    ratio = coarse / fine
    return finish("dt_refinement", params, [
        metric("halving_ratio_low", ratio, ">=", low, "time error halves with dt"),
        metric("halving_ratio_high", ratio, "<=", high, "time error halves with dt"),
    ])


# Maximum principles and bounds

def _ensemble_seeds(seeds: Sequence[int], grid: Grid2D, epsilon: float, profile: str = "bump") -> Callable[[int], Field]:
    rho = Mollifier(epsilon, profile)
    return lambda seed: mollify(sample_white_noise(seed, grid), rho)


def weak_maximum_principle_check(
    g: Union[str, Nonlinearity],
    cfg: PDEConfig,
    v0: Field,
    seeds: Sequence[int] = tuple(range(100)),
    tolerance: float = -1e-8,
    jobs: Optional[int] = None,
) -> StudyReport:
    """Homogeneous tangent flows from v0 >= 0 stay >= tolerance for every seed."""
    g = get_nonlinearity(g)
    noise_for = _ensemble_seeds(seeds, cfg.grid, cfg.epsilon)

    def run(seed):
        xi_eps = noise_for(seed)
        u = solve_gpam(cfg, g, xi_eps)
        v = solve_tangent_hom(cfg, g, xi_eps, u, v0)
        return min(float(f.values.min()) for f in v.frames), u.blowup or v.blowup

    results = run_ensemble(run, seeds, jobs)
    blown = [s for s, (_, b) in zip(seeds, results) if b]
    minimum = min(m for m, _ in results)
    params = {"g": g.name, "seeds": len(seeds), "blowup_seeds": blown, "laplacian": cfg.laplacian}
    metrics = [
        metric("min_v", minimum, ">=", tolerance, "nonnegative data stay nonnegative under the homogeneous flow"),
        metric("v0_min", float(v0.values.min()), ">=", 0.0, "initial datum is nonnegative"),
    ]
    return finish("weak_maximum_principle", params, metrics)


def comparison_bound_check(
    g: Union[str, Nonlinearity],
    cfg: PDEConfig,
    M: float = np.pi,
    seeds: Sequence[int] = tuple(range(50)),
    tolerance: float = 1e-3,
    jobs: Optional[int] = None,
) -> StudyReport:
    """g(M) = g(-M) = 0 and ||u0|| <= M give sup |u| <= M + tolerance."""
    g = get_nonlinearity(g)
    probe = np.array([M, -M])
    params = {"g": g.name, "M": M, "seeds": len(seeds)}
    if float(np.max(np.abs(g.g(probe)))) > 1e-12:
        return finish("comparison_bound", params, [], [f"g({M}) or g(-{M}) is not zero"], inconclusive=True)
    if cfg.initial().sup_norm() > M:
        return finish("comparison_bound", params, [], [f"||u0|| exceeds {M}"], inconclusive=True)
    noise_for = _ensemble_seeds(seeds, cfg.grid, cfg.epsilon)

    def run(seed):
        traj = solve_gpam(cfg, g, noise_for(seed))
        return max(f.sup_norm() for f in traj.frames), traj.blowup

    results = run_ensemble(run, seeds, jobs)
    params["blowup_seeds"] = [s for s, (_, b) in zip(seeds, results) if b]
    worst = max(v for v, _ in results)
    return finish("comparison_bound", params, [
        metric("sup_u", worst, "<=", M + tolerance, "solution stays inside [-M, M]"),
    ])


def strong_maximum_principle_check(
    g: Union[str, Nonlinearity],
    xi_eps: Field,
    cfg: PDEConfig,
    center: Optional[Tuple[int, int]] = None,
    delta: float = 0.5,
    rhos: Sequence[float] = (1.0, 2.0, 4.0),
    scan_points: int = 32,
) -> StudyReport:
    """
    (a) heat flow of 1_{B(x, delta)} stays >= 1/4 on B(x, delta + t rho) for
    t up to some t_rho > 0; (b) the homogeneous tangent flow from a bump is
    strictly positive on the whole torus at the final time; (c) records the
    minimum over the growing balls along the saved frames.
    """
    g = get_nonlinearity(g)
    grid = xi_eps.grid
    cfg = cfg.model_copy(update={"laplacian": "fd"})
    center = center or (grid.n // 2, grid.n // 2)
    point = grid.point(center)
    d1, d2 = grid.wrapped_offsets(point)
    dist = np.hypot(d1, d2)
    indicator = ball_indicator(grid, point, delta)

    metrics = []
    params: Dict[str, Any] = {"g": g.name, "delta": delta, "rhos": list(rhos), "center": list(center), "T": cfg.t_end}
    for rho in rhos:
        # scan from the time the heat flow spreads over one grid cell
        t_min, t_max = grid.spacing ** 2, 1.0 / rho ** 2
        t_rho = 0.0
        for t in np.linspace(t_min, max(t_max, t_min), scan_points):
            heat = heat_semigroup(indicator, t, "fd").values
            if float(heat[dist < delta + t * rho].min()) < HEAT_CLAIM_LEVEL:
                break
            t_rho = float(t)
        params[f"t_rho_{rho:g}"] = t_rho
        metrics.append(metric(f"t_rho_{rho:g}", t_rho, ">", 0.0, f"heat of the ball indicator >= 1/4 on the ball grown at speed {rho:g}"))

    u = solve_gpam(cfg, g, xi_eps)
    if u.blowup:
        return finish("strong_maximum_principle", params, metrics, ["base solution blew up"], inconclusive=True)
    v0 = smooth_bump(grid, point, delta, 1.25 * delta)
    v = solve_tangent_hom(cfg, g, xi_eps, u, v0)
    if v.blowup:
        return finish("strong_maximum_principle", params, metrics, ["homogeneous tangent flow blew up"], inconclusive=True)
    speed = rhos[0]
    params["propagation"] = [
        {"t": t, "radius": delta + speed * t, "min": float(frame.values[dist < delta + speed * t].min())}
        for t, frame in zip(v.times, v.frames)
    ]
    metrics.append(metric("min_v_final", float(v.final.values.min()), ">", 0.0, "homogeneous tangent flow is strictly positive everywhere"))
    return finish("strong_maximum_principle", params, metrics)


def feynman_kac_bound_check(
    g: Union[str, Nonlinearity],
    xi_eps: Field,
    h: Field,
    cfg: PDEConfig,
    ratio_bound: float = 25.0,
) -> StudyReport:
    """
    |v^h(t, x)| / (log(T / (T - t)) sqrt(w(t, x)) ||h||_L2) over saved frames
    with 0 < t < T, where w solves the auxiliary equation along the reversed
    trajectory.
    """
    g = get_nonlinearity(g)
    T = cfg.t_end
    params = {"g": g.name, "T": T, "h_l2": h.l2_norm(), "ratio_bound": ratio_bound}
    u = solve_gpam(cfg, g, xi_eps)
    if u.blowup:
        return finish("feynman_kac", params, [], ["base solution blew up"], inconclusive=True)
    v = solve_tangent(cfg, g, xi_eps, h, u)
    if v.blowup:
        return finish("feynman_kac", params, [], ["tangent solution blew up"], inconclusive=True)
    w = solve_auxiliary_w(cfg, g, xi_eps, u.reversed())
    w_min = min(float(f.values.min()) for f in w.frames)
    metrics = [metric("w_min", w_min, ">=", -1e-8, "auxiliary w is nonnegative")]
    h_norm = h.l2_norm()
    if h_norm == 0.0:
        metrics.append(metric("v_max", max(f.sup_norm() for f in v.frames), "<=", 0.0, "h = 0 gives v = 0"))
        return finish("feynman_kac", params, metrics)

    ratio, profile = 0.0, []
    for t, frame in zip(v.times, v.frames):
        if not 0.0 < t < T:
            continue
        denom = math.log(T / (T - t)) * np.sqrt(np.maximum(w.frame_at(t).values, 0.0)) * h_norm
        mask = denom > 1e-12
        if not np.any(mask):
            continue
        current = float(np.max(np.abs(frame.values[mask]) / denom[mask]))
        profile.append({"t": t, "ratio": current})
        ratio = max(ratio, current)
    params["profile"] = profile
    metrics.append(metric("ratio_max", ratio, "<=", ratio_bound, "tangent bounded by log(T/(T-t)) sqrt(w) ||h||"))
    return finish("feynman_kac", params, metrics)


# Convergence in epsilon

def cauchy_violations(distances: Sequence[float], floor: float = CAUCHY_FLOOR) -> int:
    """Pairs with d_{k+1} >= d_k, the finest pair excepted; gaps below floor count as decrease."""
    pairs = list(zip(distances, distances[1:]))[:-1]
    return sum(1 for coarse, fine in pairs if fine - floor >= coarse)


def renorm_log_fit(
    eps_list: Sequence[float],
    grid: Grid2D,
    profile: str = "bump",
    min_r_squared: float = 0.99,
    max_eps: float = LOG_FIT_MAX_EPS,
) -> StudyReport:
    """
    C_eps against log(1/eps): logarithmic divergence with slope near 1/(2 pi).

    Scales above max_eps are dropped from the fit: the truncated kernel has
    support radius 1, so C_eps leaves the logarithmic regime there.
    """
    fitted = sorted((eps for eps in eps_list if eps <= max_eps), reverse=True)
    params = {
        "eps_list": fitted,
        "dropped_eps": [eps for eps in eps_list if eps > max_eps],
        "max_eps": max_eps,
        "profile": profile,
        "n": grid.n,
    }
    if len(fitted) < MIN_FIT_POINTS:
        return finish("renorm_constant_fit", params, [], [f"fewer than {MIN_FIT_POINTS} scales at or below {max_eps}"], inconclusive=True)
    constants = [renorm_constant(eps, Mollifier(eps, profile), grid) for eps in fitted]
    fit = stats.linregress(np.log(1.0 / np.asarray(fitted)), constants)
    params["constants"] = constants
    return finish("renorm_constant_fit", params, [
        metric("r_squared", fit.rvalue ** 2, ">", min_r_squared, "C_eps is affine in log(1/eps)"),
        metric("slope", fit.slope, "info", None, "log-divergence rate (1/(2 pi) in the continuum)"),
    ])


def epsilon_convergence_study(
    g: Union[str, Nonlinearity],
    seed: int,
    eps_list: Sequence[float],
    h: Field,
    cfg: PDEConfig,
    renormalize: bool = True,
    profile: str = "bump",
    contraction: float = CAUCHY_CONTRACTION,
    model_basis: Optional[WaveletBasis] = None,
    jobs: Optional[int] = None,
) -> StudyReport:
    """
    Coupled-epsilon Cauchy study on one white-noise realization.

    For eps_k decreasing, d_k = ||u_k(T) - u_{k+1}(T)||_inf and the mean drift
    m_k = |mean u_k(T) - mean u_{k+1}(T)|. The d_k must decrease pair by pair
    (the finest pair excepted), and both sequences must contract overall:
    d_last <= q d_0 and m_last <= q m_0. Without renormalization (C = 0) the
    drift grows like log(1/eps) and the study fails.
    """
    g = get_nonlinearity(g)
    grid = cfg.grid
    xi = sample_white_noise(seed, grid)
    eps_list = sorted(eps_list, reverse=True)
    mollifiers = [Mollifier(eps, profile) for eps in eps_list]
    dt = min(cfg.dt, stable_dt(mollify(xi, mollifiers[-1])))
    params: Dict[str, Any] = {
        "g": g.name, "seed": seed, "eps_list": eps_list, "renormalize": renormalize,
        "t_end": cfg.t_end, "dt": dt, "contraction": contraction,
    }

    def run(rho: Mollifier):
        xi_eps = mollify(xi, rho)
        C = renorm_constant(rho.epsilon, rho, grid) if renormalize else 0.0
        run_cfg = cfg.model_copy(update={"epsilon": rho.epsilon, "C": C, "dt": dt})
        u = solve_gpam(run_cfg, g, xi_eps)
        if u.blowup:
            return C, u, None, None
        v = solve_tangent(run_cfg, g, xi_eps, mollify(h, rho), u)
        norm = None
        if model_basis is not None and not v.blowup:
            model = canonical_model(xi_eps, C=C)
            norm = measure_model_norm(model, product(Integ(XI), XI), model_basis).scaling_sup
        return C, u, v, norm

    runs = run_ensemble(run, mollifiers, jobs)
    params["constants"] = [r[0] for r in runs]
    blown = [eps for eps, r in zip(eps_list, runs) if r[2] is None or r[2].blowup]
    if blown:
        params["blowup_eps"] = blown
        return finish("epsilon_convergence", params, [], ["blow-up at some epsilon, partial report"], inconclusive=True)

    finals = [r[1].final for r in runs]
    tangents = [r[2].final for r in runs]
    d = [(a - b).sup_norm() for a, b in zip(finals, finals[1:])]
    m = [abs(a.mean() - b.mean()) for a, b in zip(finals, finals[1:])]
    e = [(a - b).sup_norm() for a, b in zip(tangents, tangents[1:])]
    params.update({"sup_distances": d, "mean_drifts": m, "tangent_distances": e})
    if model_basis is not None:
        norms = [r[3] for r in runs]
        params["model_norms"] = norms
        params["model_norm_gaps"] = [abs(a - b) for a, b in zip(norms, norms[1:])]

    metrics = [
        metric("monotone_decrease", cauchy_violations(d), "<=", 0, "d_{k+1} < d_k for every pair but the finest"),
        metric("sup_contraction", d[-1] - CAUCHY_FLOOR, "<=", contraction * d[0], "sup distances of u contract (Cauchy in eps)"),
        metric("drift_contraction", m[-1] - CAUCHY_FLOOR, "<=", contraction * m[0], "mean drift of u contracts"),
        metric("tangent_ratio", e[-1] / max(e[0], 1e-300), "info", None, "tangent distances, last over first"),
        metric("tangent_violations", cauchy_violations(e), "info", None, "tangent distances that fail to decrease"),
    ]
    if g.name == "one":
        comparator = [
            (heat_integral(mollify(xi, a), cfg.t_end, cfg.laplacian) - heat_integral(mollify(xi, b), cfg.t_end, cfg.laplacian)).sup_norm()
            for a, b in zip(mollifiers, mollifiers[1:])
        ]
        params["closed_form_distances"] = comparator
        gap = max(abs(x - y) for x, y in zip(d, comparator))
        metrics.append(metric("closed_form_gap", gap, "<=", 1e-8, "additive case matches the mollification error of the heat integral"))
    return finish("epsilon_convergence", params, metrics)


# Density

def density_nondegeneracy(
    g: Union[str, Nonlinearity],
    u0: Union[float, Field],
    cfg: PDEConfig,
    seeds: Sequence[int] = tuple(range(1000)),
    x: Optional[Tuple[int, int]] = None,
    profile: str = "bump",
    jobs: Optional[int] = None,
) -> StudyReport:
    """
    Per seed: v^{h=1}(t, x) > 0; across seeds: the ECDF of u(t, x) has no atom.
    For g = one with constant u0 the law is Gaussian in closed form and a KS
    test is added.

    g(u0) must not vanish identically, otherwise the noise never reaches u and
    the report fails on source_at_u0. Negative values of g at u0 are recorded.
    """
    g = get_nonlinearity(g)
    grid = cfg.grid
    u0_field = u0 if isinstance(u0, Field) else Field.constant(grid, u0)
    cfg = cfg.model_copy(update={"u0": u0_field})
    x = x or (grid.n // 2, grid.n // 2)
    one = Field.constant(grid, 1.0)
    rho = Mollifier(cfg.epsilon, profile)

    def run(seed):
        xi_eps = mollify(sample_white_noise(seed, grid), rho)
        u = solve_gpam(cfg, g, xi_eps)
        if u.blowup:
            return None
        v = solve_tangent(cfg, g, xi_eps, one, u)
        if v.blowup:
            return None
        return u.final.at(x), v.final.at(x)

    results = run_ensemble(run, seeds, jobs)
    kept = [r for r in results if r is not None]
    excluded = len(results) - len(kept)
    params = {"g": g.name, "seeds": len(seeds), "excluded": excluded, "x": list(x), "t": cfg.t_end, "epsilon": cfg.epsilon}
    if not kept:
        return finish("density", params, [], ["every seed blew up"], inconclusive=True)
    values = np.array([r[0] for r in kept])
    tangents = np.array([r[1] for r in kept])
    n = len(values)
    _, counts = np.unique(values, return_counts=True)
    source = g.g(u0_field.values)
    metrics = [
        metric("source_at_u0", float(np.max(np.abs(source))), ">", 0.0, "g(u0) is not identically zero"),
        metric("min_g_at_u0", float(source.min()), "info", None, "g >= 0 on the initial datum"),
        metric("min_tangent", float(tangents.min()), ">", 0.0, "v^{h=1}(t, x) > 0 on every kept seed"),
        metric("ecdf_max_jump", counts.max() / n, "<", 3.0 / np.sqrt(n), "law of u(t, x) has no atom"),
        metric("excluded_seeds", excluded, "info", None, "blown-up seeds"),
    ]
    u0_values = u0_field.values
    if g.name == "one" and np.all(u0_values == u0_values.flat[0]):
        lam = grid.laplacian_symbol(cfg.laplacian)
        sigma = float(np.sqrt(np.sum((phi1(lam, cfg.t_end) * rho.multiplier(grid)) ** 2)) / (2.0 * np.pi))
        ks = stats.kstest(values, "norm", args=(float(u0_values.flat[0]), sigma))
        params["sigma"] = sigma
        metrics.append(metric("ks_statistic", ks.statistic, "<", 1.36 / np.sqrt(n), "u(t, x) follows its closed-form Gaussian law"))
    return finish("density", params, metrics)


# Noise, model and wavelet suites

def white_noise_check(
    grid: Grid2D,
    seeds: Sequence[int] = tuple(range(10_000)),
    basis: Optional[WaveletBasis] = None,
    jobs: Optional[int] = None,
) -> StudyReport:
    """Covariance of <xi, phi> and of one wavelet coefficient over seeds."""
    phi = Field.from_function(grid, lambda x1, x2: np.cos(x1) + 0.5 * np.sin(2.0 * x2))
    psi = Field.from_function(grid, lambda x1, x2: np.sin(x1) - np.cos(3.0 * x2))
    basis = basis or WaveletBasis(grid, "db4")
    level = basis.depth - 1

    def run(seed):
        xi = sample_white_noise(seed, grid)
        return xi.inner(phi), xi.inner(psi), float(analyze(xi, basis).level(level)[0, 1, 1])

    samples = np.array(run_ensemble(run, seeds, jobs))
    n = len(samples)
    ratio = float(np.var(samples[:, 0], ddof=1)) / phi.l2_norm() ** 2
    corr = float(np.corrcoef(samples[:, 0], samples[:, 1])[0, 1])
    wav_var = float(np.var(samples[:, 2], ddof=1))
    params = {"n": grid.n, "seeds": n, "wavelet": basis.name, "level": level}
    return finish("white_noise", params, [
        metric("variance_ratio_low", ratio, ">=", 0.97, "Var <xi, phi> = ||phi||^2"),
        metric("variance_ratio_high", ratio, "<=", 1.03, "Var <xi, phi> = ||phi||^2"),
        metric("orthogonal_correlation", abs(corr), "<", 4.0 / np.sqrt(n), "<xi, phi>, <xi, psi> uncorrelated for orthogonal phi, psi"),
        metric("wavelet_variance_error", abs(wav_var - 1.0), "<=", 0.05, "wavelet coefficients are standard normal"),
    ])


def admissibility_study(
    xi_eps: Field,
    h: Field,
    C: float,
    samples: int = 1000,
    seed: int = 0,
    tolerance: float = 1e-9,
) -> StudyReport:
    """
    Pi_x Gamma_xy = Pi_y on random triples for canonical, renormalized,
    extended and translated models, and commutation of extension and
    translation with renormalization.
    """
    base = canonical_model(xi_eps)
    renormalized = base.renormalize(C)
    models = {
        "canonical": base,
        "renormalized": renormalized,
        "extended": extend(renormalized, h),
        "translated": translate(renormalized, h),
    }
    metrics = []
    for name, model in models.items():
        report = check_admissibility(model, samples=samples, seed=seed)
        metrics.append(metric(f"admissibility_{name}", report.max_error, "<", tolerance, f"Pi_x Gamma_xy = Pi_y for the {name} model"))

    rng = np.random.default_rng(seed)
    points = [tuple(int(v) for v in rng.integers(xi_eps.grid.n, size=2)) for _ in range(3)]

    def relative_gap(a, b, structure):
        worst = 0.0
        for x in points:
            for tau in enumerate_basis(structure):
                fa, fb = a.realize(tau, x).values, b.realize(tau, x).values
                worst = max(worst, float(np.max(np.abs(fa - fb))) / max(1.0, float(np.max(np.abs(fb)))))
        return worst

    metrics.append(metric(
        "extension_renormalization", relative_gap(extend(base.renormalize(C), h), extend(base, h).renormalize(C), Structure.TGH),
        "<", 1e-12, "E_h M = M^H E_h",
    ))
    metrics.append(metric(
        "translation_renormalization", relative_gap(translate(base.renormalize(C), h), translate(base, h).renormalize(C), Structure.TG),
        "<", 1e-12, "T_h M = M T_h",
    ))
    return finish("admissibility", {"samples": samples, "C": C, "n": xi_eps.grid.n}, metrics)


def model_bounds_study(
    xi_eps: Field,
    h: Field,
    C: float,
    basis: WaveletBasis,
    ratio_bound: float = 20.0,
    linearity_tolerance: float = 0.1,
) -> StudyReport:
    """
    Level profiles s_m of the wavelet-measured model norms stay within
    ratio_bound of s_0, and the H-symbols scale with the degree of h.
    """
    model = canonical_model(xi_eps, C=C)
    ext, ext2 = extend(model, h), extend(model, h * 2.0)
    cases = [
        (model, XI, None),
        (model, product(Integ(XI), XI), None),
        (ext, product(Integ(XI), HH), 1),
        (ext, product(Integ(HH), XI), 1),
        (ext, product(Integ(HH), HH), 2),
    ]
    metrics, profiles = [], {}
    for target, tau, degree in cases:
        profile = measure_model_norm(target, tau, basis)
        profiles[str(tau)] = profile.level_sups
        s0 = max(profile.level_sups[0], 1e-300)
        metrics.append(metric(f"level_ratio[{tau}]", max(profile.level_sups) / s0, "<=", ratio_bound, f"s_m / s_0 bounded for {tau}"))
        if degree is not None:
            doubled = measure_model_norm(ext2, tau, basis).scaling_sup
            scaling = doubled / max(profile.scaling_sup, 1e-300) / 2.0 ** degree
            metrics.append(metric(f"h_scaling[{tau}]", abs(scaling - 1.0), "<=", linearity_tolerance, f"{tau} scales like ||h||^{degree}"))
    return finish("model_bounds", {"C": C, "wavelet": basis.name, "depth": basis.depth, "profiles": profiles}, metrics)


def combine_reports(study: str, reports: Sequence[StudyReport], labels: Sequence[Any]) -> StudyReport:
    """Merges per-seed or per-part reports; fail dominates inconclusive, which dominates pass."""
    metrics, notes, parameters = [], [], {}
    for label, report in zip(labels, reports):
        parameters[str(label)] = report.parameters
        metrics.extend(m.model_copy(update={"name": f"{label}:{m.name}"}) for m in report.metrics)
        notes.extend(f"{label}: {note}" for note in report.notes)
    statuses = {r.status for r in reports}
    if STATUS_FAIL in statuses:
        status = STATUS_FAIL
    elif STATUS_INCONCLUSIVE in statuses:
        status = STATUS_INCONCLUSIVE
    else:
        status = STATUS_PASS
    logger.info(f"Combined {len(reports)} reports into {study}: {status}")
    return StudyReport(study=study, parameters=parameters, metrics=metrics, status=status, notes=notes)
