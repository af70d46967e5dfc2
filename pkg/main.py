import argparse
import json
import logging
import re
import sys
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from dotenv import load_dotenv
from pydantic import ValidationError

from gpam.analysis import (
    STATUS_FAIL,
    STATUS_INCONCLUSIVE,
    STATUS_PASS,
    StudyReport,
    admissibility_study,
    combine_reports,
    comparison_bound_check,
    density_nondegeneracy,
    dt_refinement_check,
    duhamel_check,
    epsilon_convergence_study,
    feynman_kac_bound_check,
    gateaux_check,
    model_bounds_study,
    renorm_log_fit,
    run_ensemble,
    strong_maximum_principle_check,
    translation_consistency,
    weak_maximum_principle_check,
    white_noise_check,
)
from gpam.config import ConfigError, RunConfig, get_settings, load_run_config
from gpam.field_io import FieldFormatError, read_field, save_trajectory, write_field, write_report, write_table_csv
from gpam.fields import Field, GridError, KernelError, UnderResolvedError, heat_semigroup, smooth_bump
from gpam.models import ModelError, canonical_model, extend
from gpam.rs_group import check_identities
from gpam.rs_symbols import AlgebraError, contains_h, parse_symbol
from gpam.spde_solver import SolverError, solve_gpam, solve_tangent
from gpam.wavelets import WaveletBasis, WaveletError, holder_estimate, sobolev_norm, triple_product_scan

load_dotenv()

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_INCONCLUSIVE = 3
EXIT_CODES = {STATUS_PASS: EXIT_PASS, STATUS_FAIL: EXIT_FAIL, STATUS_INCONCLUSIVE: EXIT_INCONCLUSIVE}

# result each subcommand puts to the test, shown first in its --help
TESTED_RESULTS = {
    "algebra-check": "group laws of the structure group and of the renormalization group",
    "noise": "covariance identity of spatial white noise",
    "model": "admissibility and wavelet bounds of the canonical, renormalized, extended and translated models",
    "solve": "well-posedness of the renormalized equation at fixed eps",
    "tangent": "tangent (Malliavin derivative) equation, its Feynman-Kac bound and its Duhamel formula",
    "maxprinciple": "strong maximum principle of the homogeneous tangent flow, with the weak and comparison principles",
    "gateaux": "Gateaux differentiability of the solution in the noise direction and the translation identity",
    "converge": "convergence of the renormalized solutions as eps -> 0 and the logarithmic divergence of C_eps",
    "density": "absolute continuity of the law of u(t, x), witnessed by the tangent with h = 1",
    "wavelet": "wavelet characterization of Sobolev and Holder norms and decorrelation of wavelet products",
}

INPUT_ERRORS = (
    ConfigError,
    GridError,
    UnderResolvedError,
    WaveletError,
    KernelError,
    FieldFormatError,
    ValidationError,
    AlgebraError,
    ModelError,
    SolverError,
)

logger = logging.getLogger(__name__)


def setup_logging(level: str, log_file: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(), logging.FileHandler(log_file, encoding="utf-8")],
    )


def _index(text: str):
    try:
        i, j = (int(v) for v in text.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected 'i,j', got '{text}'") from e
    return i, j


class Context:
    """Resolved run configuration, output directory and worker count of one invocation."""

    def __init__(self, args: argparse.Namespace):
        settings = get_settings()
        overrides = {
            "g": getattr(args, "g", None),
            "epsilon": getattr(args, "eps", None),
            "seed": getattr(args, "seed", None),
            "t_end": getattr(args, "t_end", None),
            "dt": getattr(args, "dt", None),
            "grid_n": getattr(args, "n", None),
        }
        self.cfg: RunConfig = load_run_config(args.config, overrides)
        self.out = Path(args.out or self.cfg.output_dir or settings.out)
        self.jobs = args.jobs or settings.jobs
        self.grid = self.cfg.grid()

    def noise(self, seed: Optional[int] = None, epsilon: Optional[float] = None) -> Field:
        return self.cfg.noise(seed, epsilon)

    def h(self, epsilon: Optional[float] = None) -> Field:
        return self.cfg.h.build(self.grid, self.cfg.mollifier_for(epsilon))

    def basis(self) -> WaveletBasis:
        return WaveletBasis(self.grid, self.cfg.wavelet)


def emit(report: StudyReport, ctx: Context) -> int:
    write_report(ctx.out / f"{report.study}.json", report)
    write_table_csv(ctx.out / f"{report.study}_metrics.csv", [m.model_dump() for m in report.metrics])
    print(json.dumps({"study": report.study, "status": report.status, "report": str(ctx.out / f'{report.study}.json')}))
    return EXIT_CODES[report.status]


# Subcommands

def cmd_algebra_check(args, ctx: Context) -> int:
    results = check_identities(ctx.cfg.structure_params(), C=Fraction(str(args.C)), samples=args.samples)
    rows = [r.model_dump() for r in results]
    write_report(ctx.out / "algebra_check.json", rows)
    failed = [r for r in results if r.status != "pass"]
    symbols = {(r.structure, r.symbol) for r in results}
    print(json.dumps({"study": "algebra_check", "checks": len(results), "symbols": len(symbols), "failed": len(failed)}))
    return EXIT_FAIL if failed else EXIT_PASS


def cmd_noise(args, ctx: Context) -> int:
    if args.dump:
        path = write_field(ctx.out / f"noise_seed{ctx.cfg.seed}.gpf", ctx.noise())
        print(json.dumps({"field": str(path)}))
        return EXIT_PASS
    return emit(white_noise_check(ctx.grid, range(args.samples), jobs=ctx.jobs), ctx)


def cmd_model(args, ctx: Context) -> int:
    xi_eps = ctx.noise()
    C = ctx.cfg.resolve_C()
    if args.action == "dump":
        tau = parse_symbol(args.symbol)
        model = canonical_model(xi_eps, C=C)
        if contains_h(tau):
            model = extend(model, ctx.h())
        field = model.realize(tau, args.base_point)
        i, j = args.base_point
        stem = re.sub(r"[^A-Za-z0-9]+", "_", str(tau)).strip("_")
        path = write_field(ctx.out / f"model_{stem}_{i}_{j}.gpf", field)
        print(json.dumps({"symbol": str(tau), "structure": model.structure.value, "field": str(path)}))
        return EXIT_PASS
    if args.action == "check":
        return emit(admissibility_study(xi_eps, ctx.h(), C, samples=args.samples, seed=ctx.cfg.seed), ctx)
    return emit(model_bounds_study(xi_eps, ctx.h(), C, ctx.basis()), ctx)


def cmd_solve(args, ctx: Context) -> int:
    xi_eps = ctx.noise()
    pde = ctx.cfg.pde_config(xi_eps)
    if args.refine:
        return emit(dt_refinement_check(ctx.cfg.g, xi_eps, pde, jobs=ctx.jobs), ctx)
    traj = solve_gpam(pde, ctx.cfg.g, xi_eps)
    save_trajectory(ctx.out / "solve", traj, {"grid_n": ctx.grid.n, "dt": pde.step}, seed=ctx.cfg.seed)
    if args.check_heat:
        # g = 0 reduces to the heat flow of u0
        gap = (traj.final - heat_semigroup(pde.initial(), traj.t_final, pde.laplacian)).sup_norm()
        print(json.dumps({"heat_gap": gap}))
        if gap > 1e-10:
            return EXIT_FAIL
    print(json.dumps({"trajectory": str(ctx.out / "solve"), "frames": len(traj.frames), "blowup": traj.blowup}))
    return EXIT_INCONCLUSIVE if traj.blowup else EXIT_PASS


def cmd_tangent(args, ctx: Context) -> int:
    xi_eps = ctx.noise()
    pde = ctx.cfg.pde_config(xi_eps)
    h = ctx.h()
    if args.feynman_kac:
        seeds = ctx.cfg.seeds

        def bound(seed):
            noise = ctx.noise(seed)
            return feynman_kac_bound_check(ctx.cfg.g, noise, h, ctx.cfg.pde_config(noise))

        reports = run_ensemble(bound, seeds, ctx.jobs)
        return emit(combine_reports("feynman_kac", reports, [f"seed{s}" for s in seeds]), ctx)
    if args.duhamel:
        return emit(duhamel_check(ctx.cfg.g, xi_eps, h, pde), ctx)
    u = solve_gpam(pde, ctx.cfg.g, xi_eps)
    v = solve_tangent(pde, ctx.cfg.g, xi_eps, h, u)
    save_trajectory(ctx.out / "solve", u, {"grid_n": ctx.grid.n}, seed=ctx.cfg.seed)
    save_trajectory(ctx.out / "tangent", v, {"grid_n": ctx.grid.n, "h": ctx.cfg.h.model_dump()}, seed=ctx.cfg.seed)
    print(json.dumps({"trajectory": str(ctx.out / "tangent"), "frames": len(v.frames), "blowup": v.blowup}))
    return EXIT_INCONCLUSIVE if v.blowup else EXIT_PASS


def cmd_maxprinciple(args, ctx: Context) -> int:
    base = ctx.cfg.model_copy(update={"laplacian": "fd"})
    seeds = ctx.cfg.seeds
    xi_eps = ctx.noise()
    pde = base.pde_config(xi_eps)
    if args.weak:
        v0 = smooth_bump(ctx.grid, ctx.grid.point((ctx.grid.n // 2, ctx.grid.n // 2)), args.delta, 1.25 * args.delta)
        return emit(weak_maximum_principle_check(ctx.cfg.g, pde, v0, seeds, jobs=ctx.jobs), ctx)
    if args.comparison:
        return emit(comparison_bound_check(ctx.cfg.g, pde, args.M, seeds, jobs=ctx.jobs), ctx)

    def strong(seed):
        noise = ctx.noise(seed)
        return strong_maximum_principle_check(ctx.cfg.g, noise, base.pde_config(noise), delta=args.delta)

    reports = run_ensemble(strong, seeds, ctx.jobs)
    return emit(combine_reports("strong_maximum_principle", reports, [f"seed{s}" for s in seeds]), ctx)


def cmd_gateaux(args, ctx: Context) -> int:
    xi_eps = ctx.noise()
    pde = ctx.cfg.pde_config(xi_eps)
    h = ctx.h()
    report = gateaux_check(ctx.cfg.g, xi_eps, h, pde, t_probe=args.t_probe, x_probe=args.x_probe, jobs=ctx.jobs)
    if args.translation:
        shifted = translation_consistency(ctx.cfg.g, xi_eps, h, pde, seed=ctx.cfg.seed)
        report = combine_reports("gateaux", [report, shifted], ["derivative", "translation"])
    return emit(report, ctx)


def cmd_converge(args, ctx: Context) -> int:
    eps_list = ctx.cfg.eps_list
    finest = min(eps_list)
    pde = ctx.cfg.pde_config(ctx.noise(epsilon=finest), epsilon=finest, C=0.0)
    basis = ctx.basis() if args.model_norms else None
    study = epsilon_convergence_study(
        ctx.cfg.g, ctx.cfg.seed, eps_list, ctx.h(finest), pde,
        renormalize=not args.no_renorm, profile=ctx.cfg.mollifier, model_basis=basis, jobs=ctx.jobs,
    )
    if args.no_renorm:
        return emit(study, ctx)
    fit = renorm_log_fit(eps_list, ctx.grid, ctx.cfg.mollifier)
    return emit(combine_reports("epsilon_convergence", [study, fit], ["cauchy", "renorm_constant"]), ctx)


def cmd_density(args, ctx: Context) -> int:
    cfg = ctx.cfg.model_copy(update={"laplacian": "fd"})
    xi_eps = ctx.noise()
    pde = cfg.pde_config(xi_eps)
    return emit(density_nondegeneracy(cfg.g, pde.initial(), pde, cfg.seeds, x=args.x, profile=cfg.mollifier, jobs=ctx.jobs), ctx)


def cmd_wavelet(args, ctx: Context) -> int:
    basis = ctx.basis()
    if args.action == "scan":
        rows: List[Dict[str, Any]] = []
        for p in range(args.m, basis.depth):
            worst = triple_product_scan(basis, args.level, args.m, p, samples=args.samples, seed=ctx.cfg.seed)
            rows.append({"n": args.level, "m": args.m, "p": p, "samples": args.samples, "worst_ratio": worst})
        path = write_table_csv(ctx.out / "triple_product_scan.csv", rows)
        print(json.dumps({"table": str(path), "rows": len(rows)}))
        return EXIT_PASS
    field = read_field(args.input) if args.input else ctx.noise()
    basis = WaveletBasis(field.grid, ctx.cfg.wavelet)
    if args.action == "norm":
        value = sobolev_norm(field, args.beta, basis)
        print(json.dumps({"sobolev_norm": value, "beta": args.beta}))
    else:
        value = holder_estimate(field, args.alpha, basis)
        print(json.dumps({"holder_estimate": value, "alpha": args.alpha}))
    return EXIT_PASS


# Parser

def _described(command: str, details: str) -> str:
    return f"Tests the {TESTED_RESULTS[command]}. {details}"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run document")
    common.add_argument("--jobs", type=int, help="Worker threads (default: GPAM_JOBS or all cores)")
    common.add_argument("--out", help="Output directory (default: config output_dir, then GPAM_OUT)")
    common.add_argument("--log-level", help="Logging level (default: GPAM_LOG_LEVEL)")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--g", help="Nonlinearity: zero, one, sin, cos, rational, sin_plus")
    run.add_argument("--eps", type=float, help="Mollification scale")
    run.add_argument("--seed", type=int, help="Noise seed")
    run.add_argument("--t-end", type=float, help="Final time")
    run.add_argument("--dt", type=float, help="Time step (default: 0.1 / ||xi_eps||)")
    run.add_argument("--n", type=int, help="Grid points per side")

    parser = argparse.ArgumentParser(prog="gpam", description="Regularity-structure toolkit for the 2D generalized parabolic Anderson model")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("algebra-check", parents=[common, run], help="Exact identities of the structure group, translation and renormalization maps",
                       description=_described("algebra-check", "Checks that Gamma_f is unit upper triangular, that f -> Gamma_f is a group morphism, that the renormalization maps form a one-parameter group and commute with the structure group, and that translation commutes with renormalization."))
    p.add_argument("--C", type=str, default="2", help="Rational renormalization constant for the commutation checks")
    p.add_argument("--samples", type=int, default=100, help="Random character pairs for the group law")
    p.set_defaults(handler=cmd_algebra_check)

    p = sub.add_parser("noise", parents=[common, run], help="White-noise covariance check",
                       description=_described("noise", "Var <xi, phi> = ||phi||^2, orthogonal test functions give uncorrelated pairings and wavelet coefficients are standard normal."))
    p.add_argument("--samples", type=int, default=2000, help="Number of seeds")
    p.add_argument("--dump", action="store_true", help="Write the mollified noise of --seed instead")
    p.set_defaults(handler=cmd_noise)

    p = sub.add_parser("model", parents=[common, run], help="Concrete models: dump, admissibility, norms",
                       description=_described("model", "dump writes Pi_x tau; check verifies Pi_x Gamma_xy = Pi_y for canonical, renormalized, extended and translated models; norm measures wavelet level profiles of the model."))
    p.add_argument("action", choices=["dump", "check", "norm"])
    p.add_argument("--symbol", default="I(Xi)*Xi", help="Basis symbol for dump")
    p.add_argument("--base-point", type=_index, default=(0, 0), help="Base point i,j for dump")
    p.add_argument("--samples", type=int, default=1000, help="Random triples for check")
    p.set_defaults(handler=cmd_model)

    p = sub.add_parser("solve", parents=[common, run], help="Renormalized gPAM solution",
                       description=_described("solve", "Integrates du/dt = Lap u + g(u)(xi_eps - C g'(u)) and saves the dyadic frames."))
    p.add_argument("--refine", action="store_true", help="Report the halving ratio of the time discretization instead")
    p.add_argument("--check-heat", action="store_true", help="Compare the final frame with the heat flow of u0 (g = zero)")
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("tangent", parents=[common, run], help="Tangent (Malliavin derivative) equation",
                       description=_described("tangent", "Solves the renormalized tangent equation along u; --feynman-kac bounds |v| by log(T/(T-t)) sqrt(w) ||h||; --duhamel checks the superposition formula."))
    p.add_argument("--feynman-kac", action="store_true")
    p.add_argument("--duhamel", action="store_true")
    p.set_defaults(handler=cmd_tangent)

    p = sub.add_parser("maxprinciple", parents=[common, run], help="Maximum principles of the tangent flow",
                       description=_described("maxprinciple", "Strong: positivity spreads from a bump to the whole torus, with the heat-flow lower bound 1/4 on growing balls. --weak: nonnegative data stay nonnegative. --comparison: g(+-M) = 0 keeps |u| <= M."))
    p.add_argument("--weak", action="store_true")
    p.add_argument("--comparison", action="store_true")
    p.add_argument("--delta", type=float, default=0.5, help="Ball radius of the initial bump")
    p.add_argument("--M", type=float, default=3.141592653589793, help="Comparison level")
    p.set_defaults(handler=cmd_maxprinciple)

    p = sub.add_parser("gateaux", parents=[common, run], help="Gateaux differentiability in the noise direction",
                       description=_described("gateaux", "Finite differences of the shifted solution converge to the tangent solution at second order; --translation adds the model and solver identities of the noise shift."))
    p.add_argument("--translation", action="store_true")
    p.add_argument("--t-probe", type=float, default=0.25)
    p.add_argument("--x-probe", type=_index, default=None)
    p.set_defaults(handler=cmd_gateaux)

    p = sub.add_parser("converge", parents=[common, run], help="Convergence as eps -> 0",
                       description=_described("converge", "Coupled-eps Cauchy study of the renormalized solutions (pairwise decrease and overall contraction) plus the fit of C_eps against log(1/eps) over eps <= 1/4; --no-renorm sets C = 0 and must fail."))
    p.add_argument("--no-renorm", action="store_true")
    p.add_argument("--model-norms", action="store_true", help="Record model norms of the renormalized I(Xi)Xi")
    p.set_defaults(handler=cmd_converge)

    p = sub.add_parser("density", parents=[common, run], help="Nondegeneracy of the law of u(t, x)",
                       description=_described("density", "v^{h=1}(t, x) > 0 on every seed and the law of u(t, x) has no atom."))
    p.add_argument("--x", type=_index, default=None, help="Grid point i,j")
    p.set_defaults(handler=cmd_density)

    p = sub.add_parser("wavelet", parents=[common, run], help="Wavelet norms and decorrelation scan",
                       description=_described("wavelet", "norm: Sobolev norm from wavelet coefficients; holder: Holder estimate; scan: triple products of wavelets across levels."))
    p.add_argument("action", choices=["norm", "holder", "scan"])
    p.add_argument("--input", help="Field file (default: the mollified noise)")
    p.add_argument("--beta", type=float, default=-1.0)
    p.add_argument("--alpha", type=float, default=-1.05)
    p.add_argument("--level", type=int, default=0, help="Scan level n")
    p.add_argument("--m", type=int, default=0, help="Scan level m")
    p.add_argument("--samples", type=int, default=64)
    p.set_defaults(handler=cmd_wavelet)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    setup_logging(args.log_level or settings.log_level, settings.log_file)
    try:
        ctx = Context(args)
        ctx.out.mkdir(parents=True, exist_ok=True)
        logger.info(f"Running {args.command} (n={ctx.grid.n}, g={ctx.cfg.g}, jobs={ctx.jobs})")
        return args.handler(args, ctx)
    except INPUT_ERRORS as e:
        logger.error(f"{args.command}: {type(e).__name__}: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
