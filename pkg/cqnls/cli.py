from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, TypeVar

from dotenv import load_dotenv

from cqnls.config import RunConfig, dump_config, load_config
from cqnls.constants import SharpConstants, inequality_margins, sharp_constants
from cqnls.dynamics import propagate, stability_experiment
from cqnls.errors import CQNLSError, RegimeError, StageError
from cqnls.functionals import functionals, gradient, sigma_norm
from cqnls.grid import ProblemParams
from cqnls.minimize import (
    Classification,
    SolverResult,
    ball_estimates,
    find_negative_dilation,
    fit_multipliers,
    positivity_threshold,
    solve_global_min,
    solve_local_min,
    thresholds,
)
from cqnls.mountain_pass import (
    barrier_margin,
    bracket_l,
    crossing_index,
    fallback_path,
    h_profile,
    initial_path,
    refine_saddle,
    saddle_checks,
    string_relax,
)
from cqnls.plots import render_plots
from cqnls.seeds import make_rng
from cqnls.storage import (
    FIELD_SUFFIX,
    format_value,
    read_field,
    read_record,
    write_csv,
    write_field,
    write_record,
    write_snapshots,
)

logger = logging.getLogger(__name__)

T = TypeVar("T")

LOG_LEVEL_ENV = "CQNLS_LOG_LEVEL"
CONSTANTS_FILE = "constants.txt"
SUMMARY_FILE = "summary.txt"
PATH_COLUMNS = ["node_index", "t", "tau", "energy", "sigma_dot", "mass_err", "angmom_err"]
TRAJECTORY_COLUMNS = ["t", "mass", "energy", "angmom", "dist"]
SOLUTION_NAMES = {"local": "u1", "global": "u2", "saddle": "u3"}

MASS_DRIFT_LIMIT = 1e-10
ENERGY_DRIFT_LIMIT = 1e-6
ANGMOM_DRIFT_LIMIT = 1e-6
EXCURSION_FACTOR = 10.0
SADDLE_LEVEL_RTOL = 1e-4


@dataclass
class Report:
    values: dict[str, Any] = field(default_factory=dict)
    checks: dict[str, bool] = field(default_factory=dict)

    def check(self, name: str, ok: bool) -> bool:
        self.checks[name] = bool(ok)
        if not ok:
            logger.error("check %s failed", name)
        return bool(ok)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def as_record(self) -> dict[str, Any]:
        record = dict(self.values)
        record.update({f"check.{name}": "pass" if ok else "fail" for name, ok in self.checks.items()})
        record["status"] = "pass" if self.passed else "fail"
        return record


def _stage(name: str, fn: Callable[..., T], *args: Any, **kwargs: Any) -> T:
    # Label any solver failure with the pipeline stage it came from.
    logger.info("stage %s", name)
    try:
        return fn(*args, **kwargs)
    except CQNLSError as error:
        raise StageError(name, error) from error


def _output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_constants(output_dir: Path, recompute: bool = False) -> tuple[SharpConstants, bool]:
    cache = output_dir / CONSTANTS_FILE
    if cache.exists() and not recompute:
        try:
            record = read_record(cache)
            consts = SharpConstants(float(record["S4"]), float(record["Ssob"]), float(record["U4_mass"]))
            logger.info("sharp constants read from %s", cache)
            return consts, True
        except (KeyError, ValueError) as error:
            logger.warning("ignoring unreadable constants cache %s: %s", cache, error)
    consts = sharp_constants()
    write_record(cache, {"S4": consts.S4, "Ssob": consts.Ssob, "U4_mass": consts.U4_mass})
    return consts, False


def solver_record(result: SolverResult, p: ProblemParams) -> dict[str, Any]:
    report = result.report
    record: dict[str, Any] = {
        "classification": result.classification,
        "lambda": result.lam,
        "Omega": result.Omega,
        "kkt_residual": result.kkt_residual,
        "iterations": result.iterations,
        "mass_err": report.mass - p.m,
        "angmom_err": report.angmom - p.l,
    }
    record.update(report.as_dict())
    return record


def write_solution(output_dir: Path, name: str, result: SolverResult, p: ProblemParams) -> Path:
    path = write_field(output_dir / f"{name}{FIELD_SUFFIX}", result.field, p)
    write_record(path.with_suffix(".txt"), solver_record(result, p))
    return path


def load_solution(path: Path) -> tuple[SolverResult, ProblemParams]:
    # Rebuild a SolverResult from a field file, refitting (lambda, Omega) on the stored field
    u, p = read_field(path)
    sidecar = path.with_suffix(".txt")
    classification = Classification.UNCONVERGED
    if sidecar.exists():
        classification = Classification(read_record(sidecar).get("classification", "unconverged"))
    lam, Omega, kkt = fit_multipliers(u, gradient(u, p))
    result = SolverResult(
        field=u,
        lam=lam,
        Omega=Omega,
        report=functionals(u, p),
        kkt_residual=kkt,
        iterations=0,
        classification=classification,
    )
    return result, p


def _pohozaev_ok(result: SolverResult, p: ProblemParams, cfg: RunConfig) -> bool:
    return abs(result.report.pohozaev) <= 10.0 * cfg.minimizer.grad_tol * sigma_norm(result.field, p)


def _solution_checks(report: Report, name: str, result: SolverResult, p: ProblemParams, cfg: RunConfig) -> None:
    tol = cfg.minimizer.constraint_tol
    report.values[f"{name}.energy"] = result.report.energy
    report.values[f"{name}.sigma_dot"] = result.report.sigma_dot
    report.values[f"{name}.kkt_residual"] = result.kkt_residual
    report.values[f"{name}.pohozaev"] = result.report.pohozaev
    report.check(f"{name}.converged", result.converged)
    report.check(
        f"{name}.constraints",
        abs(result.report.mass - p.m) <= tol and abs(result.report.angmom - p.l) <= tol,
    )
    report.check(f"{name}.pohozaev", _pohozaev_ok(result, p, cfg))


def cmd_constants(cfg: RunConfig, recompute: bool = False) -> Report:
    out = _output_dir(cfg)
    consts, cached = _stage("constants", load_constants, out, recompute)
    report = Report(values={"S4": consts.S4, "Ssob": consts.Ssob, "U4_mass": consts.U4_mass, "cached": cached})
    report.check("S4_mass_identity", math.isclose(consts.S4 * consts.U4_mass, 2.0, rel_tol=1e-12))
    return report


def cmd_thresholds(cfg: RunConfig) -> Report:
    p = cfg.params
    a, b = cfg.minimizer.ball_a, cfg.minimizer.ball_b
    consts, _ = load_constants(_output_dir(cfg))
    limits = thresholds(p.rho, a, b, consts)
    ball = ball_estimates(p.rho, a, b, p.m, p.mu, consts)
    margin = barrier_margin(p.rho, p.m, p.mu, consts)
    report = Report(
        values={
            "m_star": limits.m_star,
            "mu_star": limits.mu_star,
            "admits": limits.admits(p),
            "annulus_lower": ball.annulus_lower,
            "inner_upper": ball.inner_upper,
            "separated": ball.separated,
            "epsilon_bar": margin.epsilon_bar,
            "endpoint_ceiling": margin.endpoint_ceiling,
            "gamma_lower_bound": margin.gamma_lower_bound,
        }
    )
    if not limits.admits(p):
        logger.warning("m=%g, mu=%g lie outside the thresholds (m*=%.4g, mu*=%.4g)", p.m, p.mu, limits.m_star, limits.mu_star)
    balance = limits.combined(limits.m_star, limits.mu_star, consts)
    report.check("threshold_balance", math.isclose(balance, (a - b) * p.rho, rel_tol=1e-10))
    return report


def cmd_three_solutions(cfg: RunConfig) -> Report:
    out = _output_dir(cfg)
    dump_config(cfg, out / "config.txt")
    p = cfg.params
    consts, _ = _stage("constants", load_constants, out)
    limits = thresholds(p.rho, cfg.minimizer.ball_a, cfg.minimizer.ball_b, consts)
    if not limits.admits(p):
        logger.warning("running outside the ball-separation thresholds; orderings are checked, not guaranteed")
    report = Report(values={"m_star": limits.m_star, "mu_star": limits.mu_star, "admits": limits.admits(p)})

    u1 = _stage("solve_local_min", solve_local_min, cfg.grid, p, cfg.minimizer, consts)
    write_solution(out, "u1", u1, p)
    tau, _ = _stage("find_negative_dilation", find_negative_dilation, u1.field, p, cfg.minimizer)
    report.values["negative_dilation_tau"] = tau
    u2 = _stage("solve_global_min", solve_global_min, cfg.grid, p, cfg.minimizer, local=u1, consts=consts)
    write_solution(out, "u2", u2, p)

    dilation_path = True
    try:
        l_star, l_upper, l1 = _stage("bracket_l", bracket_l, u2.field, p)
    except StageError as error:
        if not isinstance(error.cause, RegimeError):
            raise
        logger.warning("%s; falling back to the segment path", error)
        report.values["omega_gap"] = error.cause.diagnostics.get("omega_gap", math.nan)
        dilation_path = False

    if dilation_path:
        report.values.update({"l_star": l_star, "l_upper": l_upper, "l1": l1})
        level = 0.5 * p.rho
        report.check(
            "bracket_roots",
            max(abs(h_profile(u2.field, l, p) - level) for l in (l_star, l_upper)) <= 1e-8 * max(1.0, level),
        )
        path = _stage("initial_path", initial_path, u2.field, l1, cfg.path, p, l_star, l_upper)
        report.check("path_crossing", crossing_index(path, p.rho) is not None)
        positivity = _stage("positivity_threshold", positivity_threshold, u2.field, l1, p)
        report.values["dilated_endpoint_energy"] = positivity.energy
    else:
        path = _stage("fallback_path", fallback_path, u1.field, u2.field, cfg.path, p)
    report.values["path"] = "dilation" if dilation_path else "segment"

    path = _stage("string_relax", string_relax, path, p, cfg.path, cfg.minimizer)
    write_csv(out / "path.csv", path.rows(p), PATH_COLUMNS)
    report.values["gamma"] = path.gamma
    margin = barrier_margin(p.rho, p.m, p.mu, consts)
    report.values["gamma_lower_bound"] = margin.gamma_lower_bound
    report.values["epsilon_bar"] = margin.epsilon_bar
    gamma_checked = dilation_path and limits.admits(p)
    report.values["gamma_bound_checked"] = gamma_checked
    if gamma_checked:
        report.check("gamma_lower_bound", path.gamma >= margin.gamma_lower_bound)
    else:
        logger.warning(
            "gamma lower-bound check skipped (%s): gamma=%.6g, bound=%.6g",
            "outside the thresholds" if dilation_path else "segment path",
            path.gamma,
            margin.gamma_lower_bound,
        )

    u3 = _stage("refine_saddle", refine_saddle, path, p, cfg.minimizer)
    write_solution(out, "u3", u3, p)

    for name, result in (("u1", u1), ("u2", u2), ("u3", u3)):
        _solution_checks(report, name, result, p, cfg)
    orderings = saddle_checks(u3, path.gamma, u1, u2)
    report.values["saddle_level_gap"] = orderings.level_gap
    report.check("saddle_level", orderings.level_gap <= SADDLE_LEVEL_RTOL)
    report.check("energy_order", orderings.energy_order)
    report.check("norm_order", orderings.norm_order)
    report.check("u1_interior", u1.report.sigma_dot < cfg.minimizer.ball_a * p.rho and u1.report.energy > 0)
    report.check("u2_exterior", u2.report.sigma_dot > p.rho and u2.report.energy < 0)

    write_record(out / SUMMARY_FILE, report.as_record())
    render_plots(out)
    return report


def cmd_verify(field_path: str | Path, cfg: RunConfig) -> Report:
    u, p = read_field(field_path)
    if p != cfg.params:
        logger.info("verifying against the parameters stored in %s", field_path)
    consts, _ = load_constants(_output_dir(cfg))
    rep = functionals(u, p)
    lam, Omega, kkt = fit_multipliers(u, gradient(u, p))
    margins = inequality_margins(rep, consts)
    norm = sigma_norm(u, p)

    report = Report(values=rep.as_dict())
    report.values.update(
        {
            "lambda": lam,
            "Omega": Omega,
            "kkt_residual": kkt,
            "mass_err": rep.mass - p.m,
            "angmom_err": rep.angmom - p.l,
            "gn_margin": margins.gn,
            "sobolev_margin": margins.sobolev,
        }
    )
    tol = cfg.minimizer.constraint_tol
    report.check("constraints", abs(rep.mass - p.m) <= tol and abs(rep.angmom - p.l) <= tol)
    report.check("kkt", kkt <= cfg.minimizer.grad_tol)
    report.check("pohozaev", abs(rep.pohozaev) <= 10.0 * cfg.minimizer.grad_tol * norm)
    report.check("inequalities", margins.holds)
    return report


def _trajectory_checks(report: Report, prefix: str, stats: Any) -> None:
    report.values[f"{prefix}mass_drift"] = stats.mass_drift
    report.values[f"{prefix}energy_drift"] = stats.energy_drift
    report.values[f"{prefix}angmom_drift"] = stats.angmom_drift
    report.values[f"{prefix}dt_used"] = stats.dt_used
    report.check(f"{prefix}mass_drift", stats.mass_drift <= MASS_DRIFT_LIMIT)
    report.check(f"{prefix}energy_drift", stats.energy_drift <= ENERGY_DRIFT_LIMIT)
    report.check(f"{prefix}angmom_drift", stats.angmom_drift <= ANGMOM_DRIFT_LIMIT)


def cmd_propagate(cfg: RunConfig, field_path: str | Path) -> Report:
    out = _output_dir(cfg)
    u0, p = read_field(field_path)
    stats = _stage("propagate", propagate, u0, p, cfg.propagator)
    write_csv(out / "trajectory.csv", stats.rows(), TRAJECTORY_COLUMNS)
    if stats.snapshots:
        write_snapshots(out / "snapshots", stats.snapshots, p)
    report = Report(values={"t_final": stats.times[-1], "records": len(stats.times)})
    _trajectory_checks(report, "", stats)
    write_record(out / "propagate_summary.txt", report.as_record())
    render_plots(out)
    return report


def cmd_stability(cfg: RunConfig, which: str, eps: float | Sequence[float], solutions_dir: str | Path | None = None) -> Report:
    if which not in ("local", "global"):
        raise ValueError(f"which must be 'local' or 'global', got {which!r}")
    out = _output_dir(cfg)
    ladder = [float(eps)] if isinstance(eps, (int, float)) else [float(value) for value in eps]
    source = Path(solutions_dir or out) / f"{SOLUTION_NAMES[which]}{FIELD_SUFFIX}"
    u_star, p = load_solution(source)

    report = Report(values={"which": which, "Omega": u_star.Omega, "lambda": u_star.lam})
    excursions = []
    for value in ladder:
        # Same seed for every eps, so the ladder rescales one perturbation direction.
        stats = _stage("stability_experiment", stability_experiment, u_star, value, p, cfg.propagator, make_rng(cfg.seed))
        write_csv(out / f"stability_{which}_eps{value:g}_trajectory.csv", stats.rows(), TRAJECTORY_COLUMNS)
        prefix = f"eps{value:g}."
        report.values[f"{prefix}max_excursion"] = stats.max_excursion
        _trajectory_checks(report, prefix, stats)
        report.check(f"{prefix}excursion_bounded", stats.max_excursion <= EXCURSION_FACTOR * value)
        excursions.append((value, stats.max_excursion))

    if len(excursions) > 1:
        ordered = [excursion for _, excursion in sorted(excursions)]
        report.check("excursion_monotone", all(a <= b for a, b in zip(ordered, ordered[1:])))
    write_record(out / f"stability_{which}_summary.txt", report.as_record())
    render_plots(out)
    return report


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="RNG seed (overrides seed)")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="repeatable")
    common.add_argument("--log-level", default=None, help=f"logging level (default: ${LOG_LEVEL_ENV} or INFO)")

    parser = argparse.ArgumentParser(prog="cqnls", description="Cubic-quintic NLS three-solution suite")
    commands = parser.add_subparsers(dest="command", required=True)

    constants = commands.add_parser("constants", parents=[common], help="sharp GN and Sobolev constants")
    constants.add_argument("--recompute", action="store_true", help="ignore the cached constants file")
    constants.set_defaults(handler=lambda cfg, args: cmd_constants(cfg, recompute=args.recompute))

    three = commands.add_parser("three-solutions", parents=[common], help="local min, global min and saddle")
    three.set_defaults(handler=lambda cfg, args: cmd_three_solutions(cfg))

    stability = commands.add_parser("stability", parents=[common], help="orbital-stability experiment")
    stability.add_argument("--which", choices=("local", "global"), default="global")
    stability.add_argument("--eps", type=float, nargs="+", default=[1e-2])
    stability.add_argument("--solutions", help="directory holding u1/u2 (default: the output directory)")
    stability.set_defaults(handler=lambda cfg, args: cmd_stability(cfg, args.which, args.eps, args.solutions))

    prop = commands.add_parser("propagate", parents=[common], help="propagate a stored field")
    prop.add_argument("field", help="field file (.cqf)")
    prop.set_defaults(handler=lambda cfg, args: cmd_propagate(cfg, args.field))

    verify = commands.add_parser("verify", parents=[common], help="residual gates for a stored field")
    verify.add_argument("field", help="field file (.cqf)")
    verify.set_defaults(handler=lambda cfg, args: cmd_verify(args.field, cfg))

    limits = commands.add_parser("thresholds", parents=[common], help="ball-separation thresholds")
    limits.set_defaults(handler=lambda cfg, args: cmd_thresholds(cfg))
    return parser


def configure_logging(level: str | None = None) -> None:
    load_dotenv(dotenv_path=".env")
    name = (level or os.getenv(LOG_LEVEL_ENV) or "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        cfg = load_config(args.config, args.override, output_dir=args.out, seed=args.seed)
        report = args.handler(cfg, args)
    except StageError as error:
        logger.error("%s", error)
        return 1
    except (CQNLSError, ValueError, FileNotFoundError) as error:
        logger.error("%s: %s", type(error).__name__, error)
        return 1

    for key, value in report.as_record().items():
        print(f"{key}={format_value(value)}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
