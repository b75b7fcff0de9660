from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import optimize

from cqnls.constants import SharpConstants, sharp_constants
from cqnls.errors import NegativeDilationError, ProjectionError, ResolutionError
from cqnls.functionals import (
    FunctionalReport,
    apply_Lz,
    check_boundary_residual,
    dilate,
    functionals,
    gradient,
    trap_preconditioner,
)
from cqnls.grid import Field, GridSpec, ProblemParams, l2_norm, real_inner, trap_potential
from cqnls.seeds import make_seed

logger = logging.getLogger(__name__)

PROJECTION_MAX_ITERS = 50
# Relative angular-momentum variance below which u counts as an L_z eigenfunction.
EIGENFUNCTION_TOL = 1e-10
MAX_SHOTS = 20
MAX_BALL_EXITS = 30
STEP_GROWTH_CAP = 4.0


class BallMode(str, Enum):
    INTERIOR_TRUST = "interior-trust"
    UNCONSTRAINED = "unconstrained"


class Classification(str, Enum):
    LOCAL_MIN = "local_min"
    GLOBAL_MIN = "global_min"
    SADDLE = "saddle"
    UNCONVERGED = "unconverged"


@dataclass(frozen=True)
class MinimizerConfig:
    step0: float = 0.5
    max_iters: int = 3000
    grad_tol: float = 1e-6
    constraint_tol: float = 1e-8
    omega_shoot_tol: float = 1e-8
    backtrack_factor: float = 0.5
    armijo_tol: float = 1e-3
    ball_mode: BallMode = BallMode.INTERIOR_TRUST
    precond_shift: float = 1.0
    ball_a: float = 0.75
    ball_b: float = 0.5
    dilation_ratio: float = 1.25
    dilation_steps: int = 24

    def __post_init__(self) -> None:
        object.__setattr__(self, "ball_mode", BallMode(self.ball_mode))
        positive = ("step0", "grad_tol", "constraint_tol", "omega_shoot_tol")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.max_iters < 1 or self.dilation_steps < 1:
            raise ValueError("max_iters and dilation_steps must be positive integers")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError(f"backtrack_factor must lie in (0, 1), got {self.backtrack_factor!r}")
        if not 0 <= self.armijo_tol < 0.5:
            raise ValueError(f"armijo_tol must lie in [0, 0.5), got {self.armijo_tol!r}")
        if self.precond_shift < 0:
            raise ValueError("precond_shift must be non-negative")
        if not 0 < self.ball_b < self.ball_a < 1:
            raise ValueError(f"need 0 < ball_b < ball_a < 1, got ({self.ball_a}, {self.ball_b})")
        if not self.dilation_ratio > 1:
            raise ValueError("dilation_ratio must exceed 1")


@dataclass(frozen=True)
class SolverResult:
    field: Field
    lam: float
    Omega: float
    report: FunctionalReport
    kkt_residual: float
    iterations: int
    classification: Classification
    energy_history: tuple[float, ...] = ()

    @property
    def converged(self) -> bool:
        return self.classification is not Classification.UNCONVERGED

    def relabel(self, classification: Classification) -> SolverResult:
        return replace(self, classification=classification)


@dataclass(frozen=True)
class Thresholds:
    m_star: float
    mu_star: float
    a: float
    b: float
    rho: float

    def combined(self, m: float, mu: float, consts: SharpConstants) -> float:
        # Left side of the ball-separation inequality; must stay below (a - b) rho.
        return 0.5 * consts.S4 * math.sqrt(m) * self.rho**1.5 + 2.0 * mu * consts.Ssob / 3.0 * (self.b * self.rho) ** 3

    def admits(self, p: ProblemParams) -> bool:
        return p.m < self.m_star and p.mu < self.mu_star


@dataclass(frozen=True)
class BallEstimates:
    annulus_lower: float
    inner_upper: float

    @property
    def separated(self) -> bool:
        return self.annulus_lower > self.inner_upper


@dataclass(frozen=True)
class PositivityReport:
    energy: float
    positive: bool
    largest_positive_mass: float | None
    ladder: tuple[tuple[float, float], ...] = field(default_factory=tuple)


def _gram_degenerate(mass: float, angmom: float, lz_norm_sq: float) -> bool:
    if mass <= 0:
        return True
    variance = lz_norm_sq - angmom**2 / mass
    return variance <= EIGENFUNCTION_TOL * mass


def project_constraints(u: Field, m: float, l: float, tol: float = 1e-12) -> Field:
    # Return (1+s) u + t L_z u with mass m and angular momentum l
    w = apply_Lz(u)
    mass = real_inner(u, u)
    if mass <= 0:
        raise ProjectionError("cannot project the zero field", m=m, l=l)
    angmom = real_inner(u, w)
    scale = tol * max(1.0, abs(m))
    if abs(mass - m) <= scale and abs(angmom - l) <= scale:
        return u

    lz_sq = real_inner(w, w)
    if _gram_degenerate(mass, angmom, lz_sq):
        return u * math.sqrt(m / mass)

    lz_w = real_inner(w, apply_Lz(w))

    def residual(a: float, t: float) -> np.ndarray:
        return np.array(
            [
                a * a * mass + 2.0 * a * t * angmom + t * t * lz_sq - m,
                a * a * angmom + 2.0 * a * t * lz_sq + t * t * lz_w - l,
            ]
        )

    a, t = math.sqrt(m / mass), 0.0
    current = residual(a, t)
    for iteration in range(PROJECTION_MAX_ITERS):
        if np.all(np.abs(current) <= scale):
            logger.debug("projection converged in %d Newton steps (s=%.3e, t=%.3e)", iteration, a - 1.0, t)
            return u * a + w * t
        jacobian = 2.0 * np.array(
            [[a * mass + t * angmom, a * angmom + t * lz_sq], [a * angmom + t * lz_sq, a * lz_sq + t * lz_w]]
        )
        try:
            delta = np.linalg.solve(jacobian, -current)
        except np.linalg.LinAlgError:
            return u * math.sqrt(m / mass)
        damping = 1.0
        while damping > 1e-4:
            trial = residual(a + damping * delta[0], t + damping * delta[1])
            if np.linalg.norm(trial) < np.linalg.norm(current):
                break
            damping *= 0.5
        a, t = a + damping * delta[0], t + damping * delta[1]
        current = trial
    raise ProjectionError(
        "constraint projection did not converge",
        iterations=PROJECTION_MAX_ITERS,
        mass_error=float(current[0]),
        angmom_error=float(current[1]),
    )


def fit_multipliers(u: Field, g: Field, w: Field | None = None) -> tuple[float, float, float]:
    # Least-squares (lambda, Omega) in g ~ lambda u + Omega L_z u, with the residual norm
    w = apply_Lz(u) if w is None else w
    mass = real_inner(u, u)
    if mass <= 0:
        return 0.0, 0.0, l2_norm(g)
    angmom = real_inner(u, w)
    lz_sq = real_inner(w, w)
    ug = real_inner(u, g)
    if _gram_degenerate(mass, angmom, lz_sq):
        lam, Omega = ug / mass, 0.0
    else:
        lam, Omega = np.linalg.solve([[mass, angmom], [angmom, lz_sq]], [ug, real_inner(w, g)])
    residual = g - u * lam - w * Omega
    return float(lam), float(Omega), l2_norm(residual)


def coercivity_floor(report: FunctionalReport, p: ProblemParams) -> float:
    # sigma_dot + (mu/3) quartic^2 / m - quartic/2, a lower bound on the energy
    if report.mass <= 0:
        return report.sigma_dot
    return report.sigma_dot + p.mu / 3.0 * report.quartic**2 / report.mass - 0.5 * report.quartic


def _precondition(u: Field, shift: float, potential: np.ndarray) -> Field:
    return trap_preconditioner(u, shift, potential) if shift > 0 else u


def tangent_direction(
    u: Field,
    w: Field,
    g: Field,
    Omega: float,
    shift: float,
    hold_angmom: bool,
    potential: np.ndarray,
) -> Field:
    # Preconditioned gradient made tangent to the constraint set in the same metric.
    if not hold_angmom:
        pg = _precondition(g - w * Omega, shift, potential)
        pu = _precondition(u, shift, potential)
        return pg - pu * (real_inner(u, pg) / real_inner(u, pu))
    pg = _precondition(g, shift, potential)
    pu = _precondition(u, shift, potential)
    pw = _precondition(w, shift, potential)
    gram = np.array([[real_inner(u, pu), real_inner(u, pw)], [real_inner(w, pu), real_inner(w, pw)]])
    rhs = np.array([real_inner(u, pg), real_inner(w, pg)])
    coeffs = np.linalg.lstsq(gram, rhs, rcond=1e-10)[0]
    return pg - pu * coeffs[0] - pw * coeffs[1]


def _retract(u: Field, p: ProblemParams, hold_angmom: bool) -> Field:
    if hold_angmom:
        return project_constraints(u, p.m, p.l)
    return u * math.sqrt(p.m / real_inner(u, u))


def _stationarity(u: Field, g: Field, w: Field, Omega: float, hold_angmom: bool) -> tuple[float, float, float]:
    if hold_angmom:
        return fit_multipliers(u, g, w)
    shifted = g - w * Omega
    lam = real_inner(u, shifted) / real_inner(u, u)
    return lam, Omega, l2_norm(shifted - u * lam)


def gradient_flow(
    u0: Field,
    p: ProblemParams,
    Omega: float,
    cfg: MinimizerConfig,
    *,
    hold_angmom: bool = True,
    ball_radius: float | None = None,
    label: Classification = Classification.LOCAL_MIN,
    observer: Callable[[int, Field, FunctionalReport], None] | None = None,
) -> SolverResult:
    # hold_angmom=False minimises E - Omega*L on the mass sphere only; L is left to the shooting loop.
    u = _retract(u0, p, hold_angmom)
    report = functionals(u, p)
    potential = trap_potential(u.grid, p.omega, p.k)

    def objective(rep: FunctionalReport) -> float:
        return rep.energy if hold_angmom else rep.energy - Omega * rep.angmom

    value = objective(report)
    history = [value]
    step = cfg.step0
    min_step = cfg.step0 * 1e-8
    lam, fitted_Omega, kkt = 0.0, Omega, math.inf
    projection_stalled = False
    ball_exits = 0
    iterations = 0

    for iterations in range(cfg.max_iters + 1):
        g = gradient(u, p)
        w = apply_Lz(u)
        lam, fitted_Omega, kkt = _stationarity(u, g, w, Omega, hold_angmom)
        if observer is not None:
            observer(iterations, u, report)
        if kkt <= cfg.grad_tol or iterations == cfg.max_iters:
            break
        direction = tangent_direction(u, w, g, Omega, cfg.precond_shift, hold_angmom, potential)
        # dE[-s d] = -2 s Re<E', d>; Armijo asks for a fixed share of it.
        slope = 2.0 * real_inner(g if hold_angmom else g - w * Omega, direction)

        accepted = False
        projection_stalled = False
        while step >= min_step:
            try:
                trial = _retract(u - direction * step, p, hold_angmom)
            except ProjectionError:
                projection_stalled = True
                step *= cfg.backtrack_factor
                continue
            projection_stalled = False
            trial_report = functionals(trial, p)
            if ball_radius is not None and trial_report.sigma_dot > ball_radius:
                ball_exits += 1
                step *= 0.5
                if ball_exits > MAX_BALL_EXITS:
                    break
                continue
            if objective(trial_report) <= value - cfg.armijo_tol * step * slope:
                accepted = True
                break
            step *= cfg.backtrack_factor

        if not accepted:
            if ball_exits > MAX_BALL_EXITS:
                logger.warning("iterate keeps leaving the ball of radius %.4g; giving up", ball_radius)
            elif projection_stalled and hold_angmom:
                logger.warning("constraint projection stalled at iteration %d; switching to rotation shooting", iterations)
                return solve_with_rotation_shooting(u, p, cfg, label=label, Omega0=fitted_Omega)
            else:
                logger.debug("line search stalled at iteration %d with kkt %.3e", iterations, kkt)
            break

        u, report = trial, trial_report
        value = objective(report)
        history.append(value)
        ball_exits = 0
        step = min(step / cfg.backtrack_factor, STEP_GROWTH_CAP * cfg.step0)
        if iterations % 100 == 0:
            logger.debug("flow it=%d E=%.12g kkt=%.3e step=%.3e", iterations, report.energy, kkt, step)

    feasible = abs(report.mass - p.m) <= cfg.constraint_tol and abs(report.angmom - p.l) <= cfg.constraint_tol
    classification = label if (kkt <= cfg.grad_tol and feasible) else Classification.UNCONVERGED
    if classification is Classification.UNCONVERGED and hold_angmom:
        logger.warning(
            "gradient flow unconverged after %d iterations: kkt=%.3e, |M-m|=%.2e, |L-l|=%.2e",
            iterations,
            kkt,
            abs(report.mass - p.m),
            abs(report.angmom - p.l),
        )
        check_boundary_residual(g - u * lam - w * fitted_Omega, label="gradient flow")
    else:
        logger.info("gradient flow: %d iterations, E=%.12g, kkt=%.3e", iterations, report.energy, kkt)
    return SolverResult(
        field=u,
        lam=lam,
        Omega=fitted_Omega,
        report=report,
        kkt_residual=kkt,
        iterations=iterations,
        classification=classification,
        energy_history=tuple(history),
    )


def solve_with_rotation_shooting(
    u0: Field,
    p: ProblemParams,
    cfg: MinimizerConfig,
    *,
    label: Classification = Classification.LOCAL_MIN,
    Omega0: float = 0.0,
) -> SolverResult:
    # Secant iteration on Omega over fixed-rotation flows until L(u) = l

    def shoot(Omega: float, start: Field) -> SolverResult:
        return gradient_flow(start, p, Omega, cfg, hold_angmom=False, label=label)

    omega_prev = Omega0
    prev = shoot(omega_prev, u0)
    miss_prev = prev.report.angmom - p.l
    omega_curr = Omega0 + (0.1 if miss_prev < 0 else -0.1)
    curr = shoot(omega_curr, prev.field)
    miss_curr = curr.report.angmom - p.l

    for shot in range(MAX_SHOTS):
        logger.debug("shot %d: Omega=%.10g L-l=%.3e", shot, omega_curr, miss_curr)
        if abs(miss_curr) <= cfg.constraint_tol or miss_curr == miss_prev:
            break
        omega_next = omega_curr - miss_curr * (omega_curr - omega_prev) / (miss_curr - miss_prev)
        if abs(omega_next - omega_curr) <= cfg.omega_shoot_tol:
            break
        omega_prev, miss_prev = omega_curr, miss_curr
        omega_curr = omega_next
        curr = shoot(omega_curr, curr.field)
        miss_curr = curr.report.angmom - p.l

    converged = abs(miss_curr) <= cfg.constraint_tol and curr.kkt_residual <= cfg.grad_tol
    if not converged:
        logger.warning("rotation shooting stopped at Omega=%.10g with |L-l|=%.3e", omega_curr, abs(miss_curr))
    return replace(curr, classification=label if converged else Classification.UNCONVERGED)


def seed_width(grid: GridSpec, p: ProblemParams) -> float:
    smallest = 2.0 * max(grid.spacings)
    largest = 0.5 * min(grid.half_widths)

    def sigma(width: float) -> float:
        return functionals(make_seed(grid, p.m, p.l, width), p).sigma_dot

    result = optimize.minimize_scalar(sigma, bounds=(smallest, largest), method="bounded", options={"xatol": 1e-3})
    return float(result.x)


def thresholds(rho: float, a: float, b: float, consts: SharpConstants) -> Thresholds:
    # Split the margin (a-b) rho equally between the mass and quintic terms
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho!r}")
    if not 0 < b < a < 1:
        raise ValueError(f"need 0 < b < a < 1, got a={a!r}, b={b!r}")
    margin = (a - b) * rho
    m_star = (margin / (consts.S4 * rho**1.5)) ** 2
    mu_star = 3.0 * (a - b) / (4.0 * consts.Ssob * b**3 * rho**2)
    return Thresholds(m_star=m_star, mu_star=mu_star, a=a, b=b, rho=rho)


def ball_estimates(rho: float, a: float, b: float, m: float, mu: float, consts: SharpConstants) -> BallEstimates:
    return BallEstimates(
        annulus_lower=a * rho - 0.5 * consts.S4 * math.sqrt(m) * rho**1.5,
        inner_upper=b * rho + 2.0 * mu * consts.Ssob / 3.0 * (b * rho) ** 3,
    )


def solve_local_min(
    grid: GridSpec,
    p: ProblemParams,
    cfg: MinimizerConfig,
    consts: SharpConstants | None = None,
) -> SolverResult:
    consts = consts or sharp_constants()
    limits = thresholds(p.rho, cfg.ball_a, cfg.ball_b, consts)
    if not limits.admits(p):
        logger.warning(
            "parameters outside the ball-separation thresholds: m=%g (m*=%.4g), mu=%g (mu*=%.4g)",
            p.m,
            limits.m_star,
            p.mu,
            limits.mu_star,
        )

    width = seed_width(grid, p)
    seed = project_constraints(make_seed(grid, p.m, p.l, width), p.m, p.l)
    seed_report = functionals(seed, p)
    logger.info("local seed: width=%.4g sigma_dot=%.6g E=%.6g", width, seed_report.sigma_dot, seed_report.energy)
    if seed_report.sigma_dot >= cfg.ball_b * p.rho:
        logger.warning(
            "seed sigma_dot %.4g is not below b*rho=%.4g; S(m,l) inside the ball may be empty at this mass",
            seed_report.sigma_dot,
            cfg.ball_b * p.rho,
        )

    ball = p.rho if cfg.ball_mode is BallMode.INTERIOR_TRUST else None
    result = gradient_flow(seed, p, 0.0, cfg, ball_radius=ball, label=Classification.LOCAL_MIN)
    if result.converged and result.report.sigma_dot >= cfg.ball_a * p.rho:
        logger.warning(
            "local minimiser is not interior: sigma_dot=%.6g >= a*rho=%.6g", result.report.sigma_dot, cfg.ball_a * p.rho
        )
        return result.relabel(Classification.UNCONVERGED)
    return result


def find_negative_dilation(
    u1: Field,
    p: ProblemParams,
    cfg: MinimizerConfig | None = None,
    start: int = 1,
) -> tuple[float, Field]:
    cfg = cfg or MinimizerConfig()
    tau = 1.0
    for j in range(start, start + cfg.dilation_steps):
        tau = cfg.dilation_ratio**j
        try:
            candidate = dilate(u1, tau)
        except ResolutionError as error:
            raise NegativeDilationError(
                "grid resolution exhausted before the energy turned negative", tau=tau, **error.diagnostics
            ) from error
        report = functionals(candidate, p)
        logger.debug("dilation ladder tau=%.5g E=%.6g sigma_dot=%.6g", tau, report.energy, report.sigma_dot)
        if report.energy < 0 and report.sigma_dot > p.rho:
            logger.info("negative-energy dilation at tau=%.5g: E=%.6g", tau, report.energy)
            return tau, candidate
    raise NegativeDilationError("no negative-energy dilation on the ladder", last_tau=tau, mu=p.mu)


def solve_global_min(
    grid: GridSpec,
    p: ProblemParams,
    cfg: MinimizerConfig,
    local: SolverResult | None = None,
    consts: SharpConstants | None = None,
    retries: int = 3,
) -> SolverResult:
    local = local or solve_local_min(grid, p, cfg, consts)
    floor_gap = [math.inf]

    def watch_floor(iteration: int, u: Field, report: FunctionalReport) -> None:
        gap = report.energy - coercivity_floor(report, p)
        floor_gap[0] = min(floor_gap[0], gap)
        if gap < -1e-9 * max(1.0, abs(report.energy)):
            logger.error("coercivity floor violated at iteration %d by %.3e", iteration, -gap)

    start = 1
    result: SolverResult | None = None
    for attempt in range(retries + 1):
        tau, seed = find_negative_dilation(local.field, p, cfg, start=start)
        result = gradient_flow(seed, p, 0.0, cfg, label=Classification.GLOBAL_MIN, observer=watch_floor)
        if result.report.energy < 0:
            break
        logger.warning("global flow from tau=%.4g ended at E=%.6g >= 0; retrying with larger tau", tau, result.report.energy)
        start = round(math.log(tau) / math.log(cfg.dilation_ratio)) + 1
    assert result is not None

    logger.info("coercivity floor: smallest E - floor over the flow %.6g", floor_gap[0])
    if result.report.energy >= 0 or result.report.energy > local.report.energy:
        logger.warning(
            "global candidate E=%.6g does not undercut the local minimiser E=%.6g", result.report.energy, local.report.energy
        )
        return result.relabel(Classification.UNCONVERGED)
    return result


def positivity_threshold(
    u2: Field,
    l1: float,
    p: ProblemParams,
    mass_factors: tuple[float, ...] = (0.125, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0),
) -> PositivityReport:
    # Rescaling by sqrt(c) scales the quadratic terms by c, the quartic by c^2 and the
    # sextic by c^3, so the whole mass ladder needs a single dilation.
    report = functionals(dilate(u2, l1), p)
    ladder = []
    largest = None
    for factor in mass_factors:
        value = (
            factor * report.sigma_dot - 0.5 * factor**2 * report.quartic + p.mu * factor**3 * report.sextic / 3.0
        )
        ladder.append((factor * p.m, value))
        if value > 0:
            largest = factor * p.m
    energies = [value for _, value in ladder]
    if any(later > earlier for earlier, later in zip(energies, energies[1:])):
        logger.info("positivity ladder is not monotone in the mass")
    return PositivityReport(
        energy=report.energy,
        positive=report.energy > 0,
        largest_positive_mass=largest,
        ladder=tuple(ladder),
    )
