from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize
from scipy.sparse.linalg import LinearOperator, minres

from cqnls.constants import SharpConstants
from cqnls.errors import PathCollapseError, ProjectionError, RegimeError, SaddleRefinementError
from cqnls.functionals import (
    FunctionalReport,
    apply_Lz,
    dilate,
    functionals,
    gradient,
    hessian_apply,
    sigma_dot_norm,
    trap_preconditioner,
)
from cqnls.grid import Field, ProblemParams, l2_norm, real_inner, trap_potential
from cqnls.minimize import (
    Classification,
    MinimizerConfig,
    SolverResult,
    fit_multipliers,
    project_constraints,
    tangent_direction,
)

logger = logging.getLogger(__name__)

NEWTON_MAX_ITERS = 30
MINRES_MAX_ITERS = 400
LINE_SEARCH_HALVINGS = 6


@dataclass(frozen=True)
class PathSpec:
    # One sweep is reparam_every node-update passes and an equal-arclength redistribution;
    # gamma is compared between sweeps.
    node_count: int = 33
    reparam_every: int = 1
    relax_iters: int = 200
    climb: bool = True
    climb_iters: int = 200
    step: float = 0.5
    collapse_margin: float = 1e-6

    def __post_init__(self) -> None:
        if self.node_count < 8:
            raise ValueError(f"node_count must be >= 8, got {self.node_count!r}")
        if self.reparam_every < 1:
            raise ValueError("reparam_every must be >= 1")
        if self.relax_iters < 0 or self.climb_iters < 0:
            raise ValueError("relax_iters and climb_iters must be non-negative")
        if not self.step > 0 or self.collapse_margin < 0:
            raise ValueError("step must be positive and collapse_margin non-negative")


@dataclass(frozen=True)
class PathResult:
    nodes: tuple[Field, ...]
    reports: tuple[FunctionalReport, ...]
    gamma: float
    l_star: float
    l_upper: float
    l1: float
    ts: tuple[float, ...]
    taus: tuple[float, ...]
    gamma_history: tuple[float, ...] = ()
    saddle: SolverResult | None = None
    climbed: bool = False

    @property
    def energies(self) -> tuple[float, ...]:
        return tuple(report.energy for report in self.reports)

    @property
    def sigma_dots(self) -> tuple[float, ...]:
        return tuple(report.sigma_dot for report in self.reports)

    @property
    def peak_index(self) -> int:
        return int(np.argmax(self.energies))

    @property
    def endpoint_energy(self) -> float:
        return max(self.reports[0].energy, self.reports[-1].energy)

    def rows(self, p: ProblemParams) -> list[dict[str, float]]:
        return [
            {
                "node_index": index,
                "t": t,
                "tau": tau,
                "energy": report.energy,
                "sigma_dot": report.sigma_dot,
                "mass_err": report.mass - p.m,
                "angmom_err": report.angmom - p.l,
            }
            for index, (t, tau, report) in enumerate(zip(self.ts, self.taus, self.reports))
        ]


@dataclass(frozen=True)
class BarrierMargin:
    epsilon_bar: float
    endpoint_ceiling: float
    gamma_lower_bound: float


def h_profile(u: Field, l: float, p: ProblemParams, report: FunctionalReport | None = None) -> float:
    # (l^2/2)||grad u||^2 + omega l^{-k} ||x^{k/2} u||^2, the Sigma-dot seminorm of u dilated by l
    if not l > 0:
        raise ValueError(f"l must be positive, got {l!r}")
    report = report or functionals(u, p)
    return l**2 * report.kinetic + l ** (-p.k) * report.trap


def l0(u: Field, p: ProblemParams, report: FunctionalReport | None = None) -> float:
    report = report or functionals(u, p)
    if report.kinetic <= 0 or report.trap <= 0:
        raise ValueError("l0 is undefined for the zero field")
    return (p.k * report.trap / (2.0 * report.kinetic)) ** (1.0 / (p.k + 2.0))


def bracket_l(u2: Field, p: ProblemParams) -> tuple[float, float, float]:
    # Roots l_* < l0 < l^* of h(l) = rho/2 and their geometric mean l1
    report = functionals(u2, p)
    center = l0(u2, p, report)
    level = 0.5 * p.rho
    minimum = h_profile(u2, center, p, report)
    if minimum >= level:
        raise RegimeError(
            "inf h >= rho/2: the trap is too strong for the dilation path",
            h_l0=minimum,
            rho_half=level,
            omega_gap=minimum - level,
        )

    def excess(l: float) -> float:
        return h_profile(u2, l, p, report) - level

    low = 0.5 * center
    while excess(low) <= 0:
        low *= 0.5
    high = 2.0 * center
    while excess(high) <= 0:
        high *= 2.0
    l_star = optimize.brentq(excess, low, center, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    l_upper = optimize.brentq(excess, center, high, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    l1 = math.sqrt(l_star * l_upper)

    start = functionals(dilate(u2, l1), p)
    if start.sigma_dot > level * (1.0 + 1e-6):
        logger.warning("dilated endpoint sigma_dot %.8g exceeds rho/2=%.8g", start.sigma_dot, level)
    logger.info("bracket: l_*=%.8g l0=%.8g l^*=%.8g l1=%.8g, h(l0)=%.6g", l_star, center, l_upper, l1, minimum)
    return l_star, l_upper, l1


def _reports(nodes: list[Field] | tuple[Field, ...], p: ProblemParams) -> tuple[FunctionalReport, ...]:
    return tuple(functionals(node, p) for node in nodes)


def initial_path(
    u2: Field,
    l1: float,
    spec: PathSpec,
    p: ProblemParams,
    l_star: float = math.nan,
    l_upper: float = math.nan,
) -> PathResult:
    # Nodes dilate(u2, t + l1 (1 - t)) on a uniform t grid
    count = spec.node_count
    ts = tuple(j / (count - 1) for j in range(count))
    taus = tuple(t + l1 * (1.0 - t) for t in ts)
    nodes: list[Field] = []
    for j, tau in enumerate(taus):
        node = dilate(u2, tau) if j < count - 1 else u2
        if 0 < j < count - 1:
            node = project_constraints(node, p.m, p.l)
        nodes.append(node)
    reports = _reports(nodes, p)
    gamma = max(report.energy for report in reports)
    path = PathResult(
        nodes=tuple(nodes),
        reports=reports,
        gamma=gamma,
        l_star=l_star,
        l_upper=l_upper,
        l1=l1,
        ts=ts,
        taus=taus,
        gamma_history=(gamma,),
    )
    logger.info("initial path: gamma=%.8g endpoints E=(%.6g, %.6g)", gamma, reports[0].energy, reports[-1].energy)
    return path


def fallback_path(u1: Field, u2: Field, spec: PathSpec, p: ProblemParams) -> PathResult:
    count = spec.node_count
    ts = tuple(j / (count - 1) for j in range(count))
    nodes = [u1]
    for t in ts[1:-1]:
        nodes.append(project_constraints(u1 * (1.0 - t) + u2 * t, p.m, p.l))
    nodes.append(u2)
    reports = _reports(nodes, p)
    gamma = max(report.energy for report in reports)
    logger.warning("using the segment path from u1 to u2; no energy-level guarantee for gamma=%.6g", gamma)
    return PathResult(
        nodes=tuple(nodes),
        reports=reports,
        gamma=gamma,
        l_star=math.nan,
        l_upper=math.nan,
        l1=math.nan,
        ts=ts,
        taus=tuple(math.nan for _ in ts),
        gamma_history=(gamma,),
    )


def crossing_index(path: PathResult, rho: float) -> int | None:
    for index, sigma in enumerate(path.sigma_dots):
        if 0.5 * rho <= sigma <= rho:
            return index
    return None


def barrier_margin(rho: float, m: float, mu: float, consts: SharpConstants) -> BarrierMargin:
    gn_term = 0.5 * consts.S4 * math.sqrt(m) * rho**1.5
    quintic_term = mu * consts.Ssob * rho**3 / 96.0
    return BarrierMargin(
        epsilon_bar=0.25 * rho - gn_term - quintic_term,
        endpoint_ceiling=0.25 * rho + quintic_term,
        gamma_lower_bound=0.5 * rho - gn_term,
    )


def reparametrize(nodes: list[Field], p: ProblemParams) -> list[Field]:
    gaps = [sigma_dot_norm(b - a, p) for a, b in zip(nodes, nodes[1:])]
    arclength = np.concatenate(([0.0], np.cumsum(gaps)))
    total = arclength[-1]
    if total == 0.0:
        return list(nodes)
    targets = np.linspace(0.0, total, len(nodes))
    out = [nodes[0]]
    for target in targets[1:-1]:
        segment = int(np.clip(np.searchsorted(arclength, target, side="right") - 1, 0, len(gaps) - 1))
        width = gaps[segment]
        alpha = (target - arclength[segment]) / width if width > 0 else 0.0
        blended = nodes[segment] * (1.0 - alpha) + nodes[segment + 1] * alpha
        try:
            out.append(project_constraints(blended, p.m, p.l))
        except ProjectionError as error:
            raise PathCollapseError("reparametrised node left the constraint set", segment=segment) from error
    out.append(nodes[-1])
    return out


def _relax_interior(nodes: list[Field], p: ProblemParams, step: float, shift: float) -> list[Field]:
    out = [nodes[0]]
    potential = trap_potential(nodes[0].grid, p.omega, p.k)
    for node in nodes[1:-1]:
        direction = tangent_direction(node, apply_Lz(node), gradient(node, p), 0.0, shift, True, potential)
        try:
            out.append(project_constraints(node - direction * step, p.m, p.l))
        except ProjectionError:
            out.append(node)
    out.append(nodes[-1])
    return out


def _climb(path: PathResult, p: ProblemParams, spec: PathSpec, cfg: MinimizerConfig) -> PathResult:
    # Climbing image: ascend along the path tangent, descend across it.
    peak = path.peak_index
    if peak in (0, len(path.nodes) - 1):
        logger.warning("path peak sits on an endpoint; skipping the climbing stage")
        return path
    previous, following = path.nodes[peak - 1], path.nodes[peak + 1]
    chord = following - previous
    tangent = chord * (1.0 / l2_norm(chord))
    u = path.nodes[peak]
    g = gradient(u, p)
    w = apply_Lz(u)
    potential = trap_potential(u.grid, p.omega, p.k)
    kkt = fit_multipliers(u, g, w)[2]
    step = spec.step
    for iteration in range(spec.climb_iters):
        if kkt <= cfg.grad_tol or step < 1e-8 * spec.step:
            break
        direction = tangent_direction(u, w, g, 0.0, cfg.precond_shift, True, potential)
        force = direction - tangent * (2.0 * real_inner(direction, tangent))
        try:
            trial = project_constraints(u - force * step, p.m, p.l)
        except ProjectionError:
            step *= 0.5
            continue
        trial_g = gradient(trial, p)
        trial_w = apply_Lz(trial)
        trial_kkt = fit_multipliers(trial, trial_g, trial_w)[2]
        if trial_kkt < kkt:
            u, g, w, kkt = trial, trial_g, trial_w, trial_kkt
            step = min(2.0 * step, spec.step)
        else:
            step *= 0.5
        logger.debug("climb it=%d kkt=%.3e step=%.3e", iteration, kkt, step)
    nodes = list(path.nodes)
    nodes[peak] = u
    reports = list(path.reports)
    reports[peak] = functionals(u, p)
    gamma = max(report.energy for report in reports)
    logger.info("climbing image: E=%.10g kkt=%.3e", reports[peak].energy, kkt)
    return replace(path, nodes=tuple(nodes), reports=tuple(reports), gamma=gamma, climbed=True)


def string_relax(path: PathResult, p: ProblemParams, spec: PathSpec, cfg: MinimizerConfig) -> PathResult:
    # Lower the path max by projected descent of interior nodes with pinned endpoints
    nodes = list(path.nodes)
    reports = path.reports
    gamma = max(report.energy for report in reports)
    history = [gamma]
    endpoint = max(reports[0].energy, reports[-1].energy)
    step = spec.step
    quiet = 0

    for sweep in range(1, spec.relax_iters + 1):
        trial = nodes
        for _ in range(spec.reparam_every):
            trial = _relax_interior(trial, p, step, cfg.precond_shift)
        trial = reparametrize(trial, p)
        trial_reports = _reports(trial, p)
        trial_gamma = max(report.energy for report in trial_reports)

        if trial_gamma > gamma:
            step *= cfg.backtrack_factor
            logger.debug("sweep %d rejected: gamma %.10g > %.10g, step -> %.3e", sweep, trial_gamma, gamma, step)
            if step < 1e-6 * spec.step:
                break
            continue

        if trial_gamma <= endpoint + spec.collapse_margin:
            raise PathCollapseError(
                "path maximum fell to the endpoint level",
                sweep=sweep,
                gamma=trial_gamma,
                endpoint_energy=endpoint,
            )
        change = gamma - trial_gamma
        nodes, reports, gamma = trial, trial_reports, trial_gamma
        history.append(gamma)
        logger.debug("sweep %d: gamma=%.12g (change %.3e)", sweep, gamma, change)
        quiet = quiet + 1 if change < cfg.grad_tol else 0
        if quiet >= 3:
            break

    relaxed = replace(path, nodes=tuple(nodes), reports=reports, gamma=gamma, gamma_history=tuple(history))
    logger.info("string relaxation: %d accepted sweeps, gamma=%.10g", len(history) - 1, gamma)
    if spec.climb and spec.climb_iters > 0:
        relaxed = _climb(relaxed, p, spec, cfg)
    return relaxed


class _Kkt:
    # Real-vector form of the bordered Newton system at (u, lambda, Omega)

    def __init__(self, u: Field, lam: float, Omega: float, p: ProblemParams, shift: float) -> None:
        self.u = u
        self.grid = u.grid
        self.lam = lam
        self.Omega = Omega
        self.p = p
        self.shift = shift
        self.potential = trap_potential(u.grid, p.omega, p.k)
        self.size = u.grid.size
        self.scale = math.sqrt(u.grid.cell_volume)
        self.w = apply_Lz(u)
        self.u_vec = self.to_vec(u)
        self.w_vec = self.to_vec(self.w)

    def to_vec(self, f: Field) -> np.ndarray:
        return np.concatenate((f.values.real.ravel(), f.values.imag.ravel())) * self.scale

    def to_field(self, x: np.ndarray) -> Field:
        values = (x[: self.size] + 1j * x[self.size : 2 * self.size]) / self.scale
        return Field(self.grid, values.reshape(self.grid.shape))

    def matvec(self, z: np.ndarray) -> np.ndarray:
        x = z[: 2 * self.size]
        delta = self.to_field(x)
        image = hessian_apply(self.u, delta, self.p) - delta * self.lam - apply_Lz(delta) * self.Omega
        top = self.to_vec(image) - z[-2] * self.u_vec - z[-1] * self.w_vec
        return np.concatenate((top, [-self.u_vec @ x, -self.w_vec @ x]))

    def precondition(self, z: np.ndarray) -> np.ndarray:
        field_part = self.to_vec(trap_preconditioner(self.to_field(z[: 2 * self.size]), self.shift, self.potential))
        return np.concatenate((field_part, z[-2:]))

    def operators(self) -> tuple[LinearOperator, LinearOperator]:
        n = 2 * self.size + 2
        return (
            LinearOperator((n, n), matvec=self.matvec, dtype=np.float64),
            LinearOperator((n, n), matvec=self.precondition, dtype=np.float64),
        )


def refine_saddle(
    path: PathResult,
    p: ProblemParams,
    cfg: MinimizerConfig,
    max_iters: int = NEWTON_MAX_ITERS,
) -> SolverResult:
    floor = path.endpoint_energy
    u = path.nodes[path.peak_index]
    g = gradient(u, p)
    lam, Omega, kkt = fit_multipliers(u, g)
    report = functionals(u, p)
    shift = max(cfg.precond_shift, 1e-3)
    iterations = 0

    while kkt > cfg.grad_tol and iterations < max_iters:
        iterations += 1
        system = _Kkt(u, lam, Omega, p, shift)
        residual = g - u * lam - system.w * Omega
        rhs = np.concatenate(
            (-system.to_vec(residual), [0.5 * (report.mass - p.m), 0.5 * (report.angmom - p.l)])
        )
        operator, preconditioner = system.operators()
        solution, info = minres(
            operator,
            rhs,
            M=preconditioner,
            rtol=min(1e-2, max(1e-10, 0.1 * kkt)),
            maxiter=MINRES_MAX_ITERS,
        )
        if info < 0:
            raise SaddleRefinementError("MINRES breakdown", info=info, iteration=iterations)
        delta = system.to_field(solution[: 2 * system.size])

        accepted = False
        damping = 1.0
        for _ in range(LINE_SEARCH_HALVINGS):
            try:
                trial = project_constraints(u + delta * damping, p.m, p.l)
            except ProjectionError:
                damping *= 0.5
                continue
            trial_g = gradient(trial, p)
            trial_lam, trial_Omega, trial_kkt = fit_multipliers(trial, trial_g)
            if trial_kkt < kkt:
                accepted = True
                break
            damping *= 0.5
        if not accepted:
            logger.warning("Newton line search stalled at kkt=%.3e", kkt)
            break

        u, g, lam, Omega, kkt = trial, trial_g, trial_lam, trial_Omega, trial_kkt
        report = functionals(u, p)
        logger.debug("newton it=%d E=%.12g kkt=%.3e damping=%.3g minres=%d", iterations, report.energy, kkt, damping, info)
        if report.energy < floor:
            raise SaddleRefinementError(
                "saddle refinement fell into an endpoint basin",
                energy=report.energy,
                endpoint_energy=floor,
                iteration=iterations,
            )

    feasible = abs(report.mass - p.m) <= cfg.constraint_tol and abs(report.angmom - p.l) <= cfg.constraint_tol
    converged = kkt <= cfg.grad_tol and feasible
    if not converged:
        logger.warning("saddle refinement unconverged: kkt=%.3e", kkt)
    else:
        logger.info("saddle: E=%.12g kkt=%.3e after %d Newton steps", report.energy, kkt, iterations)
    return SolverResult(
        field=u,
        lam=lam,
        Omega=Omega,
        report=report,
        kkt_residual=kkt,
        iterations=iterations,
        classification=Classification.SADDLE if converged else Classification.UNCONVERGED,
    )


@dataclass(frozen=True)
class SaddleChecks:
    level_gap: float
    energy_order: bool
    norm_order: bool
    details: dict[str, float] = field(default_factory=dict)


def saddle_checks(saddle: SolverResult, gamma: float, u1: SolverResult, u2: SolverResult) -> SaddleChecks:
    e1, e2, e3 = u1.report.energy, u2.report.energy, saddle.report.energy
    s1, s2, s3 = u1.report.sigma_dot, u2.report.sigma_dot, saddle.report.sigma_dot
    return SaddleChecks(
        level_gap=abs(e3 - gamma) / max(abs(gamma), 1e-300),
        energy_order=e2 < 0 < e1 < e3,
        norm_order=s1 < s3 < s2,
        details={"E1": e1, "E2": e2, "E3": e3, "sigma1": s1, "sigma2": s2, "sigma3": s3},
    )
