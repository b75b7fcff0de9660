from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import optimize

from cqnls.errors import NonFiniteFieldError, PropagationError, ResolutionError
from cqnls.functionals import functionals, rotate, sigma_inner, sigma_norm, spectral_tail_fraction
from cqnls.grid import Field, GridSpec, ProblemParams, trap_potential
from cqnls.minimize import SolverResult, project_constraints
from cqnls.seeds import random_smooth_field

logger = logging.getLogger(__name__)

ORBIT_ANGLES = 8


@dataclass(frozen=True)
class PropagatorConfig:
    dt: float = 1e-3
    t_final: float = 1.0
    rotation_Omega: float = 0.0
    snapshot_every: int = 0
    record_every: int = 10
    alias_threshold: float = 1e-3
    min_dt_fraction: float = 2.0**-10

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if not self.t_final >= self.dt:
            raise ValueError(f"t_final must be at least dt, got {self.t_final!r}")
        if self.snapshot_every < 0 or self.record_every < 1:
            raise ValueError("snapshot_every must be >= 0 and record_every >= 1")
        if not 0 < self.min_dt_fraction <= 1 or not self.alias_threshold > 0:
            raise ValueError("min_dt_fraction must lie in (0, 1] and alias_threshold be positive")


@dataclass
class TrajectoryStats:
    times: list[float] = field(default_factory=list)
    mass_series: list[float] = field(default_factory=list)
    energy_series: list[float] = field(default_factory=list)
    angmom_series: list[float] = field(default_factory=list)
    dist_series: list[float] = field(default_factory=list)
    dt_used: float = math.nan
    snapshots: list[tuple[float, Field]] = field(default_factory=list)

    def record(self, t: float, u: Field, p: ProblemParams, distance: float | None = None) -> None:
        report = functionals(u, p)
        self.times.append(t)
        self.mass_series.append(report.mass)
        self.energy_series.append(report.energy)
        self.angmom_series.append(report.angmom)
        if distance is not None:
            self.dist_series.append(distance)

    @property
    def mass_drift(self) -> float:
        mass = np.asarray(self.mass_series)
        return float(np.max(np.abs(mass - mass[0])) / mass[0]) if mass.size and mass[0] else 0.0

    @property
    def energy_drift(self) -> float:
        energy = np.asarray(self.energy_series)
        if not energy.size:
            return 0.0
        return float(np.max(np.abs(energy - energy[0])) / max(abs(energy[0]), 1e-300))

    @property
    def angmom_drift(self) -> float:
        # Measured against the mass, since L may vanish.
        angmom = np.asarray(self.angmom_series)
        if not angmom.size:
            return 0.0
        return float(np.max(np.abs(angmom - angmom[0])) / max(self.mass_series[0], 1e-300))

    @property
    def max_excursion(self) -> float:
        return max(self.dist_series) if self.dist_series else math.nan

    def rows(self) -> list[dict[str, float]]:
        dist = self.dist_series if self.dist_series else [math.nan] * len(self.times)
        return [
            {"t": t, "mass": m, "energy": e, "angmom": l, "dist": d}
            for t, m, e, l, d in zip(self.times, self.mass_series, self.energy_series, self.angmom_series, dist)
        ]


@lru_cache(maxsize=8)
def _free_factor(grid: GridSpec, dt: float) -> np.ndarray:
    factor = np.exp(-0.5j * dt * grid.k_squared)
    factor.flags.writeable = False
    return factor


def kinetic_rotation_step(u: Field, dt: float, Omega: float) -> Field:
    # exp(-i dt (-1/2 Lap - Omega L_z)). L_z commutes with the Laplacian, so the
    # free step is exact and the frame rotation is R_{-Omega dt} by shears.
    values = np.fft.ifftn(_free_factor(u.grid, float(dt)) * np.fft.fftn(u.values))
    return rotate(Field(u.grid, values), -Omega * dt)


def _phase(values: np.ndarray, potential: np.ndarray, mu: float, dt: float) -> np.ndarray:
    density = np.abs(values) ** 2
    return np.exp(-1j * dt * (potential - density + mu * density**2)) * values


def step(u: Field, p: ProblemParams, cfg: PropagatorConfig, dt: float | None = None) -> Field:
    dt = cfg.dt if dt is None else dt
    density = np.abs(u.values) ** 2
    nonlinear = float(np.max(np.abs(p.mu * density**2 - density)))
    if dt * nonlinear >= np.pi:
        raise ResolutionError("nonlinear phase per step exceeds pi", dt=dt, max_phase=dt * nonlinear)
    potential = trap_potential(u.grid, p.omega, p.k)
    with np.errstate(over="ignore", invalid="ignore"):
        values = _phase(u.values, potential, p.mu, 0.5 * dt)
        values = kinetic_rotation_step(Field(u.grid, values), dt, cfg.rotation_Omega).values
        values = _phase(values, potential, p.mu, 0.5 * dt)
    out = Field(u.grid, values)
    tail = spectral_tail_fraction(out)
    if tail > cfg.alias_threshold:
        raise ResolutionError("spectral tail beyond aliasing threshold", tail=tail, dt=dt)
    return out


def propagate(
    u0: Field,
    p: ProblemParams,
    cfg: PropagatorConfig,
    distance: Callable[[Field], float] | None = None,
) -> TrajectoryStats:
    stats = TrajectoryStats()
    u = u0
    t = 0.0
    dt = cfg.dt
    count = 0
    stats.record(t, u, p, distance(u) if distance else None)
    end = cfg.t_final * (1.0 - 1e-12)

    while t < end:
        h = min(dt, cfg.t_final - t)
        try:
            u_next = step(u, p, cfg, dt=h)
        except ResolutionError as error:
            dt *= 0.5
            logger.warning("step rejected at t=%.6g (%s); dt halved to %.3e", t, error, dt)
            if dt < cfg.dt * cfg.min_dt_fraction:
                raise PropagationError("time step underflow", last_good=u, t=t, dt=dt) from error
            continue
        except NonFiniteFieldError as error:
            raise PropagationError("propagated NaN", last_good=u, t=t) from error
        u = u_next
        t += h
        count += 1
        if count % cfg.record_every == 0 or t >= end:
            stats.record(t, u, p, distance(u) if distance else None)
        if cfg.snapshot_every and count % cfg.snapshot_every == 0:
            stats.snapshots.append((t, u))

    stats.dt_used = dt
    logger.info(
        "propagated to t=%.6g in %d steps: mass drift %.2e, energy drift %.2e, L drift %.2e",
        t,
        count,
        stats.mass_drift,
        stats.energy_drift,
        stats.angmom_drift,
    )
    return stats


def orbit_distance(u: Field, ref: Field, p: ProblemParams, angles: int = ORBIT_ANGLES) -> float:
    # Sigma-distance from u to {e^{i theta} R_phi ref}; theta in closed form, phi by scan and refinement

    def overlap(phi: float) -> float:
        return abs(sigma_inner(rotate(ref, phi), u, p))

    grid_phis = np.linspace(-np.pi, np.pi, angles, endpoint=False)
    values = np.array([overlap(phi) for phi in grid_phis])
    best = int(np.argmax(values))
    best_overlap = float(values[best])
    if values.max() - values.min() > 1e-12 * max(values.max(), 1e-300):
        width = 2.0 * np.pi / angles
        result = optimize.minimize_scalar(
            lambda phi: -overlap(phi),
            bounds=(grid_phis[best] - width, grid_phis[best] + width),
            method="bounded",
            options={"xatol": 1e-5},
        )
        best_overlap = max(best_overlap, -float(result.fun))
    squared = sigma_norm(u, p) ** 2 + sigma_norm(ref, p) ** 2 - 2.0 * best_overlap
    return math.sqrt(max(squared, 0.0))


def _rms_radius(u: Field) -> float:
    density = np.abs(u.values) ** 2
    return float(np.sqrt(np.sum(u.grid.radius_squared * density) / np.sum(density)))


def perturb(u_star: Field, eps: float, p: ProblemParams, rng: np.random.Generator) -> Field:
    # u_star plus a random smooth field of Sigma-norm eps, back on S(m,l)
    if eps == 0:
        return u_star
    noise = random_smooth_field(u_star.grid, rng, envelope_width=1.5 * _rms_radius(u_star))
    noise = noise * (eps / sigma_norm(noise, p))
    return project_constraints(u_star + noise, p.m, p.l)


def stability_experiment(
    u_star: SolverResult,
    eps: float,
    p: ProblemParams,
    cfg: PropagatorConfig,
    rng: np.random.Generator,
) -> TrajectoryStats:
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps!r}")
    if not u_star.converged:
        logger.warning("stability experiment started from an unconverged state")
    frame = replace(cfg, rotation_Omega=u_star.Omega)
    start = perturb(u_star.field, eps, p, rng)
    ref = u_star.field
    stats = propagate(start, p, frame, distance=lambda u: orbit_distance(u, ref, p))
    logger.info("stability eps=%.3g: max orbit distance %.4e", eps, stats.max_excursion)
    return stats
