from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from cqnls.errors import QuadratureError, ShootingError
from cqnls.functionals import FunctionalReport

logger = logging.getLogger(__name__)

R_MAX = 30.0
R_START = 1e-8
BETA_UPPER = 10.0
PROFILE_SAMPLES = 20001
# Optimal Sobolev constant 1/(27 (pi/2)^4) in ||u||_6^6 <= S ||grad u||_2^6.
TALENTI_SOBOLEV = 1.0 / (27.0 * (np.pi / 2.0) ** 4)


@dataclass(frozen=True)
class SharpConstants:
    S4: float
    Ssob: float
    U4_mass: float

    def __post_init__(self) -> None:
        if not (self.S4 > 0 and self.Ssob > 0 and self.U4_mass > 0):
            raise ValueError(f"sharp constants must be positive: {self!r}")


@dataclass(frozen=True)
class RadialProfile:
    q: float
    beta: float
    r: np.ndarray
    U: np.ndarray
    dU: np.ndarray

    @property
    def mass(self) -> float:
        return 4.0 * np.pi * float(integrate.simpson(self.U**2 * self.r**2, x=self.r))

    @property
    def gradient_squared(self) -> float:
        return 4.0 * np.pi * float(integrate.simpson(self.dU**2 * self.r**2, x=self.r))

    def lebesgue(self, power: float) -> float:
        # ||U||_power^power
        return 4.0 * np.pi * float(integrate.simpson(np.abs(self.U) ** power * self.r**2, x=self.r))


def _coefficients(q: float) -> tuple[float, float]:
    # -U'' - (2/r) U' + c U = d U^{q-1}, the q-family normalised ground-state equation.
    return (6.0 - q) / (3.0 * (q - 2.0)), 4.0 / (3.0 * (q - 2.0))


def _shoot(beta: float, q: float, dense: bool = False):
    c, d = _coefficients(q)

    def rhs(r: float, y: np.ndarray) -> list[float]:
        U, dU = y
        return [dU, c * U - d * np.abs(U) ** (q - 2.0) * U - 2.0 * dU / r]

    def crossed_zero(r: float, y: np.ndarray) -> float:
        return y[0]

    def turned_up(r: float, y: np.ndarray) -> float:
        return y[1]

    crossed_zero.terminal = True
    crossed_zero.direction = -1
    turned_up.terminal = True
    turned_up.direction = 1

    # Taylor start away from the r = 0 singularity.
    curvature = (c * beta - d * beta ** (q - 1.0)) / 3.0
    y0 = [beta + 0.5 * curvature * R_START**2, curvature * R_START]
    return integrate.solve_ivp(
        rhs,
        (R_START, R_MAX),
        y0,
        method="DOP853",
        rtol=1e-12,
        atol=1e-14,
        events=(crossed_zero, turned_up),
        dense_output=dense,
    )


def _overshoots(beta: float, q: float) -> bool | None:
    solution = _shoot(beta, q)
    if solution.t_events[0].size:
        return True
    if solution.t_events[1].size:
        return False
    return None


@lru_cache(maxsize=8)
def ground_state_profile(q: float = 4.0) -> RadialProfile:
    if not 2.0 < q < 6.0:
        raise ValueError(f"q must lie in (2, 6), got {q!r}")
    c, d = _coefficients(q)
    low = (c / d) ** (1.0 / (q - 2.0)) * (1.0 + 1e-6)
    high = BETA_UPPER

    if _overshoots(low, q) is not False or _overshoots(high, q) is not True:
        raise ShootingError("shooting bracket does not straddle the ground state", low=low, high=high, q=q)

    for _ in range(200):
        if high - low <= 4.0 * np.finfo(float).eps * high:
            break
        middle = 0.5 * (low + high)
        outcome = _overshoots(middle, q)
        if outcome is None:
            # Neither event before R_MAX: converged to the decaying branch.
            low = middle
            break
        if outcome:
            high = middle
        else:
            low = middle
    logger.debug("ground state q=%g: beta in [%.16g, %.16g]", q, low, high)

    solution = _shoot(low, q, dense=True)
    r_end = float(solution.t[-1])
    r = np.linspace(R_START, r_end, PROFILE_SAMPLES)
    U, dU = solution.sol(r)
    # Keep the profile up to its minimum; past it the numerical branch departs.
    cut = int(np.argmin(U)) + 1
    r = np.concatenate(([0.0], r[:cut]))
    U = np.concatenate(([low], U[:cut]))
    dU = np.concatenate(([0.0], dU[:cut]))
    profile = RadialProfile(q=q, beta=low, r=r, U=U, dU=dU)
    logger.info("ground state q=%g: U(0)=%.10f, mass=%.10f, r_cut=%.2f", q, low, profile.mass, r[-1])
    return profile


def gn_ratio(profile: RadialProfile) -> float:
    # ||U||_q^q / (||grad U||_2^{3(q-2)/2} ||U||_2^{(6-q)/2})
    q = profile.q
    return profile.lebesgue(q) / (
        profile.gradient_squared ** (0.75 * (q - 2.0)) * profile.mass ** (0.25 * (6.0 - q))
    )


def gn_constant(q: float = 4.0) -> float:
    # S_q = q / (2 ||U_q||_2^{q-2})
    profile = ground_state_profile(q)
    return q / (2.0 * profile.mass ** (0.5 * (q - 2.0)))


def _quad(function, lower: float, upper: float) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, error = integrate.quad(function, lower, upper, epsabs=0.0, epsrel=1e-11, limit=500)
        except integrate.IntegrationWarning as warning:
            raise QuadratureError(str(warning), lower=lower, upper=upper) from warning
    if not np.isfinite(value) or error > 1e-9 * max(abs(value), 1e-300):
        raise QuadratureError("quadrature did not converge", value=value, error=error)
    return value


def sobolev_ratio(eps: float = 1.0) -> float:
    # ||U_eps||_6^6 / ||grad U_eps||_2^6 for U_eps(x) = (eps / (eps^2 + |x|^2))^{1/2}
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps!r}")

    def sixth(r: float) -> float:
        return eps**3 / (eps**2 + r**2) ** 3 * r**2

    def slope(r: float) -> float:
        return eps * r**2 / (eps**2 + r**2) ** 3 * r**2

    # Split at the bubble scale; the infinite tail is mapped by quad.
    split = 10.0 * eps
    sixth_norm = 4.0 * np.pi * (_quad(sixth, 0.0, split) + _quad(sixth, split, np.inf))
    gradient_norm = 4.0 * np.pi * (_quad(slope, 0.0, split) + _quad(slope, split, np.inf))
    return sixth_norm / gradient_norm**3


def sobolev_constant() -> float:
    value = sobolev_ratio(1.0)
    gap = abs(value - TALENTI_SOBOLEV) / TALENTI_SOBOLEV
    if gap > 1e-8:
        logger.warning("Sobolev quadrature differs from the closed form by %.2e", gap)
    return value


@lru_cache(maxsize=1)
def sharp_constants() -> SharpConstants:
    profile = ground_state_profile(4.0)
    mass = profile.mass
    constants = SharpConstants(S4=4.0 / (2.0 * mass), Ssob=sobolev_constant(), U4_mass=mass)
    logger.info("sharp constants: S4=%.12g Ssob=%.12g U4_mass=%.12g", constants.S4, constants.Ssob, mass)
    return constants


@dataclass(frozen=True)
class InequalityMargins:
    gn: float
    sobolev: float

    @property
    def holds(self) -> bool:
        return self.gn >= 0.0 and self.sobolev >= 0.0


def inequality_margins(report: FunctionalReport, consts: SharpConstants, rtol: float = 1e-9) -> InequalityMargins:
    # Slack in the GN and Sobolev inequalities, tolerance-shifted so equality counts as holding
    gradient_squared = 2.0 * report.kinetic
    gn_bound = consts.S4 * gradient_squared**1.5 * np.sqrt(report.mass)
    sobolev_bound = consts.Ssob * gradient_squared**3
    return InequalityMargins(
        gn=gn_bound - report.quartic + rtol * gn_bound,
        sobolev=sobolev_bound - report.sextic + rtol * sobolev_bound,
    )
