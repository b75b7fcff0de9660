from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from cqnls.errors import NonFiniteFieldError, ResolutionError
from cqnls.grid import (
    Field,
    GridSpec,
    ProblemParams,
    inner,
    kinetic_sum,
    laplacian,
    spectral_derivative,
    trap_potential,
)

logger = logging.getLogger(__name__)

# Spectral power beyond 2/3 of the Nyquist wavenumber, as a fraction of the total.
TAIL_WARN_FRACTION = 1e-6
TAIL_ABORT_FRACTION = 1e-3
BOUNDARY_SHELL = 0.1
BOUNDARY_MASS_LIMIT = 1e-10
BOUNDARY_RESIDUAL_LIMIT = 0.5


@dataclass(frozen=True)
class FunctionalReport:
    kinetic: float
    trap: float
    quartic: float
    sextic: float
    energy: float
    mass: float
    angmom: float
    angmom_imag_residual: float
    sigma_dot: float
    pohozaev: float

    @property
    def sigma_norm_squared(self) -> float:
        # ||u||_Sigma^2 = ||u||_Sigma-dot^2 + ||u||_2^2
        return self.sigma_dot + self.mass

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _lz_values(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    x1, x2, _ = grid.coords
    d1 = spectral_derivative(values, grid, 0)
    d2 = spectral_derivative(values, grid, 1)
    return -1j * (x1 * d2 - x2 * d1)


def apply_Lz(u: Field) -> Field:
    # L_z u = -i (x1 d/dx2 - x2 d/dx1) u with spectral partial derivatives
    return Field(u.grid, _lz_values(u.values, u.grid))


def functionals(u: Field, p: ProblemParams) -> FunctionalReport:
    grid = u.grid
    dv = grid.cell_volume
    values = u.values
    density = np.abs(values) ** 2

    kinetic = kinetic_sum(values, grid)
    trap = dv * float(np.sum(trap_potential(grid, p.omega, p.k) * density))
    quartic = dv * float(np.sum(density**2))
    sextic = dv * float(np.sum(density**3))
    mass = dv * float(np.sum(density))
    angular = complex(np.vdot(values, _lz_values(values, grid))) * dv

    return FunctionalReport(
        kinetic=kinetic,
        trap=trap,
        quartic=quartic,
        sextic=sextic,
        energy=kinetic + trap - quartic / 2.0 + p.mu * sextic / 3.0,
        mass=mass,
        angmom=angular.real,
        angmom_imag_residual=angular.imag,
        sigma_dot=kinetic + trap,
        pohozaev=2.0 * kinetic - p.k * trap - 1.5 * quartic + 2.0 * p.mu * sextic,
    )


def energy(u: Field, p: ProblemParams) -> float:
    return functionals(u, p).energy


def gradient(u: Field, p: ProblemParams) -> Field:
    # E'(u) = -1/2 Lap u + omega |x|^k u - |u|^2 u + mu |u|^4 u, so that dE(u)[v] = 2 Re<E'(u), v>
    grid = u.grid
    values = u.values
    density = np.abs(values) ** 2
    with np.errstate(over="ignore", invalid="ignore"):
        out = (
            -0.5 * laplacian(values, grid)
            + (trap_potential(grid, p.omega, p.k) - density + p.mu * density**2) * values
        )
    if not np.isfinite(out).all():
        raise NonFiniteFieldError("non-finite gradient", max_abs_u=float(np.sqrt(density.max())))
    return Field(grid, out)


def hessian_apply(u: Field, v: Field, p: ProblemParams) -> Field:
    # Second derivative E''(u)[v] of the half-energy, real-linear in v
    u.require_grid(v)
    grid = u.grid
    a = u.values
    b = v.values
    density = np.abs(a) ** 2
    a_sq = a * a
    out = (
        -0.5 * laplacian(b, grid)
        + trap_potential(grid, p.omega, p.k) * b
        - (2.0 * density * b + a_sq * np.conj(b))
        + p.mu * (3.0 * density**2 * b + 2.0 * density * a_sq * np.conj(b))
    )
    return Field(grid, out)


def sigma_dot_inner(u: Field, v: Field, p: ProblemParams) -> complex:
    # 1/2 <grad u, grad v> + omega <|x|^k u, v>
    u.require_grid(v)
    grid = u.grid
    fu = np.fft.fftn(u.values)
    fv = np.fft.fftn(v.values)
    kinetic = 0.5 * complex(np.vdot(fu, grid.k_squared * fv)) * grid.cell_volume / grid.size
    trap = complex(np.vdot(u.values, trap_potential(grid, p.omega, p.k) * v.values)) * grid.cell_volume
    return kinetic + trap


def sigma_inner(u: Field, v: Field, p: ProblemParams) -> complex:
    return sigma_dot_inner(u, v, p) + inner(u, v)


def sigma_norm(u: Field, p: ProblemParams) -> float:
    return float(np.sqrt(max(sigma_inner(u, u, p).real, 0.0)))


def sigma_dot_norm(u: Field, p: ProblemParams) -> float:
    return float(np.sqrt(max(sigma_dot_inner(u, u, p).real, 0.0)))


def spectral_tail_fraction(u: Field) -> float:
    grid = u.grid
    power = np.abs(np.fft.fftn(u.values)) ** 2
    total = float(power.sum())
    if total == 0.0:
        return 0.0
    mask = np.zeros(grid.shape, dtype=bool)
    for axis in range(3):
        n = grid.shape[axis]
        k = np.abs(2.0 * np.pi * np.fft.fftfreq(n, d=grid.spacings[axis]))
        shape = [1, 1, 1]
        shape[axis] = n
        mask |= (k > (2.0 / 3.0) * grid.nyquist(axis)).reshape(shape)
    return float(power[mask].sum()) / total


def boundary_mass_fraction(u: Field) -> float:
    grid = u.grid
    density = np.abs(u.values) ** 2
    total = float(density.sum())
    if total == 0.0:
        return 0.0
    mask = np.zeros(grid.shape, dtype=bool)
    for x, half_width in zip(grid.coords, grid.half_widths):
        mask |= np.broadcast_to(np.abs(x) > (1.0 - BOUNDARY_SHELL) * half_width, grid.shape)
    return float(density[mask].sum()) / total


def check_boundary_mass(u: Field, label: str = "field") -> float:
    fraction = boundary_mass_fraction(u)
    if fraction > BOUNDARY_MASS_LIMIT:
        logger.warning("%s: boundary-shell mass fraction %.3e exceeds %.0e", label, fraction, BOUNDARY_MASS_LIMIT)
    return fraction


def check_boundary_residual(residual: Field, label: str = "residual") -> float:
    # Share of the stationarity residual's squared norm sitting in the boundary shell.
    fraction = boundary_mass_fraction(residual)
    if fraction > BOUNDARY_RESIDUAL_LIMIT:
        logger.warning(
            "%s: %.1f%% of the residual lies in the boundary shell; enlarge the box or check the trap",
            label,
            100.0 * fraction,
        )
    return fraction


def check_resolution(u: Field, label: str = "field", abort_fraction: float = TAIL_ABORT_FRACTION) -> float:
    fraction = spectral_tail_fraction(u)
    if fraction > abort_fraction:
        raise ResolutionError(f"{label}: spectral tail beyond aliasing threshold", tail=fraction, limit=abort_fraction)
    if fraction > TAIL_WARN_FRACTION:
        logger.warning("%s: spectral tail fraction %.3e, resolution degrading", label, fraction)
    return fraction


@lru_cache(maxsize=64)
def _dilation_matrix(n: int, half_width: float, tau: float) -> np.ndarray:
    # Trigonometric interpolation from the samples at x_j onto tau * x_j.
    h = 2.0 * half_width / n
    x = -half_width + h * np.arange(n)
    y = tau * x
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=h)
    phase = np.outer(y + half_width, k)
    basis = np.exp(1j * phase)
    basis[:, n // 2] = np.cos(phase[:, n // 2])
    matrix = basis @ np.fft.fft(np.eye(n), axis=0) / n
    matrix[(y < -half_width) | (y >= half_width), :] = 0.0
    matrix.flags.writeable = False
    return matrix


def _apply_axis(matrix: np.ndarray, values: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(matrix, values, axes=(1, axis)), 0, axis)


def dilate(u: Field, tau: float, abort_fraction: float = TAIL_ABORT_FRACTION) -> Field:
    # tau^{3/2} u(tau x) by separable spectral interpolation
    if not tau > 0:
        raise ValueError(f"dilation factor must be positive, got {tau!r}")
    if tau == 1.0:
        return u
    grid = u.grid
    values = u.values
    for axis in range(3):
        matrix = _dilation_matrix(grid.shape[axis], grid.half_widths[axis], float(tau))
        values = _apply_axis(matrix, values, axis)
    out = Field(grid, tau**1.5 * values)
    check_resolution(out, label=f"dilate(tau={tau:.4g})", abort_fraction=abort_fraction)
    check_boundary_mass(out, label=f"dilate(tau={tau:.4g})")
    return out


def _shear(values: np.ndarray, grid: GridSpec, shift_axis: int, along_axis: int, factor: float) -> np.ndarray:
    # f(x) -> f(x + factor * x_along * e_shift), exact for band-limited periodic data.
    k = grid.kvecs[shift_axis]
    x = grid.coords[along_axis]
    transformed = np.fft.fft(values, axis=shift_axis)
    return np.fft.ifft(np.exp(1j * k * factor * x) * transformed, axis=shift_axis)


def rotate(u: Field, phi: float) -> Field:
    # R_phi u(x) = u(R_{-phi} x), a rotation about the x3 axis by three shears
    phi = float(np.remainder(phi + np.pi, 2.0 * np.pi) - np.pi)
    if phi == 0.0:
        return u
    if abs(phi) > np.pi / 2:
        return rotate(rotate(u, phi / 2), phi / 2)
    grid = u.grid
    t = np.tan(phi / 2)
    s = np.sin(phi)
    values = _shear(u.values, grid, 0, 1, t)
    values = _shear(values, grid, 1, 0, -s)
    values = _shear(values, grid, 0, 1, t)
    return Field(grid, values)


def fourier_preconditioner(u: Field, shift: float) -> Field:
    # (shift - 1/2 Lap)^{-1}
    grid = u.grid
    return Field(grid, np.fft.ifftn(np.fft.fftn(u.values) / (shift + 0.5 * grid.k_squared)))


def trap_preconditioner(u: Field, shift: float, potential: np.ndarray) -> Field:
    # D (shift - 1/2 Lap)^{-1} D with D = sqrt(shift / (shift + V)): the Fourier
    # solve handles the kinetic part, the diagonal scaling the trap.
    if not shift > 0:
        raise ValueError(f"shift must be positive, got {shift!r}")
    scale = np.sqrt(shift / (shift + potential))
    smoothed = fourier_preconditioner(Field(u.grid, scale * u.values), shift)
    return Field(u.grid, scale * smoothed.values)
