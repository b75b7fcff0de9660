from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from cqnls.errors import GridMismatchError, NonFiniteFieldError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSpec:
    # Uniform periodic box [-L_i, L_i) sampled with n_i points per axis
    n1: int
    n2: int
    n3: int
    L1: float
    L2: float
    L3: float

    def __post_init__(self) -> None:
        for name, n in zip(("n1", "n2", "n3"), self.shape):
            if int(n) != n or n < 8 or n % 2:
                raise ValueError(f"{name} must be an even integer >= 8, got {n!r}")
        for name, half_width in zip(("L1", "L2", "L3"), self.half_widths):
            if not np.isfinite(half_width) or half_width <= 0:
                raise ValueError(f"{name} must be a positive real, got {half_width!r}")

    @classmethod
    def cube(cls, n: int, half_width: float) -> GridSpec:
        return cls(n, n, n, half_width, half_width, half_width)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n1, self.n2, self.n3)

    @property
    def half_widths(self) -> tuple[float, float, float]:
        return (float(self.L1), float(self.L2), float(self.L3))

    @property
    def size(self) -> int:
        return self.n1 * self.n2 * self.n3

    @property
    def spacings(self) -> tuple[float, float, float]:
        return tuple(2.0 * L / n for L, n in zip(self.half_widths, self.shape))  # type: ignore[return-value]

    @property
    def cell_volume(self) -> float:
        h1, h2, h3 = self.spacings
        return h1 * h2 * h3

    def axis(self, index: int) -> np.ndarray:
        # Sample points -L + j*h along one axis.
        n = self.shape[index]
        half_width = self.half_widths[index]
        return -half_width + (2.0 * half_width / n) * np.arange(n)

    def wavenumbers(self, index: int) -> np.ndarray:
        # Angular wavenumbers in FFT order with the Nyquist mode zeroed.
        n = self.shape[index]
        k = 2.0 * np.pi * np.fft.fftfreq(n, d=self.spacings[index])
        k[n // 2] = 0.0
        return k

    def nyquist(self, index: int) -> float:
        return np.pi / self.spacings[index]

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        # Broadcastable coordinate arrays of shapes (n1,1,1), (1,n2,1), (1,1,n3).
        return (
            self.axis(0)[:, None, None],
            self.axis(1)[None, :, None],
            self.axis(2)[None, None, :],
        )

    @cached_property
    def kvecs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            self.wavenumbers(0)[:, None, None],
            self.wavenumbers(1)[None, :, None],
            self.wavenumbers(2)[None, None, :],
        )

    @cached_property
    def k_squared(self) -> np.ndarray:
        k1, k2, k3 = self.kvecs
        return k1**2 + k2**2 + k3**2

    @cached_property
    def radius_squared(self) -> np.ndarray:
        x1, x2, x3 = self.coords
        return x1**2 + x2**2 + x3**2

    def zeros(self) -> Field:
        return Field(self, np.zeros(self.shape, dtype=np.complex128))


@lru_cache(maxsize=16)
def _trap_shape(grid: GridSpec, k: float) -> np.ndarray:
    values = grid.radius_squared ** (0.5 * k)
    values.flags.writeable = False
    return values


def trap_potential(grid: GridSpec, omega: float, k: float) -> np.ndarray:
    return omega * _trap_shape(grid, float(k))


@dataclass(frozen=True)
class ProblemParams:
    omega: float
    k: float
    mu: float
    m: float
    l: float
    rho: float

    def __post_init__(self) -> None:
        checks = (
            ("omega", self.omega > 0),
            ("k", self.k >= 2),
            ("mu", self.mu >= 0),
            ("m", self.m > 0),
            ("rho", self.rho > 0),
        )
        for name, ok in checks:
            if not ok:
                raise ValueError(f"invalid {name}: {getattr(self, name)!r}")
        if not np.isfinite(self.l):
            raise ValueError(f"invalid l: {self.l!r}")

    def as_tuple(self) -> tuple[float, float, float, float, float, float]:
        return (
            float(self.omega),
            float(self.k),
            float(self.mu),
            float(self.m),
            float(self.l),
            float(self.rho),
        )


@dataclass(frozen=True, eq=False)
class Field:
    # values: read-only C-ordered (n1, n2, n3) array, x3 fastest when flattened.
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        array = np.array(self.values, dtype=np.complex128, order="C", copy=True)
        if array.size != self.grid.size:
            raise GridMismatchError(
                "field size does not match grid", size=array.size, expected=self.grid.size
            )
        array = array.reshape(self.grid.shape)
        if not np.isfinite(array).all():
            raise NonFiniteFieldError("non-finite values in field", count=int((~np.isfinite(array)).sum()))
        array.flags.writeable = False
        object.__setattr__(self, "values", array)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def require_grid(self, other: Field) -> None:
        if other.grid != self.grid:
            raise GridMismatchError("fields live on different grids", left=self.grid, right=other.grid)

    def with_values(self, values: np.ndarray) -> Field:
        return Field(self.grid, values)

    def __add__(self, other: Field) -> Field:
        self.require_grid(other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: Field) -> Field:
        self.require_grid(other)
        return Field(self.grid, self.values - other.values)

    def __mul__(self, scalar: complex) -> Field:
        return Field(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> Field:
        return Field(self.grid, -self.values)

    def equals(self, other: Field) -> bool:
        return self.grid == other.grid and np.array_equal(self.values, other.values)


def inner(u: Field, v: Field) -> complex:
    u.require_grid(v)
    return complex(np.vdot(u.values, v.values)) * u.grid.cell_volume


def real_inner(u: Field, v: Field) -> float:
    return inner(u, v).real


def l2_norm(u: Field) -> float:
    return float(np.sqrt(max(real_inner(u, u), 0.0)))


def spectral_derivative(values: np.ndarray, grid: GridSpec, axis: int) -> np.ndarray:
    # d/dx_axis by a one-dimensional FFT along that axis.
    k = grid.kvecs[axis]
    return np.fft.ifft(1j * k * np.fft.fft(values, axis=axis), axis=axis)


def spectral_gradient(values: np.ndarray, grid: GridSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    transformed = np.fft.fftn(values)
    return tuple(np.fft.ifftn(1j * k * transformed) for k in grid.kvecs)  # type: ignore[return-value]


def laplacian(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.fft.ifftn(-grid.k_squared * np.fft.fftn(values))


def kinetic_sum(values: np.ndarray, grid: GridSpec) -> float:
    # 1/2 * ||grad u||^2 through Parseval on the spectral derivative.
    transformed = np.fft.fftn(values)
    weight = grid.cell_volume / grid.size
    return 0.5 * weight * float(np.sum(grid.k_squared * np.abs(transformed) ** 2))


def apply_fourier_multiplier(values: np.ndarray, multiplier: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(multiplier * np.fft.fftn(values))
