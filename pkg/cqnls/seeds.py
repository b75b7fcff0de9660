from __future__ import annotations

import logging
import math
from collections.abc import Sequence

import numpy as np

from cqnls.errors import InfeasibleSeedError
from cqnls.grid import Field, GridSpec, l2_norm

logger = logging.getLogger(__name__)


def make_rng(seed: int) -> np.random.Generator:
    # PCG64 generator; the only source of randomness in a run
    return np.random.Generator(np.random.PCG64(seed))


def harmonic_order(m: float, l: float) -> int:
    # Signed winding n with |l|/|n| <= m, the lowest harmonic that can carry l.
    if l == 0:
        return 1
    n = 1 if abs(l) <= m else math.ceil(abs(l) / m)
    return n if l > 0 else -n


def _unit_mode(grid: GridSpec, width: float, n: int) -> np.ndarray:
    x1, x2, _ = grid.coords
    envelope = np.exp(-grid.radius_squared / (2.0 * width**2))
    if n == 0:
        mode = envelope.astype(np.complex128)
    else:
        winding = (x1 + 1j * np.sign(n) * x2) / width
        mode = winding ** abs(n) * envelope
    return mode / l2_norm(Field(grid, mode))


def make_seed(grid: GridSpec, m: float, l: float, widths: float | Sequence[float] = 1.0) -> Field:
    # c0 g0(r,z) + c1 g1(r,z) e^{i n theta} with |c0|^2 + |c1|^2 = m and n |c1|^2 = l
    if not m > 0:
        raise InfeasibleSeedError("seed mass must be positive", m=m)
    if isinstance(widths, (int, float)):
        widths = (float(widths), float(widths))
    w0, w1 = (tuple(widths) * 2)[:2]
    if not (w0 > 0 and w1 > 0):
        raise ValueError(f"seed widths must be positive, got {widths!r}")

    n = harmonic_order(m, l)
    weight1 = abs(l) / abs(n)
    weight0 = m - weight1
    values = math.sqrt(max(weight0, 0.0)) * _unit_mode(grid, w0, 0)
    if weight1 > 0:
        values = values + math.sqrt(weight1) * _unit_mode(grid, w1, n)
    logger.debug("seed m=%g l=%g: n=%d |c0|^2=%g |c1|^2=%g widths=(%g, %g)", m, l, n, weight0, weight1, w0, w1)
    return Field(grid, values)


def random_smooth_field(grid: GridSpec, rng: np.random.Generator, envelope_width: float, cutoff: float = 1.0) -> Field:
    noise = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    filtered = np.fft.ifftn(np.fft.fftn(noise) * np.exp(-grid.k_squared / (2.0 * cutoff**2)))
    envelope = np.exp(-grid.radius_squared / (2.0 * envelope_width**2))
    return Field(grid, filtered * envelope)
