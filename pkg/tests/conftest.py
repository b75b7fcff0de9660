from __future__ import annotations

import numpy as np
import pytest

from cqnls.constants import sharp_constants
from cqnls.grid import Field, GridSpec, ProblemParams
from cqnls.minimize import MinimizerConfig, solve_local_min
from cqnls.seeds import make_rng, make_seed, random_smooth_field


@pytest.fixture(scope="session")
def grid() -> GridSpec:
    # Fine enough for unit-width Gaussians: the Nyquist tail is below 1e-12.
    return GridSpec.cube(24, 6.0)


@pytest.fixture(scope="session")
def oscillator() -> ProblemParams:
    # Harmonic trap with weak nonlinearity: a small-mass local minimiser sits deep inside the ball.
    return ProblemParams(omega=0.5, k=2.0, mu=0.1, m=0.5, l=0.0, rho=2.0)


@pytest.fixture
def vortex_mix(grid: GridSpec) -> Field:
    # Ground mode plus a singly quantised vortex; not rotation-invariant.
    return make_seed(grid, 0.5, 0.2, widths=1.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return make_rng(20240601)


@pytest.fixture
def smooth_field(grid: GridSpec, rng: np.random.Generator) -> Field:
    return random_smooth_field(grid, rng, envelope_width=1.2, cutoff=1.5)


@pytest.fixture(scope="session")
def consts():
    return sharp_constants()


@pytest.fixture(scope="session")
def tight_minimizer() -> MinimizerConfig:
    return MinimizerConfig(grad_tol=1e-7, max_iters=3000)


@pytest.fixture(scope="session")
def ground_state(grid, oscillator, tight_minimizer, consts):
    return solve_local_min(grid, oscillator, tight_minimizer, consts)
