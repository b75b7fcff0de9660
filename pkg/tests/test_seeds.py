from __future__ import annotations

import numpy as np
import pytest

from cqnls.errors import InfeasibleSeedError
from cqnls.functionals import functionals
from cqnls.grid import ProblemParams
from cqnls.seeds import harmonic_order, make_rng, make_seed, random_smooth_field

PARAMS = ProblemParams(omega=0.5, k=2.0, mu=0.1, m=1.0, l=0.0, rho=2.0)


def test_rng_is_reproducible():
    assert np.array_equal(make_rng(42).standard_normal(8), make_rng(42).standard_normal(8))
    assert not np.array_equal(make_rng(42).standard_normal(8), make_rng(43).standard_normal(8))


@pytest.mark.parametrize(
    ("m", "l", "expected"),
    [(1.0, 0.0, 1), (1.0, 0.5, 1), (1.0, 1.0, 1), (1.0, 2.5, 3), (1.0, -2.5, -3), (2.0, -1.0, -1)],
)
def test_harmonic_order(m, l, expected):
    assert harmonic_order(m, l) == expected


@pytest.mark.parametrize(("m", "l"), [(0.5, 0.0), (0.5, 0.2), (0.8, -0.3), (1.0, 1.0)])
def test_seed_hits_both_constraints(grid, m, l):
    report = functionals(make_seed(grid, m, l, widths=1.0), PARAMS)
    assert report.mass == pytest.approx(m, rel=1e-8)
    assert report.angmom == pytest.approx(l, rel=1e-6, abs=1e-10)


def test_seed_rejects_nonpositive_mass(grid):
    with pytest.raises(InfeasibleSeedError):
        make_seed(grid, 0.0, 0.0)
    with pytest.raises(ValueError):
        make_seed(grid, -1.0, 0.0)


def test_seed_rejects_bad_widths(grid):
    with pytest.raises(ValueError):
        make_seed(grid, 1.0, 0.0, widths=(1.0, -1.0))


def test_random_field_is_seed_determined(grid):
    first = random_smooth_field(grid, make_rng(9), envelope_width=1.5)
    second = random_smooth_field(grid, make_rng(9), envelope_width=1.5)
    third = random_smooth_field(grid, make_rng(10), envelope_width=1.5)
    assert first.equals(second)
    assert not first.equals(third)
