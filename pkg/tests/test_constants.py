from __future__ import annotations

import numpy as np
import pytest

from cqnls.constants import (
    TALENTI_SOBOLEV,
    SharpConstants,
    gn_constant,
    gn_ratio,
    ground_state_profile,
    inequality_margins,
    sobolev_constant,
    sobolev_ratio,
)
from cqnls.functionals import functionals
from cqnls.grid import ProblemParams
from cqnls.seeds import make_rng, random_smooth_field

PARAMS = ProblemParams(omega=0.5, k=2.0, mu=0.1, m=1.0, l=0.0, rho=2.0)


def test_s4_mass_identity(consts):
    assert consts.S4 == pytest.approx(2.0 / consts.U4_mass, rel=1e-14)
    assert consts.S4 == pytest.approx(gn_constant(4.0), rel=1e-14)


def test_ground_state_attains_gn_equality():
    profile = ground_state_profile(4.0)
    assert profile.U[0] == profile.beta
    assert np.all(np.diff(profile.U) <= 0)
    assert gn_ratio(profile) == pytest.approx(gn_constant(4.0), rel=1e-6)
    # Pohozaev for the normalised q = 4 equation: ||grad U||^2 = ||U||^2.
    assert profile.gradient_squared == pytest.approx(profile.mass, rel=1e-6)


def test_ground_state_mass_value():
    # U(r) = 2^{-1/2} Q(r / sqrt 3) with Q the unit cubic ground state of mass ~18.94.
    assert ground_state_profile(4.0).mass == pytest.approx(0.5 * 3.0**1.5 * 18.9481, rel=1e-3)


def test_cubic_nonlinearity_exponent():
    profile = ground_state_profile(3.0)
    assert gn_ratio(profile) == pytest.approx(gn_constant(3.0), rel=1e-5)


@pytest.mark.parametrize("q", [2.0, 6.0, 7.5])
def test_gn_exponent_range(q):
    with pytest.raises(ValueError):
        ground_state_profile(q)


def test_sobolev_ratio_is_scale_free():
    values = [sobolev_ratio(eps) for eps in (0.5, 1.0, 2.0)]
    for value in values:
        assert value == pytest.approx(TALENTI_SOBOLEV, rel=1e-8)
    assert sobolev_constant() == pytest.approx(TALENTI_SOBOLEV, rel=1e-8)


def test_sobolev_ratio_rejects_nonpositive_scale():
    with pytest.raises(ValueError):
        sobolev_ratio(0.0)


def test_sharp_constants_must_be_positive():
    with pytest.raises(ValueError):
        SharpConstants(S4=0.0, Ssob=1.0, U4_mass=1.0)


@pytest.mark.parametrize("seed", [5, 6, 7])
def test_inequalities_hold_on_smooth_fields(grid, consts, seed):
    u = random_smooth_field(grid, make_rng(seed), envelope_width=1.2, cutoff=1.5) * 3.0
    margins = inequality_margins(functionals(u, PARAMS), consts)
    assert margins.holds
    assert margins.gn > 0
    assert margins.sobolev > 0
