from __future__ import annotations

import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from cqnls.errors import PathCollapseError, RegimeError
from cqnls.functionals import dilate, functionals, gradient
from cqnls.grid import Field, real_inner
from cqnls.minimize import Classification, MinimizerConfig, fit_multipliers, project_constraints
from cqnls.mountain_pass import (
    PathResult,
    PathSpec,
    barrier_margin,
    bracket_l,
    crossing_index,
    fallback_path,
    h_profile,
    initial_path,
    l0,
    refine_saddle,
    saddle_checks,
    string_relax,
)

SHORT_PATH = PathSpec(node_count=9)


def _solution(energy: float, sigma_dot: float) -> SimpleNamespace:
    return SimpleNamespace(report=SimpleNamespace(energy=energy, sigma_dot=sigma_dot))


@pytest.fixture(scope="module")
def widened_path(ground_state, oscillator):
    return initial_path(ground_state.field, 0.7, SHORT_PATH, oscillator)


def test_path_spec_needs_enough_nodes():
    with pytest.raises(ValueError):
        PathSpec(node_count=7)
    with pytest.raises(ValueError):
        PathSpec(step=0.0)


def test_h_profile_at_unit_dilation_is_sigma_dot(ground_state, oscillator):
    u = ground_state.field
    assert h_profile(u, 1.0, oscillator) == pytest.approx(ground_state.report.sigma_dot, rel=1e-12)
    with pytest.raises(ValueError):
        h_profile(u, 0.0, oscillator)


def test_h_profile_matches_dilated_field(ground_state, oscillator):
    u = ground_state.field
    assert h_profile(u, 1.3, oscillator) == pytest.approx(functionals(dilate(u, 1.3), oscillator).sigma_dot, rel=1e-6)


def test_l0_minimises_h(ground_state, oscillator):
    u = ground_state.field
    center = l0(u, oscillator)
    best = h_profile(u, center, oscillator)
    for factor in (0.9, 0.99, 1.01, 1.1):
        assert h_profile(u, center * factor, oscillator) > best


def test_bracket_roots_sit_on_half_rho(ground_state, oscillator):
    p = replace(oscillator, rho=4.0)
    l_star, l_upper, l1 = bracket_l(ground_state.field, p)
    assert l_star < l0(ground_state.field, p) < l_upper
    assert l1 == pytest.approx(math.sqrt(l_star * l_upper), rel=1e-14)
    for root in (l_star, l_upper):
        assert h_profile(ground_state.field, root, p) == pytest.approx(2.0, abs=1e-8)


def test_bracket_fails_when_trap_dominates(ground_state, oscillator):
    p = replace(oscillator, rho=1.0)
    with pytest.raises(RegimeError) as info:
        bracket_l(ground_state.field, p)
    assert info.value.diagnostics["omega_gap"] > 0


def test_initial_path_endpoints(widened_path, ground_state):
    assert len(widened_path.nodes) == SHORT_PATH.node_count
    assert widened_path.nodes[0].equals(dilate(ground_state.field, 0.7))
    assert widened_path.nodes[-1] is ground_state.field
    assert widened_path.taus[0] == pytest.approx(0.7)
    assert widened_path.taus[-1] == pytest.approx(1.0)
    assert widened_path.ts == tuple(j / 8 for j in range(9))
    assert widened_path.gamma == max(widened_path.energies)


def test_initial_path_interior_is_feasible(widened_path, oscillator):
    for report in widened_path.reports[1:-1]:
        assert report.mass == pytest.approx(oscillator.m, abs=1e-10)
        assert abs(report.angmom) <= 1e-10


def test_path_rows_carry_profile_columns(widened_path, oscillator):
    rows = widened_path.rows(oscillator)
    assert len(rows) == SHORT_PATH.node_count
    assert set(rows[0]) == {"node_index", "t", "tau", "energy", "sigma_dot", "mass_err", "angmom_err"}
    assert rows[-1]["node_index"] == SHORT_PATH.node_count - 1


def test_crossing_index(widened_path):
    # Widening by 0.7 lifts sigma_dot from ~0.75 to ~0.95.
    assert crossing_index(widened_path, 2.0) is None
    assert crossing_index(widened_path, 1.5) == 0


def test_fallback_path_is_pinned(ground_state, oscillator):
    other = dilate(ground_state.field, 0.8)
    path = fallback_path(ground_state.field, other, SHORT_PATH, oscillator)
    assert path.nodes[0] is ground_state.field
    assert path.nodes[-1] is other
    assert all(math.isnan(tau) for tau in path.taus)
    for report in path.reports[1:-1]:
        assert report.mass == pytest.approx(oscillator.m, abs=1e-10)


def test_barrier_margin_identity(consts):
    margin = barrier_margin(8.0, 0.5, 0.08, consts)
    assert margin.gamma_lower_bound - margin.endpoint_ceiling == pytest.approx(margin.epsilon_bar, rel=1e-12)
    assert margin.endpoint_ceiling > 0.25 * 8.0


def test_saddle_checks_orderings():
    u1 = _solution(0.4, 1.0)
    u2 = _solution(-3.0, 9.0)
    good = saddle_checks(_solution(2.0, 4.0), 2.0 * (1 + 1e-6), u1, u2)
    assert good.energy_order and good.norm_order
    assert good.level_gap == pytest.approx(1e-6, rel=1e-3)
    assert good.details["E2"] == -3.0

    bad = saddle_checks(_solution(0.1, 12.0), 2.0, u1, u2)
    assert not bad.energy_order
    assert not bad.norm_order


def _sign_flip_path(ground: Field, p, count: int = 9) -> PathResult:
    # Real path from u to -u through an x3-odd state. Real fields stay real under the
    # relaxation, so the path must cross a field orthogonal to u: the first excited
    # state is its mountain pass.
    grid = ground.grid
    _, _, x3 = grid.coords
    u = Field(grid, np.abs(ground.values))
    odd = Field(grid, x3 * np.exp(-grid.radius_squared / (2.0 * 1.2**2)))
    odd = odd * math.sqrt(p.m / real_inner(odd, odd))
    ts = tuple(j / (count - 1) for j in range(count))
    nodes = [u]
    for t in ts[1:-1]:
        nodes.append(project_constraints(u * math.cos(math.pi * t) + odd * math.sin(math.pi * t), p.m, p.l))
    nodes.append(-u)
    reports = tuple(functionals(node, p) for node in nodes)
    gamma = max(report.energy for report in reports)
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


@pytest.fixture(scope="module")
def sign_flip_path(ground_state, oscillator):
    return _sign_flip_path(ground_state.field, oscillator)


@pytest.fixture(scope="module")
def relaxed_sign_flip(sign_flip_path, oscillator):
    spec = PathSpec(node_count=9, relax_iters=60, climb=False)
    return string_relax(sign_flip_path, oscillator, spec, MinimizerConfig())


def _is_single_peaked(energies) -> bool:
    peak = int(np.argmax(energies))
    rising = np.diff(energies[: peak + 1])
    falling = np.diff(energies[peak:])
    return 0 < peak < len(energies) - 1 and bool(np.all(rising > 0)) and bool(np.all(falling < 0))


def test_sign_flip_path_starts_single_peaked(sign_flip_path):
    assert _is_single_peaked(sign_flip_path.energies)
    assert sign_flip_path.peak_index == 4


def test_string_relax_pins_endpoints_and_lowers_gamma(sign_flip_path, relaxed_sign_flip, oscillator):
    assert relaxed_sign_flip.nodes[0] is sign_flip_path.nodes[0]
    assert relaxed_sign_flip.nodes[-1] is sign_flip_path.nodes[-1]
    assert relaxed_sign_flip.gamma < sign_flip_path.gamma - 0.01
    assert relaxed_sign_flip.gamma > relaxed_sign_flip.endpoint_energy
    history = np.asarray(relaxed_sign_flip.gamma_history)
    assert history[0] == sign_flip_path.gamma
    assert np.all(np.diff(history) <= 0)
    assert _is_single_peaked(relaxed_sign_flip.energies)
    for report in relaxed_sign_flip.reports[1:-1]:
        assert report.mass == pytest.approx(oscillator.m, abs=1e-10)
        assert abs(report.angmom) <= 1e-10


def test_string_relax_detects_a_barrier_free_path(widened_path, oscillator):
    # The widened path peaks at its own endpoint, so relaxing it cannot keep a barrier.
    with pytest.raises(PathCollapseError):
        string_relax(widened_path, oscillator, SHORT_PATH, MinimizerConfig())


def test_climbing_image_lowers_the_peak_residual(relaxed_sign_flip, oscillator):
    spec = PathSpec(node_count=9, relax_iters=0, climb=True, climb_iters=40)
    peak = relaxed_sign_flip.nodes[relaxed_sign_flip.peak_index]
    before = fit_multipliers(peak, gradient(peak, oscillator))[2]
    climbed = string_relax(relaxed_sign_flip, oscillator, spec, MinimizerConfig())
    after_peak = climbed.nodes[relaxed_sign_flip.peak_index]
    assert climbed.climbed
    assert fit_multipliers(after_peak, gradient(after_peak, oscillator))[2] <= before
    assert climbed.gamma == max(climbed.energies)


def test_refine_saddle_reaches_the_excited_state(sign_flip_path, oscillator):
    cfg = MinimizerConfig(grad_tol=1e-6)
    peak = sign_flip_path.nodes[sign_flip_path.peak_index]
    start_kkt = fit_multipliers(peak, gradient(peak, oscillator))[2]
    saddle = refine_saddle(sign_flip_path, oscillator, cfg)
    assert saddle.classification is Classification.SADDLE
    assert saddle.kkt_residual <= cfg.grad_tol < start_kkt
    assert saddle.report.mass == pytest.approx(oscillator.m, abs=cfg.constraint_tol)
    assert abs(saddle.report.angmom) <= cfg.constraint_tol
    assert sign_flip_path.endpoint_energy < saddle.report.energy < sign_flip_path.gamma
