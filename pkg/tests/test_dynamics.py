from __future__ import annotations

import numpy as np
import pytest

from cqnls import dynamics
from cqnls.dynamics import (
    PropagatorConfig,
    TrajectoryStats,
    kinetic_rotation_step,
    orbit_distance,
    perturb,
    propagate,
    stability_experiment,
    step,
)
from cqnls.errors import NonFiniteFieldError, PropagationError, ResolutionError
from cqnls.functionals import functionals, rotate, sigma_norm
from cqnls.grid import Field, GridSpec, l2_norm
from cqnls.seeds import make_rng, make_seed


def _gaussian_vortex(grid) -> Field:
    x1, x2, _ = grid.coords
    return Field(grid, (x1 + 1j * x2) * np.exp(-grid.radius_squared / 2.0))


@pytest.mark.parametrize(
    "kwargs",
    [{"dt": 0.0}, {"dt": 0.1, "t_final": 0.05}, {"record_every": 0}, {"snapshot_every": -1}, {"min_dt_fraction": 2.0}],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        PropagatorConfig(**kwargs)


def test_trajectory_stats_drifts():
    stats = TrajectoryStats(
        times=[0.0, 1.0, 2.0],
        mass_series=[2.0, 2.0 + 2e-9, 2.0 - 4e-9],
        energy_series=[-1.0, -1.5, -0.9],
        angmom_series=[0.0, 0.1, -0.2],
    )
    assert stats.mass_drift == pytest.approx(2e-9)
    assert stats.energy_drift == pytest.approx(0.5)
    assert stats.angmom_drift == pytest.approx(0.1)
    assert np.isnan(stats.max_excursion)
    rows = stats.rows()
    assert list(rows[0]) == ["t", "mass", "energy", "angmom", "dist"]
    assert np.isnan(rows[0]["dist"])


def test_zero_rotation_reduces_to_free_propagator(smooth_field):
    grid = smooth_field.grid
    dt = 0.05
    expected = np.fft.ifftn(np.exp(-0.5j * dt * grid.k_squared) * np.fft.fftn(smooth_field.values))
    np.testing.assert_allclose(kinetic_rotation_step(smooth_field, dt, 0.0).values, expected, atol=1e-12)


def test_rotation_of_vortex_is_a_phase(grid):
    u = _gaussian_vortex(grid)
    dt, Omega = 1e-3, 0.5
    rotating = kinetic_rotation_step(u, dt, Omega)
    still = kinetic_rotation_step(u, dt, 0.0)
    assert l2_norm(rotating - still * np.exp(1j * dt * Omega)) <= 1e-6 * l2_norm(u)


def test_mass_is_conserved(vortex_mix, oscillator):
    stats = propagate(vortex_mix, oscillator, PropagatorConfig(dt=1e-2, t_final=0.2, record_every=1))
    assert stats.mass_drift <= 1e-10
    assert stats.times[-1] == pytest.approx(0.2)
    assert len(stats.times) == 21


@pytest.mark.parametrize("Omega", [0.0, 0.7])
def test_angular_momentum_is_conserved(oscillator, Omega):
    # A wider box than the shared fixture keeps the Gaussian tail far below rounding at the edge.
    wide = GridSpec.cube(40, 8.0)
    u = make_seed(wide, oscillator.m, 0.2, widths=1.0)
    cfg = PropagatorConfig(dt=1e-2, t_final=1.0, record_every=10, rotation_Omega=Omega)
    stats = propagate(u, oscillator, cfg)
    assert abs(stats.angmom_series[0]) > 0.05
    assert stats.angmom_drift <= 1e-8
    assert stats.mass_drift <= 1e-10


def test_energy_error_is_second_order(vortex_mix, oscillator):
    coarse = propagate(vortex_mix, oscillator, PropagatorConfig(dt=2e-2, t_final=0.4, record_every=1))
    fine = propagate(vortex_mix, oscillator, PropagatorConfig(dt=1e-2, t_final=0.4, record_every=1))
    ratio = coarse.energy_drift / fine.energy_drift
    assert 2.5 <= ratio <= 6.0


def test_stationary_state_only_turns_its_phase(ground_state, oscillator):
    cfg = PropagatorConfig(dt=1e-3, t_final=0.1)
    u = ground_state.field
    for _ in range(100):
        u = step(u, oscillator, cfg)
    expected = ground_state.field * np.exp(-1j * ground_state.lam * 0.1)
    assert l2_norm(u - expected) <= 1e-4 * l2_norm(ground_state.field)


@pytest.mark.slow
def test_stationary_state_keeps_its_phase_over_long_times(ground_state, oscillator):
    cfg = PropagatorConfig(dt=1e-3, t_final=5.0)
    u = ground_state.field
    for _ in range(5000):
        u = step(u, oscillator, cfg)
    expected = ground_state.field * np.exp(-1j * ground_state.lam * 5.0)
    assert l2_norm(u - expected) <= 1e-4 * l2_norm(ground_state.field)


def test_nonlinear_phase_limit(ground_state, oscillator):
    with pytest.raises(ResolutionError):
        step(ground_state.field * 3.0, oscillator, PropagatorConfig(dt=5.0, t_final=5.0))


def test_snapshots_follow_the_step_count(ground_state, oscillator):
    cfg = PropagatorConfig(dt=1e-2, t_final=0.1, snapshot_every=5)
    stats = propagate(ground_state.field, oscillator, cfg)
    assert [t for t, _ in stats.snapshots] == pytest.approx([0.05, 0.1])


def test_nan_aborts_with_last_good_field(monkeypatch, ground_state, oscillator):
    def poisoned(u, p, cfg, dt=None):
        raise NonFiniteFieldError("field contains NaN")

    monkeypatch.setattr(dynamics, "step", poisoned)
    with pytest.raises(PropagationError) as info:
        propagate(ground_state.field, oscillator, PropagatorConfig(dt=1e-2, t_final=0.1))
    assert info.value.last_good is ground_state.field


def test_step_underflow_aborts(monkeypatch, ground_state, oscillator):
    calls = []

    def unresolved(u, p, cfg, dt=None):
        calls.append(dt)
        raise ResolutionError("tail", dt=dt)

    monkeypatch.setattr(dynamics, "step", unresolved)
    cfg = PropagatorConfig(dt=1e-2, t_final=0.1, min_dt_fraction=0.25)
    with pytest.raises(PropagationError) as info:
        propagate(ground_state.field, oscillator, cfg)
    assert info.value.last_good is ground_state.field
    assert calls == pytest.approx([1e-2, 5e-3, 2.5e-3])


def test_orbit_distance_quotients_symmetries(vortex_mix, oscillator):
    scale = sigma_norm(vortex_mix, oscillator)
    assert orbit_distance(vortex_mix, vortex_mix, oscillator) <= 1e-6 * scale
    assert orbit_distance(vortex_mix * np.exp(0.4j), vortex_mix, oscillator) <= 1e-6 * scale
    assert orbit_distance(rotate(vortex_mix, 0.8), vortex_mix, oscillator) <= 1e-3 * scale
    assert orbit_distance(vortex_mix * 1.5, vortex_mix, oscillator) == pytest.approx(0.5 * scale, rel=1e-6)


def test_perturbation_stays_on_the_constraint_set(ground_state, oscillator):
    assert perturb(ground_state.field, 0.0, oscillator, make_rng(1)) is ground_state.field
    moved = perturb(ground_state.field, 1e-2, oscillator, make_rng(1))
    report = functionals(moved, oscillator)
    assert report.mass == pytest.approx(oscillator.m, abs=1e-10)
    assert abs(report.angmom - oscillator.l) <= 1e-10
    assert 0 < orbit_distance(moved, ground_state.field, oscillator) <= 5e-2


def test_unperturbed_minimiser_stays_on_its_orbit(ground_state, oscillator):
    cfg = PropagatorConfig(dt=1e-3, t_final=0.05, record_every=10)
    stats = stability_experiment(ground_state, 0.0, oscillator, cfg, make_rng(3))
    assert len(stats.dist_series) == len(stats.times)
    assert stats.max_excursion <= 1e-4
    assert stats.mass_drift <= 1e-10


def test_stability_rejects_negative_eps(ground_state, oscillator):
    with pytest.raises(ValueError):
        stability_experiment(ground_state, -1e-3, oscillator, PropagatorConfig(), make_rng(3))
