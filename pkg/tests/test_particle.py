import math

import numpy as np
import pytest

from mvstop.model import InitialLaw, constant_mark, make_quit_model, make_sell_model
from mvstop.particle import (
    CommonNoisePath,
    ParticleCloud,
    SimulationError,
    conditional_pairing,
    init_cloud,
    kde_density,
    silverman_bandwidth,
    simulate_path,
    step,
)


def test_common_noise_path_grid():
    path = CommonNoisePath.sample(1.0, 0.25, np.random.default_rng(0))
    assert path.increments.shape == (4,)
    np.testing.assert_allclose(path.times(), [0.0, 0.25, 0.5, 0.75, 1.0])
    b = path.brownian()
    assert b[0] == 0.0
    assert b[-1] == pytest.approx(path.increments.sum())


def test_common_noise_variance():
    path = CommonNoisePath.sample(100.0, 0.01, np.random.default_rng(1))
    assert path.increments.var() == pytest.approx(0.01, rel=0.05)


def test_init_cloud_and_pairing():
    cloud = init_cloud(InitialLaw("point", 1.5), 100, np.random.default_rng(0))
    assert cloud.n == 100
    assert conditional_pairing(cloud) == 1.5
    assert conditional_pairing(cloud, q=lambda x: x**2) == pytest.approx(2.25)
    assert conditional_pairing(cloud, compensated=True) == pytest.approx(1.5)


def test_step_moments_quit_model():
    spec = make_quit_model(0.4, 0.3)
    cloud = ParticleCloud(0.0, np.zeros(200_000))
    new = step(cloud, spec, 0.01, dB1=0.05, rng=np.random.default_rng(2))
    # every particle moves by b1 dB1 plus its own N(0, b2^2 dt)
    assert new.time == pytest.approx(0.01)
    assert new.states.mean() == pytest.approx(0.4 * 0.05, abs=1e-3)
    assert new.states.std() == pytest.approx(0.3 * 0.1, rel=0.01)


def test_no_idiosyncratic_noise_is_rigid_translation():
    spec = make_quit_model(0.4, 0.0, initial_law=InitialLaw("normal", 0.0, 0.3))
    rng = np.random.default_rng(3)
    common = CommonNoisePath.sample(0.5, 0.01, rng)
    cloud0 = init_cloud(spec.initial_law, 1000, np.random.default_rng(4))
    cloud = cloud0
    for dB1 in common.increments:
        cloud = step(cloud, spec, 0.01, float(dB1), np.random.default_rng(5))
    np.testing.assert_allclose(
        cloud.states, cloud0.states + 0.4 * common.brownian()[-1], atol=1e-12
    )


def test_compensated_jumps_keep_conditional_mean():
    spec = make_sell_model(0.0, 0.2, 0.0, constant_mark(2.0, -0.3))
    common = CommonNoisePath(0.01, np.zeros(50))   # freeze the common noise
    result = simulate_path(spec, 0.5, 0.01, 100_000, common, np.random.default_rng(6))
    # with B1 = 0 and alpha0 = 0 the conditional mean must stay at 1
    assert abs(result.m_bar[-1] - 1.0) < 0.01


def test_floor_counts_events():
    spec = make_quit_model(0.4, 2.0, initial_law=InitialLaw("normal", 0.0, 0.1))
    common = CommonNoisePath.sample(0.2, 0.01, np.random.default_rng(7))
    result = simulate_path(
        spec, 0.2, 0.01, 500, common, np.random.default_rng(8), floor=0.0
    )
    assert result.floor_events > 0
    assert np.all(result.m_bar >= 0)


def test_path_requires_matching_grid():
    spec = make_quit_model(0.4, 0.3)
    common = CommonNoisePath.sample(0.5, 0.02, np.random.default_rng(9))
    with pytest.raises(ValueError):
        simulate_path(spec, 1.0, 0.02, 10, common, np.random.default_rng(0))
    with pytest.raises(ValueError):
        simulate_path(spec, 0.5, 0.01, 10, common, np.random.default_rng(0))


def test_snapshots_recorded():
    spec = make_quit_model(0.4, 0.3)
    common = CommonNoisePath.sample(0.5, 0.01, np.random.default_rng(10))
    result = simulate_path(
        spec, 0.5, 0.01, 50, common, np.random.default_rng(11),
        snapshot_times=(0.0, 0.25, 0.5),
    )
    assert set(result.snapshots) == {0.0, 0.25, 0.5}
    assert result.snapshots[0.5].time == pytest.approx(0.5)


def test_non_finite_state_raises():
    spec = make_quit_model(0.4, 0.3)
    cloud = ParticleCloud(0.0, np.array([0.0, np.inf, 1.0]))
    with pytest.raises(SimulationError):
        step(cloud, spec, 0.01, 0.0, np.random.default_rng(0))


class TestKde:
    def test_silverman_scale(self):
        states = np.random.default_rng(12).normal(0.0, 1.0, 10_000)
        h = silverman_bandwidth(states)
        assert h == pytest.approx(0.9 * 10_000 ** (-0.2), rel=0.05)

    def test_degenerate_cloud_needs_bandwidth(self):
        with pytest.raises(ValueError):
            silverman_bandwidth(np.ones(100))

    def test_kde_recovers_gaussian(self):
        rng = np.random.default_rng(13)
        cloud = ParticleCloud(0.0, rng.normal(0.0, 0.5, 50_000))
        grid = np.linspace(-3, 3, 601)
        d = kde_density(cloud, None, grid)
        assert d.mass() == pytest.approx(1.0, abs=1e-12)
        exact = np.exp(-0.5 * (grid / 0.5) ** 2) / (0.5 * math.sqrt(2 * math.pi))
        assert np.trapezoid(np.abs(d.values - exact), grid) < 0.05

    def test_narrow_grid_rejected(self):
        cloud = ParticleCloud(0.0, np.random.default_rng(14).normal(0.0, 1.0, 10_000))
        with pytest.raises(ValueError, match="grid too narrow"):
            kde_density(cloud, 0.1, np.linspace(-0.5, 0.5, 101))
