import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from wetbeam.config import ExperimentConfig
from wetbeam.errors import ConfigurationError, DegenerateGeometryError
from wetbeam.geometry import (TX_BORESIGHT, boresight_angle, build_scenario, feeder_polygon,
                              its_grid, sample_devices)


def test_two_by_two_grid():
    pos = its_grid(4, 0.03)
    expected = {(-0.015, -0.015), (0.015, -0.015), (-0.015, 0.015), (0.015, 0.015)}
    assert {(round(x, 12), round(y, 12)) for x, y, _ in pos} == expected
    assert np.all(pos[:, 2] == 0)


def test_feeder_radius_for_four_antennas():
    cfg = ExperimentConfig(f_c=2.998e8 / 0.06)
    assert cfg.feeder_radius == pytest.approx(0.06 / (2 * math.sin(math.pi / 4)), rel=1e-12)
    assert cfg.feeder_radius == pytest.approx(0.04243, abs=5e-6)


def test_same_seed_gives_same_devices():
    cfg = ExperimentConfig()
    a = build_scenario(cfg, seed=7).devices.positions
    b = build_scenario(cfg, seed=7).devices.positions
    c = build_scenario(cfg, seed=8).devices.positions
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_scenario_planes():
    cfg = ExperimentConfig(M=9, N=3, K=5)
    geom = build_scenario(cfg, seed=0)
    assert geom.its.M == 9
    np.testing.assert_allclose(geom.feeder.positions[:, 2], cfg.feeder_distance)
    np.testing.assert_allclose(geom.devices.positions[:, 2], -cfg.d_z)
    assert np.all(np.abs(geom.devices.positions[:, 0]) <= cfg.d_x / 2)
    assert np.all(np.abs(geom.devices.positions[:, 1]) <= cfg.d_y / 2)


def test_explicit_devices_must_face_radiating_side():
    with pytest.raises(ConfigurationError):
        build_scenario(ExperimentConfig(K=1), device_positions=[(0, 0, 1.0)])


@pytest.mark.parametrize("bad", [dict(d_x=0.0), dict(d_z=-1.0)])
def test_nonpositive_dimensions_rejected(bad):
    with pytest.raises(ConfigurationError):
        ExperimentConfig().replace(**bad)


def test_single_feeder_on_axis():
    pos, bore = feeder_polygon(1, 0.5, 1.0)
    np.testing.assert_allclose(pos, [[0, 0, 1.0]])
    np.testing.assert_allclose(bore, [[0, 0, -1.0]])


def test_boresights_point_at_centre():
    pos, bore = feeder_polygon(5, 0.2, 0.7)
    np.testing.assert_allclose(bore, -pos / np.linalg.norm(pos, axis=1, keepdims=True))


@pytest.mark.parametrize("target, expected", [
    ((0, 0, -3), 0.0),
    ((2, 0, 0), math.pi / 2),
    ((1, 0, -1), math.pi / 4),
])
def test_boresight_angle_values(target, expected):
    assert boresight_angle((0, 0, 0), TX_BORESIGHT, target) == pytest.approx(expected, abs=1e-12)


def test_boresight_angle_errors():
    with pytest.raises(DegenerateGeometryError):
        boresight_angle((1, 2, 3), TX_BORESIGHT, (1, 2, 3))
    with pytest.raises(ConfigurationError):
        boresight_angle((0, 0, 0), (0, 0, -2), (1, 0, 0))


@given(st.integers(1, 500), st.floats(1e-3, 1.0))
def test_grid_is_centred(M, spacing):
    pos = its_grid(M, spacing)
    assert pos.shape == (M, 3)
    np.testing.assert_allclose(pos.mean(axis=0), 0, atol=1e-12)


@given(st.integers(2, 12), st.floats(1e-3, 2.0), st.floats(1e-2, 5.0))
def test_polygon_vertices_on_circle(N, radius, distance):
    pos, _ = feeder_polygon(N, radius, distance)
    np.testing.assert_allclose(np.hypot(pos[:, 0], pos[:, 1]), radius, atol=1e-12)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_boresight_angle_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    src, tgt = rng.normal(size=3), rng.normal(size=3)
    bore = rng.normal(size=3)
    bore /= np.linalg.norm(bore)
    R = Rotation.random(random_state=seed).as_matrix()
    rb = R @ bore
    rb /= np.linalg.norm(rb)
    assert boresight_angle(R @ src, rb, R @ tgt) == pytest.approx(
        boresight_angle(src, bore, tgt), abs=1e-10)


def test_device_sampling_is_uniform_by_quadrant():
    rng = np.random.default_rng(0)
    pos = sample_devices(10_000, 3.0, 3.0, 5.0, rng)
    quadrants = np.bincount(2 * (pos[:, 0] > 0) + (pos[:, 1] > 0), minlength=4) / 10_000
    np.testing.assert_allclose(quadrants, 0.25, atol=0.02)
