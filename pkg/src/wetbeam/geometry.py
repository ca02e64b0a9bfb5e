"""Placement of feeder antennas, ITS elements and devices.

Coordinate convention: the ITS lies in the ``z = 0`` plane centred at the
origin, the feeder sits at ``z = +d_f`` and the devices lie in the plane
``z = -d_z``.  ITS elements radiate towards ``-z`` and receive from ``+z``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateGeometryError

TX_BORESIGHT = np.array([0.0, 0.0, -1.0])
RX_BORESIGHT = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class ItsLayout:
    """Rectangular grid of ITS elements.

    Attributes
    ----------
    positions : ndarray, shape (M, 3)
    spacing : float
        Inter-element distance along x and y.
    tx_boresight, rx_boresight : ndarray, shape (3,)
        Element boresights towards the devices and towards the feeder.
    """
    positions: np.ndarray
    spacing: float
    tx_boresight: np.ndarray = TX_BORESIGHT
    rx_boresight: np.ndarray = RX_BORESIGHT

    @property
    def M(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class FeederLayout:
    """Feeder antennas on a regular polygon, each aimed at the ITS centre."""
    positions: np.ndarray
    boresights: np.ndarray
    radius: float
    distance: float

    @property
    def N(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class DeviceDeployment:
    positions: np.ndarray
    d_x: float
    d_y: float
    d_z: float

    @property
    def K(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class ScenarioGeometry:
    its: ItsLayout
    feeder: FeederLayout
    devices: DeviceDeployment


def its_grid(M: int, spacing: float) -> np.ndarray:
    """Centred grid with ``ceil(sqrt(M))`` columns filled row-major.

    >>> its_grid(4, 0.03)[:, :2]
    array([[-0.015, -0.015],
           [ 0.015, -0.015],
           [-0.015,  0.015],
           [ 0.015,  0.015]])
    """
    if M < 1:
        raise ConfigurationError("M must be >= 1")
    if not spacing > 0:
        raise ConfigurationError("element spacing must be positive")
    cols = math.isqrt(M - 1) + 1
    idx = np.arange(M)
    xy = np.stack([idx % cols, idx // cols], axis=1).astype(float) * spacing
    xy -= xy.mean(axis=0)
    return np.column_stack([xy, np.zeros(M)])


def feeder_polygon(N: int, radius: float, distance: float) -> tuple[np.ndarray, np.ndarray]:
    """Vertices of a regular N-gon at height ``distance`` and their boresights."""
    if N < 1:
        raise ConfigurationError("N must be >= 1")
    if radius < 0 or not distance > 0:
        raise ConfigurationError("feeder radius must be >= 0 and distance > 0")
    if N == 1:
        radius = 0.0
    ang = 2 * np.pi * np.arange(N) / N
    pos = np.column_stack([radius * np.cos(ang), radius * np.sin(ang), np.full(N, distance)])
    bore = -pos / np.linalg.norm(pos, axis=1, keepdims=True)
    return pos, bore


def sample_devices(K: int, d_x: float, d_y: float, d_z: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform positions over the ``d_x`` by ``d_y`` rectangle at ``z = -d_z``."""
    if K < 1:
        raise ConfigurationError("K must be >= 1")
    if min(d_x, d_y, d_z) <= 0:
        raise ConfigurationError("service area dimensions must be positive")
    x = rng.uniform(-d_x / 2, d_x / 2, K)
    y = rng.uniform(-d_y / 2, d_y / 2, K)
    return np.column_stack([x, y, np.full(K, -d_z)])


def build_scenario(config, seed: int | np.random.SeedSequence | None = None,
                   device_positions=None) -> ScenarioGeometry:
    """Build the scenario for one realization.

    Parameters
    ----------
    config : ExperimentConfig
    seed : int or SeedSequence
        Seed of the device placement; the same seed gives the same devices.
    device_positions : array_like, shape (K, 3), optional
        Explicit device coordinates replacing the random draw.
    """
    spacing = config.element_spacing
    its = ItsLayout(its_grid(config.M, spacing), spacing)
    fpos, fbore = feeder_polygon(config.N, config.feeder_radius, config.feeder_distance)
    feeder = FeederLayout(fpos, fbore, 0.0 if config.N == 1 else config.feeder_radius,
                          config.feeder_distance)
    if device_positions is None:
        rng = np.random.default_rng(seed)
        upos = sample_devices(config.K, config.d_x, config.d_y, config.d_z, rng)
    else:
        upos = np.atleast_2d(np.asarray(device_positions, dtype=float))
        if upos.shape[1] != 3:
            raise ConfigurationError("device positions must have shape (K, 3)")
        if np.any(upos[:, 2] >= 0):
            raise ConfigurationError("devices must lie on the radiating side (z < 0)")
    devices = DeviceDeployment(upos, config.d_x, config.d_y, config.d_z)
    return ScenarioGeometry(its, feeder, devices)


def boresight_angle(source_pos, source_boresight, target_pos) -> np.ndarray:
    """Angle between a boresight and the direction from source to target.

    All arguments broadcast over leading dimensions; the last axis has
    length 3.

    Returns
    -------
    ndarray
        Angle in radians in ``[0, pi]``.
    """
    src = np.asarray(source_pos, dtype=float)
    bore = np.asarray(source_boresight, dtype=float)
    tgt = np.asarray(target_pos, dtype=float)
    if np.any(np.abs(np.linalg.norm(bore, axis=-1) - 1.0) > 1e-12):
        raise ConfigurationError("boresight vectors must have unit norm")
    diff = tgt - src
    dist = np.linalg.norm(diff, axis=-1)
    if np.any(dist == 0):
        raise DegenerateGeometryError("source and target coincide")
    cosang = np.sum(bore * diff, axis=-1) / dist
    return np.arccos(np.clip(cosang, -1.0, 1.0))
