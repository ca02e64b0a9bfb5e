"""Near-field line-of-sight channels between feeder, ITS and devices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, ParameterError, ShapeError
from .geometry import ScenarioGeometry, boresight_angle


@dataclass(frozen=True)
class RadiationParams:
    """Boresight gains of the ITS elements (``kappa``) and feeder antennas (``mu``)."""
    kappa: float
    mu: float
    wavelength: float

    def __post_init__(self):
        if self.kappa < 2 or self.mu < 2:
            raise ParameterError("boresight gains must be >= 2")
        if not self.wavelength > 0:
            raise ParameterError("wavelength must be positive")

    @classmethod
    def from_config(cls, config) -> "RadiationParams":
        return cls(kappa=config.kappa, mu=config.mu, wavelength=config.wavelength)


@dataclass(frozen=True)
class ChannelSet:
    """Feeder-to-ITS matrix ``A`` (M, N) and ITS-to-device matrix ``H`` (K, M).

    Row ``k`` of ``H`` is the vector ``h_k``.
    """
    A: np.ndarray
    H: np.ndarray

    @property
    def M(self) -> int:
        return self.A.shape[0]

    @property
    def N(self) -> int:
        return self.A.shape[1]

    @property
    def K(self) -> int:
        return self.H.shape[0]


def radiation_profile(beta, xi):
    """Cosine-power element pattern ``2 (xi + 1) cos(beta)**xi`` on the front hemisphere.

    Zero for ``beta`` outside ``[0, pi/2]``.
    """
    if xi < 2:
        raise ParameterError(f"gain exponent must be >= 2, got {xi}")
    beta = np.asarray(beta, dtype=float)
    front = (beta >= 0) & (beta <= np.pi / 2)
    c = np.where(front, np.cos(np.where(front, beta, 0.0)), 0.0)
    # cos(pi/2) is 6e-17 in floating point; clamp so the boundary gives exactly 0
    c = np.where(np.isclose(beta, np.pi / 2, rtol=0, atol=1e-15), 0.0, np.maximum(c, 0.0))
    out = 2 * (xi + 1) * c ** xi
    return out if out.ndim else float(out)


def _propagation(dist, wavelength):
    return wavelength * np.exp(-2j * np.pi * dist / wavelength) / (4 * np.pi * dist)


def feeder_to_its_matrix(geom: ScenarioGeometry, params: RadiationParams) -> np.ndarray:
    """Complex (M, N) matrix of feeder-antenna to ITS-element coefficients."""
    r = geom.its.positions[:, None, :]             # (M, 1, 3)
    v = geom.feeder.positions[None, :, :]          # (1, N, 3)
    dist = np.linalg.norm(r - v, axis=-1)
    if np.any(dist == 0):
        raise DegenerateGeometryError("feeder antenna coincides with an ITS element")
    theta = boresight_angle(v, geom.feeder.boresights[None, :, :], r)
    vartheta = boresight_angle(r, geom.its.rx_boresight, v)
    gain = np.sqrt(radiation_profile(theta, params.mu) * radiation_profile(vartheta, params.kappa))
    return gain * _propagation(dist, params.wavelength)


def its_to_device_matrix(geom: ScenarioGeometry, params: RadiationParams,
                         targets=None) -> np.ndarray:
    """Complex (K, M) matrix whose row k holds ``h_k``.

    ``targets`` (shape (P, 3)) evaluates the coefficients at arbitrary
    points instead of the deployed devices; used for field maps.
    """
    u = geom.devices.positions if targets is None else np.atleast_2d(targets)
    r = geom.its.positions[None, :, :]
    u = u[:, None, :]
    dist = np.linalg.norm(u - r, axis=-1)
    if np.any(dist == 0):
        raise DegenerateGeometryError("device coincides with an ITS element")
    zeta = boresight_angle(r, geom.its.tx_boresight, u)
    gain = np.sqrt(radiation_profile(zeta, params.kappa))
    return gain * _propagation(dist, params.wavelength)


def build_channels(geom: ScenarioGeometry, params: RadiationParams) -> ChannelSet:
    return ChannelSet(A=feeder_to_its_matrix(geom, params), H=its_to_device_matrix(geom, params))


def effective_channel(h, phi, A) -> np.ndarray:
    """Return ``(h^H diag(phi) A)^H`` as an N-vector.

    Parameters
    ----------
    h, phi : ndarray, shape (M,)
    A : ndarray, shape (M, N)
    """
    h = np.asarray(h)
    phi = np.asarray(phi)
    A = np.atleast_2d(np.asarray(A))
    if h.ndim != 1 or phi.shape != h.shape or A.shape[0] != h.shape[0]:
        raise ShapeError(f"incompatible shapes h{h.shape}, phi{phi.shape}, A{A.shape}")
    return A.conj().T @ (np.conj(phi) * h)


def captured_power_fraction(A: np.ndarray) -> np.ndarray:
    """Per-antenna sum of ``|a_{n,m}|**2`` over the ITS elements (spillover diagnostic)."""
    return np.sum(np.abs(A) ** 2, axis=0)
