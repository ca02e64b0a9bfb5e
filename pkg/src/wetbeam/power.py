"""Power consumption models: Doherty amplifiers, ITS control, RF-network losses."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (ConfigurationError, ParameterError, SaturationError, ShapeError,
                     UndefinedEfficiencyError)

# relative slack before an output power counts as saturating the amplifier
SATURATION_RTOL = 1e-9


@dataclass(frozen=True)
class DohertyParams:
    """Symmetric ``ell``-way Doherty amplifier.

    Attributes
    ----------
    ell : int
        Number of amplifier stages (one carrier plus ``ell - 1`` peaking).
    eta_max : float
        Peak drain efficiency.
    p_max : float
        Maximum output power in W.
    g : float
        Linear power gain.
    """
    ell: int
    eta_max: float
    p_max: float
    g: float

    def __post_init__(self):
        if self.ell < 1 or int(self.ell) != self.ell:
            raise ParameterError("ell must be a positive integer")
        if not 0 < self.eta_max <= 1:
            raise ParameterError("eta_max must lie in (0, 1]")
        if not self.p_max > 0 or not self.g > 0:
            raise ParameterError("p_max and g must be positive")

    @property
    def backoff(self) -> float:
        """Output power at which the peaking stages switch on."""
        return self.p_max / self.ell ** 2

    @classmethod
    def from_config(cls, config) -> "DohertyParams":
        return cls(ell=config.ell, eta_max=config.eta_max, p_max=config.P_max, g=config.g)


def hpa_output_power(precoders, n: int, g: float) -> float:
    """Output power ``g * sum_q |b_{q,n}|**2`` of chain ``n`` (0-based).

    Parameters
    ----------
    precoders : ndarray, shape (n_chains, Q)
        Column ``q`` is the precoder ``b_q``.
    """
    B = np.atleast_2d(np.asarray(precoders))
    if B.ndim != 2:
        raise ShapeError("precoders must be a 2-D array")
    if not 0 <= n < B.shape[0]:
        raise IndexError(f"chain index {n} out of range for {B.shape[0]} chains")
    return float(g * np.sum(np.abs(B[n]) ** 2))


def chain_powers(precoders, g: float) -> np.ndarray:
    """Output power of every chain; ``precoders`` has shape (n_chains, Q)."""
    B = np.atleast_2d(np.asarray(precoders))
    return g * np.sum(np.abs(B) ** 2, axis=1)


def doherty_consumption(p_out, params: DohertyParams):
    """DC power drawn by the amplifier at output power ``p_out`` (W).

    Below the back-off point only the carrier stage draws current; above
    it the peaking stages add their share.  Zero output draws zero power.
    """
    p = np.asarray(p_out, dtype=float)
    if np.any(p < 0):
        raise ParameterError("output power must be nonnegative")
    if np.any(p > params.p_max * (1 + SATURATION_RTOL)):
        raise SaturationError(f"output power {np.max(p):.6g} W exceeds p_max={params.p_max} W")
    p = np.minimum(p, params.p_max)
    ell, eta, pm = params.ell, params.eta_max, params.p_max
    root = np.sqrt(p * pm)
    carrier = root / (ell * eta)
    peaking = ((ell + 1) * root - pm) / (ell * eta)
    out = np.where(p <= params.backoff, carrier, peaking)
    return out if out.ndim else float(out)


def drain_efficiency(p_out, params: DohertyParams):
    """Ratio of output power to consumed power."""
    p = np.asarray(p_out, dtype=float)
    if np.any(p == 0):
        raise UndefinedEfficiencyError("efficiency is undefined at zero output power")
    out = p / doherty_consumption(p, params)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class InsertionLoss:
    """Analog network loss; ``total_db`` accumulates the per-stage dB values."""
    gamma_s: float
    gamma_c: float
    gamma_p: float
    total_db: float

    @property
    def gamma(self) -> float:
        return 10 ** (self.total_db / 10)


def _stages(n: int) -> int:
    return math.ceil(math.log2(n)) if n > 1 else 0


def insertion_loss(arch: str, M: int, N: int, gamma_s: float = 0.5, gamma_c: float = 0.5,
                   gamma_p: float = 3.5) -> InsertionLoss:
    """Insertion loss of a hybrid analog network.

    Every two-way splitter or combiner stage adds its dB loss once; the
    phase shifter adds ``gamma_p``.

    >>> round(insertion_loss("HBFC", 100, 4).gamma, 3)
    6.31
    """
    if N > M or N < 1:
        raise ConfigurationError(f"hybrid architectures need 1 <= N <= M, got N={N}, M={M}")
    arch = arch.upper()
    if arch == "HBFC":
        db = _stages(M) * gamma_s + _stages(N) * gamma_c + gamma_p
    elif arch == "HBPC":
        db = _stages(M // N) * gamma_s + gamma_p
    else:
        raise ConfigurationError(f"insertion loss is defined for HBFC and HBPC, not {arch}")
    return InsertionLoss(gamma_s, gamma_c, gamma_p, db)


@dataclass(frozen=True)
class StaticPower:
    P_bb: float = 0.2
    P_tc: float = 0.1
    P_ctrl: float = 1.0
    P_cell: float = 1e-3

    @classmethod
    def from_config(cls, config) -> "StaticPower":
        return cls(config.P_bb, config.P_tc, config.P_ctrl, config.P_cell)

    def its(self, M: int) -> float:
        return self.P_ctrl + M * self.P_cell


def total_power(arch: str, precoders, doherty: DohertyParams, static: StaticPower,
                M: int | None = None) -> float:
    """Total consumption of the power beacon.

    Parameters
    ----------
    arch : {"ITS", "FD", "HBFC", "HBPC"}
    precoders : ndarray, shape (n_chains, Q)
    M : int
        ITS element count; required for ``"ITS"``.
    """
    p = chain_powers(precoders, doherty.g)
    hpa = float(np.sum(doherty_consumption(p, doherty)))
    base = static.P_bb + static.P_tc + hpa
    arch = arch.upper()
    if arch == "ITS":
        if M is None:
            raise ParameterError("ITS total power needs the element count M")
        return base + static.its(M)
    if arch in ("FD", "HBFC", "HBPC"):
        return base
    raise ConfigurationError(f"unknown architecture {arch!r}")
