"""Architecture registry for the ITS power beacon and its benchmarks.

Every architecture is reduced to the same linear form used by the
optimizer: the effective channel of device ``k`` seen by the digital
precoders is

    h_eff_k(w) = h0_k + T_k @ w

where ``w`` holds the complex analog variables.  For the ITS, ``w`` is the
conjugate of the phase vector ``phi``; for hybrid designs it is the
conjugate of the nonzero entries of the analog precoder ``C``.  The
fully-digital design has no analog variables.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ShapeError
from .power import DohertyParams, StaticPower, chain_powers, doherty_consumption, insertion_loss


@dataclass(frozen=True)
class ArchitectureSpec:
    """Static description of a beamforming architecture.

    Attributes
    ----------
    tag : str
    analog : {"phi", "none", "full", "block"}
        Kind of analog variable.
    loss : {"rho_its", "unity", "gamma"}
        Factor applied to the received power.
    its_power : bool
        Whether ITS control and cell power are part of the total.
    """
    tag: str
    analog: str
    loss: str
    its_power: bool

    def n_chains(self, M: int, N: int) -> int:
        return M if self.tag == "FD" else N

    def n_phase_shifters(self, M: int, N: int) -> int:
        return {"phi": M, "none": 0, "full": M * N, "block": N * (M // N)}[self.analog]

    def n_hpas(self, M: int, N: int) -> int:
        return self.n_chains(M, N)


REGISTRY = {
    "ITS": ArchitectureSpec("ITS", "phi", "rho_its", True),
    "FD": ArchitectureSpec("FD", "none", "unity", False),
    "HBFC": ArchitectureSpec("HBFC", "full", "gamma", False),
    "HBPC": ArchitectureSpec("HBPC", "block", "gamma", False),
}


def get_spec(arch: str) -> ArchitectureSpec:
    try:
        return REGISTRY[arch.upper()]
    except KeyError:
        raise ConfigurationError(f"unknown architecture {arch!r}") from None


def effective_antenna_count(arch: str, M: int, N: int) -> int:
    """Number of transmit antennas actually driven."""
    if M < N:
        raise ConfigurationError("need M >= N")
    return N * (M // N) if get_spec(arch).tag == "HBPC" else M


def hybrid_support(arch: str, M: int, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices of the nonzero entries of the analog precoder.

    Entries are ordered column by column.  For the partially connected
    design, chain ``n`` drives rows ``n L`` to ``(n + 1) L - 1`` with
    ``L = M // N``; leftover rows are left unconnected.
    """
    if N > M:
        raise ConfigurationError("hybrid architectures need N <= M")
    tag = get_spec(arch).tag
    if tag == "HBFC":
        cols, rows = np.divmod(np.arange(M * N), M)
    elif tag == "HBPC":
        L = M // N
        cols, off = np.divmod(np.arange(N * L), L)
        rows = cols * L + off
    else:
        raise ConfigurationError(f"{arch} has no analog precoder matrix")
    return rows, cols


def analog_matrix(w, support, M: int, N: int) -> np.ndarray:
    """Analog precoder ``C`` (M, N) from the analog variable vector."""
    rows, cols = support
    C = np.zeros((M, N), dtype=complex)
    C[rows, cols] = np.conj(w)
    return C


def analog_vector(C, support) -> np.ndarray:
    rows, cols = support
    return np.conj(np.asarray(C)[rows, cols])


@dataclass
class ArchitectureModel:
    """Channel model of one architecture bound to concrete channels.

    Attributes
    ----------
    h0 : ndarray, shape (K, n_chains)
        Constant part of the effective channels.
    T : ndarray, shape (K, n_chains, n_analog)
        Linear part of the effective channels.
    scale : float
        Received power is ``scale * sum_q |h_eff^H b_q|**2``.
    modulus : float
        Bound on the magnitude of every analog variable.
    """
    arch: str
    h0: np.ndarray
    T: np.ndarray
    scale: float
    modulus: float
    M: int
    N: int
    support: tuple | None = None

    @property
    def K(self) -> int:
        return self.h0.shape[0]

    @property
    def n_chains(self) -> int:
        return self.h0.shape[1]

    @property
    def n_analog(self) -> int:
        return self.T.shape[2]

    def effective_channels(self, w=None) -> np.ndarray:
        """Rows are ``h_eff_k`` for the analog configuration ``w``."""
        if self.n_analog == 0:
            return self.h0.copy()
        w = np.asarray(w)
        if w.shape != (self.n_analog,):
            raise ShapeError(f"analog vector must have shape ({self.n_analog},)")
        return self.h0 + self.T @ w

    def received_power(self, precoders, w=None) -> np.ndarray:
        """Per-device received power for precoders of shape (n_chains, Q)."""
        B = np.atleast_2d(precoders)
        if B.shape[0] != self.n_chains:
            raise ShapeError(f"precoders need {self.n_chains} rows, got {B.shape[0]}")
        he = self.effective_channels(w)
        return self.scale * np.sum(np.abs(he.conj() @ B) ** 2, axis=1)

    def to_phi(self, w) -> np.ndarray | None:
        return np.conj(w) if self.arch == "ITS" else None

    def to_C(self, w) -> np.ndarray | None:
        if self.support is None:
            return None
        return analog_matrix(w, self.support, self.M, self.N)


def build_model(arch: str, channels, g: float, rho_its: float = 0.45,
                gamma_db=(0.5, 0.5, 3.5)) -> ArchitectureModel:
    """Bind an architecture to channels.

    The benchmarks place their antennas at the ITS element positions, so
    they share the ITS-to-device matrix ``H`` of ``channels``.
    """
    spec = get_spec(arch)
    H = np.asarray(channels.H)
    K, M = H.shape
    N = channels.A.shape[1]
    if spec.tag == "ITS":
        T = np.conj(channels.A.T)[None, :, :] * H[:, None, :]
        return ArchitectureModel("ITS", np.zeros((K, N), complex), T, g * rho_its, 1.0, M, N)
    if spec.tag == "FD":
        return ArchitectureModel("FD", H.copy(), np.zeros((K, M, 0), complex), g, 1.0, M, N)
    support = hybrid_support(spec.tag, M, N)
    rows, cols = support
    T = np.zeros((K, N, rows.size), complex)
    T[:, cols, np.arange(rows.size)] = H[:, rows]
    gamma = insertion_loss(spec.tag, M, N, *gamma_db).gamma
    delta = 1 / np.sqrt(M) if spec.tag == "HBFC" else 1 / np.sqrt(M // N)
    return ArchitectureModel(spec.tag, np.zeros((K, N), complex), T, g / gamma, delta, M, N,
                             support)


def build_model_from_config(arch: str, channels, config) -> ArchitectureModel:
    return build_model(arch, channels, config.g, config.rho_its,
                       (config.gamma_s, config.gamma_c, config.gamma_p))


def received_power(arch: str, channels, precoders, g: float, phi=None, C=None,
                   rho_its: float = 0.45, gamma: float = 1.0) -> np.ndarray:
    """Received power at every device, evaluated directly from the channels.

    ITS: ``g rho |h^H diag(phi) A b|^2``; FD: ``g |h^H b|^2``; hybrids:
    ``g / gamma |h^H C b|^2``, each summed over the precoder columns.
    """
    tag = get_spec(arch).tag
    B = np.atleast_2d(precoders)
    H = np.asarray(channels.H)
    if tag == "ITS":
        if phi is None or np.shape(phi) != (H.shape[1],):
            raise ShapeError("ITS received power needs phi of shape (M,)")
        G = H.conj() @ (np.asarray(phi)[:, None] * channels.A)
        factor = g * rho_its
    elif tag == "FD":
        G = H.conj()
        factor = g
    else:
        if C is None or np.shape(C)[0] != H.shape[1]:
            raise ShapeError("hybrid received power needs C with M rows")
        G = H.conj() @ C
        factor = g / gamma
    if G.shape[1] != B.shape[0]:
        raise ShapeError(f"precoders have {B.shape[0]} rows, expected {G.shape[1]}")
    return factor * np.sum(np.abs(G @ B) ** 2, axis=1)


@dataclass
class BeamformingSolution:
    """Precoders and analog configuration returned by the optimizer.

    ``precoders`` has shape (n_chains, Q); column ``q`` is ``b_q``.
    ``hpa_power`` is the summed amplifier consumption in W and
    ``total_power`` adds the static terms.
    """
    arch: str
    precoders: np.ndarray
    w: np.ndarray
    phi: np.ndarray | None
    C: np.ndarray | None
    chain_powers: np.ndarray
    received_powers: np.ndarray
    hpa_power: float
    total_power: float
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    diagnostics: dict = field(default_factory=dict)


def make_solution(model: ArchitectureModel, precoders, w, doherty: DohertyParams,
                  static: StaticPower, **extra) -> BeamformingSolution:
    B = np.atleast_2d(np.asarray(precoders, dtype=complex))
    w = np.asarray(w, dtype=complex) if w is not None else np.zeros(0, complex)
    p = chain_powers(B, doherty.g)
    hpa = float(np.sum(doherty_consumption(p, doherty)))
    total = static.P_bb + static.P_tc + hpa
    if get_spec(model.arch).its_power:
        total += static.its(model.M)
    return BeamformingSolution(model.arch, B, w, model.to_phi(w), model.to_C(w), p,
                               model.received_power(B, w if w.size else None), hpa, total,
                               **extra)
