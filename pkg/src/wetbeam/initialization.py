"""Feasible starting points for the SCA loop.

The ITS initializer splits the surface into ``N`` clusters, one per feeder
antenna, assigns feeder chains to devices, aligns the phases of every
cluster to its device and then computes precoders minimizing the largest
chain output power with a semidefinite program.  All distinct
chain-to-device assignments are scored and the cheapest one is kept.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.sparse as sp
from more_itertools import distinct_permutations

from .architectures import ArchitectureModel, analog_vector
from .conic import ConicProblem, hermitian_embedding, hermitian_from_embedding, smat, solve_sdp, svec
from .errors import (CombinatorialBlowupError, ConfigurationError, InfeasibleAnchorError,
                     InitializationError)
from .power import DohertyParams, chain_powers, doherty_consumption

log = logging.getLogger(__name__)


# -- clustering and allocation ----------------------------------------------

def cluster_its_elements(A, rule: str = "strongest") -> list[np.ndarray]:
    """Partition the ITS elements by feeder antenna.

    Element ``m`` joins the antenna with the largest ``|a_{n,m}|`` (or the
    smallest when ``rule="weakest"``).  Ties go to the lowest antenna
    index.

    Returns
    -------
    list of ndarray
        ``clusters[n]`` holds the element indices served by antenna ``n``.
    """
    mag = np.abs(np.atleast_2d(A)) ** 2          # (M, N)
    if rule == "strongest":
        labels = np.argmax(mag, axis=1)
    elif rule == "weakest":
        labels = np.argmin(mag, axis=1)
    else:
        raise ConfigurationError(f"unknown cluster rule {rule!r}")
    return [np.flatnonzero(labels == n) for n in range(mag.shape[1])]


def cluster_labels(clusters, M: int) -> np.ndarray:
    labels = np.empty(M, dtype=int)
    for n, members in enumerate(clusters):
        labels[members] = n
    return labels


def allocation_weights(counts) -> np.ndarray:
    """``N_k**2 + sum_{k' != k} N_k'`` for every device."""
    counts = np.asarray(counts)
    return counts ** 2 + (counts.sum() - counts)


def allocate_rf_chains(H, N: int) -> np.ndarray:
    """Number of feeder chains given to every device.

    Starting from one chain per device, the next chain goes to the device
    minimizing ``weight_k * ||h_k||**2``; ties go to the lowest index.
    """
    H = np.atleast_2d(H)
    K = H.shape[0]
    if N < K:
        raise ConfigurationError(f"initialization needs N >= K, got N={N}, K={K}")
    norms = np.sum(np.abs(H) ** 2, axis=1)
    counts = np.ones(K, dtype=int)
    while counts.sum() < N:
        counts[int(np.argmin(allocation_weights(counts) * norms))] += 1
    return counts


def assignment_count(counts) -> int:
    counts = [int(c) for c in counts]
    return math.factorial(sum(counts)) // reduce(lambda a, c: a * math.factorial(c), counts, 1)


def enumerate_assignments(counts, cap: int = 100_000) -> list[tuple[int, ...]]:
    """All distinct chain-to-device maps with device ``k`` used ``counts[k]`` times.

    Entry ``n`` of each tuple is the device served by chain ``n``.  The
    list is in lexicographic order.
    """
    total = assignment_count(counts)
    if total > cap:
        raise CombinatorialBlowupError(
            f"{total} assignments exceed the cap of {cap}; reduce N or raise permutation_cap")
    multiset = np.repeat(np.arange(len(counts)), np.asarray(counts, dtype=int)).tolist()
    return list(distinct_permutations(multiset))


def init_phases(clusters, assignment, A, H) -> np.ndarray:
    """Unit-modulus phases aligning each cluster with its chain's device.

    ``angle(phi_m) = angle(h_{k,m}) - angle(a_{n,m})`` for element ``m`` of
    cluster ``n`` when chain ``n`` serves device ``k``.
    """
    A = np.atleast_2d(A)
    H = np.atleast_2d(H)
    phi = np.ones(A.shape[0], dtype=complex)
    for n, members in enumerate(clusters):
        k = assignment[n]
        phi[members] = np.exp(1j * (np.angle(H[k, members]) - np.angle(A[members, n])))
    return phi


# -- min-max chain power precoders --------------------------------------------

@dataclass
class MinMaxResult:
    """Outcome of the min-max output power program.

    ``t`` is the largest chain output power in W and ``precoders`` has
    shape (n_chains, Q) with ``Q`` the number of kept eigenpairs.
    """
    precoders: np.ndarray
    B: np.ndarray
    t: float
    eigenvalues: np.ndarray
    achieved: np.ndarray


def min_max_dual_problem(h_eff, weights, directions=None) -> ConicProblem:
    """Dual of ``min max_n e_n^H B e_n s.t. h_k^H B h_k >= weights_k, B >= 0``.

    Variables ``x = [d (n_dir), lam (K)]``::

        maximize    weights @ lam
        subject to  sum(d) = 1,  d >= 0,  lam >= 0,
                    sum_n d_n e_n e_n^H - sum_k lam_k h_k h_k^H  is PSD.

    ``directions`` holds the vectors ``e_n`` as rows and defaults to the
    identity (one direction per chain).  The Hermitian PSD constraint is
    posed through its real embedding.
    """
    h = np.atleast_2d(h_eff)
    K, N = h.shape
    E = np.eye(N) if directions is None else np.atleast_2d(directions)
    n_dir = E.shape[0]
    n = n_dir + K
    rows_eq = sp.csr_matrix(np.concatenate([np.ones(n_dir), np.zeros(K)])[None, :])
    cols = [-svec(hermitian_embedding(np.outer(e, e.conj()))) for e in E]
    cols += [svec(hermitian_embedding(np.outer(hk, hk.conj()))) for hk in h]
    A_psd = sp.csr_matrix(np.column_stack(cols))
    A = sp.vstack([rows_eq, -sp.eye(n), A_psd]).tocsc()
    b = np.zeros(A.shape[0])
    b[0] = 1.0
    c = np.concatenate([np.zeros(n_dir), -np.asarray(weights, dtype=float)])
    return ConicProblem(c, A, b, [("zero", 1), ("nonneg", n), ("psd", 2 * N)],
                        {"N": N, "K": K})


def min_max_power_precoders(h_eff, targets, g: float, scale: float = 1.0, p_max: float | None = None,
                            eig_rtol: float = 1e-9, check_rtol: float = 1e-6,
                            subspace: bool = False) -> MinMaxResult:
    """Precoders minimizing the largest chain output power under received-power targets.

    Solves ``minimize t`` subject to ``g tr(E_n B) <= t`` for every chain
    and ``scale * g * tr(h_k h_k^H B) >= targets_k`` for every device, then
    factors ``B`` into ``b_q = sqrt(lambda_q) u_q`` keeping eigenvalues above
    ``eig_rtol * lambda_max``.  The program is solved through its dual and
    ``B`` is read off the multiplier of the PSD constraint.

    Parameters
    ----------
    h_eff : ndarray, shape (K, N)
        Effective channels as rows.
    scale : float
        Extra received-power factor (ITS efficiency or insertion loss).
    p_max : float, optional
        When given, a recovered chain power above ``p_max`` raises
        :class:`InfeasibleAnchorError`.
    subspace : bool
        Restrict ``B`` to the span of the channels.  The result is feasible
        but may use more power; the program then has side ``2 K`` instead
        of ``2 N``.
    """
    h = np.atleast_2d(np.asarray(h_eff, dtype=complex))
    targets = np.broadcast_to(np.asarray(targets, dtype=float), (h.shape[0],))
    norms = np.sum(np.abs(h) ** 2, axis=1)
    if np.any(norms == 0):
        raise InitializationError("an effective channel is identically zero")
    # work with unit-norm channels and O(1) targets; B = beta * B_bar
    c = targets / (g * scale)
    beta = float(np.max(c / norms))
    weights = c / (beta * norms)
    h_unit = h / np.sqrt(norms)[:, None]
    if subspace:
        U, sv, _ = np.linalg.svd(h_unit.T, full_matrices=False)
        U = U[:, sv > 1e-12 * sv[0]]                      # (N, r)
        h_red, directions = h_unit @ U.conj(), U.conj()   # B = U X U^H
    else:
        U, h_red, directions = None, h_unit, None
    problem = min_max_dual_problem(h_red, weights, directions)
    sol = solve_sdp(problem, feas_tol=1e-9, gap_tol=1e-9)
    if sol.status in ("infeasible", "unbounded") or sol.z is None:
        raise InitializationError(f"min-max power program failed: {sol.status}")
    side = 2 * h_red.shape[1]
    Z = smat(sol.z[problem.m - side * (side + 1) // 2:], side)
    # the embedding doubles the trace pairing, hence the factor 2
    X = 2 * hermitian_from_embedding(Z)
    B_bar = X if U is None else U @ X @ U.conj().T
    B_bar = (B_bar + B_bar.conj().T) / 2
    lam, V = np.linalg.eigh(B_bar)
    lam, V = lam[::-1], V[:, ::-1]
    keep = lam > eig_rtol * lam[0]
    P = V[:, keep] * np.sqrt(lam[keep] * beta)
    B = beta * B_bar
    achieved = np.sum(np.abs(h.conj() @ P) ** 2, axis=1)
    reference = np.real(np.einsum("kn,nm,km->k", h.conj(), B, h))
    if np.any(np.abs(achieved - reference) > check_rtol * np.abs(reference)):
        raise InitializationError("eigen-recovery does not reproduce the received power")
    # lift tiny solver shortfalls so the point is strictly feasible
    ratio = float(np.max(c / np.maximum(achieved, 1e-300)))
    if ratio > 1:
        P = P * math.sqrt(ratio)
        achieved = achieved * ratio
    powers = chain_powers(P, g)
    if p_max is not None and np.any(powers > p_max):
        raise InfeasibleAnchorError(
            f"initial chain power {powers.max():.6g} W exceeds p_max={p_max} W")
    return MinMaxResult(P, B, float(powers.max()), lam[keep] * beta, scale * g * achieved)


# -- initial points ----------------------------------------------------------

@dataclass
class InitialPoint:
    """Starting point of the SCA loop.

    ``w`` is the analog variable vector of the architecture model (the
    conjugate phases for the ITS).  ``score`` is the summed amplifier
    consumption in W.
    """
    precoders: np.ndarray
    w: np.ndarray
    score: float
    assignment: tuple | None = None
    counts: np.ndarray | None = None
    diagnostics: list = field(default_factory=list)

    @property
    def phi(self) -> np.ndarray:
        return np.conj(self.w)


def _score(precoders, doherty: DohertyParams) -> float:
    return float(np.sum(doherty_consumption(chain_powers(precoders, doherty.g), doherty)))


def evaluate_assignment(model: ArchitectureModel, channels, clusters, assignment, targets,
                        doherty: DohertyParams) -> InitialPoint:
    phi = init_phases(clusters, assignment, channels.A, channels.H)
    w = np.conj(phi)
    res = min_max_power_precoders(model.effective_channels(w), targets, doherty.g, model.scale / doherty.g,
                                  p_max=doherty.p_max)
    return InitialPoint(res.precoders, w, _score(res.precoders, doherty), tuple(assignment))


def init_its(model: ArchitectureModel, channels, targets, doherty: DohertyParams,
             cluster_rule: str = "strongest", cap: int = 100_000,
             assignments=None, keep_all: bool = False):
    """Best starting point over all chain-to-device assignments.

    Returns the winning :class:`InitialPoint`; with ``keep_all=True`` a list
    of every feasible candidate (in assignment order) is returned as well.
    Candidates are ranked by ``(score, assignment)`` so the winner does not
    depend on evaluation order.
    """
    counts = allocate_rf_chains(channels.H, model.N)
    clusters = cluster_its_elements(channels.A, cluster_rule)
    if assignments is None:
        assignments = enumerate_assignments(counts, cap)
    candidates, diagnostics = [], []
    for pi in assignments:
        try:
            cand = evaluate_assignment(model, channels, clusters, pi, targets, doherty)
        except (InitializationError, InfeasibleAnchorError) as exc:
            diagnostics.append({"assignment": tuple(pi), "feasible": False, "error": str(exc)})
            continue
        diagnostics.append({"assignment": tuple(pi), "feasible": True, "score": cand.score})
        candidates.append(cand)
    if not candidates:
        raise InitializationError("no chain-to-device assignment gave a feasible start",
                                  diagnostics)
    best = min(candidates, key=lambda c: (c.score, c.assignment))
    best.counts = counts
    best.diagnostics = diagnostics
    if keep_all:
        return best, candidates
    return best


def init_hybrid(model: ArchitectureModel, channels, targets, doherty: DohertyParams) -> InitialPoint:
    """Phase-aligned analog precoder followed by min-max power precoders.

    Chains are handed to devices in ascending device order according to
    the allocation counts; every column is co-phased with its device's
    channel over the rows it drives, with entry magnitude ``model.modulus``.
    """
    H = np.atleast_2d(channels.H)
    counts = allocate_rf_chains(H, model.N)
    assignment = tuple(np.repeat(np.arange(H.shape[0]), counts))
    rows, cols = model.support
    C = np.zeros((model.M, model.N), dtype=complex)
    owner = np.asarray(assignment)[cols]
    C[rows, cols] = model.modulus * np.exp(1j * np.angle(H[owner, rows]))
    w = analog_vector(C, model.support)
    res = min_max_power_precoders(model.effective_channels(w), targets, doherty.g, model.scale / doherty.g,
                                  p_max=doherty.p_max)
    return InitialPoint(res.precoders, w, _score(res.precoders, doherty), assignment, counts)


def init_fd(model: ArchitectureModel, targets, doherty: DohertyParams,
            full_sdp_max: int = 128) -> InitialPoint:
    """Min-max power precoders with one chain per antenna.

    Arrays larger than ``full_sdp_max`` antennas solve the program over
    the span of the channels only.
    """
    res = min_max_power_precoders(model.h0, targets, doherty.g, model.scale / doherty.g,
                                  p_max=doherty.p_max, subspace=model.n_chains > full_sdp_max)
    return InitialPoint(res.precoders, np.zeros(0, complex), _score(res.precoders, doherty))


def random_phase_start(model: ArchitectureModel, targets, doherty: DohertyParams,
                       rng: np.random.Generator) -> InitialPoint:
    """Uniformly random ITS phases with min-max power precoders."""
    w = np.exp(-2j * np.pi * rng.random(model.n_analog))
    res = min_max_power_precoders(model.effective_channels(w), targets, doherty.g, model.scale / doherty.g,
                                  p_max=doherty.p_max)
    return InitialPoint(res.precoders, w, _score(res.precoders, doherty))


def initialize(model: ArchitectureModel, channels, targets, doherty: DohertyParams,
               cluster_rule: str = "strongest", cap: int = 100_000,
               fd_full_sdp_max: int = 128) -> InitialPoint:
    """Dispatch to the initializer of the model's architecture."""
    if model.arch == "ITS":
        return init_its(model, channels, targets, doherty, cluster_rule, cap)
    if model.arch == "FD":
        return init_fd(model, targets, doherty, fd_full_sdp_max)
    return init_hybrid(model, channels, targets, doherty)
