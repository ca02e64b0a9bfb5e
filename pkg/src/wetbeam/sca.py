"""Successive convex approximation of the power-minimization problem.

Each outer iteration fixes an anchor ``(B_anchor, w_anchor)``, picks the
Doherty branch of every chain from its anchor output power, replaces the
nonconvex received-power terms by concave minorants that are tight at the
anchor, and solves the resulting second-order cone program.

Real variable layout of a subproblem, with ``nb = n_chains * Q`` precoder
entries (index ``n * Q + q``) and ``na`` analog variables::

    x = [Re b (nb), Im b (nb), Re w (na), Im w (na), t (n_chains)]
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .architectures import ArchitectureModel, BeamformingSolution, make_solution
from .conic import ConicProblem, ProblemBuilder, solve_socp
from .errors import InfeasibleAnchorError, ShapeError, SubproblemInfeasibleError
from .power import SATURATION_RTOL, DohertyParams, StaticPower, chain_powers, doherty_consumption

log = logging.getLogger(__name__)

CARRIER = "carrier"
PEAKING = "peaking"


@dataclass
class ScaSettings:
    """Targets and stopping rule of the outer loop.

    Attributes
    ----------
    targets : ndarray, shape (K,)
        Received-power thresholds in W.
    max_iterations : int
    tolerance : float
        Stop once the relative change of the amplifier consumption drops
        below this value.
    """
    targets: np.ndarray
    max_iterations: int = 50
    tolerance: float = 1e-4
    monotone_rtol: float = 1e-6
    surrogate_scaling: str | float = "balanced"

    def __post_init__(self):
        self.targets = np.atleast_1d(np.asarray(self.targets, dtype=float))
        if np.any(self.targets <= 0):
            raise ValueError("received-power targets must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class SurrogateAnchors:
    """Linearization data of the received-power minorant.

    With ``a = alpha[k, q]`` the minorant of ``|h_eff_k^H b_q|**2`` is::

        Re(nu^H (a z h_eff + b / a)) - ||nu||**2 / 2
            - ||a z h_eff - b / a||**2 / 2 - |z|**2

    where ``z = h_eff_k^H b_q`` and ``nu = a z h_eff_k + b_q / a`` are taken at
    the anchor.  Any ``a > 0`` gives a concave minorant that is tight at the
    anchor; ``a = 1`` is the plain form and the balanced choice
    ``a**2 = ||b_q|| / (|z| ||h_eff_k||)`` equalizes the two quadratic terms.
    """
    precoders: np.ndarray
    w: np.ndarray
    h_eff: np.ndarray
    z: np.ndarray
    nu: np.ndarray
    alpha: np.ndarray


def compute_anchors(model: ArchitectureModel, precoders, w=None,
                    scaling: str | float = "balanced") -> SurrogateAnchors:
    """Anchor data at ``(precoders, w)``.

    ``scaling`` is ``"balanced"`` or a fixed positive ``alpha``.
    """
    B = np.atleast_2d(np.asarray(precoders, dtype=complex))
    if B.shape[0] != model.n_chains:
        raise ShapeError(f"anchor precoders need {model.n_chains} rows")
    w = np.zeros(0, complex) if w is None else np.asarray(w, dtype=complex)
    he = model.effective_channels(w if model.n_analog else None)
    z = he.conj() @ B                                       # (K, Q)
    if scaling == "balanced":
        num = np.broadcast_to(np.linalg.norm(B, axis=0)[None, :], z.shape)
        den = np.abs(z) * np.linalg.norm(he, axis=1)[:, None]
        alpha = np.ones(z.shape)
        ok = (num > 0) & (den > 0)
        alpha[ok] = np.sqrt(num[ok] / den[ok])
        alpha = np.clip(alpha, 1e-6, 1e6)
    else:
        alpha = np.full(z.shape, float(scaling))
    a = alpha[:, :, None]
    nu = a * z[:, :, None] * he[:, None, :] + B.T[None, :, :] / a   # (K, Q, n_chains)
    return SurrogateAnchors(B, w, he, z, nu, alpha)


def surrogate_value(model: ArchitectureModel, anchors: SurrogateAnchors, precoders, w=None):
    """Evaluate the concave minorant of ``|h_eff_k^H b_q|**2`` for all (k, q).

    Returns an array of shape (K, Q).  The fully-digital design uses the
    linear minorant ``2 Re(conj(z) h^H b) - |z|**2``.
    """
    B = np.atleast_2d(np.asarray(precoders, dtype=complex))
    he = model.effective_channels(w if model.n_analog else None)
    z = anchors.z
    if model.n_analog == 0:
        return 2 * np.real(np.conj(z) * (he.conj() @ B)) - np.abs(z) ** 2
    a = anchors.alpha[:, :, None]
    zh = a * z[:, :, None] * he[:, None, :]               # (K, Q, n)
    bq = B.T[None, :, :] / a
    nu = anchors.nu
    lin = np.real(np.sum(nu.conj() * (zh + bq), axis=2))
    return (lin - 0.5 * np.sum(np.abs(nu) ** 2, axis=2)
            - 0.5 * np.sum(np.abs(zh - bq) ** 2, axis=2) - np.abs(z) ** 2)


def select_hpa_branch(precoders, doherty: DohertyParams) -> np.ndarray:
    """Branch of every chain at the anchor: ``"carrier"`` or ``"peaking"``.

    The carrier branch is kept up to and including the back-off point.
    """
    p = chain_powers(precoders, doherty.g)
    if np.any(p > doherty.p_max * (1 + SATURATION_RTOL)):
        n = int(np.argmax(p))
        raise InfeasibleAnchorError(f"chain {n} anchor output {p[n]:.6g} W exceeds p_max")
    return np.where(p <= doherty.backoff, CARRIER, PEAKING)


def activation_bound(precoders, anchor_precoders, g: float) -> np.ndarray:
    """First-order lower bound of every chain's output power around the anchor.

    ``g * sum_q (2 Re(conj(b_anchor) b) - |b_anchor|**2)`` for each chain.
    """
    B = np.atleast_2d(precoders)
    Bt = np.atleast_2d(anchor_precoders)
    return g * np.sum(2 * np.real(np.conj(Bt) * B) - np.abs(Bt) ** 2, axis=1)


class _Layout:
    def __init__(self, n_chains: int, Q: int, n_analog: int):
        self.nc, self.Q, self.na = n_chains, Q, n_analog
        self.nb = n_chains * Q
        self.n = 2 * self.nb + 2 * n_analog + n_chains
        self.t0 = 2 * self.nb + 2 * n_analog

    def complex_coeff(self, P=None, R=None, rows=None) -> sp.csr_matrix:
        """Real-input coefficient matrix of ``P @ b + R @ w`` (complex)."""
        rows = rows if rows is not None else (P.shape[0] if P is not None else R.shape[0])
        P = sp.csr_matrix((rows, self.nb), dtype=complex) if P is None else sp.csr_matrix(P)
        R = sp.csr_matrix((rows, self.na), dtype=complex) if R is None else sp.csr_matrix(R)
        return sp.hstack([P, 1j * P, R, 1j * R, sp.csr_matrix((rows, self.nc))]).tocsr()

    def chain_selector(self, n: int) -> sp.csr_matrix:
        """Real rows extracting ``[Re b_{n,:}, Im b_{n,:}]``."""
        idx = n * self.Q + np.arange(self.Q)
        cols = np.concatenate([idx, self.nb + idx])
        return sp.csr_matrix((np.ones(2 * self.Q), (np.arange(2 * self.Q), cols)),
                             shape=(2 * self.Q, self.n))

    def column_selector(self, q: int) -> sp.csr_matrix:
        """Complex selector of precoder column ``b_q`` from the precoder entries."""
        idx = np.arange(self.nc) * self.Q + q
        return sp.csr_matrix((np.ones(self.nc), (np.arange(self.nc), idx)),
                             shape=(self.nc, self.nb))

    def t_row(self, n: int, coef: float = 1.0) -> sp.csr_matrix:
        return sp.csr_matrix(([coef], ([0], [self.t0 + n])), shape=(1, self.n))

    def unpack(self, x):
        b = x[:self.nb] + 1j * x[self.nb:2 * self.nb]
        w = x[2 * self.nb:2 * self.nb + self.na] + 1j * x[2 * self.nb + self.na:self.t0]
        return b.reshape(self.nc, self.Q), w, x[self.t0:]


def _real_rows(C: sp.csr_matrix) -> sp.csr_matrix:
    return sp.vstack([C.real, C.imag]).tocsr()


def _add_soc(builder: ProblemBuilder, s_coef, s_const: float, U, u0) -> None:
    """Append ``||U x + u0|| <= s_coef x + s_const``."""
    A = sp.vstack([sp.csr_matrix(s_coef), sp.csr_matrix(U)])
    builder.add_soc(-A, np.concatenate([[s_const], np.asarray(u0, dtype=float)]))


def hpa_epigraph_constraints(builder: ProblemBuilder, layout: _Layout, branches,
                             anchor_precoders, doherty: DohertyParams, include_t_nonneg=True):
    """Append the Doherty epigraph rows of every chain; returns the row tally."""
    g, pm, ell, eta = doherty.g, doherty.p_max, doherty.ell, doherty.eta_max
    count = 0
    for n, branch in enumerate(branches):
        V = layout.chain_selector(n)
        zero_u = np.zeros(2 * layout.Q)
        empty = sp.csr_matrix((1, layout.n))
        if branch == CARRIER:
            # sqrt(g |v|^2 p_max) / (ell eta) <= t  and  g |v|^2 <= p_max / ell^2
            _add_soc(builder, layout.t_row(n, ell * eta / math.sqrt(g * pm)), 0.0, V, zero_u)
            _add_soc(builder, empty, math.sqrt(pm / g) / ell, V, zero_u)
            count += 2
        else:
            # ((ell + 1) sqrt(g |v|^2 p_max) - p_max) / (ell eta) <= t
            k = 1.0 / ((ell + 1) * math.sqrt(g * pm))
            _add_soc(builder, layout.t_row(n, ell * eta * k), pm * k, V, zero_u)
            _add_soc(builder, empty, math.sqrt(pm / g), V, zero_u)
            # linearized activation: g sum_q (2 Re(conj(bt) b) - |bt|^2) >= p_max / ell^2
            bt = np.asarray(anchor_precoders)[n]
            coef = np.zeros(layout.n)
            idx = n * layout.Q + np.arange(layout.Q)
            coef[idx] = 2 * bt.real
            coef[layout.nb + idx] = 2 * bt.imag
            rhs = pm / (g * ell ** 2) + float(np.sum(np.abs(bt) ** 2))
            builder.add_nonneg(-coef[None, :], [-rhs])
            count += 3
        if include_t_nonneg:
            builder.add_nonneg(-layout.t_row(n), [0.0])
            count += 1
    return count


def assemble_subproblem(model: ArchitectureModel, anchors: SurrogateAnchors, settings: ScaSettings,
                        doherty: DohertyParams, branches=None) -> tuple[ConicProblem, _Layout]:
    """Convex subproblem around the anchors as a second-order cone program.

    ``meta`` carries the logical tally: complex entries count as one
    variable and every scalar or cone inequality as one constraint.
    """
    B = anchors.precoders
    Q = B.shape[1]
    K = model.K
    if settings.targets.size not in (1, K):
        raise ShapeError("targets must have one entry per device")
    targets = np.broadcast_to(settings.targets, (K,))
    fd = model.n_analog == 0
    if branches is None:
        branches = select_hpa_branch(B, doherty)
    lay = _Layout(model.n_chains, Q, model.n_analog)
    builder = ProblemBuilder(lay.n)
    n_cons = hpa_epigraph_constraints(builder, lay, branches, B, doherty,
                                      include_t_nonneg=not fd)

    for k in range(K):
        tau = targets[k] / model.scale
        if fd:
            # sum_q 2 Re(conj(z) h^H b_q) - |z|^2 >= tau, scaled by 1 / tau
            coef = sp.csr_matrix((1, lay.n))
            for q in range(Q):
                row = np.conj(anchors.z[k, q]) * anchors.h_eff[k].conj()[None, :]
                coef = coef + 2 * lay.complex_coeff(P=row @ lay.column_selector(q)).real
            rhs = 1.0 + float(np.sum(np.abs(anchors.z[k]) ** 2)) / tau
            builder.add_nonneg(-coef / tau, [-rhs])
        else:
            U_blocks, u0_blocks = [], []
            L_coef = sp.csr_matrix((1, lay.n))
            L_const = 0.0
            for q in range(Q):
                z, nu, a = anchors.z[k, q], anchors.nu[k, q], anchors.alpha[k, q]
                Sq = lay.column_selector(q) / a
                R = a * z * model.T[k]
                # u_q = a z h_eff - b_q / a
                Cu = lay.complex_coeff(P=-Sq, R=R)
                U_blocks.append(_real_rows(Cu))
                cu = a * z * model.h0[k]
                u0_blocks.append(np.concatenate([cu.real, cu.imag]))
                # Re(nu^H (a z h_eff + b_q / a))
                Cl = lay.complex_coeff(P=nu.conj()[None, :] @ Sq, R=nu.conj()[None, :] @ R)
                L_coef = L_coef + Cl.real
                L_const += float(np.real(np.vdot(nu, cu)))
                L_const -= 0.5 * float(np.sum(np.abs(nu) ** 2)) + abs(z) ** 2
            U = sp.vstack(U_blocks)
            u0 = np.concatenate(u0_blocks)
            # 0.5 ||u||^2 <= L - tau  <=>  ||(2u / sqrt(tau), y - 1)|| <= y + 1, y = 2 (L - tau) / tau
            y_coef = 2 * L_coef / tau
            y_const = 2 * (L_const - tau) / tau
            Uall = sp.vstack([2 * U / math.sqrt(tau), y_coef])
            u0all = np.concatenate([2 * u0 / math.sqrt(tau), [y_const - 1.0]])
            _add_soc(builder, y_coef, y_const + 1.0, Uall, u0all)
        n_cons += 1

    for i in range(model.n_analog):
        rows = sp.csr_matrix(([1.0, 1.0], ([0, 1], [2 * lay.nb + i, 2 * lay.nb + lay.na + i])),
                             shape=(2, lay.n))
        _add_soc(builder, sp.csr_matrix((1, lay.n)), model.modulus, rows, np.zeros(2))
        n_cons += 1

    c = np.zeros(lay.n)
    c[lay.t0:] = 1.0
    meta = {"arch": model.arch, "n_variables": lay.nb + lay.nc + lay.na,
            "n_constraints": n_cons, "Q": Q, "branches": list(map(str, branches))}
    return builder.build(c, meta), lay


def _violation(received, targets, powers, p_max) -> float:
    rec = float(np.max(np.maximum(0.0, (targets - received) / targets), initial=0.0))
    sat = float(np.max(np.maximum(0.0, (powers - p_max) / p_max), initial=0.0))
    return max(rec, sat)


def _hpa_total(powers, doherty: DohertyParams) -> float:
    return float(np.sum(doherty_consumption(np.minimum(powers, doherty.p_max), doherty)))


def sca_optimize(model: ArchitectureModel, init_precoders, init_w, settings: ScaSettings,
                 doherty: DohertyParams, static: StaticPower,
                 feas_tol: float = 1e-8, gap_tol: float = 1e-8) -> BeamformingSolution:
    """Run the outer SCA loop from a feasible starting point.

    Returns
    -------
    BeamformingSolution
        The last adopted iterate.  ``trace`` lists one record per
        iteration, starting with the initial point as iteration 0.

    Raises
    ------
    InfeasibleAnchorError
        The starting point saturates an amplifier.
    SubproblemInfeasibleError
        A subproblem was certified infeasible.
    """
    B = np.atleast_2d(np.asarray(init_precoders, dtype=complex))
    w = np.zeros(0, complex) if init_w is None else np.asarray(init_w, dtype=complex)
    targets = np.broadcast_to(settings.targets, (model.K,)).astype(float)
    powers = chain_powers(B, doherty.g)
    select_hpa_branch(B, doherty)
    obj = _hpa_total(powers, doherty)
    received = model.received_power(B, w if w.size else None)
    trace = [{"iteration": 0, "objective_W": obj,
              "max_violation": _violation(received, targets, powers, doherty.p_max),
              "branches": "".join("P" if b == PEAKING else "C"
                                  for b in select_hpa_branch(B, doherty))}]
    diagnostics = {"non_monotone_steps": [], "stopped": "max-iterations", "solve_ms": 0.0}
    converged = False
    it = 0
    for it in range(1, settings.max_iterations + 1):
        anchors = compute_anchors(model, B, w, settings.surrogate_scaling)
        branches = select_hpa_branch(B, doherty)
        problem, lay = assemble_subproblem(model, anchors, settings, doherty, branches)
        tic = time.perf_counter()
        sol = solve_socp(problem, feas_tol=feas_tol, gap_tol=gap_tol)
        diagnostics["solve_ms"] += 1e3 * (time.perf_counter() - tic)
        if sol.status == "infeasible":
            raise SubproblemInfeasibleError(f"subproblem infeasible at iteration {it}",
                                            iteration=it, status=sol.status)
        if sol.x is None:
            log.warning("%s: solver status %s at iteration %d; keeping the anchor",
                        model.arch, sol.status, it)
            diagnostics["stopped"] = f"solver-{sol.status}"
            it -= 1
            break
        B_new, w_new, _ = lay.unpack(sol.x)
        p_new = chain_powers(B_new, doherty.g)
        if np.any(p_new > doherty.p_max * (1 + 1e-7)):
            diagnostics["stopped"] = "saturated-iterate"
            it -= 1
            break
        obj_new = _hpa_total(p_new, doherty)
        rec_new = model.received_power(B_new, w_new if w_new.size else None)
        if obj_new > obj * (1 + settings.monotone_rtol):
            diagnostics["non_monotone_steps"].append((it, obj, obj_new))
        if sol.status != "optimal" and (obj_new > obj or np.any(rec_new < targets * (1 - 1e-6))):
            diagnostics["stopped"] = "solver-numerical-failure"
            it -= 1
            break
        rel = abs(obj - obj_new) / max(obj, 1e-300)
        B, w, obj, powers = B_new, w_new, obj_new, p_new
        trace.append({"iteration": it, "objective_W": obj,
                      "max_violation": _violation(rec_new, targets, powers, doherty.p_max),
                      "branches": "".join("P" if b == PEAKING else "C" for b in branches)})
        # A branch switch changes the surrogate, so a small step across it is not convergence.
        if rel < settings.tolerance and np.array_equal(select_hpa_branch(B, doherty), branches):
            converged = True
            diagnostics["stopped"] = "converged"
            break
    if model.arch == "ITS" and w.size:
        diagnostics["max_modulus_gap"] = float(np.max(1 - np.abs(w)))
    return make_solution(model, B, w, doherty, static, trace=trace, iterations=len(trace) - 1,
                         converged=converged, diagnostics=diagnostics)
