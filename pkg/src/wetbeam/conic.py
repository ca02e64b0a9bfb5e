"""Solver-agnostic conic programs and their solution.

A :class:`ConicProblem` describes::

    minimize    c @ x
    subject to  b - A @ x  in  K = K_1 x K_2 x ... x K_p

where each ``K_i`` is one of

``("zero", n)``      the origin of R^n (equality rows),
``("nonneg", n)``    the nonnegative orthant,
``("soc", n)``       {(t, u) : ||u|| <= t} with ``t`` the first entry,
``("psd", s)``       symmetric s x s PSD matrices in scaled upper-triangle
                     column-major ``svec`` form with
                     off-diagonal entries multiplied by sqrt(2); the block
                     has ``s (s + 1) / 2`` rows.

Complex quantities are lowered before reaching this module:

* a complex vector ``v`` becomes ``[Re v; Im v]`` (:func:`complex_to_real`);
* a Hermitian matrix ``X`` becomes ``[[Re X, -Im X], [Im X, Re X]]``
  (:func:`hermitian_embedding`), which is PSD exactly when ``X`` is.

Second-order cone programs go to Clarabel; programs with a PSD block go to
CVXOPT.  Either backend accepts any problem in this format.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ShapeError

CONE_KINDS = ("zero", "nonneg", "soc", "psd")
STATUSES = ("optimal", "infeasible", "unbounded", "numerical-failure")


def psd_rows(side: int) -> int:
    return side * (side + 1) // 2


def _cone_rows(kind: str, dim: int) -> int:
    return psd_rows(dim) if kind == "psd" else dim


@dataclass
class ConicProblem:
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    cones: list[tuple[str, int]]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.A = sp.csc_matrix(self.A, dtype=float)
        self.cones = [(str(k), int(d)) for k, d in self.cones]
        for kind, dim in self.cones:
            if kind not in CONE_KINDS:
                raise ShapeError(f"unknown cone {kind!r}")
            if dim < 1:
                raise ShapeError("cone dimensions must be positive")
        m = sum(_cone_rows(k, d) for k, d in self.cones)
        if self.A.shape != (m, self.c.size) or self.b.size != m:
            raise ShapeError(f"A{self.A.shape}, b({self.b.size}) and cones ({m} rows) "
                             f"disagree for {self.c.size} variables")

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def m(self) -> int:
        return self.b.size

    def blocks(self):
        """Yield ``(kind, dim, row_slice)`` for every cone block."""
        start = 0
        for kind, dim in self.cones:
            rows = _cone_rows(kind, dim)
            yield kind, dim, slice(start, start + rows)
            start += rows

    def slack(self, x) -> np.ndarray:
        return self.b - self.A @ np.asarray(x, dtype=float)

    def cone_violation(self, x) -> float:
        """Largest distance of ``b - A x`` from its cone, block by block."""
        s = self.slack(x)
        worst = 0.0
        for kind, dim, rows in self.blocks():
            v = s[rows]
            if kind == "zero":
                viol = np.max(np.abs(v))
            elif kind == "nonneg":
                viol = max(0.0, -np.min(v))
            elif kind == "soc":
                viol = max(0.0, np.linalg.norm(v[1:]) - v[0])
            else:
                viol = max(0.0, -np.linalg.eigvalsh(smat(v, dim))[0])
            worst = max(worst, float(viol))
        return worst

    # -- debug text format -------------------------------------------------
    def to_json(self) -> str:
        """Serialise as JSON with ``A`` in coordinate form."""
        coo = self.A.tocoo()
        data = {
            "format": "conic-v1",
            "n": self.n,
            "m": self.m,
            "c": self.c.tolist(),
            "b": self.b.tolist(),
            "A": {"row": coo.row.tolist(), "col": coo.col.tolist(), "val": coo.data.tolist()},
            "cones": [list(cn) for cn in self.cones],
            "meta": self.meta,
        }
        return json.dumps(data)

    def dump(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "ConicProblem":
        d = json.loads(text)
        A = sp.coo_matrix((d["A"]["val"], (d["A"]["row"], d["A"]["col"])), shape=(d["m"], d["n"]))
        return cls(np.array(d["c"]), A.tocsc(), np.array(d["b"]), [tuple(x) for x in d["cones"]],
                   d.get("meta", {}))

    @classmethod
    def load(cls, path) -> "ConicProblem":
        return cls.from_json(Path(path).read_text())


@dataclass
class ConicSolution:
    """Result of a conic solve.

    ``primal_residual`` is the cone violation of ``b - A x`` divided by
    ``1 + max|b|``; ``gap`` is ``|c x + b z| / (1 + |c x|)``.
    """
    x: np.ndarray | None
    z: np.ndarray | None
    objective: float
    status: str
    primal_residual: float = math.inf
    gap: float = math.inf
    iterations: int = 0
    solver: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


# -- lowering helpers -------------------------------------------------------

def complex_to_real(v) -> np.ndarray:
    v = np.asarray(v)
    return np.concatenate([v.real, v.imag])


def real_to_complex(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.size % 2:
        raise ShapeError("real representation must have even length")
    half = x.size // 2
    return x[:half] + 1j * x[half:]


def hermitian_embedding(X) -> np.ndarray:
    X = np.asarray(X)
    return np.block([[X.real, -X.imag], [X.imag, X.real]])


def hermitian_from_embedding(Z) -> np.ndarray:
    """Hermitian matrix whose embedding is closest to the symmetric ``Z``."""
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[0] // 2
    z11, z12, z21, z22 = Z[:n, :n], Z[:n, n:], Z[n:, :n], Z[n:, n:]
    return (z11 + z22) / 2 + 1j * (z21 - z12) / 2


def _svec_index(side: int):
    rows, cols = [], []
    for j in range(side):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    return np.array(rows), np.array(cols)


def svec(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    i, j = _svec_index(X.shape[0])
    scale = np.where(i == j, 1.0, math.sqrt(2))
    return X[i, j] * scale


def smat(v, side: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    i, j = _svec_index(side)
    vals = v / np.where(i == j, 1.0, math.sqrt(2))
    X = np.zeros((side, side))
    X[i, j] = vals
    X[j, i] = vals
    return X


def svec_operator(side: int) -> sp.csr_matrix:
    """Sparse map from column-major ``vec(X)`` of a symmetric matrix to ``svec(X)``."""
    i, j = _svec_index(side)
    scale = np.where(i == j, 1.0, math.sqrt(2))
    # average the two mirror entries so the map also symmetrizes
    r = np.concatenate([np.arange(i.size), np.arange(i.size)])
    c = np.concatenate([j * side + i, i * side + j])
    v = np.concatenate([scale / 2, scale / 2])
    return sp.csr_matrix((v, (r, c)), shape=(i.size, side * side))


# -- solution post-processing ----------------------------------------------

def _finish(problem: ConicProblem, x, z, status, iterations, solver, feas_tol, gap_tol):
    if status != "optimal" or x is None:
        obj = math.nan if x is None else float(problem.c @ x)
        return ConicSolution(x, z, obj, status, iterations=iterations, solver=solver)
    obj = float(problem.c @ x)
    resid = problem.cone_violation(x) / (1.0 + float(np.max(np.abs(problem.b), initial=0.0)))
    gap = abs(obj + float(problem.b @ z)) / (1.0 + abs(obj)) if z is not None else math.inf
    if resid > feas_tol or gap > gap_tol:
        status = "numerical-failure"
    return ConicSolution(x, z, obj, status, resid, gap, iterations, solver)


# -- Clarabel backend ------------------------------------------------------

def _clarabel_status(name: str) -> str:
    if name in ("Solved", "AlmostSolved"):
        return "optimal"
    if name in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return "infeasible"
    if name in ("DualInfeasible", "AlmostDualInfeasible"):
        return "unbounded"
    return "numerical-failure"


def solve_clarabel(problem: ConicProblem, feas_tol: float = 1e-8, gap_tol: float = 1e-8,
                   max_iter: int = 200, verbose: bool = False) -> ConicSolution:
    import clarabel

    cones = []
    for kind, dim in problem.cones:
        cones.append({"zero": clarabel.ZeroConeT, "nonneg": clarabel.NonnegativeConeT,
                      "soc": clarabel.SecondOrderConeT, "psd": clarabel.PSDTriangleConeT}[kind](dim))
    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.max_iter = max_iter
    settings.tol_feas = feas_tol / 10
    settings.tol_gap_abs = gap_tol / 10
    settings.tol_gap_rel = gap_tol / 10
    P = sp.csc_matrix((problem.n, problem.n))
    solver = clarabel.DefaultSolver(P, problem.c, problem.A, problem.b, cones, settings)
    sol = solver.solve()
    status = _clarabel_status(str(sol.status).split(".")[-1])
    x = np.array(sol.x) if status == "optimal" else None
    z = np.array(sol.z) if status == "optimal" else None
    return _finish(problem, x, z, status, int(sol.iterations), "clarabel", feas_tol, gap_tol)


# -- CVXOPT backend --------------------------------------------------------

def _to_cvxopt_sparse(M):
    import cvxopt
    M = sp.coo_matrix(M)
    return cvxopt.spmatrix(M.data.tolist(), M.row.tolist(), M.col.tolist(), size=M.shape)


def solve_cvxopt(problem: ConicProblem, feas_tol: float = 1e-8, gap_tol: float = 1e-8,
                 max_iter: int = 200, verbose: bool = False) -> ConicSolution:
    import cvxopt
    from cvxopt import solvers

    A = problem.A.tocsr()
    eq_rows, l_rows, q_blocks, s_blocks = [], [], [], []
    for kind, dim, rows in problem.blocks():
        idx = np.arange(rows.start, rows.stop)
        if kind == "zero":
            eq_rows.append(idx)
        elif kind == "nonneg":
            l_rows.append(idx)
        elif kind == "soc":
            q_blocks.append(idx)
        else:
            s_blocks.append((dim, idx))

    g_parts, h_parts = [], []
    for idx in l_rows + q_blocks:
        g_parts.append(A[idx])
        h_parts.append(problem.b[idx])
    # PSD blocks: expand svec rows to full column-major storage
    expand_ops = []
    for side, idx in s_blocks:
        i, j = _svec_index(side)
        unscale = np.where(i == j, 1.0, 1 / math.sqrt(2))
        r = np.concatenate([j * side + i, i * side + j])
        cc = np.concatenate([np.arange(i.size), np.arange(i.size)])
        v = np.concatenate([unscale, np.where(i == j, 0.0, unscale)])
        E = sp.csr_matrix((v, (r, cc)), shape=(side * side, i.size))
        expand_ops.append(E)
        g_parts.append(E @ A[idx])
        h_parts.append(E @ problem.b[idx])
    dims = {"l": int(sum(len(i) for i in l_rows)), "q": [len(i) for i in q_blocks],
            "s": [side for side, _ in s_blocks]}
    if g_parts:
        G = sp.vstack(g_parts).tocoo()
        h = np.concatenate(h_parts)
    else:
        G = sp.coo_matrix((0, problem.n))
        h = np.zeros(0)
    kwargs = {}
    if eq_rows:
        eidx = np.concatenate(eq_rows)
        kwargs["A"] = _to_cvxopt_sparse(A[eidx])
        kwargs["b"] = cvxopt.matrix(problem.b[eidx])
    G, h, c = _to_cvxopt_sparse(G), cvxopt.matrix(h), cvxopt.matrix(problem.c)
    res = None
    # cvxopt can stall and break down when pushed past its attainable accuracy;
    # one retry with looser stopping rules is enough in practice and the
    # residual check in _finish still applies
    for loosen in (1.0, 100.0):
        options = {"show_progress": verbose, "abstol": gap_tol * loosen,
                   "reltol": gap_tol * loosen, "feastol": feas_tol * loosen,
                   "maxiters": max_iter}
        try:
            res = solvers.conelp(c, G, h, dims, options=options, **kwargs)
        except (ArithmeticError, ValueError) as exc:
            error = exc
            continue
        if res["x"] is not None:
            break
    if res is None:
        return ConicSolution(None, None, math.nan, "numerical-failure", solver=f"cvxopt: {error}")
    status = {"optimal": "optimal", "primal infeasible": "infeasible",
              "dual infeasible": "unbounded"}.get(res["status"], "numerical-failure")
    if status == "numerical-failure" and res["x"] is not None:
        # cvxopt stops at "unknown" once it cannot improve; accept the point
        # when it nonetheless meets the residual requirements
        status = "optimal"
    if status != "optimal":
        return ConicSolution(None, None, math.nan, status, iterations=int(res["iterations"]),
                             solver="cvxopt")
    x = np.array(res["x"]).ravel()
    zc = np.array(res["z"]).ravel()
    z = np.zeros(problem.m)
    if eq_rows:
        z[np.concatenate(eq_rows)] = np.array(res["y"]).ravel()
    pos = 0
    for idx in l_rows + q_blocks:
        z[idx] = zc[pos:pos + len(idx)]
        pos += len(idx)
    for (side, idx) in s_blocks:
        Z = zc[pos:pos + side * side].reshape(side, side, order="F")
        pos += side * side
        # only the lower triangle of a cvxopt 's' block is meaningful
        z[idx] = svec(np.tril(Z) + np.tril(Z, -1).T)
    return _finish(problem, x, z, status, int(res["iterations"]), "cvxopt", feas_tol, gap_tol)


def solve_socp(problem: ConicProblem, feas_tol: float = 1e-8, gap_tol: float = 1e-8,
               max_iter: int = 200) -> ConicSolution:
    """Solve a problem built from zero, orthant and second-order cones."""
    return solve_clarabel(problem, feas_tol, gap_tol, max_iter)


def solve_sdp(problem: ConicProblem, feas_tol: float = 1e-8, gap_tol: float = 1e-8,
              max_iter: int = 200) -> ConicSolution:
    """Solve a problem containing PSD blocks.

    The returned dual vector ``z`` holds the PSD multipliers in ``svec`` form.
    """
    return solve_cvxopt(problem, feas_tol, gap_tol, max_iter)


class ProblemBuilder:
    """Incremental assembly of a :class:`ConicProblem` block by block.

    Each ``add_*`` call appends rows ``b_blk - A_blk x`` that must lie in the
    given cone.
    """

    def __init__(self, n: int):
        self.n = n
        self._A: list[sp.spmatrix] = []
        self._b: list[np.ndarray] = []
        self.cones: list[tuple[str, int]] = []

    def add(self, kind: str, A_blk, b_blk, dim: int | None = None) -> None:
        A_blk = sp.csr_matrix(np.atleast_2d(A_blk) if not sp.issparse(A_blk) else A_blk)
        b_blk = np.atleast_1d(np.asarray(b_blk, dtype=float))
        if A_blk.shape != (b_blk.size, self.n):
            raise ShapeError(f"block A{A_blk.shape} does not match b({b_blk.size}) and n={self.n}")
        self._A.append(A_blk)
        self._b.append(b_blk)
        self.cones.append((kind, b_blk.size if dim is None else dim))

    def add_soc(self, A_blk, b_blk) -> None:
        """Append ``||(b - A x)[1:]|| <= (b - A x)[0]``."""
        self.add("soc", A_blk, b_blk)

    def add_nonneg(self, A_blk, b_blk) -> None:
        self.add("nonneg", A_blk, b_blk)

    def add_zero(self, A_blk, b_blk) -> None:
        self.add("zero", A_blk, b_blk)

    def build(self, c, meta=None) -> ConicProblem:
        A = sp.vstack(self._A).tocsc() if self._A else sp.csc_matrix((0, self.n))
        b = np.concatenate(self._b) if self._b else np.zeros(0)
        return ConicProblem(c, A, b, list(self.cones), meta or {})
