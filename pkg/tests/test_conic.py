import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from wetbeam.conic import (ConicProblem, ProblemBuilder, complex_to_real, hermitian_embedding,
                           hermitian_from_embedding, real_to_complex, smat, solve_clarabel,
                           solve_cvxopt, solve_sdp, solve_socp, svec, svec_operator)
from wetbeam.errors import ShapeError


def _norm_projection(a):
    """minimize ||x|| subject to a @ x = 1; variables [t, x]."""
    a = np.asarray(a, dtype=float)
    n = a.size
    pb = ProblemBuilder(n + 1)
    pb.add_zero(np.concatenate([[0.0], a])[None, :], [1.0])
    pb.add_soc(-np.eye(n + 1), np.zeros(n + 1))
    return pb.build(np.eye(n + 1)[0])


def test_epigraph_of_constant():
    pb = ProblemBuilder(2)                       # [x, t]
    pb.add_zero([[1.0, 0.0]], [5.0])
    pb.add_nonneg([[1.0, -1.0]], [0.0])          # t - x >= 0
    sol = solve_socp(pb.build([0.0, 1.0]))
    assert sol.ok
    assert sol.x[1] == pytest.approx(5.0, abs=1e-7)


def test_norm_projection_optimum():
    sol = solve_socp(_norm_projection([3.0, 4.0]))
    assert sol.ok
    assert sol.objective == pytest.approx(0.2, abs=1e-7)
    np.testing.assert_allclose(sol.x[1:], [0.12, 0.16], atol=1e-7)


def test_attained_zero():
    pb = ProblemBuilder(3)                       # [t, x, y]
    pb.add_soc(-np.eye(3), [0.0, -1.0, -2.0])    # ||(x - 1, y - 2)|| <= t
    sol = solve_socp(pb.build([1.0, 0, 0]))
    assert sol.ok
    assert sol.objective == pytest.approx(0.0, abs=1e-7)
    np.testing.assert_allclose(sol.x[1:], [1, 2], atol=1e-6)


def _trace_problem(extra):
    """2x2 symmetric B as svec variable; ``extra`` adds rows to the builder."""
    pb = ProblemBuilder(3)
    pb.add("psd", -sp.eye(3), np.zeros(3), dim=2)
    extra(pb)
    return pb


def test_trace_sdp_rank_one():
    pb = _trace_problem(lambda p: p.add_nonneg([[-1.0, 0, 0]], [-1.0]))
    sol = solve_sdp(pb.build([1.0, 0.0, 1.0]))
    assert sol.ok
    assert sol.objective == pytest.approx(1.0, abs=1e-7)
    np.testing.assert_allclose(smat(sol.x, 2), [[1, 0], [0, 0]], atol=1e-6)


def test_mass_moves_to_free_variable():
    # variables [b11, sqrt2 b12, b22, t]: minimize t, tr(diag(1,0) B) <= t, tr(B) >= 1
    pb = ProblemBuilder(4)
    pb.add("psd", sp.hstack([-sp.eye(3), sp.csr_matrix((3, 1))]), np.zeros(3), dim=2)
    pb.add_nonneg([[1.0, 0, 0, -1.0]], [0.0])
    pb.add_nonneg([[-1.0, 0, -1.0, 0]], [-1.0])
    pb.add_nonneg([[0, 0, 0, -1.0]], [0.0])
    sol = solve_sdp(pb.build([0, 0, 0, 1.0]))
    assert sol.ok
    assert sol.objective == pytest.approx(0.0, abs=1e-7)
    assert sol.x[0] == pytest.approx(0.0, abs=1e-6)
    assert sol.x[2] >= 1 - 1e-6
    assert np.linalg.eigvalsh(smat(sol.x[:3], 2)).min() >= -1e-7


def test_contradictory_traces_infeasible():
    def rows(p):
        p.add_nonneg([[1.0, 0, 1.0]], [1.0])        # tr B <= 1
        p.add_nonneg([[-1.0, 0, -1.0]], [-2.0])     # tr B >= 2
    sol = solve_sdp(_trace_problem(rows).build([1.0, 0, 1.0]))
    assert sol.status == "infeasible"


def test_socp_infeasible_status():
    pb = ProblemBuilder(1)
    pb.add_nonneg([[-1.0]], [-1.0])              # x >= 1
    pb.add_nonneg([[1.0]], [0.0])                # x <= 0
    assert solve_socp(pb.build([1.0])).status == "infeasible"


def test_backends_agree_on_small_socp():
    prob = _norm_projection([1.0, -2.0, 0.5])
    a, b = solve_clarabel(prob), solve_cvxopt(prob)
    assert a.ok and b.ok
    assert a.objective == pytest.approx(b.objective, abs=1e-7)
    assert a.objective == pytest.approx(1 / math.sqrt(5.25), abs=1e-7)


def test_solves_are_reproducible_and_feasible():
    prob = _norm_projection([0.3, 0.7, -1.1, 2.0])
    s1, s2 = solve_socp(prob), solve_socp(prob)
    assert abs(s1.objective - s2.objective) <= 1e-7
    assert prob.cone_violation(s1.x) <= 1e-6


@pytest.mark.parametrize("factor", [0.5, 3.0, 40.0])
def test_objective_scaling(factor):
    prob = _norm_projection([3.0, 4.0])
    scaled = ConicProblem(factor * prob.c, prob.A, prob.b, prob.cones)
    base, sol = solve_socp(prob), solve_socp(scaled)
    assert sol.objective == pytest.approx(factor * base.objective, rel=1e-6)
    np.testing.assert_allclose(sol.x[1:], base.x[1:], atol=1e-6)


def test_complex_lowering_round_trip():
    # minimize ||x|| over complex x with a^H x = 1; the optimum is a / ||a||^2
    a = np.array([1 + 2j, -0.5j, 3.0])
    n = a.size
    re_row = complex_to_real(a)                 # Re(a^H x) = Re a.Re x + Im a.Im x
    im_row = np.concatenate([-a.imag, a.real])  # Im(a^H x)
    pb = ProblemBuilder(2 * n + 1)
    pb.add_zero(np.vstack([np.concatenate([[0.0], re_row]), np.concatenate([[0.0], im_row])]),
                [1.0, 0.0])
    pb.add_soc(-np.eye(2 * n + 1), np.zeros(2 * n + 1))
    sol = solve_socp(pb.build(np.eye(2 * n + 1)[0]))
    x = real_to_complex(sol.x[1:])
    np.testing.assert_allclose(x, a / np.linalg.norm(a) ** 2, atol=1e-7)
    assert sol.objective == pytest.approx(1 / np.linalg.norm(a), abs=1e-7)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_embedding_round_trip(seed, n):
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    X = G @ G.conj().T
    Z = hermitian_embedding(X)
    np.testing.assert_allclose(hermitian_from_embedding(Z), X, atol=1e-12)
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    r = complex_to_real(v)
    assert r @ Z @ r == pytest.approx(np.real(v.conj() @ X @ v), rel=1e-10)
    np.testing.assert_allclose(real_to_complex(r), v)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(1, 7))
def test_svec_is_isometry(seed, s):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(s, s))
    X = X + X.T
    Y = rng.normal(size=(s, s))
    Y = Y + Y.T
    assert svec(X) @ svec(Y) == pytest.approx(np.trace(X @ Y), rel=1e-10, abs=1e-10)
    np.testing.assert_allclose(smat(svec(X), s), X, atol=1e-12)
    np.testing.assert_allclose(svec_operator(s) @ X.ravel(order="F"), svec(X), atol=1e-12)


def test_json_round_trip(tmp_path):
    prob = _norm_projection([3.0, 4.0])
    path = tmp_path / "p.json"
    prob.dump(path)
    loaded = ConicProblem.load(path)
    np.testing.assert_array_equal(loaded.c, prob.c)
    np.testing.assert_array_equal(loaded.b, prob.b)
    np.testing.assert_array_equal(loaded.A.toarray(), prob.A.toarray())
    assert loaded.cones == prob.cones
    assert solve_socp(loaded).objective == pytest.approx(0.2, abs=1e-7)


def test_builder_shape_check():
    with pytest.raises(ShapeError):
        ProblemBuilder(2).add_nonneg([[1.0, 2.0, 3.0]], [0.0])
