import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import oracle_objective, random_problem, stacked_from_problem, unit_columns
from trac.solver import (
    EPSILON,
    SolverConfig,
    SolverError,
    SparseProblem,
    TemporalTarget,
    closed_form_step,
    huber,
    objective,
    reweight,
    solve,
    solve_self_representation,
)

CONVERGED = SolverConfig(max_iters=20000, tol=1e-13)


def fixed_instance():
    rng = np.random.default_rng(2024)
    D = unit_columns(rng.standard_normal((6, 4)))
    X = unit_columns(rng.standard_normal((6, 3)))
    return SparseProblem([D], [X], lambda1=0.5)


# frozen from the FISTA oracle in _oracles.py on fixed_instance()
FIXED_ORACLE_OBJECTIVE = 1.5124953223685034


# -- solve ------------------------------------------------------------------

def test_exact_column_is_recovered_with_vanishing_penalty():
    rng = np.random.default_rng(0)
    D = unit_columns(rng.standard_normal((8, 4)))
    p = SparseProblem([D], [D[:, :1]], lambda1=1e-6, trivial=False)
    sol = solve(p, CONVERGED)
    w = sol.coefficients[0][:, 0]
    assert w[0] == pytest.approx(1.0, abs=1e-5)
    assert np.max(np.abs(w[1:])) < 1e-5
    assert sol.objective_trace[-1] < 1e-5


def test_exact_column_with_trivial_templates():
    rng = np.random.default_rng(1)
    D = unit_columns(rng.standard_normal((8, 4)))
    p = SparseProblem([D], [D[:, :1]], lambda1=1e-6)
    sol = solve(p, CONVERGED)
    assert sol.objective_trace[-1] < 1e-5
    rec = D @ sol.coefficients[0][:4] + sol.coefficients[0][4:]
    np.testing.assert_allclose(rec, D[:, :1], atol=1e-5)


def test_huge_lambda_crushes_target_rows():
    rng = np.random.default_rng(2)
    p = random_problem(rng, lambda1=1e3, lambda2=0.0)
    sol = solve(p)
    m = p.n_templates
    norms = np.sqrt(sum(np.sum(w[:m] ** 2, axis=1) for w in sol.coefficients))
    assert np.all(norms < 1e-3)


def test_matches_oracle_on_fixed_instance():
    p = fixed_instance()
    sol = solve(p, CONVERGED)
    assert sol.objective_trace[-1] == pytest.approx(FIXED_ORACLE_OBJECTIVE, rel=1e-4)
    # default stopping rule already lands close
    assert solve(p).objective_trace[-1] == pytest.approx(FIXED_ORACLE_OBJECTIVE, rel=1e-3)


def test_frozen_oracle_value_is_reproducible():
    value, _ = oracle_objective(fixed_instance())
    assert value == pytest.approx(FIXED_ORACLE_OBJECTIVE, rel=1e-9)


def test_temporal_target_at_optimum_changes_nothing():
    rng = np.random.default_rng(3)
    D = unit_columns(rng.standard_normal((6, 4)))
    x = unit_columns(rng.standard_normal((6, 1)))
    base = solve(SparseProblem([D], [x], lambda1=0.5), CONVERGED)
    z = base.coefficients[0][:4, 0]
    p = SparseProblem([D], [x], lambda1=0.5, lambda2=0.1, alpha=0.1,
                      temporal_targets=[TemporalTarget([z], lag=1)])
    sol = solve(p, CONVERGED)
    np.testing.assert_allclose(sol.coefficients[0], base.coefficients[0], atol=1e-5)


def test_temporal_target_pulls_coefficients():
    rng = np.random.default_rng(4)
    p = random_problem(rng, lambda2=0.0, n_targets=0)
    m, K = p.n_templates, p.n_modalities
    target = TemporalTarget([np.full(m, 0.3) for _ in range(K)], lag=1)

    def distance(lam2):
        q = SparseProblem(p.dictionaries, p.observations, lambda1=0.5, lambda2=lam2,
                          alpha=0.5, temporal_targets=[target])
        W = solve(q, CONVERGED).coefficients
        return sum(np.linalg.norm(w[:m] - 0.3, axis=1) for w in W).sum()

    dists = [distance(l) for l in (0.0, 0.1, 1.0, 10.0)]
    assert all(b <= a + 1e-6 for a, b in zip(dists, dists[1:]))


def test_sparsity_is_monotone_in_lambda1():
    rng = np.random.default_rng(5)
    p = random_problem(rng, m_range=(6, 8), lambda2=0.0)
    counts = []
    for lam in (0.01, 0.1, 1.0, 10.0):
        q = SparseProblem(p.dictionaries, p.observations, lambda1=lam)
        W = solve(q, CONVERGED).coefficients
        norms = np.sqrt(sum(np.sum(w[: q.n_templates] ** 2, axis=1) for w in W))
        counts.append(int(np.sum(norms > 1e-4)))
    assert counts == sorted(counts, reverse=True)


def test_no_penalty_equals_columnwise_least_squares():
    rng = np.random.default_rng(6)
    D = unit_columns(rng.standard_normal((9, 4)))
    X = unit_columns(rng.standard_normal((9, 5)))
    p = SparseProblem([D], [X], lambda1=0.0, trivial=False)
    W = solve(p).coefficients[0]
    for j in range(X.shape[1]):
        ref = np.linalg.lstsq(D, X[:, j], rcond=None)[0]
        np.testing.assert_allclose(W[:, j], ref, atol=1e-8)


def test_solver_is_deterministic_and_thread_invariant():
    rng = np.random.default_rng(7)
    p = random_problem(rng, k_range=(3, 3))
    a = solve(p)
    b = solve(p)
    c = solve(p, SolverConfig(workers=3))
    for x, y, z in zip(a.coefficients, b.coefficients, c.coefficients):
        assert np.array_equal(x, y) and np.array_equal(x, z)
    assert a.objective_trace == c.objective_trace


def test_trace_length_bounded_by_max_iters():
    p = random_problem(np.random.default_rng(8))
    sol = solve(p, SolverConfig(max_iters=7, tol=1e-15))
    assert len(sol.objective_trace) == sol.iterations <= 7


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_objective_trace_never_increases(seed):
    p = random_problem(np.random.default_rng(seed))
    sol = solve(p)
    values = [sol.initial_objective] + sol.objective_trace
    assert all(b <= a + 1e-10 for a, b in zip(values, values[1:]))
    assert all(np.all(np.isfinite(w)) for w in sol.coefficients)


def test_rejects_bad_input():
    D = np.eye(3)
    with pytest.raises(SolverError):
        SparseProblem([D], [np.full((3, 1), np.nan)])
    with pytest.raises(SolverError):
        SparseProblem([D], [np.ones((4, 1))])
    with pytest.raises(SolverError):
        SparseProblem([D], [np.ones((3, 1))], lambda1=-1)
    with pytest.raises(SolverError):
        SolverConfig(max_iters=0)


# -- objective --------------------------------------------------------------

def test_objective_at_zero_is_observation_energy():
    p = random_problem(np.random.default_rng(9), lambda2=0.0)
    W = [np.zeros((p.n_templates + x.shape[0], x.shape[1])) for x in p.observations]
    assert objective(p, W) == sum(float(np.sum(x * x)) for x in p.observations)


def test_objective_without_penalties_is_residual():
    rng = np.random.default_rng(10)
    p = random_problem(rng, lambda1=0.0, lambda2=0.0)
    W = [rng.standard_normal((B.shape[1], p.n_columns)) for B in p.bases]
    direct = sum(np.linalg.norm(B @ w - x) ** 2 for B, w, x in zip(p.bases, W, p.observations))
    assert objective(p, W) == pytest.approx(direct, rel=1e-12)


def test_objective_hand_case():
    p = SparseProblem([np.eye(2)], [np.array([[1.0], [0.0]])], lambda1=1.0, trivial=False)
    assert objective(p, [np.array([[1.0], [0.0]])]) == 1.0


def test_objective_matches_independent_stacked_form():
    rng = np.random.default_rng(11)
    for _ in range(10):
        p = random_problem(rng)
        W = [rng.standard_normal((B.shape[1], p.n_columns)) for B in p.bases]
        S = stacked_from_problem(p)
        assert objective(p, W) == pytest.approx(S.value(np.vstack(W)), rel=1e-12)
        assert objective(p, W, 1e-2) == pytest.approx(S.value(np.vstack(W), 1e-2), rel=1e-12)


def test_excluded_targets_are_ignored():
    rng = np.random.default_rng(12)
    p = random_problem(rng, n_targets=0)
    m, K = p.n_templates, p.n_modalities
    far = TemporalTarget([np.full(m, 9.0) for _ in range(K)], lag=1, excluded=True)
    q = SparseProblem(p.dictionaries, p.observations, 0.5, 0.1, 0.1, [far])
    W = [rng.standard_normal((B.shape[1], p.n_columns)) for B in p.bases]
    assert objective(q, W) == objective(p, W)


def test_objective_shape_mismatch():
    p = SparseProblem([np.eye(2)], [np.ones((2, 1))], trivial=False)
    with pytest.raises(SolverError):
        objective(p, [np.zeros((3, 1))])


def test_huber_is_continuous_at_epsilon():
    eps = 1e-3
    r = np.array([eps * (1 - 1e-9), eps, eps * (1 + 1e-9)])
    assert np.ptp(huber(r, eps)) < 1e-11
    assert huber(np.array([0.0]), eps)[0] == eps / 2


# -- reweight ---------------------------------------------------------------

def test_reweight_unit_row():
    W = [np.array([[0.6, 0.8], [0.0, 0.0]])]
    st_ = reweight(W, [], EPSILON, n_templates=2)
    assert st_.diag_sparsity[0] == 0.5
    assert st_.diag_sparsity[1] == 0.5 / EPSILON == 5e7


def test_reweight_joint_row_spans_modalities():
    W = [np.array([[0.6], [1.0]]), np.array([[0.8], [0.0]])]
    st_ = reweight(W, [], EPSILON, n_templates=1)
    assert st_.diag_sparsity[0] == pytest.approx(0.5)
    np.testing.assert_allclose(st_.diag_trivial[0], [0.5])
    np.testing.assert_allclose(st_.diag_trivial[1], [0.5 / EPSILON])


def test_reweight_at_temporal_target_hits_cap():
    z = np.array([0.2, -0.4, 0.1])
    W = [np.column_stack([z, z])]
    st_ = reweight(W, [TemporalTarget([z], lag=1)], EPSILON, n_templates=3)
    np.testing.assert_array_equal(st_.diag_temporal, np.full((1, 3), 1 / (2 * EPSILON)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_reweight_diagonals_are_bounded(seed):
    rng = np.random.default_rng(seed)
    p = random_problem(rng)
    W = [rng.standard_normal((B.shape[1], p.n_columns)) * (rng.random() < 0.7) for B in p.bases]
    s = reweight(W, p.active_targets(), EPSILON, p.n_templates)
    cap = 1 / (2 * EPSILON)
    for arr in [s.diag_sparsity, s.diag_temporal.ravel(), *s.diag_trivial]:
        assert np.all(arr > 0) and np.all(arr <= cap)


def test_reweight_rejects_nonpositive_epsilon():
    with pytest.raises(SolverError):
        reweight([np.ones((2, 1))], [], 0.0, n_templates=1)


# -- closed_form_step -------------------------------------------------------

def full_normal_solve(p, state, k):
    """The (m + d)-square reweighted normal equations, solved densely."""
    B, X = p.bases[k], p.observations[k]
    m = p.n_templates
    diag = np.concatenate([p.lambda1 * state.diag_sparsity,
                           p.lambda1 * state.diag_trivial[k] if p.trivial else []])
    rhs = B.T @ X
    for w_l, lag, tt in zip(state.diag_temporal, state.lags, p.active_targets()):
        c = p.lambda2 * p.alpha ** lag * w_l
        diag[:m] += c
        rhs[:m] += (c * tt.coefficients[k])[:, None]
    return np.linalg.solve(B.T @ B + np.diag(diag), rhs)


def test_closed_form_step_equals_full_system():
    rng = np.random.default_rng(13)
    for _ in range(20):
        p = random_problem(rng, d_range=(3, 10))
        W = [rng.standard_normal((B.shape[1], p.n_columns)) for B in p.bases]
        state = reweight(W, p.active_targets(), EPSILON, p.n_templates)
        for k in range(p.n_modalities):
            np.testing.assert_allclose(closed_form_step(p, state, k), full_normal_solve(p, state, k),
                                       rtol=1e-8, atol=1e-10)


def test_closed_form_identity_dictionary_shrinks():
    x = np.array([[0.8], [-0.6], [0.0]])
    p = SparseProblem([np.eye(3)], [x], lambda1=0.5, trivial=False)
    state = reweight([x], [], EPSILON, 3)
    w = closed_form_step(p, state, 0)
    expected = x / (1 + 0.5 * state.diag_sparsity[:, None])
    np.testing.assert_allclose(w, expected, rtol=1e-12)
    assert np.all(np.abs(w) <= np.abs(x))


def test_closed_form_small_penalty_satisfies_normal_equations():
    rng = np.random.default_rng(14)
    D = unit_columns(rng.standard_normal((10, 4)))
    X = unit_columns(rng.standard_normal((10, 2)))
    for lam in (1e-2, 1e-4, 1e-6):
        p = SparseProblem([D], [X], lambda1=lam, trivial=False)
        W0 = [np.ones((4, 2))]
        w = closed_form_step(p, reweight(W0, [], EPSILON, 4), 0)
        assert np.linalg.norm(D.T @ (D @ w - X)) < 10 * lam


def test_one_iteration_decreases_objective():
    p = fixed_instance()
    sol = solve(p, SolverConfig(max_iters=1, tol=1e-15))
    assert sol.objective_trace[0] < sol.initial_objective


# -- self-representation ----------------------------------------------------

def test_identical_columns_concentrate_on_one_row():
    rng = np.random.default_rng(15)
    y = unit_columns(rng.standard_normal((20, 1)))
    U = solve_self_representation(np.tile(y, (1, 6)), 0.5)
    sums = np.sort(np.abs(U).sum(axis=1))[::-1]
    assert sums[0] > 5 * max(sums[1], 1e-300)


def test_orthonormal_columns_give_identity():
    Q = np.linalg.qr(np.random.default_rng(16).standard_normal((12, 5)))[0]
    U = solve_self_representation(Q, 1e-6, CONVERGED)
    np.testing.assert_allclose(U, np.eye(5), atol=1e-5)


def test_single_column_scalar_shrinkage():
    y = unit_columns(np.random.default_rng(17).standard_normal((7, 1)))
    for lam in (0.1, 0.5, 1.0):
        u = solve_self_representation(y, lam, SolverConfig(max_iters=1000, tol=1e-14))
        assert u.shape == (1, 1)
        # scalar lasso: argmin (1-u)^2 + lam |u|
        assert u[0, 0] == pytest.approx(1 - lam / 2, abs=1e-7)
        assert 0 < u[0, 0] <= 1
