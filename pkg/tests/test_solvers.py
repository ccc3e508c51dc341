import numpy as np
import pytest

from jacobizero.linalg import MatrixError, apply_rotation, givens_coefficients, offdiag_max, offdiag_sq_norm
from jacobizero.solvers import (
    Cyclic,
    MaxElement,
    SearchBudgetError,
    brute_force_shortest_path,
    closed_form_eigenvalues,
    cyclic_next,
    default_max_steps,
    effective_tol,
    make_policy,
    reference_eigenvalues,
    replay,
    solve,
)


def rand_sym(rng, n, scale=1.0):
    m = rng.standard_normal((n, n)) * scale
    return (m + m.T) / 2


@pytest.mark.parametrize("strategy", ["maxelement", "cyclic"])
def test_diagonal_input_takes_no_steps(strategy):
    p = solve(np.diag([3.0, -1.0, 2.0]), strategy)
    assert p.steps == 0 and p.converged
    assert list(p.result.eigenvalues) == [3.0, -1.0, 2.0]


def test_two_by_two_one_step():
    p = solve(np.array([[2.0, 0.3], [0.3, -1.0]]), "maxelement")
    assert p.steps == 1 and p.converged
    assert np.sort(p.result.eigenvalues) == pytest.approx(closed_form_eigenvalues([[2.0, 0.3], [0.3, -1.0]]), abs=1e-14)


def test_solve_path_invariants_and_reconstruction():
    rng = np.random.default_rng(0)
    for strategy in ("maxelement", "cyclic"):
        for _ in range(20):
            a = rand_sym(rng, 5, 4.0)
            p = solve(a, strategy)
            assert p.converged
            assert p.steps == len(p.pivots) == len(p.offdiag_trace)
            assert p.offdiag_trace[-1] < p.tol
            u = p.result.vectors
            assert np.max(np.abs(u.T @ u - np.eye(5))) <= 1e-10
            d = u.T @ a @ u
            assert np.max(np.abs(d - np.diag(p.result.eigenvalues))) <= 1e-8 * np.max(np.abs(a)) + 1e-5


def test_budget_exhaustion_is_not_an_error():
    a = rand_sym(np.random.default_rng(1), 5)
    p = solve(a, "maxelement", max_steps=2)
    assert p.steps == 2 and not p.converged


def test_solve_rejects_bad_input():
    with pytest.raises(MatrixError):
        solve([[1.0, np.inf], [np.inf, 1.0]])
    with pytest.raises(MatrixError):
        solve([[1.0]])
    with pytest.raises(MatrixError):
        solve(np.eye(2), tol=0.0)
    with pytest.raises(ValueError):
        solve(np.eye(2), max_steps=0)
    with pytest.raises(ValueError):
        make_policy("learned")
    with pytest.raises(ValueError):
        make_policy("bogus")


def test_maxelement_offdiag_norm_strictly_decreases():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a = rand_sym(rng, 5)
        pol = MaxElement()
        pol.start(a, 1e-5, 100)
        cur = a
        while offdiag_max(cur)[0] >= 1e-5:
            nxt = apply_rotation(cur, givens_coefficients(cur, *pol.choose(cur, 0)))
            assert offdiag_sq_norm(nxt) < offdiag_sq_norm(cur)
            cur = nxt


def test_strategies_agree_on_spectrum():
    rng = np.random.default_rng(4)
    for _ in range(30):
        a = rand_sym(rng, 5, 3.0)
        me = np.sort(solve(a, "maxelement").result.eigenvalues)
        cy = np.sort(solve(a, "cyclic").result.eigenvalues)
        assert np.max(np.abs(me - cy)) <= 1e-8


def test_solve_is_deterministic():
    a = rand_sym(np.random.default_rng(6), 5)
    p1, p2 = solve(a, "cyclic"), solve(a, "cyclic")
    assert p1.pivots == p2.pivots and p1.offdiag_trace == p2.offdiag_trace
    assert np.array_equal(p1.result.vectors, p2.result.vectors)


def test_cyclic_next_examples():
    assert cyclic_next(3, 0)[0] == (0, 1)
    # cursor 1 is (0,2); the next one is (1,2)
    (p, cur) = cyclic_next(3, 1)
    assert p == (0, 2)
    assert cyclic_next(3, cur)[0] == (1, 2)
    (p, cur) = cyclic_next(3, 2)
    assert p == (1, 2) and cyclic_next(3, cur)[0] == (0, 1)
    order = []
    cur = 0
    for _ in range(6):
        p, cur = cyclic_next(4, cur)
        order.append(p)
    assert order == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def test_cyclic_skips_small_entries_and_counts_visits():
    a = np.array([[1.0, 0.0, 0.5], [0.0, 2.0, 0.0], [0.5, 0.0, 3.0]])
    p = solve(a, "cyclic")
    assert p.pivots == [(0, 2)]
    assert p.visits == 2  # looked at (0,1), then took (0,2)


def test_maxelement_pivot_scale_invariance_relative_tol():
    a = rand_sym(np.random.default_rng(8), 5)
    p1 = solve(a, "maxelement", tol=1e-6, tol_mode="relative")
    p2 = solve(256.0 * a, "maxelement", tol=1e-6, tol_mode="relative")
    assert p1.pivots == p2.pivots


def test_effective_tol():
    a = np.array([[3.0, 4.0], [4.0, 0.0]])
    assert effective_tol(a, 1e-5) == 1e-5
    assert effective_tol(a, 1e-5, "relative") == pytest.approx(1e-5 * np.linalg.norm(a))
    with pytest.raises(ValueError):
        effective_tol(a, 1e-5, "other")


def test_default_max_steps():
    assert default_max_steps(5) == 200


def test_brute_force_examples():
    assert brute_force_shortest_path(np.array([[1.0, 2.0], [2.0, 1.0]]))[0] == 1
    steps, witness = brute_force_shortest_path(np.diag([1.0, 2.0, 3.0]))
    assert steps == 0 and witness.steps == 0


def test_brute_force_dominates_maxelement_on_3x3():
    rng = np.random.default_rng(9)
    for _ in range(30):
        a = rand_sym(rng, 3, 5.0)
        best, witness = brute_force_shortest_path(a, 1e-5, depth_limit=8)
        me = solve(a, "maxelement").steps
        assert best is not None and best <= me
        assert witness.converged and witness.steps == best
        again = replay(a, witness.pivots)
        assert again.converged and again.steps == best


def test_brute_force_reports_unreachable_and_budget():
    a = rand_sym(np.random.default_rng(10), 4)
    assert brute_force_shortest_path(a, depth_limit=1) == (None, None)
    with pytest.raises(SearchBudgetError):
        brute_force_shortest_path(a, depth_limit=8, node_budget=100)


def test_closed_form_matches_numpy():
    rng = np.random.default_rng(12)
    for n in (1, 2, 3):
        for _ in range(200):
            a = rand_sym(rng, n, 10.0)
            assert np.allclose(closed_form_eigenvalues(a), np.linalg.eigvalsh(a), atol=1e-10)
    # repeated eigenvalues
    assert np.allclose(closed_form_eigenvalues(np.eye(3) * 2), [2, 2, 2])
    with pytest.raises(ValueError):
        closed_form_eigenvalues(np.eye(4))


def test_reference_eigenvalues_large_order():
    a = rand_sym(np.random.default_rng(13), 6, 3.0)
    assert np.allclose(reference_eigenvalues(a), np.linalg.eigvalsh(a), atol=1e-10)


def test_policy_objects_plug_in():
    a = rand_sym(np.random.default_rng(14), 4)
    assert solve(a, Cyclic()).pivots == solve(a, "cyclic").pivots
