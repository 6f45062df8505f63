import numpy as np
import pytest
import scipy.sparse as sp

from graddiv_ns.linsolve import Factorization, RefinePolicy, factor, solve_refined


def euclid(v):
    return float(np.linalg.norm(v))


def make_spd(n, rng, density=0.1):
    a = sp.random(n, n, density=density, random_state=np.random.RandomState(0))
    a = a + a.T + 10.0 * sp.identity(n)
    return a.tocsr()


def test_factor_identity():
    f = factor(sp.identity(5, format="csr"))
    b = np.arange(5.0)
    assert np.allclose(f.solve(b), b)


def test_factor_hand_solve():
    a = sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 2.0]]))
    f = factor(a)
    x = f.solve(np.array([3.0, 3.0]))
    assert np.allclose(x, [1.0, 1.0], atol=1e-14)


def test_factor_random_residual():
    rng = np.random.default_rng(0)
    a = make_spd(80, rng)
    f = factor(a)
    b = rng.standard_normal(80)
    x = f.solve(b)
    assert euclid(b - a @ x) <= 1e-12 * euclid(b)


def test_factor_rejects_rectangular():
    with pytest.raises(ValueError):
        factor(sp.csr_matrix(np.ones((2, 3))))


def test_factor_singular_is_hard_error():
    a = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(RuntimeError):
        factor(a)


def test_refine_same_matrix_exact_guess():
    rng = np.random.default_rng(1)
    n = 40
    a = make_spd(n, rng)
    f = factor(a)
    x_true = rng.standard_normal(n)
    b = a @ x_true
    policy = RefinePolicy(tol_r=1e-4)
    y, iters, refactored, _ = solve_refined(a, b, f, x_true.copy(), policy,
                                            euclid(x_true), euclid, n)
    assert iters == 1
    assert not refactored
    assert np.allclose(y, x_true, atol=1e-12)


def test_refine_same_matrix_poor_guess():
    rng = np.random.default_rng(2)
    n = 40
    a = make_spd(n, rng)
    f = factor(a)
    x_true = rng.standard_normal(n)
    b = a @ x_true
    policy = RefinePolicy(tol_r=1e-4)
    y, iters, refactored, _ = solve_refined(a, b, f, np.zeros(n), policy,
                                            euclid(x_true), euclid, n)
    assert not refactored
    assert iters <= 2
    assert euclid(b - a @ y) <= 1e-10 * euclid(b)


def test_refine_small_perturbation_converges():
    rng = np.random.default_rng(3)
    n = 60
    a_m = make_spd(n, rng)
    f = factor(a_m)
    a_n = (a_m + 0.02 * sp.diags(rng.standard_normal(n))).tocsr()
    x_true = rng.standard_normal(n)
    b = a_n @ x_true
    policy = RefinePolicy(tol_r=1e-4)
    y, iters, refactored, _ = solve_refined(a_n, b, f, np.zeros(n), policy,
                                            euclid(x_true), euclid, n)
    assert not refactored
    assert iters <= 5
    assert euclid(y - x_true) <= 1e-7 * euclid(x_true)


def test_refine_far_matrix_refactors():
    rng = np.random.default_rng(4)
    n = 60
    a_m = make_spd(n, rng)
    f = factor(a_m)
    a_n = (a_m + sp.diags(50.0 + rng.uniform(0, 10, n))).tocsr()
    x_true = rng.standard_normal(n)
    b = a_n @ x_true
    policy = RefinePolicy(tol_r=1e-4)
    y, iters, refactored, fresh = solve_refined(a_n, b, f, np.zeros(n), policy,
                                                euclid(x_true), euclid, n)
    assert refactored
    assert euclid(b - a_n @ y) <= 1e-10 * euclid(b)
    assert isinstance(fresh, Factorization)
    assert fresh is not f


def test_policy_constants():
    assert RefinePolicy(tol_r=1e-4).increment_tol == 1e-8
    assert RefinePolicy(tol_r=1e-5).increment_tol == 1e-8
    assert RefinePolicy(tol_r=1e-7).increment_tol == pytest.approx(1e-9)
    assert RefinePolicy(tol_r=1e-4).max_iters == 5


def test_stop_rule_uses_velocity_part_only():
    """The convergence norm sees only the first n_vel entries."""
    rng = np.random.default_rng(5)
    n = 30
    a = make_spd(n, rng)
    f = factor(a)
    x_true = rng.standard_normal(n)
    b = a @ x_true
    policy = RefinePolicy(tol_r=1e-4)
    seen = []

    def norm(v):
        seen.append(len(v))
        return euclid(v)

    solve_refined(a, b, f, np.zeros(n), policy, euclid(x_true), norm, 12)
    assert set(seen) == {12}
