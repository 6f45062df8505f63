import math

import numpy as np
import pytest

from graddiv_ns import adaptivity as ad
from graddiv_ns import benchmarks


def test_divided_difference_constant():
    times = [0.0, 0.4, 1.1]
    vals = np.ones((3, 4))
    assert np.abs(ad.divided_difference(times, vals, 2)).max() <= 1e-14


def test_divided_difference_classic_identity():
    times = [0.3, 1.7, 2.2]
    vals = np.array([[t * t] for t in times])
    dd = ad.divided_difference(times, vals, 2)
    assert dd[0] == pytest.approx(1.0, abs=1e-12)


def test_divided_difference_linear():
    times = [0.0, 0.5]
    vals = np.array([[0.0, 1.0], [1.5, 1.0 + 0.5 * -2.0]])
    dd = ad.divided_difference(times, vals, 1)
    assert np.allclose(dd, [3.0, -2.0])


def test_divided_difference_rejects_repeats():
    with pytest.raises(ValueError, match="repeated"):
        ad.divided_difference([0.0, 0.0, 1.0], np.zeros((3, 2)), 2)
    with pytest.raises(ValueError, match="points"):
        ad.divided_difference([0.0, 1.0], np.zeros((2, 2)), 2)


def euclid(v):
    return float(np.linalg.norm(np.atleast_1d(v)))


def test_error_estimate_hand_example():
    # k=1, times (2, 1, 0) newest first, data (2, 0, 0):
    # u[2,1,0] = 1, U = (2-1)*1 = 1, EST = dt/(2-0) * 1 = 1/2
    est = ad.error_estimate([2.0, 1.0, 0.0], np.array([[2.0], [0.0], [0.0]]),
                            k=1, dt_n=1.0, norm=euclid)
    assert est == pytest.approx(0.5)


def test_error_estimate_annihilates_polynomials():
    rng = np.random.default_rng(0)
    for k in (1, 2):
        times = np.sort(rng.uniform(0, 1, k + 2))[::-1]
        coeffs = rng.standard_normal((k + 1, 3))
        vals = np.array([sum(c * t ** j for j, c in enumerate(coeffs)) for t in times])
        est = ad.error_estimate(times, vals, k, dt_n=times[0] - times[1], norm=euclid)
        assert est <= 1e-12 * max(np.abs(vals).max(), 1.0)


def test_error_estimate_linear_in_scale():
    rng = np.random.default_rng(1)
    times = [1.5, 1.0, 0.6, 0.1]
    vals = rng.standard_normal((4, 5))
    est1 = ad.error_estimate(times, vals, 2, 0.5, euclid)
    est2 = ad.error_estimate(times, 100.0 * vals, 2, 0.5, euclid)
    assert est2 == pytest.approx(100.0 * est1, rel=1e-12)


def test_tolerance_formula():
    assert ad.tolerance(1e-4, 1.0, 2.0) == pytest.approx(2.001e-4)
    assert ad.tolerance(1e-4, 2.0, 1.0) == pytest.approx(2.001e-4)
    assert ad.tolerance(1e-3, 0.0, 0.0) == pytest.approx(1e-6)


def test_accept_boundary():
    assert ad.accept_step(0.0, 1.0)
    assert ad.accept_step(1.0, 1.0)  # strict inequality governs rejection
    assert not ad.accept_step(1.0 + 1e-12, 1.0)


def test_step_update_formula():
    assert ad.step_update(1.0, 1.0, 1.0, 1) == pytest.approx(0.9)
    assert ad.step_update(1.0, 0.25, 1.0, 1) == pytest.approx(1.8)
    assert ad.step_update(1.0, 0.125, 1.0, 2) == pytest.approx(1.8)
    assert ad.step_update(2.0, 2.0, 1.0, 1) == pytest.approx(2 * 0.9 / math.sqrt(2))


def test_step_update_growth_cap():
    assert ad.step_update(1.0, 0.0, 1.0, 1) == pytest.approx(2.0)
    assert ad.step_update(1.0, 1e-20, 1.0, 2) == pytest.approx(2.0)
    assert ad.step_update(1.0, 1e-4, 1.0, 1) == pytest.approx(2.0)


def test_startup_schedule():
    k, dt0 = ad.startup(1e-4)
    assert k == 1
    assert dt0 == pytest.approx(1e-4)
    assert ad.startup(1e-6)[1] == pytest.approx(1e-5)
    with pytest.raises(ValueError):
        ad.startup(0.0)


def test_runlog_csv(tmp_path):
    log = ad.RunLog()
    log.append(ad.StepRecord(0.1, 0.1, 1e-6, 1e-5, True, 1, True, k=1, omega=1.0))
    log.append(ad.StepRecord(0.3, 0.2, 2e-5, 1e-5, False, 2, False, k=2, omega=2.0))
    path = tmp_path / "log.csv"
    log.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,dt,est,tol,accepted,refine_iters,refactored"
    assert lines[1].split(",")[4] == "1"
    assert lines[2].split(",")[4] == "0"
    assert log.n_attempted == 2
    assert log.n_rejected == 1
    assert log.n_factorizations == 1


@pytest.fixture(scope="module")
def small_run():
    row, result = benchmarks.run_manufactured(6, 1e-6, 1e-4, "semi")
    return row, result


def test_controller_finishes_at_t_final(small_run):
    _, result = small_run
    assert result.t == pytest.approx(4.0, abs=1e-12)


def test_controller_history_monotone(small_run):
    _, result = small_run
    accepted = [r for r in result.log.records if r.accepted]
    ts = [r.t for r in accepted]
    assert all(b > a for a, b in zip(ts, ts[1:]))


def test_controller_ratio_bounds(small_run):
    """Accepted step ratios respect the growth cap; shrinking ratios are
    logged, never enforced."""
    _, result = small_run
    accepted = [r for r in result.log.records if r.accepted]
    omegas = [r.omega for r in accepted[3:]]
    assert max(omegas) <= ad.GROWTH_CAP + 1e-12


def test_order_switch_is_early_and_logged(small_run):
    row, result = small_run
    assert result.k_final == 2
    assert row.order_switch_level is not None
    assert row.order_switch_level <= 10


def test_rejection_rate_low(small_run):
    row, result = small_run
    assert result.n_rejected <= 0.05 * result.log.n_attempted


def test_factorization_accounting(small_run):
    """Refactored flags sum to the number of factor calls."""
    _, result = small_run
    assert result.n_factorizations == sum(r.refactored for r in result.log.records)


def test_controller_scale_covariance():
    """Scaling the solution snapshots scales EST and the norm part of TOL,
    leaving accept/reject unchanged while the floor is negligible."""
    rng = np.random.default_rng(3)
    times = [1.02, 1.0, 0.97, 0.93]
    vals = 5.0 + rng.standard_normal((4, 6))
    for c in (10.0, 100.0):
        est1 = ad.error_estimate(times, vals, 2, 0.02, euclid)
        tol1 = ad.tolerance(1e-5, euclid(vals[0]), euclid(vals[1]))
        est2 = ad.error_estimate(times, c * vals, 2, 0.02, euclid)
        tol2 = ad.tolerance(1e-5, euclid(c * vals[0]), euclid(c * vals[1]))
        assert est2 == pytest.approx(c * est1, rel=1e-12)
        assert tol2 == pytest.approx(c * tol1, rel=1e-3)
        assert ad.accept_step(est1, tol1) == ad.accept_step(est2, tol2)


def test_fixed_step_omega_log():
    u, p, omegas = None, None, None
    case = benchmarks.ManufacturedCase(nu=1e-2)
    dof, stepper = benchmarks.unit_square_stepper(4, case, "imex", 1e-8)
    u0 = case.initial_velocity(dof, stepper)
    u, p, omegas = ad.run_fixed_step(stepper, u0, 0.2, 10)
    assert omegas == [1.0] * 9
    assert u.shape == (dof.n_vel_dofs,)
