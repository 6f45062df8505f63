"""Adaptive step-size control for the BDF2 stepper.

The controller owns the time loop.  Each candidate step is judged by a
divided-difference local error estimate against a relative tolerance;
rejected steps are recomputed from the same level with a shorter step.
Runs start with two equal order-1 steps of length sqrt(tol_r)/100 and
switch to the two-step formula on the first level where its estimate is
the smaller one.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .timestepping import Stepper

GROWTH_CAP = 2.0
DT_MAX_FRACTION = 0.05  # of the final time
MAX_CONSECUTIVE_REJECTIONS = 10
SHRINK_FLOOR = 0.05


def divided_difference(times, values, order: int) -> np.ndarray:
    """Divided difference of the given order over order+1 points.

    ``values`` has one row per time; rows may be vectors (applied
    coefficientwise).  Times must be distinct.
    """
    t = np.asarray(times, dtype=float)
    v = np.array(values, dtype=float)
    if len(t) != order + 1 or v.shape[0] != order + 1:
        raise ValueError(f"order-{order} divided difference needs {order + 1} points")
    if len(np.unique(t)) != len(t):
        raise ValueError("repeated times in divided difference")
    for lev in range(1, order + 1):
        m = len(t) - lev
        denom = t[lev:] - t[:m]
        v = (v[1:m + 1] - v[:m]) / denom.reshape((-1,) + (1,) * (v.ndim - 1))
    return v[0]


def error_estimate(times, values, k: int, dt_n: float, norm) -> float:
    """Local error estimate at order k from k+2 levels (newest first).

    times = (t_{n+1}, t_n, ..., t_{n-k}) with matching solution rows;
    EST = dt_n / (t_{n+1} - t_{n-k}) * || prod_{i=0}^{k-1} (t_{n+1} - t_{n-i})
    * u[t_{n+1}, ..., t_{n-k}] ||.
    """
    t = np.asarray(times, dtype=float)
    if len(t) != k + 2:
        raise ValueError(f"order-{k} estimate needs {k + 2} levels")
    dd = divided_difference(t, values, k + 1)
    coef = float(np.prod(t[0] - t[1:k + 1]))
    return dt_n / (t[0] - t[k + 1]) * norm(coef * dd)


def tolerance(tol_r: float, norm_new: float, norm_old: float) -> float:
    """Per-step threshold tol_r * (max of the two solution norms + 0.001)."""
    return tol_r * (max(norm_new, norm_old) + 0.001)


def accept_step(est: float, tol: float) -> bool:
    """Strict rejection rule: reject iff est > tol."""
    return est <= tol


def step_update(dt: float, est: float, tol: float, k: int,
                max_growth: float = GROWTH_CAP) -> float:
    """New step 0.9 dt (tol/est)^(1/(k+1)), growth-capped; est ~ 0 maps to the cap."""
    if est <= 1e-14 * tol:
        return max_growth * dt
    factor = 0.9 * (tol / est) ** (1.0 / (k + 1))
    return dt * min(max(factor, SHRINK_FLOOR), max_growth)


def startup(tol_r: float):
    """Initial schedule: order 1 with dt_0 = dt_1 = sqrt(tol_r)/100."""
    if tol_r <= 0.0:
        raise ValueError("tolerance must be positive")
    return 1, math.sqrt(tol_r) / 100.0


@dataclass
class StepRecord:
    t: float
    dt: float
    est: float
    tol: float
    accepted: bool
    refine_iters: int
    refactored: bool
    k: int = 1
    omega: float = 1.0


@dataclass
class RunLog:
    """Append-only per-attempt log of the controller."""

    records: list = field(default_factory=list)

    def append(self, rec: StepRecord) -> None:
        self.records.append(rec)

    @property
    def n_attempted(self) -> int:
        return len(self.records)

    @property
    def n_rejected(self) -> int:
        return sum(not r.accepted for r in self.records)

    @property
    def n_factorizations(self) -> int:
        return sum(r.refactored for r in self.records)

    def accepted_steps(self):
        return [r for r in self.records if r.accepted]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "dt", "est", "tol", "accepted", "refine_iters", "refactored"])
            for r in self.records:
                w.writerow([f"{r.t:.12g}", f"{r.dt:.12g}", f"{r.est:.12g}",
                            f"{r.tol:.12g}", int(r.accepted), r.refine_iters,
                            int(r.refactored)])


@dataclass
class ControllerState:
    k: int
    tol_r: float
    dt_next: float
    n_accepted: int = 0
    n_rejected: int = 0
    n_factorizations: int = 0
    safety: float = 0.9


@dataclass
class RunResult:
    t: float
    u: np.ndarray
    p: np.ndarray
    times: list
    values: list
    log: RunLog
    n_accepted: int
    n_rejected: int
    n_factorizations: int
    k_final: int
    order_switch_level: int | None


def run_adaptive(stepper: Stepper, u0: np.ndarray, t_end: float, tol_r: float,
                 *, on_accept=None, progress_every: int = 0) -> RunResult:
    """Integrate from 0 to t_end under local error control.

    on_accept(t, times, values, p, result) fires after every committed
    level (including the two startup levels).  Step ratios are monitored
    through the per-attempt records, never enforced.
    """
    log = RunLog()
    norm = stepper.vel_norm
    dt_cap = DT_MAX_FRACTION * t_end

    k, dt0 = startup(tol_r)
    # startup pair: two order-1 steps of equal length, validated together by
    # the first estimate; on rejection the whole pair restarts from t = 0
    while True:
        stepper.reset()
        r1 = stepper.first_step(u0, dt0)
        stepper.note_accepted(dt0, r1)
        r2 = stepper.euler_step(2 * dt0, dt0, r1.u, u_scale_norm=norm(u0))
        est = error_estimate([2 * dt0, dt0, 0.0], [r2.u, r1.u, u0], 1, dt0, norm)
        norms = [norm(u0), norm(r1.u), norm(r2.u)]
        tolv = tolerance(tol_r, norms[2], norms[1])
        ok = np.isfinite(est) and np.isfinite(tolv) and accept_step(est, tolv)
        log.append(StepRecord(dt0, dt0, math.nan, math.nan, ok, r1.refine_iters,
                              r1.refactored, k=1, omega=1.0))
        log.append(StepRecord(2 * dt0, dt0, est, tolv, ok, r2.refine_iters,
                              r2.refactored, k=1, omega=1.0))
        if ok:
            break
        if log.n_rejected > 2 * MAX_CONSECUTIVE_REJECTIONS:
            raise RuntimeError("startup failed: first estimate keeps rejecting")
        dt0 = step_update(dt0, est if np.isfinite(est) else np.inf, tolv, 1)

    times = [0.0, dt0, 2 * dt0]
    values = [u0, r1.u, r2.u]
    stepper.note_accepted(2 * dt0, r2)
    p = r2.p
    if on_accept is not None:
        on_accept(dt0, times[:2], values[:2], r1.p, r1)
        on_accept(2 * dt0, times, values, r2.p, r2)

    t = 2 * dt0
    dt_next = min(step_update(dt0, est, tolv, k), dt_cap)
    consecutive_rejections = 0
    order_switch_level = None

    while t < t_end - 1e-12 * t_end:
        dt = min(dt_next, dt_cap)
        if dt < 1e-12 * t_end:
            raise RuntimeError(
                f"step size collapsed to {dt:.3e} at t={t:.6g}; history is no "
                "longer resolvable")
        if t + dt >= t_end - 1e-12 * t_end:
            dt = t_end - t
        dt_prev = times[-1] - times[-2]
        omega = dt / dt_prev
        u_n, u_nm1 = values[-1], values[-2]
        scale = norms[-2]
        # the startup phase and retries after a rejection move dt so fast
        # that stale-factor refinement would stop right at its threshold
        # and leak solver noise into the divided differences
        fresh = k == 1 or consecutive_rejections > 0
        if k == 1:
            res = stepper.euler_step(t + dt, dt, u_n, u_scale_norm=scale,
                                     fresh_factor=True)
        else:
            res = stepper.bdf2_step(t + dt, dt, omega, u_n, u_nm1, u_scale_norm=scale,
                                    fresh_factor=fresh)

        cand_norm = norm(res.u)
        tolv = tolerance(tol_r, cand_norm, norms[-1])
        est_times = [t + dt] + times[-1 - k:][::-1]
        est_vals = [res.u] + values[-1 - k:][::-1]
        est = error_estimate(est_times, est_vals, k, dt, norm)
        healthy = np.isfinite(est) and np.isfinite(tolv) and np.isfinite(cand_norm)
        ok = healthy and accept_step(est, tolv)
        log.append(StepRecord(t + dt, dt, est, tolv, ok, res.refine_iters,
                              res.refactored, k=k, omega=omega))

        if not ok:
            consecutive_rejections += 1
            if consecutive_rejections > MAX_CONSECUTIVE_REJECTIONS:
                raise RuntimeError(
                    f"aborting at t={t:.6g}: {consecutive_rejections} consecutive rejections")
            dt_next = step_update(dt, est if healthy else np.inf, tolv, k)
            continue

        consecutive_rejections = 0
        est_used, k_next = est, k
        if k == 1 and len(times) >= 3:
            est2_times = [t + dt] + times[-3:][::-1]
            est2_vals = [res.u] + values[-3:][::-1]
            est2 = error_estimate(est2_times, est2_vals, 2, dt, norm)
            if est2 < est:
                k_next, est_used = 2, est2
                order_switch_level = len(times)

        t += dt
        times.append(t)
        values.append(res.u)
        norms.append(cand_norm)
        if len(times) > 4:
            times.pop(0), values.pop(0), norms.pop(0)
        stepper.note_accepted(t, res)
        p = res.p
        if on_accept is not None:
            on_accept(t, times, values, res.p, res)
        dt_next = step_update(dt, est_used, tolv, k_next)
        k = k_next
        if progress_every and log.n_attempted % progress_every == 0:
            acc = sum(r.accepted for r in log.records)
            print(f"  t={t:.4f} dt={dt:.3e} k={k} accepted={acc} "
                  f"rejected={log.n_rejected} factorizations={log.n_factorizations}",
                  flush=True)

    return RunResult(t, values[-1], p, times, values, log,
                     n_accepted=sum(r.accepted for r in log.records),
                     n_rejected=log.n_rejected,
                     n_factorizations=log.n_factorizations,
                     k_final=k, order_switch_level=order_switch_level)


def run_fixed_step(stepper: Stepper, u0: np.ndarray, t_end: float, n_steps: int,
                   on_accept=None):
    """Constant-step integration (controller disabled, unit step ratio).

    Returns (u, p, omega_log); the first step is the explicit-convection
    Euler step, all later ones the two-step formula with omega = 1.
    """
    dt = t_end / n_steps
    stepper.reset()
    r = stepper.first_step(u0, dt)
    stepper.note_accepted(dt, r)
    times = [0.0, dt]
    values = [u0, r.u]
    if on_accept is not None:
        on_accept(dt, times, values, r.p, r)
    omegas = []
    for m in range(2, n_steps + 1):
        t_new = m * dt
        omegas.append(1.0)
        r = stepper.bdf2_step(t_new, dt, 1.0, values[-1], values[-2])
        stepper.note_accepted(t_new, r)
        times.append(t_new)
        values.append(r.u)
        if len(times) > 4:
            times.pop(0), values.pop(0)
        if on_accept is not None:
            on_accept(t_new, times, values, r.p, r)
    return values[-1], r.p, omegas
