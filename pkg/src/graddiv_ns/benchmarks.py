"""Problem definitions and study drivers.

Two cases: a divergence-free manufactured solution on the unit square
(driving the spatial/temporal convergence studies) and the ramped-inflow
flow past a cylinder in a channel, with drag/lift/pressure-difference
functionals evaluated at every accepted level.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import adaptivity, fem, mesh as meshmod, timestepping
from .mesh import CYLINDER_CENTER, CYLINDER_RADIUS, BoundaryTag

PI = math.pi


# -- manufactured case ----------------------------------------------------------


def _amplitude(t):
    return (6.0 + 4.0 * np.cos(4.0 * t)) / 10.0


def _amplitude_dt(t):
    return -1.6 * np.sin(4.0 * t)


@dataclass
class ManufacturedCase:
    """Unit-square problem with a known divergence-free solution.

    The velocity is the curl of the stream function
    8 a(t) sin^2(pi x) (y (1-y))^2 with a(t) = (6 + 4 cos 4t)/10, so it
    vanishes on the boundary; the forcing reproduces it exactly.
    """

    nu: float
    mu: float = 0.05
    t_final: float = 4.0

    def velocity(self, x, y, t):
        a = _amplitude(t)
        sx = np.sin(PI * x)
        g = y * (1.0 - y)
        gp = 1.0 - 2.0 * y
        u1 = 16.0 * a * sx * sx * g * gp
        u2 = -8.0 * PI * a * np.sin(2.0 * PI * x) * g * g
        return u1, u2

    def pressure(self, x, y, t):
        return _amplitude(t) * np.sin(PI * x) * np.cos(PI * y)

    def velocity_gradient(self, x, y, t):
        """Entries (u1_x, u1_y, u2_x, u2_y); the trace vanishes identically."""
        a = _amplitude(t)
        sx = np.sin(PI * x)
        s2x = np.sin(2.0 * PI * x)
        c2x = np.cos(2.0 * PI * x)
        g = y * (1.0 - y)
        gp = 1.0 - 2.0 * y
        big_g = g * gp
        big_gp = gp * gp - 2.0 * g
        u1x = 16.0 * PI * a * s2x * big_g
        u1y = 16.0 * a * sx * sx * big_gp
        u2x = -16.0 * PI * PI * a * c2x * g * g
        u2y = -16.0 * PI * a * s2x * big_g
        return u1x, u1y, u2x, u2y

    def forcing(self, x, y, t):
        """f = u_t - nu lap(u) + (u . grad) u + grad p for the exact fields."""
        a = _amplitude(t)
        ap = _amplitude_dt(t)
        sx = np.sin(PI * x)
        cx = np.cos(PI * x)
        s2x = np.sin(2.0 * PI * x)
        c2x = np.cos(2.0 * PI * x)
        sy = np.sin(PI * y)
        cy = np.cos(PI * y)
        g = y * (1.0 - y)
        gp = 1.0 - 2.0 * y
        big_g = g * gp
        big_gp = gp * gp - 2.0 * g

        u1 = 16.0 * a * sx * sx * big_g
        u2 = -8.0 * PI * a * s2x * g * g
        u1x = 16.0 * PI * a * s2x * big_g
        u1y = 16.0 * a * sx * sx * big_gp
        u2x = -16.0 * PI * PI * a * c2x * g * g
        u2y = -u1x
        lap1 = 32.0 * PI * PI * a * c2x * big_g - 96.0 * a * sx * sx * gp
        lap2 = 32.0 * PI ** 3 * a * s2x * g * g - 16.0 * PI * a * s2x * big_gp

        f1 = (16.0 * ap * sx * sx * big_g - self.nu * lap1
              + u1 * u1x + u2 * u1y + PI * a * cx * cy)
        f2 = (-8.0 * PI * ap * s2x * g * g - self.nu * lap2
              + u1 * u2x + u2 * u2y - PI * a * sx * sy)
        return f1, f2

    def velocity_laplacian(self, x, y, t):
        a = _amplitude(t)
        sx = np.sin(PI * x)
        s2x = np.sin(2.0 * PI * x)
        c2x = np.cos(2.0 * PI * x)
        g = y * (1.0 - y)
        gp = 1.0 - 2.0 * y
        big_g = g * gp
        big_gp = gp * gp - 2.0 * g
        lap1 = 32.0 * PI * PI * a * c2x * big_g - 96.0 * a * sx * sx * gp
        lap2 = 32.0 * PI ** 3 * a * s2x * g * g - 16.0 * PI * a * s2x * big_gp
        return lap1, lap2

    def initial_velocity(self, dof: fem.DofMap,
                         stepper: timestepping.Stepper | None = None) -> np.ndarray:
        """Initial velocity within interpolation accuracy of the exact one.

        With a stepper at hand the interpolant is replaced by the Stokes
        projection of the exact field (consistent startup data; the raw
        interpolant is off the discrete slow manifold and would force the
        controller to resolve an artificial initial layer)."""
        if stepper is not None:
            return stepper.stokes_initial(
                lambda x, y, t: tuple(-c for c in self.velocity_laplacian(x, y, t)))
        return fem.interpolate(dof, lambda x, y: self.velocity(x, y, 0.0),
                               "velocity").coeffs

    def interpolant_at(self, dof: fem.DofMap, t: float) -> np.ndarray:
        return fem.interpolate(dof, lambda x, y: self.velocity(x, y, t),
                               "velocity").coeffs


def exact_fields(case: ManufacturedCase, x, y, t):
    """(u1, u2, p) of the manufactured solution at the given points."""
    u1, u2 = case.velocity(x, y, t)
    return u1, u2, case.pressure(x, y, t)


# -- cylinder case ---------------------------------------------------------------


@dataclass
class CylinderCase:
    """Channel flow past a cylinder with a ramped parabolic inflow."""

    nu: float = 1e-3
    mu: float = 0.01
    t_final: float = 8.0
    amplitude: float = 6.0 / 0.41 ** 2

    def inflow_profile(self, y, t):
        return self.amplitude * math.sin(PI * t / self.t_final) * y * (0.41 - y)

    def bc(self, x, y, tags, t):
        g1 = np.zeros_like(np.asarray(x, dtype=float))
        is_in = np.array([tag is BoundaryTag.INFLOW for tag in tags])
        if np.any(is_in):
            g1[is_in] = self.inflow_profile(np.asarray(y)[is_in], t)
        return g1, np.zeros_like(g1)


@dataclass
class FunctionalProbe:
    """Drag/lift test fields and the front/back pressure probe points."""

    v_drag: np.ndarray
    v_lift: np.ndarray
    front: tuple = (0.15, 0.2)
    back: tuple = (0.25, 0.2)


def build_probe(dof: fem.DofMap) -> FunctionalProbe:
    """Test fields equal to the coordinate unit vectors on the cylinder
    nodes and zero on every other node."""
    cx, cy = CYLINDER_CENTER
    d = np.hypot(dof.p2_coords[:, 0] - cx, dof.p2_coords[:, 1] - cy)
    on_circle = np.abs(d - CYLINDER_RADIUS) < 1e-9
    vd = np.zeros(dof.n_vel_dofs)
    vl = np.zeros(dof.n_vel_dofs)
    vd[:dof.n_p2][on_circle] = 1.0
    vl[dof.n_p2:][on_circle] = 1.0
    return FunctionalProbe(vd, vl)


class CylinderFunctionals:
    """Drag/lift coefficients and front/back pressure difference.

    The coefficients are the residual-weighted functionals
    -20 [ (D_var u^n / dt_{n-1}, v) + nu (grad u^n, grad v)
          + b(u^n, u^n, v) - (p^n, div v) ]
    with v the drag/lift probe field and the same variable-step
    derivative operator as the scheme.
    """

    def __init__(self, stepper: timestepping.Stepper):
        self.stepper = stepper
        self.dof = stepper.dof
        self.probe = build_probe(self.dof)
        self._b_vd = stepper.b_div @ self.probe.v_drag
        self._b_vl = stepper.b_div @ self.probe.v_lift

    def drag_lift(self, times, values, p):
        """Evaluate at the newest committed level (>= 2 levels required)."""
        if len(times) < 2:
            raise ValueError("need at least two history levels")
        st = self.stepper
        dt_prev = times[-1] - times[-2]
        if len(times) >= 3:
            omega = dt_prev / (times[-2] - times[-3])
            ap, a0, am = timestepping.bdf2_weights(omega)
            dudt = (ap * values[-1] + a0 * values[-2] + am * values[-3]) / dt_prev
        else:
            dudt = (values[-1] - values[-2]) / dt_prev
        u = values[-1]
        resid = st.m_vel @ dudt + st.nu * (st.a_vel @ u) \
            + fem.assemble_convection_vector(self.dof, u)
        cd = -20.0 * (self.probe.v_drag @ resid - p @ self._b_vd)
        cl = -20.0 * (self.probe.v_lift @ resid - p @ self._b_vl)
        return float(cd), float(cl)

    def pressure_difference(self, p):
        vals = fem.evaluate_pressure(self.dof, p, [self.probe.front, self.probe.back])
        return float(vals[0] - vals[1])


# -- study drivers ---------------------------------------------------------------


def unit_square_stepper(n: int, case: ManufacturedCase, scheme: str,
                        tol_r: float) -> tuple[fem.DofMap, timestepping.Stepper]:
    m = meshmod.generate_unit_square_mesh(n)
    dof = fem.build_dof_maps(m)
    stepper = timestepping.Stepper(dof, nu=case.nu, mu=case.mu, scheme=scheme,
                                   forcing=case.forcing, bc=None, tol_r=tol_r)
    return dof, stepper


def final_time_error(dof: fem.DofMap, stepper: timestepping.Stepper,
                     case: ManufacturedCase, u: np.ndarray, t: float) -> float:
    """|| u_h - I_h u(t) ||_0 via the velocity mass matrix."""
    return stepper.vel_norm(u - case.interpolant_at(dof, t))


@dataclass
class ConvergenceRow:
    n: int
    h: float
    nu: float
    tol_r: float
    error: float
    n_accepted: int
    n_rejected: int
    n_factorizations: int
    order_switch_level: int | None = None


@dataclass
class ConvergenceReport:
    scheme: str
    rows: list = field(default_factory=list)

    def errors_for(self, nu: float):
        rows = sorted((r for r in self.rows if r.nu == nu), key=lambda r: r.n)
        return ([r.h for r in rows], [r.error for r in rows])

    def slope(self, nu: float) -> float:
        hs, errs = self.errors_for(nu)
        return least_squares_slope(hs, errs)


def least_squares_slope(hs, errors) -> float:
    """Least-squares slope of log10(error) against log10(h) (>= 3 levels)."""
    if len(hs) < 2:
        raise ValueError("need at least two levels for a slope")
    return float(np.polyfit(np.log10(hs), np.log10(errors), 1)[0])


def run_manufactured(n: int, nu: float, tol_r: float, scheme: str,
                     mu: float = 0.05, t_final: float = 4.0,
                     progress_every: int = 0):
    """One adaptive run; returns (ConvergenceRow, RunResult)."""
    case = ManufacturedCase(nu=nu, mu=mu, t_final=t_final)
    dof, stepper = unit_square_stepper(n, case, scheme, tol_r)
    u0 = case.initial_velocity(dof, stepper)
    result = adaptivity.run_adaptive(stepper, u0, t_final, tol_r,
                                     progress_every=progress_every)
    err = final_time_error(dof, stepper, case, result.u, t_final)
    row = ConvergenceRow(n, math.sqrt(2.0) / n, nu, tol_r, err,
                         result.n_accepted, result.n_rejected,
                         result.n_factorizations, result.order_switch_level)
    return row, result


def run_convergence_study(ns, tols, nus, scheme: str, mu: float = 0.05,
                          t_final: float = 4.0, progress_every: int = 0,
                          workers: int = 1) -> ConvergenceReport:
    """Adaptive runs over the (mesh, tolerance) ladder for each viscosity."""
    jobs = [(n, nu, tol) for nu in nus for n, tol in zip(ns, tols)]
    report = ConvergenceReport(scheme)
    if workers > 1:
        import concurrent.futures as cf

        with cf.ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(run_manufactured, n, nu, tol, scheme, mu, t_final)
                    for (n, nu, tol) in jobs]
            for fut in futs:
                report.rows.append(fut.result()[0])
    else:
        for (n, nu, tol) in jobs:
            report.rows.append(run_manufactured(n, nu, tol, scheme, mu, t_final,
                                                progress_every)[0])
    return report


def run_fixed_step(n: int, nu: float, dt: float, scheme: str, mu: float = 0.05,
                   t_final: float = 4.0):
    """Constant-step run; returns (u, p, omega_log, dof, stepper, case)."""
    n_steps = round(t_final / dt)
    if abs(n_steps * dt - t_final) > 1e-12 * t_final:
        raise ValueError("dt must divide the final time")
    case = ManufacturedCase(nu=nu, mu=mu, t_final=t_final)
    dof, stepper = unit_square_stepper(n, case, scheme, tol_r=1e-10)
    u0 = case.initial_velocity(dof, stepper)
    u, p, omegas = adaptivity.run_fixed_step(stepper, u0, t_final, n_steps)
    return u, p, omegas, dof, stepper, case


def temporal_order(n: int, nu: float, steps_list, ref_steps: int, scheme: str,
                   mu: float = 0.05, t_final: float = 4.0):
    """Observed order against a small-step reference run on the same mesh.

    Returns (order, errors): errors are || u_dt(T) - u_ref(T) ||_0 and the
    order is the least-squares slope in log(dt).
    """
    case = ManufacturedCase(nu=nu, mu=mu, t_final=t_final)
    dof, stepper = unit_square_stepper(n, case, scheme, tol_r=1e-10)
    u0 = case.initial_velocity(dof, stepper)
    u_ref, _, _ = adaptivity.run_fixed_step(stepper, u0, t_final, ref_steps)
    errors = []
    for m in steps_list:
        u_m, _, _ = adaptivity.run_fixed_step(stepper, u0, t_final, m)
        errors.append(stepper.vel_norm(u_m - u_ref))
    dts = [t_final / m for m in steps_list]
    order = float(np.polyfit(np.log(dts), np.log(errors), 1)[0])
    return order, errors


@dataclass
class CylinderResult:
    series: list  # rows (t, cd, cl, dp)
    cd_max: float
    t_cd_max: float
    cl_max: float
    t_cl_max: float
    dp_final: float
    n_accepted: int
    n_rejected: int
    n_factorizations: int
    log: adaptivity.RunLog

    def summary(self) -> dict:
        return {
            "cd_max": self.cd_max, "t_cd_max": self.t_cd_max,
            "cl_max": self.cl_max, "t_cl_max": self.t_cl_max,
            "dp_final": self.dp_final, "steps": self.n_accepted,
            "rejections": self.n_rejected, "factorizations": self.n_factorizations,
        }


def run_cylinder(scheme: str, tol_r: float, mesh: meshmod.Mesh | None = None,
                 t_final: float | None = None, progress_every: int = 0) -> CylinderResult:
    """Adaptive cylinder run with drag/lift/pressure series at accepted levels."""
    case = CylinderCase()
    if t_final is not None:
        case.t_final = t_final
    m = mesh if mesh is not None else meshmod.load_cylinder_mesh()
    dof = fem.build_dof_maps(m)
    stepper = timestepping.Stepper(dof, nu=case.nu, mu=case.mu, scheme=scheme,
                                   forcing=None, bc=case.bc, tol_r=tol_r)
    functionals = CylinderFunctionals(stepper)
    series = [(0.0, 0.0, 0.0, 0.0)]

    def on_accept(t, times, values, p, res):
        cd, cl = functionals.drag_lift(times, values, p)
        dp = functionals.pressure_difference(p)
        series.append((t, cd, cl, dp))

    u0 = np.zeros(dof.n_vel_dofs)
    result = adaptivity.run_adaptive(stepper, u0, case.t_final, tol_r,
                                     on_accept=on_accept,
                                     progress_every=progress_every)
    arr = np.array(series)
    i_cd = int(np.argmax(arr[:, 1]))
    i_cl = int(np.argmax(arr[:, 2]))
    return CylinderResult(series, float(arr[i_cd, 1]), float(arr[i_cd, 0]),
                          float(arr[i_cl, 2]), float(arr[i_cl, 0]),
                          float(arr[-1, 3]), result.n_accepted,
                          result.n_rejected, result.n_factorizations, result.log)


# -- CSV / text output -------------------------------------------------------------


def write_convergence_csv(report: ConvergenceReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["N", "h", "nu", "tol", "error"])
        for r in report.rows:
            w.writerow([r.n] + [f"{v:.12g}" for v in (r.h, r.nu, r.tol_r, r.error)])


def write_series_csv(series, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "cd", "cl", "dp"])
        for row in series:
            w.writerow([f"{v:.12g}" for v in row])


def write_summary(summary: dict, path) -> None:
    with open(path, "w") as fh:
        for key, val in summary.items():
            if isinstance(val, float):
                fh.write(f"{key} = {val:.12g}\n")
            else:
                fh.write(f"{key} = {val}\n")
