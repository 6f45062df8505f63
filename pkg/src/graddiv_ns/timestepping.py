"""Variable-step BDF2 stepping of the grad-div stabilized system.

Two convection treatments share one code path: ``imex`` moves
b(uhat, uhat, .) entirely to the right-hand side (the system matrix is
symmetric), ``semi`` keeps the advected field implicit through the
convection matrix N(uhat).  The first step is a backward Euler step with
explicit convection for both variants.

The velocity block of the step matrix is (a_plus/dt) M + nu A + mu G
(+ N for ``semi``); the pressure coupling rows are negated so the
symmetric variant stays symmetric.  One sparsity template covers every
step, so each step only rewrites the CSR data array, and stale LU
factors are reused through iterative refinement.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import fem, linsolve

SCHEMES = ("imex", "semi")

EULER_WEIGHTS = (1.0, -1.0, 0.0)


def bdf2_weights(omega: float):
    """Weights (a_plus, a_zero, a_minus) of the two-step derivative operator.

    D_var u^{n+1} = a_plus u^{n+1} + a_zero u^n + a_minus u^{n-1} for step
    ratio omega = dt_n / dt_{n-1}; the weights sum to zero and reduce to
    (3/2, -2, 1/2) at omega = 1.
    """
    if omega <= 0.0:
        raise ValueError("step ratio must be positive")
    a_plus = 1.0 + omega / (1.0 + omega)
    a_zero = -(1.0 + omega)
    a_minus = omega * omega / (1.0 + omega)
    return a_plus, a_zero, a_minus


def extrapolate(u_n: np.ndarray, u_nm1: np.ndarray, omega: float) -> np.ndarray:
    """Linear extrapolation (1+omega) u^n - omega u^{n-1} to the next level."""
    u_n = np.asarray(u_n)
    u_nm1 = np.asarray(u_nm1)
    if u_n.shape != u_nm1.shape:
        raise ValueError("history vectors must have equal length")
    return (1.0 + omega) * u_n - omega * u_nm1


@dataclass
class StepState:
    """Two committed history levels plus the step about to be taken."""

    t: float
    dt_prev: float
    dt: float
    u_n: np.ndarray
    u_nm1: np.ndarray
    p_n: np.ndarray = None
    nu: float = 1.0
    mu: float = 0.0

    @property
    def omega(self) -> float:
        return self.dt / self.dt_prev


@dataclass
class SaddleSystem:
    """Assembled constrained block system for one step."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    symmetric: bool
    n_free_vel: int
    g: np.ndarray = field(repr=False, default=None)  # Dirichlet lift vector


@dataclass
class StepResult:
    u: np.ndarray
    p: np.ndarray
    y: np.ndarray
    refine_iters: int
    refactored: bool


def _align(x: sp.csr_matrix, u: sp.csr_matrix) -> np.ndarray:
    """Positions of x's entries inside u.data (pattern(x) must be in pattern(u))."""
    n_cols = u.shape[1]
    xr = np.repeat(np.arange(x.shape[0], dtype=np.int64), np.diff(x.indptr))
    ur = np.repeat(np.arange(u.shape[0], dtype=np.int64), np.diff(u.indptr))
    xk = xr * n_cols + x.indices
    uk = ur * n_cols + u.indices
    pos = np.searchsorted(uk, xk)
    if np.any(uk[pos] != xk):
        raise RuntimeError("sparsity template does not cover matrix")
    return pos


def _canonical(a: sp.spmatrix) -> sp.csr_matrix:
    a = a.tocsr()
    a.sum_duplicates()
    a.sort_indices()
    return a


class Stepper:
    """One time step (assemble + solve) of either scheme on a fixed mesh.

    Owns the assembled operators, the sparsity template of the step
    matrix, the current LU factorization, and the short solve history
    used to extrapolate solver guesses.  The time loop lives in the step
    controller, which calls :meth:`first_step` / :meth:`bdf2_step` /
    :meth:`euler_step` and commits results via :meth:`note_accepted`.
    """

    def __init__(self, dof: fem.DofMap, *, nu: float, mu: float, scheme: str = "imex",
                 forcing=None, bc=None, tol_r: float = 1e-4,
                 first_step_semi_implicit: bool = False, pressure_pin: int = 0):
        if scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        self.dof = dof
        self.nu = float(nu)
        self.mu = float(mu)
        self.scheme = scheme
        self.forcing = forcing
        self.bc = bc
        self.policy = linsolve.RefinePolicy(tol_r)
        self.first_step_semi_implicit = first_step_semi_implicit
        self.include_convection = True

        self.m0 = fem.scalar_mass(dof)
        self.m_vel = sp.block_diag((self.m0, self.m0), format="csr")
        a0 = fem.scalar_stiffness(dof)
        self.a_vel = sp.block_diag((a0, a0), format="csr")
        self.g_div = fem.assemble_graddiv(dof)
        self.b_div = fem.assemble_divergence(dof)
        self.pr_weights = fem.pressure_integral_weights(dof)
        self.area = float(self.pr_weights.sum())

        free = dof.free_vel
        self.pressure_pin = pressure_pin
        self.keep_pr = np.setdiff1d(np.arange(dof.n_pr_dofs), [pressure_pin])
        self.n_free = free.size
        self.n_pr_kept = self.keep_pr.size
        self.n_sys = self.n_free + self.n_pr_kept

        k_visc = self.nu * self.a_vel + self.mu * self.g_div
        b_kf = _canonical(self.b_div[self.keep_pr][:, free])
        self._b_kf = b_kf
        s_base = _canonical(sp.bmat(
            [[k_visc[free][:, free], -b_kf.T], [-b_kf, None]], format="csr"))
        zpp = sp.csr_matrix((self.n_pr_kept, self.n_pr_kept))
        zvp = sp.csr_matrix((self.n_free, self.n_pr_kept))
        m_sad = _canonical(sp.bmat(
            [[self.m_vel[free][:, free], zvp], [zvp.T, zpp]], format="csr"))

        ones = lambda a: sp.csr_matrix((np.ones_like(a.data), a.indices, a.indptr), shape=a.shape)
        template = _canonical(ones(s_base) + ones(m_sad))
        self._template = template
        self._base_data = np.zeros_like(template.data)
        self._base_data[_align(s_base, template)] = s_base.data
        self._mass_data = np.zeros_like(template.data)
        self._mass_data[_align(m_sad, template)] = m_sad.data

        # scatter map embedding the scalar convection operator (both velocity
        # components) into the template's data array
        proto = self.m0.copy()
        proto.data = np.arange(1, proto.nnz + 1, dtype=float)
        emb = sp.block_diag((proto, proto), format="csr")[free][:, free]
        emb = _canonical(sp.bmat([[emb, zvp], [zvp.T, zpp]], format="csr"))
        self._conv_target = _align(emb, template)
        self._conv_source = emb.data.astype(np.int64) - 1

        m_ff = _canonical(self.m_vel[free][:, free])
        self._m_ff = m_ff
        self._fact = None
        self._y_hist = []  # [(t, y)] most recent last, length <= 2
        self.n_factorizations = 0

    # -- norms ------------------------------------------------------------

    def vel_norm(self, u: np.ndarray) -> float:
        """L2 norm of a full velocity coefficient vector."""
        return fem.mass_norm(self.m_vel, u)

    def _vel_norm_free(self, e: np.ndarray) -> float:
        return fem.mass_norm(self._m_ff, e)

    # -- system assembly ---------------------------------------------------

    def dirichlet_values(self, t: float) -> np.ndarray:
        return fem.dirichlet_velocity(self.dof, self.bc, t)

    def _matrix(self, c_mass: float, conv_field: np.ndarray | None) -> sp.csr_matrix:
        data = self._base_data + c_mass * self._mass_data
        n0 = None
        if conv_field is not None:
            n0 = fem.convection_operator(self.dof, conv_field)
            np.add.at(data, self._conv_target, n0.data[self._conv_source])
        a = sp.csr_matrix((data, self._template.indices, self._template.indptr),
                          shape=self._template.shape)
        self._last_n0 = n0
        return a

    def build_system(self, t_new: float, dt: float, u_n: np.ndarray,
                     u_nm1: np.ndarray | None = None, omega: float | None = None,
                     explicit_first: bool = False,
                     implicit_convection: bool | None = None) -> SaddleSystem:
        """Assemble the constrained step system for the solve at t_new.

        With ``u_nm1`` (and ``omega``) present this is the two-step
        formula; otherwise a one-step backward Euler (uhat = u_n).
        ``explicit_first`` forces the explicit-convection Euler variant
        used for the very first step of either scheme;
        ``implicit_convection`` overrides the scheme's own treatment.
        """
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        dofm = self.dof
        if u_nm1 is None:
            a_plus, a_zero, a_minus = EULER_WEIGHTS
            uhat = u_n
            u_nm1 = np.zeros_like(u_n)
        else:
            a_plus, a_zero, a_minus = bdf2_weights(omega)
            uhat = extrapolate(u_n, u_nm1, omega)

        implicit_conv = self.scheme == "semi" if implicit_convection is None else implicit_convection
        semi_matrix = implicit_conv and not explicit_first and self.include_convection
        a = self._matrix(a_plus / dt, uhat if semi_matrix else None)

        rhs_u = fem.assemble_forcing(dofm, self.forcing, t_new)
        rhs_u -= (a_zero / dt) * (self.m_vel @ u_n)
        if a_minus != 0.0:
            rhs_u -= (a_minus / dt) * (self.m_vel @ u_nm1)
        if self.include_convection and not semi_matrix:
            rhs_u -= fem.assemble_convection_vector(dofm, uhat)

        g = self.dirichlet_values(t_new)
        lift = (a_plus / dt) * (self.m_vel @ g) + self.nu * (self.a_vel @ g) \
            + self.mu * (self.g_div @ g)
        if semi_matrix and self._last_n0 is not None:
            n0 = self._last_n0
            lift[:dofm.n_p2] += n0 @ g[:dofm.n_p2]
            lift[dofm.n_p2:] += n0 @ g[dofm.n_p2:]
        rhs_free = (rhs_u - lift)[dofm.free_vel]
        rhs_p = (self.b_div @ g)[self.keep_pr]
        return SaddleSystem(a, np.concatenate([rhs_free, rhs_p]),
                            symmetric=not semi_matrix, n_free_vel=self.n_free, g=g)

    # -- solving ------------------------------------------------------------

    def _guess(self, t_new: float) -> np.ndarray:
        if not self._y_hist:
            return np.zeros(self.n_sys)
        if len(self._y_hist) == 1:
            return self._y_hist[-1][1].copy()
        (t0, y0), (t1, y1) = self._y_hist
        if t1 == t0:
            return y1.copy()
        w = (t_new - t0) / (t1 - t0)
        return (1.0 - w) * y0 + w * y1

    def _solve(self, system: SaddleSystem, y_guess: np.ndarray, u_scale_norm: float):
        refactored = self._fact is None
        if refactored:
            self._fact = linsolve.factor(system.matrix, symmetric=system.symmetric)
            self.n_factorizations += 1
        y, iters, refreshed, fact = linsolve.solve_refined(
            system.matrix, system.rhs, self._fact, y_guess, self.policy,
            u_scale_norm, self._vel_norm_free, self.n_free)
        if refreshed:
            self._fact = fact
            self.n_factorizations += 1
        return y, iters, refactored or refreshed

    def _finish(self, y: np.ndarray, g: np.ndarray):
        u = g.copy()
        u[self.dof.free_vel] = y[:self.n_free]
        p = np.zeros(self.dof.n_pr_dofs)
        p[self.keep_pr] = y[self.n_free:]
        p -= (self.pr_weights @ p) / self.area
        return u, p

    def _embed(self, u: np.ndarray) -> np.ndarray:
        return np.concatenate([u[self.dof.free_vel], np.zeros(self.n_pr_kept)])

    def _step(self, t_new, dt, u_n, u_nm1, omega, explicit_first, u_scale_norm):
        system = self.build_system(t_new, dt, u_n, u_nm1=u_nm1, omega=omega,
                                   explicit_first=explicit_first)
        y_guess = self._embed(u_n) if not self._y_hist else self._guess(t_new)
        y, iters, refactored = self._solve(system, y_guess, u_scale_norm)
        u, p = self._finish(y, system.g)
        return StepResult(u, p, y, iters, refactored)

    def consistent_initial(self, u: np.ndarray) -> np.ndarray:
        """Closest (in L2) velocity to u satisfying the discrete continuity
        constraint, keeping u's boundary values.

        Startup data off the constraint manifold would enter the first
        solve as a dt-independent jump and poison the divided-difference
        error estimates.
        """
        g = u.copy()
        g[self.dof.free_vel] = 0.0
        saddle = sp.bmat([[self._m_ff, -self._b_kf.T], [-self._b_kf, None]],
                         format="csc")
        rhs = np.concatenate([(self.m_vel @ (u - g))[self.dof.free_vel],
                              (self.b_div @ g)[self.keep_pr]])
        sol = linsolve.factor(saddle).solve(rhs)
        v = g
        v[self.dof.free_vel] = sol[:self.n_free]
        return v

    def stokes_initial(self, minus_laplacian, t: float = 0.0) -> np.ndarray:
        """Stokes projection of a divergence-free field with Laplacian data.

        Solves the unit-viscosity discrete Stokes problem with right-hand
        side -lap(u); for an exactly divergence-free target the auxiliary
        pressure vanishes, so the projection is viscosity-independent and
        accurate to interpolation order.  Interpolated data is off the
        discrete slow manifold (its pointwise divergence excites the stiff
        grad-div relaxation) and would force the controller to resolve an
        artificial initial layer.
        """
        g = self.dirichlet_values(t)
        rhs_u = fem.assemble_forcing(self.dof, minus_laplacian, t)
        lift = self.a_vel @ g
        rhs = np.concatenate([(rhs_u - lift)[self.dof.free_vel],
                              (self.b_div @ g)[self.keep_pr]])
        aff = self.a_vel[self.dof.free_vel][:, self.dof.free_vel]
        saddle = sp.bmat([[aff, -self._b_kf.T], [-self._b_kf, None]], format="csc")
        sol = linsolve.factor(saddle).solve(rhs)
        v = g
        v[self.dof.free_vel] = sol[:self.n_free]
        return v

    RELAX_LADDER = (0.2, 0.08, 0.03, 0.012, 0.005, 0.002, 8e-4, 3e-4, 1.2e-4, 5e-5, 2e-5)

    def _relax_ladder(self, u: np.ndarray, conv_field: np.ndarray, t: float,
                      taus) -> np.ndarray:
        g = self.dirichlet_values(t)
        forcing = fem.assemble_forcing(self.dof, self.forcing, t)
        n0 = fem.convection_operator(self.dof, conv_field) if self.include_convection else None
        npn = self.dof.n_p2
        v = u.copy()
        for tau in taus:
            a = self._matrix(1.0 / tau, conv_field if self.include_convection else None)
            rhs_u = forcing + (self.m_vel @ v) / tau
            lift = (self.m_vel @ g) / tau + self.nu * (self.a_vel @ g) \
                + self.mu * (self.g_div @ g)
            if n0 is not None:
                lift[:npn] += n0 @ g[:npn]
                lift[npn:] += n0 @ g[npn:]
            rhs = np.concatenate([(rhs_u - lift)[self.dof.free_vel],
                                  (self.b_div @ g)[self.keep_pr]])
            y = linsolve.factor(a).solve(rhs)
            v, _ = self._finish(y, g)
        return v

    def relax_initial(self, u: np.ndarray, t: float = 0.0,
                      taus=None) -> np.ndarray:
        """Damp fast grad-div relaxation content out of startup data.

        Runs a ladder of linearly implicit pseudo-steps at frozen time t
        (data, forcing and advecting field held fixed), whose L-stable
        damping strips the stiff divergence-relaxation modes octave by
        octave while the resolved flow, being near its own slow manifold,
        barely moves.  Without this the controller would spend the whole
        startup resolving an artificial initial layer at step sizes where
        solver noise drowns the error estimate.

        With everything frozen the ladder map is affine, so applying it
        twice and extrapolating (2 L(u) - L(L(u))) cancels the
        first-order drift of the resolved modes toward the frozen steady
        state while compounding the damping of the fast ones.
        """
        taus = self.RELAX_LADDER if taus is None else taus
        v1 = self._relax_ladder(u, u, t, taus)
        v2 = self._relax_ladder(v1, u, t, taus)
        return 2.0 * v1 - v2

    def first_step(self, u0: np.ndarray, dt0: float) -> StepResult:
        """Backward Euler step from t=0; convection explicit for both schemes.

        Set ``first_step_semi_implicit`` to keep the semi-implicit scheme's
        linearized convection matrix in the first step instead.
        """
        explicit = not (self.scheme == "semi" and self.first_step_semi_implicit)
        return self._step(dt0, dt0, u0, None, None, explicit, self.vel_norm(u0))

    def euler_step(self, t_new: float, dt: float, u_n: np.ndarray,
                   u_scale_norm: float | None = None,
                   fresh_factor: bool = False) -> StepResult:
        """Order-1 step with the scheme's own convection treatment.

        ``fresh_factor`` factors the current matrix before solving; the
        startup phase changes the step size so fast that stale-factor
        refinement would either refactor anyway or stop at its threshold
        and leak solver noise into the early divided differences.
        """
        if fresh_factor:
            self._fact = None
        scale = self.vel_norm(u_n) if u_scale_norm is None else u_scale_norm
        return self._step(t_new, dt, u_n, None, None, False, scale)

    def bdf2_step(self, t_new: float, dt: float, omega: float, u_n: np.ndarray,
                  u_nm1: np.ndarray, u_scale_norm: float | None = None,
                  fresh_factor: bool = False) -> StepResult:
        if fresh_factor:
            self._fact = None
        scale = self.vel_norm(u_nm1) if u_scale_norm is None else u_scale_norm
        return self._step(t_new, dt, u_n, u_nm1, omega, False, scale)

    def advance(self, state: StepState) -> StepResult:
        """Candidate solution at state.t + state.dt (history not committed)."""
        return self.bdf2_step(state.t + state.dt, state.dt, state.omega,
                              state.u_n, state.u_nm1)

    def note_accepted(self, t: float, result: StepResult) -> None:
        """Commit a solve for use in future solver guesses."""
        self._y_hist.append((t, result.y))
        if len(self._y_hist) > 2:
            self._y_hist.pop(0)

    def reset(self) -> None:
        """Forget solver history and factorization (fresh run)."""
        self._fact = None
        self._y_hist = []
        self.n_factorizations = 0
