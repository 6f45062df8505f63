"""Sparse direct factorization with stale-factor iterative refinement.

One LU factorization is reused across many time steps: the step-n system
A_n y = b is solved by refining against a factorization of an earlier
matrix A_m (y <- y + A_m^{-1}(b - A_n y)).  The iteration stops when the
velocity increment drops below an absolute tolerance tied to the step
controller's tolerance; if five corrections are not enough, A_n is
factored fresh and solved directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


@dataclass
class RefinePolicy:
    """Stop rule for iterative refinement.

    The increment tolerance is min(1e-8, tol_r / 100) relative to the
    passed solution scale; at most max_iters corrections are attempted
    before refactoring.
    """

    tol_r: float
    max_iters: int = 5

    @property
    def increment_tol(self) -> float:
        return min(1e-8, self.tol_r / 100.0)


@dataclass
class Factorization:
    """Reusable LU factors of one saddle matrix (scipy SuperLU)."""

    lu: object
    shape: tuple
    level: object = None
    symmetric: bool = False
    matrix: sp.csr_matrix = field(default=None, repr=False)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self.lu.solve(b)


def factor(a: sp.spmatrix, level=None, symmetric: bool = False,
           keep_matrix: bool = False) -> Factorization:
    """LU-factor a square sparse matrix (partial pivoting, COLAMD ordering).

    A singular pivot raises, which in this solver signals a missing
    pressure pin or an empty mesh rather than a recoverable condition.
    """
    a = a.tocsc()
    if a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    lu = spla.splu(a)
    return Factorization(lu, a.shape, level=level, symmetric=symmetric,
                         matrix=a.tocsr() if keep_matrix else None)


def solve_refined(a_n: sp.spmatrix, b: np.ndarray, fact: Factorization,
                  y0: np.ndarray, policy: RefinePolicy, u_scale_norm: float,
                  vel_norm, n_vel: int):
    """Solve A_n y = b by refinement against a stale factorization.

    Parameters
    ----------
    y0 : initial guess (extrapolated solution vector).
    u_scale_norm : L2 norm of the reference velocity that scales the stop rule.
    vel_norm : callable mapping the velocity part of an increment to its L2 norm.
    n_vel : number of velocity entries at the head of the solution vector.

    Returns (y, iterations, refactored, fact); ``fact`` is the fresh
    factorization when a refactor happened, else the one passed in.
    """
    tol = policy.increment_tol * (u_scale_norm + 0.001)
    y = y0.copy()
    prev = np.inf
    it = 0
    for it in range(1, policy.max_iters + 1):
        r = b - a_n @ y
        e = fact.solve(r)
        y += e
        en = vel_norm(e[:n_vel])
        if en <= tol:
            # polish: the remaining iterate error sits near the stop
            # threshold; one extra correction keeps that noise out of the
            # downstream divided differences
            y += fact.solve(b - a_n @ y)
            return y, it, False, fact
        if not np.isfinite(en) or en >= prev:
            break  # stale factor too far off; iterating further only diverges
        prev = en
    fresh = factor(a_n, symmetric=fact.symmetric)
    # restart from the clean guess and keep correcting from residuals:
    # increments stay small, so the large matrix entries cancel before
    # round-off can pollute the solution
    y = y0.copy()
    for jt in range(1, policy.max_iters + 1):
        r = b - a_n @ y
        e = fresh.solve(r)
        y += e
        if vel_norm(e[:n_vel]) <= tol:
            y += fresh.solve(b - a_n @ y)
            return y, it + jt, True, fresh
    raise RuntimeError("iterative refinement diverged after refactoring")
