"""Executable algebra behind the variable-step stability argument.

Everything here is a pure function of scalars or coefficient vectors:
the two-step energy functional and its telescoping identity, the ratio
coefficients it produces, the admissible-ratio polynomial root, the 2x2
eigenvalue lower bound, and the step/mesh ratio diagnostic.
"""

from __future__ import annotations

import numpy as np

from .timestepping import bdf2_weights, extrapolate


def _ip(u, v, m=None) -> float:
    if m is None:
        return float(np.dot(u, v))
    return float(u @ (m @ v))


def energy_functional(e_prev: np.ndarray, e: np.ndarray, omega_prev: float,
                      m=None) -> float:
    """G = omega'/(2(1+omega')) ||e||^2 + ||2e - e_prev||^2 / 4 (nonnegative)."""
    return (omega_prev / (2.0 * (1.0 + omega_prev)) * _ip(e, e, m)
            + 0.25 * _ip(2 * e - e_prev, 2 * e - e_prev, m))


def cin_coefficients(omega_prev: float, omega: float):
    """Coefficients (c1, c2, c3) of the cross term R_n; all vanish at ratio 1."""
    c1 = omega_prev / (2.0 * (1.0 + omega_prev)) - 0.25 + 1.0 - omega * (1.0 + omega) / 2.0
    c2 = 1.0 - omega ** 2
    c3 = 0.25 - omega ** 3 / (2.0 * (1.0 + omega))
    return c1, c2, c3


def energy_identity_residual(e_prev: np.ndarray, e: np.ndarray, e_next: np.ndarray,
                             omega_prev: float, omega: float, m=None) -> float:
    """Residual of the discrete energy identity; zero to round-off.

    (D_var e_next, e_next) = G_next - G + R + omega/(2(1+omega)) ||e_next - ehat||^2
    with R = c1 ||e||^2 - c2 (e, e_prev) + c3 ||e_prev||^2.
    """
    if not (len(e_prev) == len(e) == len(e_next)):
        raise ValueError("coefficient vectors must have equal length")
    ap, a0, am = bdf2_weights(omega)
    de_next = ap * e_next + a0 * e + am * e_prev
    lhs = _ip(de_next, e_next, m)

    g_next = energy_functional(e, e_next, omega, m)
    g_cur = energy_functional(e_prev, e, omega_prev, m)
    c1, c2, c3 = cin_coefficients(omega_prev, omega)
    r = c1 * _ip(e, e, m) - c2 * _ip(e, e_prev, m) + c3 * _ip(e_prev, e_prev, m)
    ehat = extrapolate(e, e_prev, omega)
    jump = e_next - ehat
    rhs = g_next - g_cur + r + omega / (2.0 * (1.0 + omega)) * _ip(jump, jump, m)
    return lhs - rhs


def ratio_polynomial(x: float, alpha: float) -> float:
    """p(x) = [x^3 (1+2x) + x (1+2x)(1+x)] / alpha - 17."""
    return (x * (1.0 + 2.0 * x) * x ** 2 + (1.0 + 2.0 * x) * (1.0 + x) * x) / alpha - 17.0


def gamma_star(alpha: float, tol: float = 1e-12) -> float:
    """Positive real root of the admissible-ratio polynomial, by bisection."""
    if not 1.0 <= alpha <= 10.0:
        raise ValueError("alpha must lie in [1, 10]")
    lo, hi = 0.0, 1.0
    while ratio_polynomial(hi, alpha) < 0.0:
        hi *= 2.0
        if hi > 1e6:
            raise RuntimeError("no sign change found for ratio polynomial")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ratio_polynomial(mid, alpha) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def min_eigenvalue_curve(x):
    """Smallest eigenvalue of [[1+x, -1/2], [-1/2, 1/4]]; >= 0.14 x on [0, 1/2]."""
    x = np.asarray(x, dtype=float)
    s = 5.0 + 4.0 * x
    return (s - np.sqrt(s * s - 16.0 * x)) / 8.0


def cfl_diagnostic(dt: float, h: float) -> float:
    """Step/mesh ratio dt / h^2 logged while the explicit scheme runs."""
    if dt <= 0.0 or h <= 0.0:
        raise ValueError("dt and h must be positive")
    return dt / (h * h)


def run_property_checks(seed: int = 0):
    """Randomized self-checks of the identities above.

    Returns a list of (name, passed, detail) triples; used by the CLI
    ``check`` subcommand.
    """
    rng = np.random.default_rng(seed)
    results = []

    def record(name, passed, detail):
        results.append((name, bool(passed), detail))

    worst = 0.0
    for _ in range(1000):
        n = rng.integers(2, 12)
        e = rng.standard_normal((3, n))
        om = rng.uniform(0.5, 2.0, size=2)
        scale = max(np.sum(e * e), 1.0)
        worst = max(worst, abs(energy_identity_residual(e[0], e[1], e[2], om[0], om[1])) / scale)
    record("energy-identity residual (1000 random trials)", worst <= 1e-12,
           f"max |residual|/scale = {worst:.3e}")

    c = cin_coefficients(1.0, 1.0)
    record("ratio coefficients vanish at (1,1)", c == (0.0, 0.0, 0.0), f"c = {c}")

    ok = True
    detail = []
    for alpha, floor in ((1.0, 1.25), (5.0, 2.12), (10.0, 2.61)):
        root = gamma_star(alpha)
        resid = ratio_polynomial(root, alpha)
        ok &= root > floor and abs(resid) <= 1e-10
        detail.append(f"root({alpha:g}) = {root:.6f}")
    grid = np.linspace(1.0, 10.0, 46)
    roots = [gamma_star(a) for a in grid]
    ok &= bool(np.all(np.diff(roots) > 0))
    record("ratio-bound roots exceed tabulated floors, increasing", ok, ", ".join(detail))

    xs = np.linspace(0.0, 0.5, 1000)
    lam = min_eigenvalue_curve(xs)
    ok = np.all(lam >= 0.14 * xs - 1e-15)
    record("eigenvalue bound lambda(x) >= 0.14 x on [0, 1/2]", ok,
           f"min margin = {np.min(lam - 0.14 * xs):.3e}")

    worst = 1.0
    for _ in range(200):
        e = rng.standard_normal((2, 8))
        om_prev = rng.uniform(0.2, 2.5)
        g = energy_functional(e[0], e[1], om_prev)
        floor = (0.07 / (1.0 + 2.5)) * om_prev * (np.dot(e[0], e[0]) + np.dot(e[1], e[1]))
        worst = min(worst, g - floor)
    record("energy functional dominates its eigenvalue floor", worst >= -1e-12,
           f"min slack = {worst:.3e}")
    return results
