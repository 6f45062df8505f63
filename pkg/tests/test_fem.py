import numpy as np
import pytest

from graddiv_ns import fem
from graddiv_ns.mesh import BoundaryTag, Mesh, generate_unit_square_mesh


@pytest.fixture(scope="module")
def dof6():
    return fem.build_dof_maps(generate_unit_square_mesh(6))


def free_vector(dof, rng):
    v = np.zeros(dof.n_vel_dofs)
    v[dof.free_vel] = rng.standard_normal(dof.n_free_vel)
    return v


def test_dof_counts(dof6):
    assert dof6.n_p2 == 13 ** 2
    assert dof6.n_vel_dofs == 338
    assert dof6.n_pr_dofs == 49


def test_dof_counts_tiny():
    dof = fem.build_dof_maps(generate_unit_square_mesh(1))
    assert dof.n_vel_dofs == 2 * (4 + 5)


def test_dirichlet_mask(dof6):
    # boundary P2 nodes of the N=6 square: 4*6 vertices + 4*6 midpoints
    assert dof6.dirichlet_mask.sum() == 2 * 48
    coords = dof6.p2_coords[dof6.boundary_p2_nodes]
    on_edge = (np.isclose(coords, 0.0) | np.isclose(coords, 1.0)).any(axis=1)
    assert np.all(on_edge)


def test_quadrature_rule():
    quad = fem.quadrature_degree5()
    assert quad.weights.sum() == pytest.approx(0.5, abs=1e-15)
    assert quad.degree >= 5
    # integrates x^a y^b exactly up to total degree 5 on the reference triangle
    from math import factorial
    lam = quad.points
    x, y = lam[:, 1], lam[:, 2]
    for a in range(6):
        for b in range(6 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            approx = float(np.dot(quad.weights, x ** a * y ** b))
            assert approx == pytest.approx(exact, abs=1e-15)


def test_reference_element_integrals():
    """Assembled mass on a single reference triangle matches analytic
    integrals of the P2 basis products (sympy oracle)."""
    import sympy as sp

    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2]])
    edges = np.array([[0, 1], [1, 2], [2, 0]])
    mesh = Mesh(nodes, tris, edges, [BoundaryTag.NOSLIP] * 3)
    dof = fem.build_dof_maps(mesh)
    m0 = fem.scalar_mass(dof).toarray()

    xs, ys = sp.symbols("x y")
    l0, l1, l2 = 1 - xs - ys, xs, ys
    # same local numbering as the assembler: vertices then opposite midpoints
    basis = [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
             4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1]
    perm = dof.cell2p2[0]
    for i in range(6):
        for j in range(6):
            exact = sp.integrate(sp.integrate(basis[i] * basis[j],
                                              (ys, 0, 1 - xs)), (xs, 0, 1))
            assert m0[perm[i], perm[j]] == pytest.approx(float(exact), abs=1e-15)


def test_mass_spd(dof6):
    m = fem.assemble_mass(dof6)
    rng = np.random.default_rng(1)
    v = rng.standard_normal(dof6.n_vel_dofs)
    assert v @ (m @ v) > 0
    ones = np.ones(dof6.n_vel_dofs)
    assert ones @ (m @ ones) == pytest.approx(2.0, abs=1e-12)
    d = m - m.T
    assert abs(d).max() <= 1e-14 * abs(m).max()


def test_stiffness(dof6):
    a = fem.assemble_stiffness(dof6)
    const = fem.interpolate(dof6, lambda x, y: (np.ones_like(x), 2 * np.ones_like(x)),
                            "velocity").coeffs
    assert np.abs(a @ const).max() <= 1e-12
    vx = fem.interpolate(dof6, lambda x, y: (x, 0 * x), "velocity").coeffs
    assert vx @ (a @ vx) == pytest.approx(1.0, abs=1e-10)
    d = a - a.T
    assert abs(d).max() <= 1e-14 * abs(a).max()


def test_graddiv(dof6):
    g = fem.assemble_graddiv(dof6)
    const = fem.interpolate(dof6, lambda x, y: (np.ones_like(x), np.ones_like(x)),
                            "velocity").coeffs
    assert np.abs(g @ const).max() <= 1e-12
    divfree = fem.interpolate(dof6, lambda x, y: (x, -y), "velocity").coeffs
    assert divfree @ (g @ divfree) == pytest.approx(0.0, abs=1e-12)
    vxy = fem.interpolate(dof6, lambda x, y: (x, y), "velocity").coeffs
    assert vxy @ (g @ vxy) == pytest.approx(4.0, abs=1e-10)


def test_divergence(dof6):
    b = fem.assemble_divergence(dof6)
    const = fem.interpolate(dof6, lambda x, y: (np.ones_like(x), np.ones_like(x)),
                            "velocity").coeffs
    assert np.abs(b @ const).max() <= 1e-12
    vxy = fem.interpolate(dof6, lambda x, y: (x, y), "velocity").coeffs
    q1 = np.ones(dof6.n_pr_dofs)
    assert q1 @ (b @ vxy) == pytest.approx(2.0, abs=1e-10)
    # divergence-free quadratic is seen exactly by the degree-5 rule
    stream = fem.interpolate(dof6, lambda x, y: (x * x, -2 * x * y), "velocity").coeffs
    assert np.abs(b @ stream).max() <= 1e-10


def test_convection_skew(dof6):
    rng = np.random.default_rng(2)
    w = free_vector(dof6, rng)
    n = fem.assemble_convection_matrix(dof6, w)
    for _ in range(20):
        u = free_vector(dof6, rng)
        v = free_vector(dof6, rng)
        scale = np.linalg.norm(u) * np.linalg.norm(v)
        assert abs(v @ (n @ v)) <= 1e-12 * (v @ v)
        assert abs(v @ (n @ u) + u @ (n @ v)) <= 1e-12 * scale


def test_convection_zero_field(dof6):
    n = fem.assemble_convection_matrix(dof6, np.zeros(dof6.n_vel_dofs))
    assert abs(n).max() == 0.0


def test_convection_vector_consistency(dof6):
    rng = np.random.default_rng(3)
    w = free_vector(dof6, rng)
    n = fem.assemble_convection_matrix(dof6, w)
    vec = fem.assemble_convection_vector(dof6, w)
    ref = n @ w
    assert np.abs(vec - ref).max() <= 1e-12 * max(np.abs(ref).max(), 1.0)
    assert w @ vec == pytest.approx(0.0, abs=1e-12 * (w @ w))
    assert np.abs(fem.assemble_convection_vector(dof6, np.zeros_like(w))).max() == 0.0


def test_interpolation(dof6):
    const = fem.interpolate(dof6, lambda x, y: np.full_like(x, 3.25), "pressure")
    assert np.all(const.coeffs == 3.25)
    quad = fem.interpolate(dof6, lambda x, y: (x * y + y * y, x * x - x * y),
                           "velocity")
    err = fem.l2_error(dof6, quad, lambda x, y: (x * y + y * y, x * x - x * y))
    assert err <= 1e-12
    lin = fem.interpolate(dof6, lambda x, y: 2 * x - y, "pressure")
    assert fem.l2_error(dof6, lin, lambda x, y: 2 * x - y) <= 1e-12


def test_l2_norms(dof6):
    zero = fem.FEFunction("velocity", np.zeros(dof6.n_vel_dofs))
    assert fem.l2_norm(dof6, zero) == 0.0
    one = fem.FEFunction("pressure", np.ones(dof6.n_pr_dofs))
    assert fem.l2_norm(dof6, one) == pytest.approx(1.0, abs=1e-12)
    vx = fem.interpolate(dof6, lambda x, y: (x, 0 * x), "velocity")
    assert fem.l2_norm(dof6, vx) == pytest.approx(1 / np.sqrt(3), abs=1e-12)


def test_mass_norm_matches_quadrature(dof6):
    rng = np.random.default_rng(4)
    m = fem.assemble_mass(dof6)
    v = rng.standard_normal(dof6.n_vel_dofs)
    f = fem.FEFunction("velocity", v)
    assert fem.mass_norm(m, v) == pytest.approx(fem.l2_norm(dof6, f), rel=1e-12)


def test_pressure_evaluation(dof6):
    p = fem.interpolate(dof6, lambda x, y: x, "pressure").coeffs
    vals = fem.evaluate_pressure(dof6, p, [(0.15, 0.2), (0.25, 0.2)])
    assert vals[0] - vals[1] == pytest.approx(-0.1, abs=1e-12)
    with pytest.raises(ValueError, match="outside"):
        fem.evaluate_pressure(dof6, p, [(1.5, 0.5)])


def test_apply_dirichlet_consistency(dof6):
    # with boundary data g equal to a constant field, M u = M g gives u = g
    m = fem.assemble_mass(dof6)
    b = fem.assemble_divergence(dof6)
    g = fem.interpolate(dof6, lambda x, y: (np.ones_like(x), -np.ones_like(x)),
                        "velocity").coeffs
    g_bc = g * dof6.dirichlet_mask
    a_ff, _, rhs_free, _ = fem.apply_dirichlet(dof6, m, b, m @ g, g_bc)
    u_free = np.linalg.solve(a_ff.toarray(), rhs_free)
    assert np.abs(u_free - g[dof6.free_vel]).max() <= 1e-10


def test_homogeneous_dirichlet_keeps_rhs(dof6):
    m = fem.assemble_mass(dof6)
    b = fem.assemble_divergence(dof6)
    rng = np.random.default_rng(5)
    rhs = rng.standard_normal(dof6.n_vel_dofs)
    _, _, rhs_free, rhs_p = fem.apply_dirichlet(dof6, m, b, rhs,
                                                np.zeros(dof6.n_vel_dofs))
    assert np.array_equal(rhs_free, rhs[dof6.free_vel])
    assert np.abs(rhs_p).max() == 0.0
