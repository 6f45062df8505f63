import numpy as np
import pytest

from graddiv_ns import fem
from graddiv_ns.mesh import (BoundaryTag, Mesh, generate_unit_square_mesh,
                             load_cylinder_mesh, load_mesh, mesh_stats,
                             save_mesh, signed_areas, validate)


@pytest.fixture(scope="module")
def cylinder():
    return load_cylinder_mesh()


def test_smallest_grid():
    mesh = generate_unit_square_mesh(1)
    assert mesh.n_nodes == 4
    assert mesh.n_triangles == 2
    validate(mesh)


@pytest.mark.parametrize("n", [6, 12])
def test_square_counts(n):
    mesh = generate_unit_square_mesh(n)
    assert mesh.n_nodes == (n + 1) ** 2
    assert mesh.n_triangles == 2 * n * n
    h_min, h_max, area = mesh_stats(mesh)
    assert h_min == pytest.approx(np.sqrt(2) / n)
    assert h_max == pytest.approx(np.sqrt(2) / n)
    assert area == pytest.approx(1.0, abs=1e-12)


def test_square_rejects_zero():
    with pytest.raises(ValueError):
        generate_unit_square_mesh(0)


def test_sw_ne_diagonals():
    mesh = generate_unit_square_mesh(3)
    # every interior diagonal edge must have direction (1, 1)
    edges = np.concatenate([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]],
                            mesh.triangles[:, [2, 0]]])
    vec = mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]]
    diag = np.abs(vec[:, 0] * vec[:, 1]) > 1e-14
    assert np.all(np.isclose(np.abs(vec[diag, 0]), np.abs(vec[diag, 1])))
    assert np.all(vec[diag, 0] * vec[diag, 1] > 0)


def test_orientation_and_conformity():
    mesh = generate_unit_square_mesh(5)
    assert np.all(signed_areas(mesh) > 0)
    validate(mesh)


def test_generator_determinism():
    a = generate_unit_square_mesh(7)
    b = generate_unit_square_mesh(7)
    assert np.array_equal(a.nodes, b.nodes)
    assert np.array_equal(a.triangles, b.triangles)


def test_roundtrip(tmp_path):
    mesh = generate_unit_square_mesh(1)
    path = tmp_path / "square1.msh"
    save_mesh(mesh, path)
    again = load_mesh(path)
    assert np.array_equal(mesh.triangles, again.triangles)
    assert np.allclose(mesh.nodes, again.nodes)
    assert again.boundary_tags == mesh.boundary_tags
    assert again.domain_kind == "unit-square"


def test_truncated_file(tmp_path):
    mesh = generate_unit_square_mesh(2)
    path = tmp_path / "broken.msh"
    save_mesh(mesh, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-3]))
    with pytest.raises(ValueError, match="truncated"):
        load_mesh(path)


def test_unknown_tag(tmp_path):
    mesh = generate_unit_square_mesh(1)
    path = tmp_path / "tagged.msh"
    save_mesh(mesh, path)
    path.write_text(path.read_text().replace("square", "slippery"))
    with pytest.raises(ValueError, match="unknown boundary tag"):
        load_mesh(path)


def test_negative_area_rejected(tmp_path):
    mesh = generate_unit_square_mesh(1)
    mesh.triangles[0] = mesh.triangles[0][[0, 2, 1]]
    path = tmp_path / "flipped.msh"
    save_mesh(mesh, path)
    with pytest.raises(ValueError, match="area"):
        load_mesh(path)


def test_duplicate_node_rejected():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    tris = np.array([[0, 1, 2]])
    edges = np.array([[0, 1], [1, 2], [2, 0]])
    mesh = Mesh(nodes, tris, edges, [BoundaryTag.NOSLIP] * 3)
    with pytest.raises(ValueError, match="duplicate"):
        validate(mesh)


def test_cylinder_mesh_counts(cylinder):
    assert cylinder.n_triangles == 6624
    assert cylinder.n_nodes == 3480
    assert len(cylinder.boundary_edges) == 336
    assert cylinder.domain_kind == "cylinder-channel"


def test_cylinder_mesh_stats(cylinder):
    h_min, h_max, area = mesh_stats(cylinder)
    assert h_min == pytest.approx(5.53e-3, rel=0.15)
    assert h_max == pytest.approx(3.38e-2, rel=0.15)
    # exact tiling of the channel minus the inscribed polygon of the circle
    on_circle = np.abs(np.hypot(cylinder.nodes[:, 0] - 0.2,
                                cylinder.nodes[:, 1] - 0.2) - 0.05) < 1e-9
    n_c = int(on_circle.sum())
    polygon = 0.5 * n_c * 0.05 ** 2 * np.sin(2 * np.pi / n_c)
    assert area == pytest.approx(2.2 * 0.41 - polygon, abs=1e-10)


def test_cylinder_nodes_on_circle(cylinder):
    d = np.hypot(cylinder.nodes[:, 0] - 0.2, cylinder.nodes[:, 1] - 0.2)
    near = d < 0.05 + 1e-6
    assert np.all(np.abs(d[near] - 0.05) < 1e-12)


def test_cylinder_dof_counts(cylinder):
    dof = fem.build_dof_maps(cylinder)
    assert dof.n_vel_dofs == 27168
    assert dof.n_pr_dofs == 3480


def test_cylinder_tags(cylinder):
    for (i, j), tag in zip(cylinder.boundary_edges, cylinder.boundary_tags):
        xm = 0.5 * (cylinder.nodes[i, 0] + cylinder.nodes[j, 0])
        if xm < 1e-9 or xm > 2.2 - 1e-9:
            assert tag is BoundaryTag.INFLOW
        else:
            assert tag is BoundaryTag.NOSLIP
