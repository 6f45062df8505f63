"""Conforming triangular meshes with tagged boundaries.

Meshes are plain data: vertex coordinates, CCW triangles, and boundary
edges carrying a Dirichlet tag.  Two domains are built in: the unit
square (structured, SW-NE diagonals) and the cylinder channel
(0,2.2) x (0,0.41) minus the disk of radius 0.05 centered at (0.2,0.2),
which is loaded from a mesh file.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

CYLINDER_CENTER = (0.2, 0.2)
CYLINDER_RADIUS = 0.05
CHANNEL_LENGTH = 2.2
CHANNEL_HEIGHT = 0.41


class BoundaryTag(enum.Enum):
    """Dirichlet boundary classification carried by each boundary edge."""

    NOSLIP = "noslip"
    INFLOW = "inflow"
    SQUARE = "square"

    @classmethod
    def from_label(cls, label: str) -> "BoundaryTag":
        try:
            return cls(label)
        except ValueError:
            raise ValueError(f"unknown boundary tag {label!r}") from None


@dataclass
class Mesh:
    """Triangulation with boundary tags.

    Attributes
    ----------
    nodes : (V, 2) float array
    triangles : (T, 3) int array, counterclockwise
    boundary_edges : (B, 2) int array
    boundary_tags : length-B list of BoundaryTag
    domain_kind : 'unit-square' | 'cylinder-channel' | 'generic'
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: list = field(default_factory=list)
    domain_kind: str = "generic"

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]


def signed_areas(mesh: Mesh) -> np.ndarray:
    """Signed area of every triangle (positive iff CCW)."""
    p = mesh.nodes
    t = mesh.triangles
    d1 = p[t[:, 1]] - p[t[:, 0]]
    d2 = p[t[:, 2]] - p[t[:, 0]]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def triangle_diameters(mesh: Mesh) -> np.ndarray:
    """Diameter (longest edge) of every triangle."""
    p = mesh.nodes
    t = mesh.triangles
    lmax = np.zeros(mesh.n_triangles)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        lmax = np.maximum(lmax, np.linalg.norm(p[t[:, a]] - p[t[:, b]], axis=1))
    return lmax


def mesh_stats(mesh: Mesh):
    """Return (h_min, h_max, total_area)."""
    h = triangle_diameters(mesh)
    return float(h.min()), float(h.max()), float(signed_areas(mesh).sum())


def _edge_counts(triangles: np.ndarray):
    """Multiset of undirected edges over all triangles -> dict edge -> count."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e = np.sort(e, axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    return uniq, counts


def validate(mesh: Mesh) -> None:
    """Check conformity; raise ValueError on the first violation.

    Enforced: positive triangle areas, no duplicate nodes, every edge in
    at most two triangles, boundary edges in exactly one, every
    mesh-boundary edge tagged, and one tag per boundary edge.
    """
    if np.any(signed_areas(mesh) <= 0.0):
        bad = int(np.argmax(signed_areas(mesh) <= 0.0))
        raise ValueError(f"triangle {bad} has non-positive area")
    if mesh.triangles.min() < 0 or mesh.triangles.max() >= mesh.n_nodes:
        raise ValueError("triangle refers to a node out of range")
    _, idx = np.unique(np.round(mesh.nodes, 12), axis=0, return_index=True)
    if len(idx) != mesh.n_nodes:
        raise ValueError("duplicate nodes")
    uniq, counts = _edge_counts(mesh.triangles)
    if counts.max() > 2:
        raise ValueError("edge shared by more than two triangles")
    boundary = set(map(tuple, uniq[counts == 1]))
    tagged = set(map(tuple, np.sort(mesh.boundary_edges, axis=1)))
    if boundary != tagged:
        raise ValueError("boundary edges do not match tagged edges")
    if len(mesh.boundary_tags) != len(mesh.boundary_edges):
        raise ValueError("each boundary edge needs exactly one tag")
    if len(tagged) != len(mesh.boundary_edges):
        raise ValueError("duplicate boundary edge")


def generate_unit_square_mesh(n: int) -> Mesh:
    """Structured triangulation of [0,1]^2, SW-NE diagonals.

    (n+1)^2 vertices, 2 n^2 triangles, triangle diameter sqrt(2)/n.
    """
    if n < 1:
        raise ValueError("need at least one subdivision per side")
    xs = np.linspace(0.0, 1.0, n + 1)
    xv, yv = np.meshgrid(xs, xs, indexing="xy")
    nodes = np.column_stack([xv.ravel(), yv.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    tris = []
    for j in range(n):
        for i in range(n):
            sw, se = vid(i, j), vid(i + 1, j)
            ne, nw = vid(i + 1, j + 1), vid(i, j + 1)
            tris.append((sw, se, ne))
            tris.append((sw, ne, nw))
    edges = []
    for i in range(n):
        edges.append((vid(i, 0), vid(i + 1, 0)))
        edges.append((vid(i, n), vid(i + 1, n)))
        edges.append((vid(0, i), vid(0, i + 1)))
        edges.append((vid(n, i), vid(n, i + 1)))
    tags = [BoundaryTag.SQUARE] * len(edges)
    return Mesh(nodes, np.asarray(tris, dtype=np.int64),
                np.asarray(edges, dtype=np.int64), tags, "unit-square")


def _infer_domain_kind(mesh: Mesh) -> str:
    tags = set(mesh.boundary_tags)
    if tags == {BoundaryTag.SQUARE}:
        return "unit-square"
    if BoundaryTag.INFLOW in tags:
        cx, cy = CYLINDER_CENTER
        d = np.hypot(mesh.nodes[:, 0] - cx, mesh.nodes[:, 1] - cy)
        if np.any(np.abs(d - CYLINDER_RADIUS) < 1e-9):
            return "cylinder-channel"
    return "generic"


def load_mesh(path) -> Mesh:
    """Read a mesh file (format documented in save_mesh) and validate it."""
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0]
            tokens.extend(line.split())
    if len(tokens) < 6 or tokens[0] != "nodes" or tokens[2] != "triangles" or tokens[4] != "bedges":
        raise ValueError("malformed mesh header")
    nv, nt, nb = int(tokens[1]), int(tokens[3]), int(tokens[5])
    body = tokens[6:]
    need = 2 * nv + 3 * nt + 3 * nb
    if len(body) != need:
        raise ValueError(f"mesh file truncated or has trailing data "
                         f"(expected {need} fields, found {len(body)})")
    pos = 0
    nodes = np.array(body[pos:pos + 2 * nv], dtype=float).reshape(nv, 2)
    pos += 2 * nv
    tris = np.array(body[pos:pos + 3 * nt], dtype=np.int64).reshape(nt, 3)
    pos += 3 * nt
    edges = np.empty((nb, 2), dtype=np.int64)
    tags = []
    for k in range(nb):
        i, j, lab = body[pos + 3 * k], body[pos + 3 * k + 1], body[pos + 3 * k + 2]
        edges[k] = (int(i), int(j))
        tags.append(BoundaryTag.from_label(lab))
    mesh = Mesh(nodes, tris, edges, tags)
    mesh.domain_kind = _infer_domain_kind(mesh)
    validate(mesh)
    return mesh


def save_mesh(mesh: Mesh, path) -> None:
    """Write the line-oriented text format.

    Header ``nodes V triangles T bedges B``; then V lines ``x y``; then
    T lines ``i j k`` (0-based, CCW); then B lines ``i j tag`` with tag
    in {noslip, inflow, square}.  ``#`` starts a comment.
    """
    with open(path, "w") as fh:
        fh.write(f"nodes {mesh.n_nodes} triangles {mesh.n_triangles} "
                 f"bedges {len(mesh.boundary_edges)}\n")
        for x, y in mesh.nodes:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
        for (i, j), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
            fh.write(f"{i} {j} {tag.value}\n")


def cylinder_mesh_path():
    """Path of the channel-with-cylinder mesh shipped with the package."""
    from importlib.resources import files

    return files("graddiv_ns").joinpath("data/cylinder_6624.msh")


def load_cylinder_mesh() -> Mesh:
    return load_mesh(cylinder_mesh_path())
