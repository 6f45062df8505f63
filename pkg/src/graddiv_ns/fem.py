"""P2/P1 (Taylor-Hood) discretization on triangles.

Velocity lives in continuous piecewise quadratics (two components,
x-block then y-block), pressure in continuous piecewise linears on the
vertices.  One fixed symmetric 7-point quadrature rule of exactness
degree 5 is used for every form; all assembled integrands are
polynomials of degree at most 5, so assembly is exact and the
skew-symmetry identity b(u,w,w)=0 for discretely constrained u holds to
round-off.

Assembly is vectorized over elements (einsum + COO scatter).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import CYLINDER_CENTER, CYLINDER_RADIUS, BoundaryTag, Mesh


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points and area-weights on the reference triangle."""

    points: np.ndarray   # (nq, 3) barycentric coordinates
    weights: np.ndarray  # (nq,) sum to the reference area 1/2
    degree: int


def quadrature_degree5() -> QuadratureRule:
    """Radon's symmetric 7-point rule, exact for degree <= 5."""
    s15 = np.sqrt(15.0)
    a1 = (6.0 - s15) / 21.0
    a2 = (6.0 + s15) / 21.0
    w0 = 9.0 / 40.0
    w1 = (155.0 - s15) / 1200.0
    w2 = (155.0 + s15) / 1200.0
    pts = [(1 / 3, 1 / 3, 1 / 3)]
    wts = [w0]
    for a, w in ((a1, w1), (a2, w2)):
        pts += [(1 - 2 * a, a, a), (a, 1 - 2 * a, a), (a, a, 1 - 2 * a)]
        wts += [w, w, w]
    return QuadratureRule(np.array(pts), 0.5 * np.array(wts), degree=5)


def p2_basis(bary: np.ndarray):
    """P2 basis values and reference gradients at barycentric points.

    Local numbering: vertices 0,1,2; midpoints 3=(1,2), 4=(2,0), 5=(0,1).
    Returns (val (nq,6), grad (nq,6,2)) with gradients in the reference
    coordinates (xi, eta) = (lambda_1, lambda_2).
    """
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    val = np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                    4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1], axis=1)
    d0 = np.array([-1.0, -1.0])
    d1 = np.array([1.0, 0.0])
    d2 = np.array([0.0, 1.0])
    nq = bary.shape[0]
    grad = np.zeros((nq, 6, 2))
    grad[:, 0] = np.outer(4 * l0 - 1, d0)
    grad[:, 1] = np.outer(4 * l1 - 1, d1)
    grad[:, 2] = np.outer(4 * l2 - 1, d2)
    grad[:, 3] = 4 * (np.outer(l2, d1) + np.outer(l1, d2))
    grad[:, 4] = 4 * (np.outer(l0, d2) + np.outer(l2, d0))
    grad[:, 5] = 4 * (np.outer(l1, d0) + np.outer(l0, d1))
    return val, grad


def p1_basis(bary: np.ndarray) -> np.ndarray:
    return bary.copy()


@dataclass
class FEFunction:
    """Coefficient vector in the nodal Lagrange basis."""

    kind: str  # 'velocity' | 'pressure'
    coeffs: np.ndarray

    def __post_init__(self):
        if self.kind not in ("velocity", "pressure"):
            raise ValueError(f"unknown FE function kind {self.kind!r}")


class DofMap:
    """Degree-of-freedom maps and cached element geometry.

    Velocity dof (node i, component d) sits at index d*n_p2 + i; P2
    nodes are the mesh vertices followed by the edge midpoints in
    lexicographic edge order.  Pressure dofs are the vertices.
    """

    def __init__(self, mesh: Mesh, quad: QuadratureRule | None = None):
        self.mesh = mesh
        self.quad = quad or quadrature_degree5()

        tris = mesh.triangles
        local_edges = ((1, 2), (2, 0), (0, 1))
        raw = np.concatenate([np.sort(tris[:, e], axis=1) for e in local_edges])
        self.edges, inv = np.unique(raw, axis=0, return_inverse=True)
        n_tri = mesh.n_triangles
        self.n_vertices = mesh.n_nodes
        self.n_edges = self.edges.shape[0]
        self.n_p2 = self.n_vertices + self.n_edges
        self.n_vel_dofs = 2 * self.n_p2
        self.n_pr_dofs = self.n_vertices

        edge_ids = inv.reshape(3, n_tri).T + self.n_vertices
        self.cell2p2 = np.hstack([tris, edge_ids]).astype(np.int64)

        mid = 0.5 * (mesh.nodes[self.edges[:, 0]] + mesh.nodes[self.edges[:, 1]])
        self.p2_coords = np.vstack([mesh.nodes, mid])
        self._project_circle_midpoints()

        self._boundary_masks()
        self._geometry()

    # -- construction helpers -------------------------------------------------

    def _edge_index(self, pairs: np.ndarray) -> np.ndarray:
        """Indices into self.edges of the given (sorted) node pairs."""
        keys = self.edges[:, 0].astype(np.int64) * self.n_vertices + self.edges[:, 1]
        skew = np.sort(pairs, axis=1)
        q = skew[:, 0].astype(np.int64) * self.n_vertices + skew[:, 1]
        pos = np.searchsorted(keys, q)
        if np.any(keys[pos] != q):
            raise ValueError("boundary edge not present in triangulation")
        return pos

    def _project_circle_midpoints(self):
        if self.mesh.domain_kind != "cylinder-channel":
            return
        cx, cy = CYLINDER_CENTER
        d = np.hypot(self.mesh.nodes[:, 0] - cx, self.mesh.nodes[:, 1] - cy)
        on_circle = np.abs(d - CYLINDER_RADIUS) < 1e-9
        both = on_circle[self.edges[:, 0]] & on_circle[self.edges[:, 1]]
        idx = np.flatnonzero(both) + self.n_vertices
        v = self.p2_coords[idx] - (cx, cy)
        v *= CYLINDER_RADIUS / np.linalg.norm(v, axis=1)[:, None]
        self.p2_coords[idx] = v + (cx, cy)

    def _boundary_masks(self):
        mesh = self.mesh
        self.node_tag = np.full(self.n_p2, -1, dtype=np.int64)
        tag_order = [BoundaryTag.INFLOW, BoundaryTag.SQUARE, BoundaryTag.NOSLIP]
        if len(mesh.boundary_edges):
            eidx = self._edge_index(mesh.boundary_edges) + self.n_vertices
            # noslip applied last so it wins at corners shared with the inflow
            for tag in tag_order:
                sel = [k for k, t in enumerate(mesh.boundary_tags) if t is tag]
                if not sel:
                    continue
                tid = tag_order.index(tag)
                be = mesh.boundary_edges[sel]
                self.node_tag[be[:, 0]] = tid
                self.node_tag[be[:, 1]] = tid
                self.node_tag[eidx[sel]] = tid
        self.boundary_p2_nodes = np.flatnonzero(self.node_tag >= 0)
        self.dirichlet_mask = np.zeros(self.n_vel_dofs, dtype=bool)
        self.dirichlet_mask[self.boundary_p2_nodes] = True
        self.dirichlet_mask[self.boundary_p2_nodes + self.n_p2] = True
        self.free_vel = np.flatnonzero(~self.dirichlet_mask)
        self.n_free_vel = self.free_vel.size

    def _geometry(self):
        p = self.mesh.nodes
        t = self.mesh.triangles
        j11 = p[t[:, 1], 0] - p[t[:, 0], 0]
        j21 = p[t[:, 1], 1] - p[t[:, 0], 1]
        j12 = p[t[:, 2], 0] - p[t[:, 0], 0]
        j22 = p[t[:, 2], 1] - p[t[:, 0], 1]
        det = j11 * j22 - j12 * j21
        self.det = det
        inv_t = np.empty((len(t), 2, 2))
        inv_t[:, 0, 0] = j22 / det
        inv_t[:, 0, 1] = -j21 / det
        inv_t[:, 1, 0] = -j12 / det
        inv_t[:, 1, 1] = j11 / det
        self.phi, gref = p2_basis(self.quad.points)
        self.psi = p1_basis(self.quad.points)
        # physical gradients per element/quad point/basis fn: (T, nq, 6, 2)
        self.gphi = np.einsum("tde,qie->tqid", inv_t, gref)
        xi = self.quad.points[:, 1]
        eta = self.quad.points[:, 2]
        x0 = p[t[:, 0]]
        self.quad_xy = (x0[:, None, :]
                        + np.einsum("q,td->tqd", xi, np.column_stack([j11, j21]))
                        + np.einsum("q,td->tqd", eta, np.column_stack([j12, j22])))

    # -- element value helpers -------------------------------------------------

    def velocity_at_quad(self, u: np.ndarray):
        """Values (T,nq,2), gradients (T,nq,2,2) and divergence (T,nq) of u."""
        cells = np.stack([u[self.cell2p2], u[self.cell2p2 + self.n_p2]], axis=2)
        vals = np.einsum("qi,tid->tqd", self.phi, cells)
        grads = np.einsum("tid,tqie->tqde", cells, self.gphi)
        div = grads[:, :, 0, 0] + grads[:, :, 1, 1]
        return vals, grads, div


def build_dof_maps(mesh: Mesh, quad: QuadratureRule | None = None) -> DofMap:
    return DofMap(mesh, quad)


# -- matrix assembly ----------------------------------------------------------

def _scatter(dof, rows, cols, vals, shape):
    return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape)


def _p2p2_scatter(dof: DofMap, elem: np.ndarray) -> sp.csr_matrix:
    n = dof.n_p2
    rows = np.broadcast_to(dof.cell2p2[:, :, None], elem.shape)
    cols = np.broadcast_to(dof.cell2p2[:, None, :], elem.shape)
    return _scatter(dof, rows, cols, elem, (n, n))


def scalar_mass(dof: DofMap) -> sp.csr_matrix:
    w = dof.quad.weights
    elem = np.einsum("q,qi,qj,t->tij", w, dof.phi, dof.phi, dof.det)
    return _p2p2_scatter(dof, elem)


def scalar_stiffness(dof: DofMap) -> sp.csr_matrix:
    w = dof.quad.weights
    elem = np.einsum("q,tqid,tqjd,t->tij", w, dof.gphi, dof.gphi, dof.det)
    return _p2p2_scatter(dof, elem)


def assemble_mass(dof: DofMap) -> sp.csr_matrix:
    """Velocity mass matrix (SPD, block diagonal over components)."""
    m0 = scalar_mass(dof)
    return sp.block_diag((m0, m0), format="csr")


def assemble_stiffness(dof: DofMap) -> sp.csr_matrix:
    """Velocity gradient-gradient matrix, unscaled by the viscosity."""
    a0 = scalar_stiffness(dof)
    return sp.block_diag((a0, a0), format="csr")


def assemble_graddiv(dof: DofMap) -> sp.csr_matrix:
    """(div u, div v) matrix on the full velocity space."""
    w = dof.quad.weights
    n = dof.n_p2
    blocks = [[None, None], [None, None]]
    for a in (0, 1):
        for b in (0, 1):
            elem = np.einsum("q,tqi,tqj,t->tij", w, dof.gphi[..., a],
                             dof.gphi[..., b], dof.det)
            blocks[a][b] = _p2p2_scatter(dof, elem)
    return sp.bmat(blocks, format="csr")


def assemble_divergence(dof: DofMap) -> sp.csr_matrix:
    """Pressure-velocity coupling B with B[i, j] = (psi_i, d phi_j)."""
    w = dof.quad.weights
    tris = dof.mesh.triangles
    cols = []
    for b in (0, 1):
        elem = np.einsum("q,qi,tqj,t->tij", w, dof.psi, dof.gphi[..., b], dof.det)
        rows = np.broadcast_to(tris[:, :, None], elem.shape)
        ccols = np.broadcast_to(dof.cell2p2[:, None, :], elem.shape)
        cols.append(_scatter(dof, rows, ccols, elem, (dof.n_pr_dofs, dof.n_p2)))
    return sp.hstack(cols, format="csr")


def convection_operator(dof: DofMap, w_coeffs: np.ndarray) -> sp.csr_matrix:
    """Scalar convection operator N0(w): (w . grad phi_j + div(w) phi_j / 2, phi_i).

    The velocity-space operator acts identically on both components, so
    only the n_p2 x n_p2 block is assembled.
    """
    wq, _, divw = dof.velocity_at_quad(w_coeffs)
    adv = np.einsum("tqd,tqjd->tqj", wq, dof.gphi)
    w = dof.quad.weights
    elem = np.einsum("q,tqj,qi,t->tij", w, adv, dof.phi, dof.det)
    elem += 0.5 * np.einsum("q,tq,qj,qi,t->tij", w, divw, dof.phi, dof.phi, dof.det)
    return _p2p2_scatter(dof, elem)


def assemble_convection_matrix(dof: DofMap, w_coeffs: np.ndarray) -> sp.csr_matrix:
    """Velocity-space convection matrix N(w) (skew form)."""
    n0 = convection_operator(dof, w_coeffs)
    return sp.block_diag((n0, n0), format="csr")


def assemble_convection_vector(dof: DofMap, w_coeffs: np.ndarray) -> np.ndarray:
    """Vector of b(w, w, phi_i), consistent with N(w) @ w."""
    wq, gradw, divw = dof.velocity_at_quad(w_coeffs)
    conv = np.einsum("tqe,tqde->tqd", wq, gradw) + 0.5 * divw[:, :, None] * wq
    w = dof.quad.weights
    relem = np.einsum("q,tqd,qi,t->tid", w, conv, dof.phi, dof.det)
    out = np.zeros(dof.n_vel_dofs)
    np.add.at(out, dof.cell2p2, relem[:, :, 0])
    np.add.at(out, dof.cell2p2 + dof.n_p2, relem[:, :, 1])
    return out


def assemble_forcing(dof: DofMap, forcing, t: float) -> np.ndarray:
    """Load vector (f(., t), phi_i); forcing maps (x, y, t) -> (f1, f2)."""
    if forcing is None:
        return np.zeros(dof.n_vel_dofs)
    x = dof.quad_xy[..., 0]
    y = dof.quad_xy[..., 1]
    f1, f2 = forcing(x, y, t)
    w = dof.quad.weights
    out = np.zeros(dof.n_vel_dofs)
    for d, fd in enumerate((f1, f2)):
        relem = np.einsum("q,tq,qi,t->ti", w, np.broadcast_to(fd, x.shape), dof.phi, dof.det)
        np.add.at(out, dof.cell2p2 + d * dof.n_p2, relem)
    return out


def pressure_integral_weights(dof: DofMap) -> np.ndarray:
    """Vector of integrals of the P1 basis (row sums of the pressure mass)."""
    w = dof.quad.weights
    relem = np.einsum("q,qi,t->ti", w, dof.psi, dof.det)
    out = np.zeros(dof.n_pr_dofs)
    np.add.at(out, dof.mesh.triangles, relem)
    return out


# -- interpolation, norms, point evaluation ------------------------------------

def interpolate(dof: DofMap, field, kind: str) -> FEFunction:
    """Nodal Lagrange interpolant of an analytic field.

    Velocity fields map (x, y) -> (u1, u2); pressure fields (x, y) -> p.
    """
    if kind == "velocity":
        x, y = dof.p2_coords[:, 0], dof.p2_coords[:, 1]
        u1, u2 = field(x, y)
        coeffs = np.concatenate([np.broadcast_to(u1, x.shape),
                                 np.broadcast_to(u2, x.shape)]).astype(float)
    elif kind == "pressure":
        x, y = dof.mesh.nodes[:, 0], dof.mesh.nodes[:, 1]
        coeffs = np.broadcast_to(field(x, y), x.shape).astype(float).copy()
    else:
        raise ValueError(f"unknown FE function kind {kind!r}")
    return FEFunction(kind, coeffs)


def _values_at_quad(dof: DofMap, f: FEFunction) -> np.ndarray:
    if f.kind == "velocity":
        vals, _, _ = dof.velocity_at_quad(f.coeffs)
        return vals
    return np.einsum("qi,ti->tq", dof.psi, f.coeffs[dof.mesh.triangles])[..., None]


def l2_norm(dof: DofMap, f: FEFunction) -> float:
    vals = _values_at_quad(dof, f)
    sq = np.einsum("q,tqd,tqd,t->", dof.quad.weights, vals, vals, dof.det)
    return float(np.sqrt(max(sq, 0.0)))


def l2_error(dof: DofMap, f: FEFunction, field) -> float:
    """Quadrature L2 distance between a FE function and an analytic field."""
    vals = _values_at_quad(dof, f)
    x = dof.quad_xy[..., 0]
    y = dof.quad_xy[..., 1]
    if f.kind == "velocity":
        e1, e2 = field(x, y)
        exact = np.stack([np.broadcast_to(e1, x.shape),
                          np.broadcast_to(e2, x.shape)], axis=-1)
    else:
        exact = np.broadcast_to(field(x, y), x.shape)[..., None]
    d = vals - exact
    sq = np.einsum("q,tqd,tqd,t->", dof.quad.weights, d, d, dof.det)
    return float(np.sqrt(max(sq, 0.0)))


def mass_norm(m: sp.csr_matrix, v: np.ndarray) -> float:
    return float(np.sqrt(max(v @ (m @ v), 0.0)))


def evaluate_pressure(dof: DofMap, p: np.ndarray, points) -> np.ndarray:
    """P1 point evaluation at the given (n, 2) physical points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    nodes = dof.mesh.nodes
    tris = dof.mesh.triangles
    a = nodes[tris[:, 0]]
    b = nodes[tris[:, 1]]
    c = nodes[tris[:, 2]]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
    out = np.empty(len(pts))
    for k, q in enumerate(pts):
        l1 = ((q[0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (q[1] - a[:, 1])) / det
        l2 = ((b[:, 0] - a[:, 0]) * (q[1] - a[:, 1]) - (q[0] - a[:, 0]) * (b[:, 1] - a[:, 1])) / det
        l0 = 1.0 - l1 - l2
        inside = (l0 >= -1e-12) & (l1 >= -1e-12) & (l2 >= -1e-12)
        if not np.any(inside):
            raise ValueError(f"probe point {tuple(q)} lies outside the mesh")
        tcand = int(np.flatnonzero(inside)[0])
        lam = np.array([l0[tcand], l1[tcand], l2[tcand]])
        out[k] = lam @ p[tris[tcand]]
    return out


# -- Dirichlet data -----------------------------------------------------------

def dirichlet_velocity(dof: DofMap, bc, t: float) -> np.ndarray:
    """Full velocity vector holding boundary values at time t, zero elsewhere.

    bc maps (x, y, tag, t) -> (g1, g2) where tag is the per-node
    BoundaryTag; bc=None means homogeneous data.
    """
    g = np.zeros(dof.n_vel_dofs)
    if bc is None or len(dof.boundary_p2_nodes) == 0:
        return g
    nodes = dof.boundary_p2_nodes
    xy = dof.p2_coords[nodes]
    tag_order = [BoundaryTag.INFLOW, BoundaryTag.SQUARE, BoundaryTag.NOSLIP]
    tags = [tag_order[k] for k in dof.node_tag[nodes]]
    g1, g2 = bc(xy[:, 0], xy[:, 1], tags, t)
    g[nodes] = g1
    g[nodes + dof.n_p2] = g2
    return g


def apply_dirichlet(dof: DofMap, a_vel: sp.spmatrix, b_div: sp.spmatrix,
                    rhs_u: np.ndarray, g: np.ndarray):
    """Eliminate constrained velocity dofs with the lift moved to the RHS.

    Returns (a_ff, b_f, rhs_u_free, rhs_p) for the reduced system in the
    free velocity dofs (the continuity right-hand side is B_c g, matching
    the negated continuity row -B u = B_c g).  Symmetry of symmetric
    blocks is preserved since rows and columns are removed together.
    """
    free = dof.free_vel
    a_vel = a_vel.tocsr()
    a_ff = a_vel[free][:, free]
    rhs_free = rhs_u[free] - (a_vel @ g)[free]
    b_f = b_div.tocsr()[:, free]
    rhs_p = b_div @ g
    return a_ff, b_f, rhs_free, rhs_p
