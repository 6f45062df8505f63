"""Generator for the channel-with-cylinder benchmark mesh.

Produces a graded triangulation of (0, 2.2) x (0, 0.41) minus the disk
of radius 0.05 at (0.2, 0.2) with exact combinatorics: 3480 vertices,
6624 triangles and 336 boundary edges (hence 27168 P2 velocity dofs and
3480 pressure dofs).  For a triangulated annulus-topology domain the
triangle count follows from T = 2 V - B, so fixing the boundary
discretization (B = 336 segments) and the interior point count
(V - B = 3144) pins all counts; a force-equilibration sweep in the
spirit of Persson & Strang's distmesh then shapes element sizes by the
target size field (fine at the cylinder, coarse far away).

The shipped mesh file is produced once by ``python -m
graddiv_ns.meshgen_cylinder`` with the default (seeded, deterministic)
parameters and checked into the package data.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import Delaunay

from .mesh import (CHANNEL_HEIGHT, CHANNEL_LENGTH, CYLINDER_CENTER,
                   CYLINDER_RADIUS, BoundaryTag, Mesh, signed_areas, validate)

N_VERTICES = 3480
N_BOUNDARY = 336


def size_field(x, y, h_near=0.0052, h_far=0.023, slope=0.105,
               wake=0.55):
    """Target edge length: linear growth away from the cylinder, with a
    smooth band of refinement in the near wake."""
    cx, cy = CYLINDER_CENTER
    d = np.hypot(x - cx, y - cy) - CYLINDER_RADIUS
    h = np.minimum(h_far, h_near + slope * np.maximum(d, 0.0))
    ramp = lambda s: np.clip(s, 0.0, 1.0)
    bump = ramp((x - cx) / 0.08) * ramp((1.1 - x) / 0.25) * ramp((0.13 - np.abs(y - cy)) / 0.06)
    return np.maximum(h * (1.0 - (1.0 - wake) * bump), h_near)


def signed_distance(x, y):
    """Negative inside the flow domain."""
    dx = np.maximum(-x, x - CHANNEL_LENGTH)
    dy = np.maximum(-y, y - CHANNEL_HEIGHT)
    d_rect = np.maximum(dx, dy)
    cx, cy = CYLINDER_CENTER
    d_hole = CYLINDER_RADIUS - np.hypot(x - cx, y - cy)
    return np.maximum(d_rect, d_hole)


def _side_points(p0, p1, n, density):
    """n+1 points from p0 to p1 spaced by the inverse size field."""
    ts = np.linspace(0.0, 1.0, 4001)
    xs = p0[0] + ts * (p1[0] - p0[0])
    ys = p0[1] + ts * (p1[1] - p0[1])
    w = np.concatenate([[0.0], np.cumsum(0.5 * (density(xs, ys)[1:] + density(xs, ys)[:-1])
                                         * np.diff(ts))])
    w /= w[-1]
    t_eq = np.interp(np.linspace(0.0, 1.0, n + 1), w, ts)
    return np.column_stack([p0[0] + t_eq * (p1[0] - p0[0]),
                            p0[1] + t_eq * (p1[1] - p0[1])])


def boundary_points(n_circle: int):
    """Fixed boundary discretization: circle plus graded rectangle sides.

    Returns (points, side_counts) where side counts sum with n_circle to
    N_BOUNDARY.
    """
    cx, cy = CYLINDER_CENTER
    th = 2.0 * np.pi * np.arange(n_circle) / n_circle
    circle = np.column_stack([cx + CYLINDER_RADIUS * np.cos(th),
                              cy + CYLINDER_RADIUS * np.sin(th)])

    density = lambda x, y: 1.0 / size_field(x, y)
    corners = [(0.0, 0.0), (CHANNEL_LENGTH, 0.0),
               (CHANNEL_LENGTH, CHANNEL_HEIGHT), (0.0, CHANNEL_HEIGHT)]
    # provisional per-side counts by integrated density, then fixed up to
    # make the rectangle total exactly N_BOUNDARY - n_circle
    weights = []
    for i in range(4):
        p0, p1 = corners[i], corners[(i + 1) % 4]
        ts = np.linspace(0, 1, 2001)
        xs = p0[0] + ts * (p1[0] - p0[0])
        ys = p0[1] + ts * (p1[1] - p0[1])
        L = np.hypot(p1[0] - p0[0], p1[1] - p0[1])
        weights.append(np.trapezoid(density(xs, ys), ts) * L)
    total = N_BOUNDARY - n_circle
    counts = [max(4, int(round(w / sum(weights) * total))) for w in weights]
    counts[1], counts[3] = max(counts[1], 6), max(counts[3], 6)
    while sum(counts) != total:
        i = int(np.argmax(counts)) if sum(counts) > total else int(np.argmin(counts))
        counts[i] += -1 if sum(counts) > total else 1

    sides = []
    for i in range(4):
        p0, p1 = corners[i], corners[(i + 1) % 4]
        pts = _side_points(p0, p1, counts[i], density)
        sides.append(pts[:-1])  # corner shared with the next side
    rect = np.vstack(sides)
    return np.vstack([circle, rect]), n_circle, counts


def _push_inside(pts, margin):
    """Move stray points back into the domain interior (boundary points
    are never passed here)."""
    d = signed_distance(pts[:, 0], pts[:, 1])
    bad = d > -margin
    if not np.any(bad):
        return pts
    eps = 1e-7
    x, y = pts[bad, 0], pts[bad, 1]
    gx = (signed_distance(x + eps, y) - signed_distance(x - eps, y)) / (2 * eps)
    gy = (signed_distance(x, y + eps) - signed_distance(x, y - eps)) / (2 * eps)
    norm = np.hypot(gx, gy)
    norm[norm == 0] = 1.0
    shift = (d[bad] + margin)
    pts = pts.copy()
    pts[bad, 0] = x - gx / norm * shift
    pts[bad, 1] = y - gy / norm * shift
    return pts


def _triangulate(pts):
    tri = Delaunay(pts)
    simplices = tri.simplices
    cent = pts[simplices].mean(axis=1)
    keep = signed_distance(cent[:, 0], cent[:, 1]) < -1e-12
    return simplices[keep]


def generate(seed: int = 42, n_circle: int = 60, n_iter: int = 300,
             fscale: float = 1.18, step: float = 0.18) -> Mesh:
    """Build the benchmark mesh (deterministic for fixed arguments)."""
    rng = np.random.default_rng(seed)
    bpts, n_circle, _ = boundary_points(n_circle)
    n_int = N_VERTICES - len(bpts)
    if len(bpts) != N_BOUNDARY:
        raise RuntimeError(f"boundary discretization has {len(bpts)} points")

    # rejection-sample interior seeds with density 1/h^2
    seeds = []
    h_min_glob = 0.003
    while len(seeds) < n_int:
        cand = rng.uniform((0, 0), (CHANNEL_LENGTH, CHANNEL_HEIGHT), size=(4 * n_int, 2))
        inside = signed_distance(cand[:, 0], cand[:, 1]) < -0.002
        cand = cand[inside]
        p_keep = (h_min_glob / size_field(cand[:, 0], cand[:, 1])) ** 2
        cand = cand[rng.uniform(size=len(cand)) < p_keep]
        seeds.extend(cand.tolist())
    interior = np.array(seeds[:n_int])

    pts = np.vstack([bpts, interior])
    n_b = len(bpts)
    tris = _triangulate(pts)
    for it in range(n_iter):
        edges = np.unique(np.sort(np.concatenate(
            [tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1), axis=0)
        vec = pts[edges[:, 1]] - pts[edges[:, 0]]
        length = np.hypot(vec[:, 0], vec[:, 1])
        mid = 0.5 * (pts[edges[:, 0]] + pts[edges[:, 1]])
        hmid = size_field(mid[:, 0], mid[:, 1])
        l0 = hmid * fscale * np.sqrt((length ** 2).sum() / (hmid ** 2).sum())
        force = np.maximum(l0 - length, 0.0) / np.maximum(length, 1e-12)
        fvec = force[:, None] * vec
        move = np.zeros_like(pts)
        np.add.at(move, edges[:, 0], -fvec)
        np.add.at(move, edges[:, 1], fvec)
        pts[n_b:] += step * move[n_b:]
        pts[n_b:] = _push_inside(pts[n_b:], 0.0015)
        if it % 5 == 4 or it == n_iter - 1:
            tris = _triangulate(pts)

    tris = _triangulate(pts)
    # orient counterclockwise
    mesh = Mesh(pts, tris, np.empty((0, 2), dtype=np.int64), [], "cylinder-channel")
    areas = signed_areas(mesh)
    flip = areas < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]

    # boundary edges: every edge on exactly one triangle
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    e_sorted = np.sort(e, axis=1)
    uniq, counts = np.unique(e_sorted, axis=0, return_counts=True)
    bedges = uniq[counts == 1]

    tags = []
    cx, cy = CYLINDER_CENTER
    for i, j in bedges:
        xm, ym = 0.5 * (pts[i] + pts[j])
        if np.hypot(xm - cx, ym - cy) < 2 * CYLINDER_RADIUS:
            tags.append(BoundaryTag.NOSLIP)
        elif xm < 1e-9 or xm > CHANNEL_LENGTH - 1e-9:
            tags.append(BoundaryTag.INFLOW)
        else:
            tags.append(BoundaryTag.NOSLIP)

    mesh = Mesh(pts, tris, bedges.astype(np.int64), tags, "cylinder-channel")
    validate(mesh)
    if mesh.n_nodes != N_VERTICES or mesh.n_triangles != 2 * N_VERTICES - N_BOUNDARY:
        raise RuntimeError(
            f"combinatorics off: {mesh.n_nodes} vertices, {mesh.n_triangles} triangles, "
            f"{len(bedges)} boundary edges")
    return mesh


def quality(mesh: Mesh) -> np.ndarray:
    """Per-triangle radius-ratio quality in (0, 1]; equilateral is 1."""
    p = mesh.nodes
    t = mesh.triangles
    a = np.linalg.norm(p[t[:, 1]] - p[t[:, 0]], axis=1)
    b = np.linalg.norm(p[t[:, 2]] - p[t[:, 1]], axis=1)
    c = np.linalg.norm(p[t[:, 0]] - p[t[:, 2]], axis=1)
    s = 0.5 * (a + b + c)
    area = signed_areas(mesh)
    return 4.0 * np.sqrt(3.0) * area / (a * a + b * b + c * c) * (s / s)


def main(argv=None):
    import argparse

    from .mesh import mesh_stats, save_mesh

    ap = argparse.ArgumentParser(description="generate the cylinder channel mesh")
    ap.add_argument("--out", default="cylinder_6624.msh")
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args(argv)
    mesh = generate(seed=args.seed)
    h_min, h_max, area = mesh_stats(mesh)
    q = quality(mesh)
    print(f"vertices {mesh.n_nodes}  triangles {mesh.n_triangles}  "
          f"boundary edges {len(mesh.boundary_edges)}")
    print(f"h_min {h_min:.4g}  h_max {h_max:.4g}  area {area:.8g}")
    print(f"quality min {q.min():.3f}  mean {q.mean():.3f}")
    save_mesh(mesh, args.out)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
