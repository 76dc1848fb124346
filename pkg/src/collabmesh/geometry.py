"""Triangle-mesh utilities and hand-object evaluation metrics.

Geometry is stored in meters throughout; metric reporting converts to
millimeters / cubic centimeters only at the reporting boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

MM = 1000.0          # meters -> millimeters
CM3 = 1e6            # cubic meters -> cubic centimeters

KDTREE_CUTOVER = 256  # brute force below, k-d tree above; results identical


class GeometryError(ValueError):
    pass


@dataclass
class Mesh:
    """Vertex array (V,3) in meters plus triangular face indices (F,3)."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise GeometryError("vertices must be (V,3), got %s" % (self.vertices.shape,))
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise GeometryError("faces must be (F,3), got %s" % (self.faces.shape,))
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise GeometryError("face index out of range")
        if self.faces.size:
            f = self.faces
            if ((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])).any():
                raise GeometryError("degenerate face (repeated vertex index)")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def translated(self, offset):
        return Mesh(self.vertices + np.asarray(offset, dtype=np.float64), self.faces)

    def face_areas(self):
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def is_watertight(self):
        """Every undirected edge shared by exactly two faces."""
        edges = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                                self.faces[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool((counts == 2).all())


@dataclass
class VoxelGrid:
    """Axis-aligned occupancy grid; origin is the corner of voxel (0,0,0)."""

    origin: np.ndarray
    voxel_size: float
    occupancy: np.ndarray

    def volume(self):
        """Occupied volume in cubic meters."""
        return float(self.occupancy.sum()) * self.voxel_size ** 3


# -- OBJ I/O -------------------------------------------------------------------


def save_obj(path, mesh):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write("v %.9g %.9g %.9g\n" % (v[0], v[1], v[2]))
        for f in mesh.faces:
            fh.write("f %d %d %d\n" % (f[0] + 1, f[1] + 1, f[2] + 1))


def load_obj(path):
    verts, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return Mesh(np.array(verts), np.array(faces, dtype=np.int64))


# -- Chamfer distance ----------------------------------------------------------


def _nearest_sqdist(query, reference):
    if len(reference) <= KDTREE_CUTOVER and len(query) <= KDTREE_CUTOVER:
        diff = query[:, None, :] - reference[None, :, :]
        return (diff ** 2).sum(axis=2).min(axis=1)
    d, _ = cKDTree(reference).query(query)
    return d ** 2


def chamfer_distance(a, b):
    """Symmetric summed squared nearest-neighbor distance between point sets.

    0.5 * (sum_x min_y ||x-y||^2 + sum_y min_x ||x-y||^2); summed, not
    averaged over points.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise GeometryError("chamfer_distance: empty point set")
    return 0.5 * (_nearest_sqdist(a, b).sum() + _nearest_sqdist(b, a).sum())


def chamfer_distance_mean(a, b):
    """Per-point-averaged variant (the normalization the summed form omits)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise GeometryError("chamfer_distance: empty point set")
    return 0.5 * (_nearest_sqdist(a, b).mean() + _nearest_sqdist(b, a).mean())


# -- surface sampling ----------------------------------------------------------


def sample_surface(mesh, n, seed=0):
    """Area-weighted uniform surface samples, deterministic per seed."""
    if n < 1:
        raise GeometryError("sample_surface: n must be >= 1")
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise GeometryError("sample_surface: zero-area mesh")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    a = mesh.vertices[mesh.faces[idx, 0]]
    b = mesh.vertices[mesh.faces[idx, 1]]
    c = mesh.vertices[mesh.faces[idx, 2]]
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


# -- inside/outside test -------------------------------------------------------


def _parity_one_axis(points, mesh, axis):
    """Crossing parity for rays along +axis from each point."""
    (u, v) = [k for k in range(3) if k != axis]
    verts = mesh.vertices
    inside = np.zeros(len(points), dtype=np.int64)
    pu, pv, pw = points[:, u], points[:, v], points[:, axis]
    for f in mesh.faces:
        a, b, c = verts[f[0]], verts[f[1]], verts[f[2]]
        det = (b[u] - a[u]) * (c[v] - a[v]) - (c[u] - a[u]) * (b[v] - a[v])
        if abs(det) < 1e-15:
            continue  # triangle parallel to the ray
        du, dv = pu - a[u], pv - a[v]
        s = ((c[v] - a[v]) * du - (c[u] - a[u]) * dv) / det
        t = (-(b[v] - a[v]) * du + (b[u] - a[u]) * dv) / det
        hit = (s >= 0) & (t >= 0) & (s + t <= 1)
        if not hit.any():
            continue
        w = a[axis] + s * (b[axis] - a[axis]) + t * (c[axis] - a[axis])
        inside[hit & (w > pw)] += 1
    return inside % 2 == 1


def points_inside(points, mesh, jitter=1e-9):
    """Inside test by ray-casting parity along the three axes, majority vote.

    A deterministic sub-voxel jitter keeps ray origins off face/edge planes.
    """
    points = np.asarray(points, dtype=np.float64)
    rng = np.random.default_rng(12345)
    jittered = points + jitter * rng.standard_normal(points.shape)
    votes = sum(_parity_one_axis(jittered, mesh, axis).astype(int) for axis in range(3))
    return votes >= 2


# -- point-to-surface distance -------------------------------------------------


def point_triangle_distance(points, mesh):
    """Min distance from each point to the mesh surface (exact, per triangle)."""
    points = np.asarray(points, dtype=np.float64)
    best = np.full(len(points), np.inf)
    verts = mesh.vertices
    for f in mesh.faces:
        a, b, c = verts[f[0]], verts[f[1]], verts[f[2]]
        best = np.minimum(best, _dist_to_triangle(points, a, b, c))
    return best


def _dist_to_triangle(p, a, b, c):
    # project onto the triangle plane, clamp to edges when outside
    ab, ac, ap = b - a, c - a, p - a
    d1 = ap @ ab
    d2 = ap @ ac
    abab, abac, acac = ab @ ab, ab @ ac, ac @ ac
    det = abab * acac - abac ** 2
    det = max(det, 1e-300)
    s = (acac * d1 - abac * d2) / det
    t = (abab * d2 - abac * d1) / det
    inside = (s >= 0) & (t >= 0) & (s + t <= 1)
    closest = a + s[:, None] * ab + t[:, None] * ac
    d_in = np.linalg.norm(p - closest, axis=1)
    d_edges = np.minimum.reduce([
        _dist_to_segment(p, a, b), _dist_to_segment(p, b, c), _dist_to_segment(p, c, a)])
    return np.where(inside, d_in, d_edges)


def _dist_to_segment(p, a, b):
    ab = b - a
    t = np.clip((p - a) @ ab / max(ab @ ab, 1e-300), 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


# -- interaction metrics -------------------------------------------------------


def close_boundaries(mesh):
    """Fan-fill every open boundary loop with a centroid vertex.

    Returns a new mesh; meshes that are already watertight come back
    unchanged.  Used to close the hand rig's open wrist ring before
    voxel-based volume computation.
    """
    edges = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                            mesh.faces[:, [2, 0]]])
    keys = np.sort(edges, axis=1)
    uniq, counts = np.unique(keys, axis=0, return_counts=True)
    boundary = {tuple(e) for e in uniq[counts == 1]}
    if not boundary:
        return mesh
    # orient boundary edges as they appear in faces (unpaired direction)
    directed = [tuple(e) for e in edges if tuple(sorted(e)) in boundary]
    succ = {}
    for a, b in directed:
        succ.setdefault(a, b)
    verts = [mesh.vertices]
    new_faces = list(mesh.faces)
    seen = set()
    next_id = len(mesh.vertices)
    for start in list(succ):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        cur = succ[start]
        while cur != start and cur in succ and cur not in seen:
            loop.append(cur)
            seen.add(cur)
            cur = succ[cur]
        if len(loop) < 3:
            continue
        centroid = mesh.vertices[loop].mean(axis=0)
        verts.append(centroid.reshape(1, 3))
        for i in range(len(loop)):
            # reversed winding relative to the boundary direction closes the fan
            new_faces.append([loop[i], next_id, loop[(i + 1) % len(loop)]])
        next_id += 1
    return Mesh(np.concatenate(verts), np.array(new_faces))


def penetration_depth(hand, obj):
    """Max distance (meters) from hand vertices inside the object to its surface.

    Zero when no hand vertex is inside.  The object mesh must be watertight.
    """
    if not obj.is_watertight():
        raise GeometryError(
            "penetration_depth: object mesh is not watertight; "
            "voxelize both meshes and use intersection_volume instead")
    inside = points_inside(hand.vertices, obj)
    if not inside.any():
        return 0.0
    return float(point_triangle_distance(hand.vertices[inside], obj).max())


def voxelize(mesh, voxel_size, origin=None, shape=None):
    """Occupancy grid of the mesh interior over its AABB plus one-voxel margin."""
    if voxel_size <= 0:
        raise GeometryError("voxelize: voxel_size must be > 0")
    if not mesh.is_watertight():
        raise GeometryError("voxelize: mesh is not watertight (open surface)")
    if origin is None:
        origin = mesh.vertices.min(axis=0) - voxel_size
    origin = np.asarray(origin, dtype=np.float64)
    if shape is None:
        extent = mesh.vertices.max(axis=0) + voxel_size - origin
        shape = np.maximum(np.ceil(extent / voxel_size).astype(int) + 1, 1)
    nx, ny, nz = (int(s) for s in shape)
    if nx * ny * nz > 4_000_000:
        raise GeometryError(
            "voxelize: grid %dx%dx%d exceeds the 4e6-voxel budget; "
            "increase voxel_size or shrink the mesh extent" % (nx, ny, nz))
    centers = np.stack(np.meshgrid(
        origin[0] + (np.arange(nx) + 0.5) * voxel_size,
        origin[1] + (np.arange(ny) + 0.5) * voxel_size,
        origin[2] + (np.arange(nz) + 0.5) * voxel_size,
        indexing="ij"), axis=-1).reshape(-1, 3)
    occ = points_inside(centers, mesh).reshape(nx, ny, nz)
    return VoxelGrid(origin=origin, voxel_size=float(voxel_size), occupancy=occ)


def intersection_volume(a, b, voxel_size=0.005):
    """Shared voxel volume of two closed meshes, reported in cm^3."""
    lo = np.minimum(a.vertices.min(axis=0), b.vertices.min(axis=0)) - voxel_size
    hi = np.maximum(a.vertices.max(axis=0), b.vertices.max(axis=0)) + voxel_size
    shape = np.maximum(np.ceil((hi - lo) / voxel_size).astype(int) + 1, 1)
    ga = voxelize(a, voxel_size, origin=lo, shape=shape)
    gb = voxelize(b, voxel_size, origin=lo, shape=shape)
    both = np.logical_and(ga.occupancy, gb.occupancy)
    return float(both.sum()) * voxel_size ** 3 * CM3


# -- pose metrics --------------------------------------------------------------


def procrustes_align(pred, gt):
    """Similarity-transform (rotation, translation, uniform scale) alignment.

    Returns pred mapped onto gt by the least-squares similarity transform.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[0] < 3:
        raise GeometryError("procrustes_align: need matching k>=3 point sets")
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    xp, xg = pred - mu_p, gt - mu_g
    var_p = (xp ** 2).sum()
    if var_p < 1e-24 or (xg ** 2).sum() < 1e-24:
        raise GeometryError("procrustes_align: degenerate configuration")
    cov = xg.T @ xp
    u, s, vt = np.linalg.svd(cov)
    if np.linalg.matrix_rank(cov, tol=1e-12 * s[0]) < 2:
        raise GeometryError("procrustes_align: rank-deficient configuration")
    d = np.sign(np.linalg.det(u @ vt))
    flip = np.diag([1.0, 1.0, d])
    rot = u @ flip @ vt
    scale = (s * np.diag(flip)).sum() / var_p
    return (scale * (rot @ xp.T)).T + mu_g


def pose_metrics(pred_joints, gt_joints, thresholds_mm, f_taus_mm=(5.0, 15.0)):
    """Mean end-point error, PCK curve, AUC and F-scores, all in mm units."""
    pred = np.asarray(pred_joints, dtype=np.float64)
    gt = np.asarray(gt_joints, dtype=np.float64)
    if pred.shape != gt.shape:
        raise GeometryError("pose_metrics: shape mismatch %s vs %s" % (pred.shape, gt.shape))
    thresholds_mm = np.asarray(thresholds_mm, dtype=np.float64)
    if thresholds_mm.size == 0:
        raise GeometryError("pose_metrics: empty threshold list")
    err_mm = np.linalg.norm(pred - gt, axis=1) * MM
    pck = np.array([(err_mm <= t).mean() for t in thresholds_mm])
    if thresholds_mm.size > 1:
        span = thresholds_mm[-1] - thresholds_mm[0]
        auc = float(np.trapezoid(pck, thresholds_mm) / span)
    else:
        auc = float(pck[0])
    fscores = {}
    for tau in f_taus_mm:
        prec = (_nearest_sqdist(pred, gt) <= (tau / MM) ** 2).mean()
        rec = (_nearest_sqdist(gt, pred) <= (tau / MM) ** 2).mean()
        fscores[tau] = 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
    return {
        "mean_epe_mm": float(err_mm.mean()),
        "pck": pck,
        "thresholds_mm": thresholds_mm,
        "auc": auc,
        "f_score": fscores,
    }
