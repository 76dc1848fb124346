"""Object mesh decoder: deform a fixed icosphere template from a 512-D latent.

Each template vertex is concatenated with the latent and pushed through a
shared MLP predicting its displaced 3-D position; faces are inherited from the
template, so watertightness is preserved by construction.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import GeometryError, Mesh, chamfer_distance

FEATURE_DIM = 512
TEMPLATE_LEVEL = 3          # 642 vertices / 1280 faces


def icosahedron():
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return verts, faces


def _subdivide(verts, faces):
    verts = list(verts)
    cache = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            v = verts[i] + verts[j]
            verts.append(v / np.linalg.norm(v))
            cache[key] = len(verts) - 1
        return cache[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
    return np.array(verts), np.array(out, dtype=np.int64)


def build_icosphere(level=TEMPLATE_LEVEL):
    """Unit icosphere: V = 10*4^level + 2, F = 20*4^level."""
    if level < 0:
        raise ValueError("subdivision level must be >= 0")
    v, f = icosahedron()
    for _ in range(level):
        v, f = _subdivide(v, f)
    return Mesh(v, f)


class DecoderWeights:
    """Shared per-vertex MLP: (3 + latent) -> hidden x3 (tanh) -> 3."""

    def __init__(self, seed=0, latent_dim=FEATURE_DIM, hidden=256):
        rng = np.random.default_rng(seed)
        dims = [3 + latent_dim, hidden, hidden, hidden, 3]
        self.latent_dim = latent_dim
        self.layers = []
        for din, dout in zip(dims[:-1], dims[1:]):
            w = Tensor(rng.normal(size=(din, dout)) * np.sqrt(1.0 / din), requires_grad=True)
            b = Tensor(np.zeros(dout), requires_grad=True)
            self.layers.append((w, b))
        # start near the identity: bias the output toward the template sphere
        self.scale = Tensor(np.array(1.0), requires_grad=True)

    def parameters(self):
        params = [p for w, b in self.layers for p in (w, b)]
        return params + [self.scale]


def decode_object(latent, template, weights):
    """Map a latent (512,) or batch (B,512) to displaced template vertices.

    Returns a Tensor of shape (V,3) or (B,V,3); faces come from the template.
    """
    single = latent.ndim == 1
    if latent.shape[-1] != weights.latent_dim:
        raise ad.ShapeError("decode_object", latent.shape, (weights.latent_dim,))
    if single:
        latent = latent.reshape(1, latent.shape[0])
    b = latent.shape[0]
    v = template.vertices.shape[0]
    verts = Tensor(np.broadcast_to(template.vertices, (b, v, 3)).copy())
    # first layer: the latent block is identical for every vertex, so apply
    # its weight rows once per batch element instead of per vertex
    w0, b0 = weights.layers[0]
    h = ad.tanh(verts @ w0[:3] + (latent @ w0[3:]).reshape(b, 1, w0.shape[1]) + b0)
    for i, (w, bias) in enumerate(weights.layers[1:]):
        h = h @ w + bias
        if i < len(weights.layers) - 2:
            h = ad.tanh(h)
    out = verts * weights.scale + h
    return out.reshape(v, 3) if single else out


def decoded_mesh(latent, template, weights):
    verts = decode_object(latent, template, weights)
    return Mesh(verts.value, template.faces)


def object_loss(pred_vertices, gt_points):
    """Differentiable summed Chamfer loss against fixed surface samples."""
    gt_points = np.asarray(gt_points, dtype=np.float64)
    if len(gt_points) == 0:
        raise GeometryError("object_loss: empty ground-truth point set")
    d = ad.pairwise_sqdist(pred_vertices, Tensor(gt_points))
    return 0.5 * (d.min(axis=-1).sum() + d.min(axis=-2).sum())


def object_loss_value(pred_mesh, gt_points):
    return chamfer_distance(pred_mesh.vertices, gt_points)
