"""Differentiable parametric toy hand: pose/shape -> 778-vertex mesh + 21 joints.

The rig is a procedurally generated stand-in with MANO-compatible tensor
shapes: 778 vertices, 1538 faces, 16-joint kinematic tree rooted at the
wrist, 10 shape blendshapes, skinning weights and a 21-joint regressor.

The surface is one open tube of stacked vertex rings (16-vertex wrist
boundary ring, apex at the fingertip end) shaped into a hand silhouette by a
radial profile with five finger lobes.  For any ring-size sequence summing to
S with first ring b, the counts are V = S + 1 and F = 2S - b; the default
sequence gives exactly (778, 1538).

Pose layout: theta[0:45] = 3 axis-angle DoF per finger joint (15 joints,
index-major), theta[45:48] = wrist axis-angle rotation, theta[48:51] = wrist
translation in meters.  The 21 regressed joints are the 16 kinematic joints
followed by the 5 fingertips; this ordering is fixed here, not canonical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import Mesh

THETA_DIM = 51
BETA_DIM = 10
N_JOINTS = 16
N_EVAL_JOINTS = 21
HAND_VERTS = 778
HAND_FACES = 1538

RIG_FORMAT_VERSION = 1

# cross-product basis: K = sum_k r_k * _SKEW[k]
_SKEW = np.zeros((3, 3, 3))
_SKEW[0, 1, 2], _SKEW[0, 2, 1] = -1.0, 1.0
_SKEW[1, 0, 2], _SKEW[1, 2, 0] = 1.0, -1.0
_SKEW[2, 0, 1], _SKEW[2, 1, 0] = -1.0, 1.0


@dataclass
class HandParams:
    theta: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.theta.shape[-1] != THETA_DIM:
            raise ValueError("theta must have length %d" % THETA_DIM)
        if self.beta.shape[-1] != BETA_DIM:
            raise ValueError("beta must have length %d" % BETA_DIM)
        if not (np.isfinite(self.theta).all() and np.isfinite(self.beta).all()):
            raise ValueError("hand parameters must be finite")

    @classmethod
    def rest(cls):
        return cls(np.zeros(THETA_DIM), np.zeros(BETA_DIM))


@dataclass
class HandRig:
    template_vertices: np.ndarray     # (V,3)
    faces: np.ndarray                 # (F,3)
    parents: np.ndarray               # (16,) parent index, -1 at the wrist root
    joint_rest: np.ndarray            # (16,3)
    shape_blendshapes: np.ndarray     # (10,V,3)
    skinning_weights: np.ndarray      # (V,16), rows sum to 1
    joint_regressor: np.ndarray       # (21,V), rows sum to 1
    tip_joints: np.ndarray            # (5,) regressor rows that are fingertips

    @property
    def n_vertices(self):
        return len(self.template_vertices)

    def mesh(self, vertices=None):
        return Mesh(self.template_vertices if vertices is None else vertices, self.faces)


def _zipper_band(ring_a, ring_b):
    """Triangulate between two vertex rings of possibly different sizes."""
    a, b = len(ring_a), len(ring_b)
    tris = []
    i = j = 0
    while i < a or j < b:
        next_a = (i + 1) / a
        next_b = (j + 1) / b
        if j >= b or (i < a and next_a <= next_b):
            tris.append([ring_a[i % a], ring_a[(i + 1) % a], ring_b[j % b]])
            i += 1
        else:
            tris.append([ring_a[i % a], ring_b[(j + 1) % b], ring_b[j % b]])
            j += 1
    return tris


def _ring_plan(total, boundary=16):
    """Ring sizes summing to `total` with the wrist ring first."""
    sizes = [boundary] * 3
    body = 20
    while sum(sizes) + body <= total - 6:
        sizes.append(body)
    sizes.append(total - sum(sizes))
    assert sum(sizes) == total and sizes[-1] >= 3
    return sizes


def build_toy_rig(seed=0, n_vertices=HAND_VERTS):
    """Procedural hand rig, deterministic per seed.

    n_vertices controls desk-scale reduced rigs; the default yields the full
    (778, 1538) mesh.
    """
    rng = np.random.default_rng(seed)
    sizes = _ring_plan(n_vertices - 1)
    length = 0.18
    n_rings = len(sizes)
    verts = []
    rings = []
    for r, size in enumerate(sizes):
        z = length * r / n_rings
        # radial profile: wrist -> palm bulge -> finger taper, with 5 lobes
        base = 0.034 + 0.014 * np.exp(-((z - 0.055) / 0.035) ** 2) - 0.09 * max(z - 0.10, 0.0)
        start = len(verts)
        for k in range(size):
            ang = 2 * np.pi * k / size
            lobe = 1.0 + 0.22 * max(z - 0.09, 0.0) / 0.09 * np.cos(5 * ang)
            rad = max(base * lobe, 0.006)
            rad *= 1.0 + 0.03 * rng.standard_normal()
            verts.append([rad * np.cos(ang), rad * np.sin(ang), z])
        rings.append(list(range(start, start + size)))
    apex = len(verts)
    verts.append([0.0, 0.0, length])
    faces = []
    for ra, rb in zip(rings[:-1], rings[1:]):
        faces.extend(_zipper_band(ra, rb))
    last = rings[-1]
    for k in range(len(last)):
        faces.append([last[k], last[(k + 1) % len(last)], apex])
    template = np.array(verts)
    faces = np.array(faces, dtype=np.int64)

    # kinematic tree: wrist root + 5 fingers x 3 joints along radial axes
    finger_angles = 2 * np.pi * np.arange(5) / 5
    joint_rest = [np.array([0.0, 0.0, 0.02])]
    parents = [-1]
    for f, ang in enumerate(finger_angles):
        radial = np.array([np.cos(ang), np.sin(ang), 0.0])
        for s, z in enumerate((0.095, 0.125, 0.152)):
            joint_rest.append(0.022 * radial + np.array([0.0, 0.0, z]))
            parents.append(0 if s == 0 else len(parents) - 1)
    joint_rest = np.array(joint_rest)
    parents = np.array(parents, dtype=np.int64)
    tips = 0.020 * np.stack([np.cos(finger_angles), np.sin(finger_angles),
                             np.zeros(5)], axis=1) + np.array([0.0, 0.0, length - 0.006])

    # skinning: softmax of negative squared distance to the joints
    d2 = ((template[:, None, :] - joint_rest[None, :, :]) ** 2).sum(axis=2)
    logits = -d2 / (2 * 0.018 ** 2)
    logits[:, 0] += np.where(template[:, 2] < 0.07, 6.0, 0.0)  # wrist/palm stay rigid
    w = np.exp(logits - logits.max(axis=1, keepdims=True))
    skinning = w / w.sum(axis=1, keepdims=True)

    # regressor: gaussian weights on nearest template vertices per target joint
    targets = np.concatenate([joint_rest, tips])
    regressor = np.zeros((N_EVAL_JOINTS, len(template)))
    for j, tgt in enumerate(targets):
        d2j = ((template - tgt) ** 2).sum(axis=1)
        nearest = np.argsort(d2j)[:12]
        wj = np.exp(-d2j[nearest] / (2 * 0.012 ** 2))
        regressor[j, nearest] = wj / wj.sum()

    # smooth low-frequency shape blendshapes
    ang = np.arctan2(template[:, 1], template[:, 0])
    zz = template[:, 2] / length
    blend = np.zeros((BETA_DIM, len(template), 3))
    for i in range(BETA_DIM):
        coeff = rng.normal(size=(3, 4)) * 0.004
        field = (coeff[:, 0] * np.cos(ang + i)[:, None] + coeff[:, 1] * np.sin(2 * ang - i)[:, None]
                 + coeff[:, 2] * zz[:, None] + coeff[:, 3] * np.cos(np.pi * zz + i)[:, None])
        blend[i] = field

    return HandRig(template_vertices=template, faces=faces, parents=parents,
                   joint_rest=joint_rest, shape_blendshapes=blend,
                   skinning_weights=skinning, joint_regressor=regressor,
                   tip_joints=np.arange(N_JOINTS, N_EVAL_JOINTS))


def save_rig(path, rig):
    np.savez(path, format_version=RIG_FORMAT_VERSION,
             template_vertices=rig.template_vertices, faces=rig.faces,
             parents=rig.parents, joint_rest=rig.joint_rest,
             shape_blendshapes=rig.shape_blendshapes,
             skinning_weights=rig.skinning_weights,
             joint_regressor=rig.joint_regressor, tip_joints=rig.tip_joints)


def load_rig(path):
    data = np.load(path)
    if int(data["format_version"]) != RIG_FORMAT_VERSION:
        raise ValueError("unsupported rig format version %s" % data["format_version"])
    return HandRig(**{k: data[k] for k in data.files if k != "format_version"})


# -- differentiable forward ----------------------------------------------------


def _rodrigues(rotvec):
    """Axis-angle (..., 3) -> rotation matrices (..., 3, 3), smooth at zero."""
    x = ad.square(rotvec).sum(axis=-1, keepdims=True)
    x = x.reshape(x.shape + (1,))                       # (...,1,1)
    k = sum(rotvec[..., i].reshape(rotvec.shape[:-1] + (1, 1)) * Tensor(_SKEW[i])
            for i in range(3))
    eye = Tensor(np.eye(3))
    return eye + ad.sinc_sqrt(x) * k + ad.versinc_sqrt(x) * (k @ k)


def _tree_levels(parents):
    """Joint ids grouped by tree depth, children after their parents."""
    depth = [0] * len(parents)
    for j in range(1, len(parents)):
        depth[j] = depth[parents[j]] + 1
    levels = [[] for _ in range(max(depth) + 1)]
    for j, d in enumerate(depth):
        levels[d].append(j)
    return levels


def hand_forward(theta, beta, rig):
    """Pose + shape -> (posed vertices, 21 regressed joints), differentiable.

    theta: Tensor (51,) or (B,51); beta: Tensor (10,) or (B,10).
    Returns Tensors of shape (...,V,3) and (...,21,3).
    """
    theta = ad.as_tensor(theta)
    beta = ad.as_tensor(beta)
    single = theta.ndim == 1
    if single:
        theta = theta.reshape(1, THETA_DIM)
        beta = beta.reshape(1, BETA_DIM)
    bsz = theta.shape[0]
    nv = rig.n_vertices

    shaped = Tensor(rig.template_vertices) + \
        (beta @ Tensor(rig.shape_blendshapes.reshape(BETA_DIM, nv * 3))).reshape(bsz, nv, 3)

    rotvecs = ad.concat([theta[:, 45:48].reshape(bsz, 1, 3),
                         theta[:, 0:45].reshape(bsz, 15, 3)], axis=1)
    rots = _rodrigues(rotvecs)                          # (B,16,3,3)
    trans = theta[:, 48:51]

    jrest = rig.joint_rest
    # forward kinematics level by level: all joints at one tree depth share a
    # parent level, so each depth is a single batched matmul
    levels = _tree_levels(rig.parents)
    order = [j for level in levels for j in level]
    r_cur = rots[:, 0:1]                                # (B,1,3,3)
    p_cur = (Tensor(jrest[0].reshape(1, 1, 3)) + trans.reshape(bsz, 1, 3))
    r_parts, p_parts = [r_cur], [p_cur]
    for depth in range(1, len(levels)):
        ids = levels[depth]
        prev = levels[depth - 1]
        ppos = np.array([prev.index(rig.parents[j]) for j in ids])
        offs = np.stack([jrest[j] - jrest[rig.parents[j]] for j in ids])
        r_par = ad.take(r_parts[-1], ppos, axis=1)
        p_par = ad.take(p_parts[-1], ppos, axis=1)
        step = r_par @ Tensor(offs.reshape(len(ids), 3, 1))
        p_cur = p_par + step.reshape(step.shape[:-1])
        r_cur = r_par @ ad.take(rots, np.array(ids), axis=1)
        r_parts.append(r_cur)
        p_parts.append(p_cur)
    r_all = ad.concat(r_parts, axis=1)                  # (B,16,3,3) in `order`
    p_all = ad.concat(p_parts, axis=1)

    # linear blend skinning with per-vertex blended rotations and offsets
    w_perm = rig.skinning_weights[:, order]             # (V,16)
    jrest_perm = jrest[order]
    blend_r = (Tensor(w_perm) @ r_all.reshape(bsz, N_JOINTS, 9)).reshape(bsz, nv, 3, 3)
    rj = (r_all @ Tensor(jrest_perm.reshape(N_JOINTS, 3, 1))).reshape(bsz, N_JOINTS, 3)
    blend_off = Tensor(w_perm) @ (p_all - rj)           # (B,V,3)
    posed = (shaped.reshape(bsz, nv, 1, 3) @ blend_r.swapaxes(-1, -2)
             ).reshape(bsz, nv, 3) + blend_off

    joints = Tensor(rig.joint_regressor) @ posed        # (B,21,3)
    if single:
        return posed.reshape(nv, 3), joints.reshape(N_EVAL_JOINTS, 3)
    return posed, joints


class HandRegressor:
    """Single affine layer mapping a 512-D feature to (theta, beta)."""

    def __init__(self, seed=0, feature_dim=512, init_scale=1e-3):
        rng = np.random.default_rng(seed)
        self.feature_dim = feature_dim
        self.weight = Tensor(rng.normal(size=(feature_dim, THETA_DIM + BETA_DIM)) * init_scale,
                             requires_grad=True)
        self.bias = Tensor(np.zeros(THETA_DIM + BETA_DIM), requires_grad=True)

    def parameters(self):
        return [self.weight, self.bias]

    def __call__(self, feature):
        feature = ad.as_tensor(feature)
        if feature.shape[-1] != self.feature_dim:
            raise ad.ShapeError("hand_regressor", feature.shape, (self.feature_dim,))
        out = feature @ self.weight + self.bias
        return out[..., :THETA_DIM], out[..., THETA_DIM:]


def hand_loss(pred_verts, pred_joints, gt_verts, gt_joints, have_gt_vertices=True):
    """Root-relative squared L2 on vertices plus joints.

    The wrist (regressed joint 0) is subtracted from each side before
    comparison; the vertex term is dropped when ground-truth vertices are
    unavailable.
    """
    pred_joints = ad.as_tensor(pred_joints)
    gt_joints = ad.as_tensor(gt_joints)
    if pred_joints.shape != gt_joints.shape:
        raise ad.ShapeError("hand_loss(joints)", pred_joints.shape, gt_joints.shape)
    root_p = pred_joints[..., 0:1, :]
    root_g = gt_joints[..., 0:1, :]
    loss = ad.frobenius_sq((pred_joints - root_p) - (gt_joints - root_g))
    if have_gt_vertices:
        pred_verts = ad.as_tensor(pred_verts)
        gt_verts = ad.as_tensor(gt_verts)
        if pred_verts.shape != gt_verts.shape:
            raise ad.ShapeError("hand_loss(vertices)", pred_verts.shape, gt_verts.shape)
        loss = loss + ad.frobenius_sq((pred_verts - root_p) - (gt_verts - root_g))
    return loss
