"""Deterministic synthetic grasp-scene generator.

Each scene pairs a posed toy hand with one of O object primitives (cube,
cylinder, sphere, handle-cup).  Grasp poses are drawn from class-conditioned
priors, so hand pose carries object-class information; scenes mix contact and
near-contact placements.  Scenes provide a rendered image, injected 512-D
features (with occlusion dropout simulating encoder failure under mutual
occlusion), ground-truth hand mesh/joints, object surface samples, and the
class id.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .geometry import Mesh, point_triangle_distance, sample_surface, save_obj
from .hand import HandParams, build_toy_rig, hand_forward
from .autodiff import Tensor
from .objdec import build_icosphere

CLASS_NAMES = ("cube", "cylinder", "sphere", "handle_cup")
FEATURE_DIM = 512
N_SURFACE_SAMPLES = 600
IMAGE_SIZE = 64
CONTACT_THRESHOLD = 0.002  # meters


# -- object primitives ---------------------------------------------------------


def make_cube(size=0.05):
    v = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)],
                 dtype=np.float64) * (size / 2)
    f = np.array([
        [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]])
    return Mesh(v, f)


def make_cylinder(radius=0.022, height=0.07, segments=14):
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bot = np.concatenate([ring, np.full((segments, 1), -height / 2)], axis=1)
    top = np.concatenate([ring, np.full((segments, 1), height / 2)], axis=1)
    verts = np.concatenate([bot, top, [[0, 0, -height / 2], [0, 0, height / 2]]])
    cb, ct = 2 * segments, 2 * segments + 1
    faces = []
    for k in range(segments):
        k2 = (k + 1) % segments
        faces += [[k, k2, segments + k], [k2, segments + k2, segments + k],
                  [k2, k, cb], [segments + k, segments + k2, ct]]
    return Mesh(verts, np.array(faces))


def make_sphere(radius=0.028):
    s = build_icosphere(2)
    return Mesh(s.vertices * radius, s.faces)


def make_torus(major=0.018, minor=0.005, nu=10, nv=8):
    verts = []
    for i in range(nu):
        a = 2 * np.pi * i / nu
        for j in range(nv):
            b = 2 * np.pi * j / nv
            r = major + minor * np.cos(b)
            verts.append([r * np.cos(a), r * np.sin(a), minor * np.sin(b)])
    faces = []
    for i in range(nu):
        for j in range(nv):
            a, b = i * nv + j, i * nv + (j + 1) % nv
            c, d = ((i + 1) % nu) * nv + j, ((i + 1) % nu) * nv + (j + 1) % nv
            faces += [[a, b, c], [b, d, c]]
    return Mesh(np.array(verts), np.array(faces))


def make_handle_cup():
    """Cylinder body with a torus handle (two closed components)."""
    body = make_cylinder(radius=0.020, height=0.06)
    handle = make_torus()
    hv = handle.vertices @ np.array([[0, 0, 1.0], [0, 1.0, 0], [-1.0, 0, 0]])
    hv = hv + np.array([0.028, 0.0, 0.0])
    verts = np.concatenate([body.vertices, hv])
    faces = np.concatenate([body.faces, handle.faces + len(body.vertices)])
    return Mesh(verts, faces)


OBJECT_BUILDERS = (make_cube, make_cylinder, make_sphere, make_handle_cup)


def make_object(class_id, scale=1.0):
    """Object mesh for class_id in {1..O}; classes cycle over the primitives."""
    mesh = OBJECT_BUILDERS[(class_id - 1) % len(OBJECT_BUILDERS)]()
    return Mesh(mesh.vertices * scale, mesh.faces)


# -- class-conditioned grasp priors --------------------------------------------


def class_pose_prior(class_id, n_classes):
    """Mean theta for a class; distinct per class by construction."""
    rng = np.random.default_rng(9000 + class_id)
    theta = np.zeros(51)
    # finger curl differs per class: wide grasps for big objects, pinches for
    # the handle cup, etc.
    curl = 0.25 + 0.55 * ((class_id - 1) % 4) / 3.0
    theta[0:45:3] = curl + 0.15 * rng.standard_normal(15)
    theta[1:45:3] = 0.1 * rng.standard_normal(15)
    theta[45:48] = 0.2 * rng.standard_normal(3)
    return theta


@dataclass
class Scene:
    seed: int
    class_id: int
    n_classes: int
    image: np.ndarray            # (H,W,3) in [0,1]
    hand_params: HandParams
    hand_vertices: np.ndarray
    hand_joints: np.ndarray
    hand_faces: np.ndarray
    object_mesh: Mesh
    object_samples: np.ndarray   # (600,3)
    feature_hand: np.ndarray     # (512,) injected encoder stand-in
    feature_obj: np.ndarray
    contact: bool
    min_distance: float
    camera: dict = field(default_factory=dict)

    @property
    def hand_mesh(self):
        return Mesh(self.hand_vertices, self.hand_faces)


# -- rendering -----------------------------------------------------------------


def render_flat(meshes, channels, size=IMAGE_SIZE, camera_distance=0.45, focal=85.0):
    """Minimal z-buffered flat rasterizer: depth-shaded silhouettes."""
    image = np.zeros((size, size, 3))
    zbuf = np.full((size, size), np.inf)
    cx = size / 2.0
    for mesh, channel in zip(meshes, channels):
        cam = mesh.vertices.copy()
        cam[:, 2] += camera_distance
        depth = cam[:, 2]
        u = focal * cam[:, 0] / depth + cx
        v = focal * cam[:, 1] / depth + cx
        for f in mesh.faces:
            tu, tv, tz = u[f], v[f], depth[f]
            lo_u, hi_u = int(max(np.floor(tu.min()), 0)), int(min(np.ceil(tu.max()), size - 1))
            lo_v, hi_v = int(max(np.floor(tv.min()), 0)), int(min(np.ceil(tv.max()), size - 1))
            if lo_u > hi_u or lo_v > hi_v:
                continue
            gu, gv = np.meshgrid(np.arange(lo_u, hi_u + 1), np.arange(lo_v, hi_v + 1))
            det = (tu[1] - tu[0]) * (tv[2] - tv[0]) - (tu[2] - tu[0]) * (tv[1] - tv[0])
            if abs(det) < 1e-12:
                continue
            w1 = ((gu - tu[0]) * (tv[2] - tv[0]) - (tu[2] - tu[0]) * (gv - tv[0])) / det
            w2 = (-(gu - tu[0]) * (tv[1] - tv[0]) + (tu[1] - tu[0]) * (gv - tv[0])) / det
            inside = (w1 >= 0) & (w2 >= 0) & (w1 + w2 <= 1)
            if not inside.any():
                continue
            z = tz[0] + w1 * (tz[1] - tz[0]) + w2 * (tz[2] - tz[0])
            rows, cols = gv[inside], gu[inside]
            zi = z[inside]
            closer = zi < zbuf[rows, cols]
            rows, cols, zi = rows[closer], cols[closer], zi[closer]
            zbuf[rows, cols] = zi
            shade = np.clip(1.2 - 2.0 * (zi - camera_distance + 0.1), 0.05, 1.0)
            image[rows, cols] = 0.0
            image[rows, cols, channel] = shade
    return image


# -- feature injection ---------------------------------------------------------


def _injection_bases(n_classes):
    rng = np.random.default_rng(7777)
    return {
        "hand_pose": rng.normal(size=(51, FEATURE_DIM)) / np.sqrt(51),
        "obj_class": rng.normal(size=(n_classes, FEATURE_DIM)) / 2.0,
        "obj_scale": rng.normal(size=FEATURE_DIM) / 4.0,
    }


def injected_features(theta, class_id, n_classes, scale, rng,
                      occlusion_rate=0.8, noise=0.02):
    """Encoder stand-in features carrying partial, complementary information.

    Mutual occlusion wipes one branch's signal per scene: with probability
    occlusion_rate/2 the object feature loses its class component (object
    hidden behind the hand), else with the same probability the hand feature
    loses its pose signal entirely (hand hidden behind the object).  The
    missing information stays recoverable from the other branch's decoded
    mesh, which is what the collaborative exchange can exploit: hand pose is
    drawn from a class-conditioned prior, so the hand mesh betrays the object
    class and the object mesh betrays the typical grasp.
    """
    bases = _injection_bases(n_classes)
    u = rng.random()
    obj_occluded = u < 0.5 * occlusion_rate
    hand_occluded = 0.5 * occlusion_rate <= u < occlusion_rate
    class_vec = bases["obj_class"][class_id - 1]
    f_obj = (0.0 if obj_occluded else 1.0) * class_vec \
        + (scale - 1.0) * bases["obj_scale"]
    f_hand = (0.0 if hand_occluded else 1.0) * (theta @ bases["hand_pose"])
    f_hand = f_hand + noise * rng.standard_normal(FEATURE_DIM)
    f_obj = f_obj + noise * rng.standard_normal(FEATURE_DIM)
    return f_hand, f_obj, (hand_occluded, obj_occluded)


# -- scene generation ----------------------------------------------------------


def generate_scene(seed, n_classes=4, rig=None, contact_ratio=0.5,
                   image_size=IMAGE_SIZE, render=True):
    """One deterministic grasp scene."""
    if n_classes < 1:
        raise ValueError("class count must be >= 1")
    rng = np.random.default_rng(seed)
    if rig is None:
        rig = build_toy_rig(seed=0)
    class_id = int(rng.integers(1, n_classes + 1))
    scale = float(1.0 + 0.25 * rng.standard_normal())
    scale = float(np.clip(scale, 0.6, 1.5))
    obj = make_object(class_id, scale)

    theta = class_pose_prior(class_id, n_classes)
    theta = theta + 0.06 * rng.standard_normal(51)
    beta = 0.5 * rng.standard_normal(10)
    params = HandParams(theta, beta)
    verts, joints = hand_forward(Tensor(theta), Tensor(beta), rig)
    verts, joints = verts.value, joints.value

    # slide the object in along z until the measured hand-to-surface gap
    # reaches the target: near zero for contact scenes, 5 to 15 mm otherwise
    want_contact = rng.random() < contact_ratio
    target_gap = 0.0004 if want_contact else rng.uniform(0.005, 0.015)
    tips = joints[16:]
    anchor = tips.mean(axis=0)
    anchor[2] = verts[:, 2].max()
    obj_radius = np.linalg.norm(obj.vertices, axis=1).max()
    obj = obj.translated(anchor + np.array([0.0, 0.0, obj_radius + 0.02]))
    for _ in range(4):
        min_dist = float(point_triangle_distance(verts, obj).min())
        step = min_dist - target_gap
        if step <= 2e-4:
            break
        obj = obj.translated(np.array([0.0, 0.0, -0.9 * step]))
    min_dist = float(point_triangle_distance(verts, obj).min())

    samples = sample_surface(obj, N_SURFACE_SAMPLES, seed=seed + 1)
    f_hand, f_obj, _ = injected_features(theta, class_id, n_classes, scale, rng)

    image = (render_flat([Mesh(verts, rig.faces), obj], [0, 1], size=image_size)
             if render else np.zeros((image_size, image_size, 3)))
    camera = {"distance": 0.45, "focal": 85.0, "size": image_size}
    return Scene(seed=seed, class_id=class_id, n_classes=n_classes, image=image,
                 hand_params=params, hand_vertices=verts, hand_joints=joints,
                 hand_faces=rig.faces, object_mesh=obj, object_samples=samples,
                 feature_hand=f_hand, feature_obj=f_obj,
                 contact=bool(want_contact), min_distance=min_dist, camera=camera)


def scene_checksum(scene):
    h = hashlib.sha256()
    for arr in (scene.image, scene.hand_vertices, scene.hand_joints,
                scene.object_mesh.vertices, scene.object_samples,
                scene.feature_hand, scene.feature_obj):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


def make_dataset(out_dir, n, n_classes=4, seed=0, contact_ratio=0.5,
                 render=True, rig=None):
    """Write n scenes plus a manifest with ids, classes, flags and checksums."""
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    os.makedirs(out_dir, exist_ok=True)
    if rig is None:
        rig = build_toy_rig(seed=0)
    rows = []
    for i in range(n):
        scene = generate_scene(seed + i, n_classes, rig=rig,
                               contact_ratio=contact_ratio, render=render)
        sid = "scene_%05d" % i
        try:
            np.savez(os.path.join(out_dir, sid + ".npz"),
                     image=scene.image, theta=scene.hand_params.theta,
                     beta=scene.hand_params.beta,
                     hand_vertices=scene.hand_vertices,
                     hand_joints=scene.hand_joints,
                     object_vertices=scene.object_mesh.vertices,
                     object_faces=scene.object_mesh.faces,
                     object_samples=scene.object_samples,
                     feature_hand=scene.feature_hand,
                     feature_obj=scene.feature_obj,
                     class_id=scene.class_id, contact=scene.contact,
                     min_distance=scene.min_distance, seed=scene.seed)
            save_obj(os.path.join(out_dir, sid + "_object.obj"), scene.object_mesh)
            save_obj(os.path.join(out_dir, sid + "_hand.obj"), scene.hand_mesh)
        except OSError as exc:
            raise OSError("failed writing scene %s under %s: %s" % (sid, out_dir, exc))
        rows.append((sid, scene.class_id, int(scene.contact), scene_checksum(scene)))
    manifest = os.path.join(out_dir, "manifest.tsv")
    with open(manifest, "w") as fh:
        fh.write("id\tclass\tcontact\tchecksum\n")
        for row in rows:
            fh.write("%s\t%d\t%d\t%s\n" % row)
    with open(os.path.join(out_dir, "dataset.json"), "w") as fh:
        json.dump({"n": n, "n_classes": n_classes, "seed": seed,
                   "contact_ratio": contact_ratio, "rendered": bool(render)}, fh)
    return manifest


def load_dataset(data_dir):
    """Load all scenes from a dataset directory into memory."""
    meta_path = os.path.join(data_dir, "dataset.json")
    if not os.path.exists(meta_path):
        raise FileNotFoundError("no dataset at %s" % data_dir)
    with open(meta_path) as fh:
        meta = json.load(fh)
    scenes = []
    for i in range(meta["n"]):
        data = np.load(os.path.join(data_dir, "scene_%05d.npz" % i))
        scenes.append({k: data[k] for k in data.files})
    return meta, scenes
