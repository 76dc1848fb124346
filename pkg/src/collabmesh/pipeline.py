"""Collaborative dual-branch reconstruction pipeline.

Two branches (hand, object) each encode the input to a 512-D feature and
decode a mesh.  For P > 0 exchange iterations, a graph convolution over the
current hand mesh produces an embedding phi_hand that is added to the object
feature before decoding, then a convolution over the decoded object mesh
produces phi_obj that refines the hand feature.  The final losses combine
hand supervision, object Chamfer, and the associative embedding loss.
"""

from __future__ import annotations

import csv
import json
import os
import pickle
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .assoc import associative_loss
from .geometry import chamfer_distance
from .graphconv import AttentionGraphConv, StaticGraphConv
from .hand import HandRegressor, build_toy_rig, hand_forward, hand_loss
from .objdec import DecoderWeights, build_icosphere, decode_object, object_loss
from .optim import Adam

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Raised when a loss turns non-finite; a diagnostic checkpoint is saved."""


@dataclass
class PipelineConfig:
    p_iterations: int = 2
    heads: int = 3
    hidden: int = 64
    feature_dim: int = 512
    tau: float = 0.5
    tau_mode: str = "relative"
    attn_gain: float = 10.0
    operator: str = "attention"        # "attention" or "gcn"
    use_assoc: bool = True
    naive_exchange: bool = False       # exchange raw feature embeddings, no meshes
    feature_injection: bool = True     # skip image encoders, use dataset features
    image_size: int = 64
    encoder_channels: tuple = (8, 16, 32)
    batch_size: int = 8
    lr: float = 1e-4
    epochs: int = 400
    finetune_epochs: int = 100
    finetune_lr: float = 1e-5
    seed: int = 0
    hand_vertices: int = 778
    icosphere_level: int = 3
    decoder_hidden: int = 256
    n_classes: int = 4
    w_hand: float = 1.0
    w_obj: float = 1.0
    w_assoc: float = 1.0
    supervise_all_iterations: bool = False
    assoc_all_iterations: bool = False
    conv_out_scale: float = 0.01   # small initial exchange: P>0 starts near P=0

    def __post_init__(self):
        if self.p_iterations < 0:
            raise ValueError("p_iterations must be >= 0")
        if self.operator not in ("attention", "gcn"):
            raise ValueError("operator must be 'attention' or 'gcn'")
        if self.tau_mode not in ("relative", "absolute"):
            raise ValueError("tau_mode must be 'relative' or 'absolute'")

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError("unknown config keys: %s" % sorted(unknown))
        if "encoder_channels" in data:
            data = dict(data, encoder_channels=tuple(data["encoder_channels"]))
        return cls(**data)


class ConvEncoder:
    """Small strided 3x3 conv stack with global average pooling.

    No padding; each block halves the spatial size.  Patches are gathered by
    a precomputed index table so the whole forward stays inside the autodiff
    graph.
    """

    def __init__(self, seed=0, image_size=64, in_channels=3,
                 channels=(8, 16, 32), out_dim=512):
        rng = np.random.default_rng(seed)
        self.image_size = image_size
        self.plan = []        # (index_table, out_h) per block
        self.weights = []
        size, cin = image_size, in_channels
        for cout in channels:
            out = (size - 3) // 2 + 1
            if out < 1:
                raise ValueError("image too small for encoder depth")
            idx = np.empty((out * out, 9 * cin), dtype=np.int64)
            for i in range(out):
                for j in range(out):
                    k = 0
                    for di in range(3):
                        for dj in range(3):
                            base = ((2 * i + di) * size + (2 * j + dj)) * cin
                            idx[i * out + j, k:k + cin] = np.arange(base, base + cin)
                            k += cin
            w = Tensor(rng.normal(size=(9 * cin, cout)) * np.sqrt(2.0 / (9 * cin)),
                       requires_grad=True)
            b = Tensor(np.zeros(cout), requires_grad=True)
            self.plan.append((idx, out))
            self.weights.append((w, b))
            size, cin = out, cout
        self.fc_w = Tensor(rng.normal(size=(channels[-1], out_dim)) * np.sqrt(1.0 / channels[-1]),
                           requires_grad=True)
        self.fc_b = Tensor(np.zeros(out_dim), requires_grad=True)

    def parameters(self):
        out = []
        for w, b in self.weights:
            out += [w, b]
        return out + [self.fc_w, self.fc_b]

    def __call__(self, images):
        images = ad.as_tensor(images)
        if images.shape[1:] != (self.image_size, self.image_size, 3):
            raise ad.ShapeError("conv_encoder", images.shape,
                                ("B", self.image_size, self.image_size, 3))
        x = images.reshape(images.shape[0], -1)
        for (idx, out), (w, b) in zip(self.plan, self.weights):
            patches = ad.take(x, idx, axis=1)
            x = ad.relu(patches @ w + b)
            x = x.reshape(x.shape[0], -1)
        x = x.reshape(images.shape[0], out * out, w.shape[1]).mean(axis=1)
        return x @ self.fc_w + self.fc_b


class Affine:
    def __init__(self, seed, dim_in, dim_out, scale=None):
        rng = np.random.default_rng(seed)
        if scale is None:
            scale = np.sqrt(1.0 / dim_in)
        self.w = Tensor(rng.normal(size=(dim_in, dim_out)) * scale, requires_grad=True)
        self.b = Tensor(np.zeros(dim_out), requires_grad=True)

    def parameters(self):
        return [self.w, self.b]

    def __call__(self, x):
        return x @ self.w + self.b


@dataclass
class ForwardTrace:
    """All intermediates of one forward pass (last list entry is final)."""
    hand_verts: list = field(default_factory=list)     # Tensors (B,V,3)
    hand_joints: list = field(default_factory=list)
    obj_verts: list = field(default_factory=list)
    phi_hand: list = field(default_factory=list)       # Tensors (B,512)
    phi_obj: list = field(default_factory=list)
    theta: Tensor = None
    beta: Tensor = None


class CollabModel:
    """Holds all weights of both branches plus the exchange operators."""

    def __init__(self, config):
        self.config = config
        c = config
        self.rig = build_toy_rig(seed=0, n_vertices=c.hand_vertices)
        self.template = build_icosphere(c.icosphere_level)
        self.regressor = HandRegressor(seed=c.seed + 1, feature_dim=c.feature_dim)
        self.decoder = DecoderWeights(seed=c.seed + 2, latent_dim=c.feature_dim,
                                      hidden=c.decoder_hidden)
        if c.operator == "attention":
            self.conv_hand = AttentionGraphConv(seed=c.seed + 3, hidden=c.hidden,
                                                heads=c.heads, out_dim=c.feature_dim,
                                                tau=c.tau, tau_mode=c.tau_mode,
                                                out_scale=c.conv_out_scale,
                                                attn_gain=c.attn_gain)
            self.conv_obj = AttentionGraphConv(seed=c.seed + 4, hidden=c.hidden,
                                               heads=c.heads, out_dim=c.feature_dim,
                                               tau=c.tau, tau_mode=c.tau_mode,
                                               out_scale=c.conv_out_scale,
                                               attn_gain=c.attn_gain)
        else:
            self.conv_hand = StaticGraphConv(self.rig.faces, c.hand_vertices,
                                             seed=c.seed + 3, hidden=c.hidden,
                                             out_dim=c.feature_dim,
                                             out_scale=c.conv_out_scale)
            self.conv_obj = StaticGraphConv(self.template.faces,
                                            len(self.template.vertices),
                                            seed=c.seed + 4, hidden=c.hidden,
                                            out_dim=c.feature_dim,
                                            out_scale=c.conv_out_scale)
        self.naive_hand = Affine(c.seed + 5, c.feature_dim, c.feature_dim, scale=1e-3)
        self.naive_obj = Affine(c.seed + 6, c.feature_dim, c.feature_dim, scale=1e-3)
        if c.feature_injection:
            self.enc_hand = None
            self.enc_obj = None
        else:
            self.enc_hand = ConvEncoder(seed=c.seed + 7, image_size=c.image_size,
                                        channels=c.encoder_channels,
                                        out_dim=c.feature_dim)
            self.enc_obj = ConvEncoder(seed=c.seed + 8, image_size=c.image_size,
                                       channels=c.encoder_channels,
                                       out_dim=c.feature_dim)

    def named_parameters(self):
        groups = [("regressor", self.regressor), ("decoder", self.decoder),
                  ("conv_hand", self.conv_hand), ("conv_obj", self.conv_obj)]
        if self.config.naive_exchange:
            groups += [("naive_hand", self.naive_hand), ("naive_obj", self.naive_obj)]
        if self.enc_hand is not None:
            groups += [("enc_hand", self.enc_hand), ("enc_obj", self.enc_obj)]
        out = []
        for name, mod in groups:
            for i, p in enumerate(mod.parameters()):
                out.append(("%s.%d" % (name, i), p))
        return out

    def parameters(self, include_encoders=True):
        params = []
        for name, p in self.named_parameters():
            if not include_encoders and name.startswith("enc_"):
                continue
            params.append(p)
        return params

    def encode(self, batch):
        """Branch features (B,512): either injected or from the image encoders."""
        if self.config.feature_injection:
            return Tensor(batch["feature_hand"]), Tensor(batch["feature_obj"])
        images = Tensor(batch["image"])
        return self.enc_hand(images), self.enc_obj(images)

    def _hand_mesh(self, feature):
        theta, beta = self.regressor(feature)
        verts, joints = hand_forward(theta, beta, self.rig)
        return theta, beta, verts, joints

    def forward(self, batch):
        """Run the collaborative pass; returns a ForwardTrace."""
        c = self.config
        trace = ForwardTrace()
        r_hand, r_obj_base = self.encode(batch)
        b = r_hand.shape[0]
        theta, beta, verts, joints = self._hand_mesh(r_hand)
        trace.hand_verts.append(verts)
        trace.hand_joints.append(joints)

        if c.p_iterations == 0:
            obj = decode_object(r_obj_base, self.template, self.decoder)
            trace.obj_verts.append(obj)
            trace.theta, trace.beta = theta, beta
            return trace

        if c.naive_exchange:
            r_hand_cur = r_hand
            for _ in range(c.p_iterations):
                phi_hand = self.naive_hand(r_hand_cur)
                r_obj = r_obj_base + phi_hand
                phi_obj = self.naive_obj(r_obj)
                r_hand_cur = r_hand + phi_obj
                trace.phi_hand.append(phi_hand)
                trace.phi_obj.append(phi_obj)
            theta, beta, verts, joints = self._hand_mesh(r_hand_cur)
            obj = decode_object(r_obj, self.template, self.decoder)
            trace.hand_verts.append(verts)
            trace.hand_joints.append(joints)
            trace.obj_verts.append(obj)
            trace.theta, trace.beta = theta, beta
            return trace

        h_hand = self.conv_hand.init_history(self.rig.n_vertices, batch=b)
        h_obj = self.conv_obj.init_history(len(self.template.vertices), batch=b)
        for _ in range(c.p_iterations):
            h_hand, phi_hand = self.conv_hand.forward(verts, h_hand)
            r_obj = r_obj_base + phi_hand
            obj = decode_object(r_obj, self.template, self.decoder)
            h_obj, phi_obj = self.conv_obj.forward(obj, h_obj)
            r_hand_ref = r_hand + phi_obj
            theta, beta, verts, joints = self._hand_mesh(r_hand_ref)
            trace.phi_hand.append(phi_hand)
            trace.phi_obj.append(phi_obj)
            trace.hand_verts.append(verts)
            trace.hand_joints.append(joints)
            trace.obj_verts.append(obj)
        trace.theta, trace.beta = theta, beta
        return trace


def batch_arrays(scenes, indices):
    """Stack per-scene arrays for the given indices into a batch dict."""
    pick = [scenes[i] for i in indices]
    return {
        "image": np.stack([s["image"] for s in pick]),
        "feature_hand": np.stack([s["feature_hand"] for s in pick]),
        "feature_obj": np.stack([s["feature_obj"] for s in pick]),
        "hand_vertices": np.stack([s["hand_vertices"] for s in pick]),
        "hand_joints": np.stack([s["hand_joints"] for s in pick]),
        "object_samples": np.stack([s["object_samples"] for s in pick]),
        "class_id": np.array([int(s["class_id"]) for s in pick]),
    }


def total_loss(trace, batch, config):
    """Weighted sum of hand, object, and associative losses (per-sample mean).

    Supervision applies to the final iteration's outputs unless
    supervise_all_iterations is set; the associative term uses the final
    phi pair unless assoc_all_iterations is set.
    """
    b = len(batch["class_id"])
    gt_j = Tensor(batch["hand_joints"])
    gt_v = Tensor(batch["hand_vertices"])
    gt_s = batch["object_samples"]

    def hand_term(k):
        return hand_loss(trace.hand_verts[k], trace.hand_joints[k], gt_v, gt_j)

    def obj_term(k):
        return object_loss(trace.obj_verts[k], gt_s)

    if config.supervise_all_iterations:
        idx = range(len(trace.hand_verts))
        l_hand = sum(hand_term(k) for k in idx) * (1.0 / len(trace.hand_verts))
        oidx = range(len(trace.obj_verts))
        l_obj = sum(obj_term(k) for k in oidx) * (1.0 / len(trace.obj_verts))
    else:
        l_hand = hand_term(-1)
        l_obj = obj_term(-1)
    l_hand = l_hand * (1.0 / b)
    l_obj = l_obj * (1.0 / b)

    n_distinct = len(set(int(c) for c in batch["class_id"]))
    use_assoc = config.use_assoc and trace.phi_hand and b >= 2
    if use_assoc:
        if config.assoc_all_iterations:
            terms = [associative_loss(ph, po, n_distinct)
                     for ph, po in zip(trace.phi_hand, trace.phi_obj)]
            l_assoc = sum(terms) * (1.0 / len(terms))
        else:
            l_assoc = associative_loss(trace.phi_hand[-1], trace.phi_obj[-1], n_distinct)
    else:
        l_assoc = Tensor(np.zeros(()))
    total = config.w_hand * l_hand + config.w_obj * l_obj + config.w_assoc * l_assoc
    return total, {"l_hand": float(l_hand.value), "l_obj": float(l_obj.value),
                   "l_assoc": float(l_assoc.value)}


def batch_metrics(trace, batch):
    """Reporting metrics: root-relative hand EPE in mm, object Chamfer."""
    pj = trace.hand_joints[-1].value
    gj = batch["hand_joints"]
    pj = pj - pj[:, 0:1]
    gj = gj - gj[:, 0:1]
    epe_mm = float(np.linalg.norm(pj - gj, axis=-1).mean() * 1000.0)
    ov = trace.obj_verts[-1].value
    gs = batch["object_samples"]
    chamfer = float(np.mean([chamfer_distance(ov[i], gs[i]) for i in range(len(ov))]))
    return epe_mm, chamfer


def evaluate(model, scenes, batch_size=None):
    """Mean hand EPE (mm) and object Chamfer over a scene list."""
    bsz = batch_size or model.config.batch_size
    bsz = min(bsz, len(scenes))
    epes, chams, counts = [], [], []
    for lo in range(0, len(scenes), bsz):
        idx = list(range(lo, min(lo + bsz, len(scenes))))
        batch = batch_arrays(scenes, idx)
        trace = model.forward(batch)
        epe, cham = batch_metrics(trace, batch)
        epes.append(epe)
        chams.append(cham)
        counts.append(len(idx))
    w = np.array(counts, dtype=float)
    w /= w.sum()
    return {"hand_epe_mm": float(np.dot(epes, w)),
            "object_chamfer": float(np.dot(chams, w))}


# -- checkpointing -------------------------------------------------------------


def save_checkpoint(path, model, optimizer=None, epoch=0, rng=None,
                    loss_history=None):
    """Single versioned file: config, all weights, optimizer and RNG state."""
    names = [n for n, _ in model.named_parameters()]
    values = {n: p.value for n, p in model.named_parameters()}
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "epoch": epoch,
        "param_names": names,
        "params": values,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "rng_state": rng.bit_generator.state if rng is not None else None,
        "loss_history": loss_history or [],
    }
    with open(path, "wb") as fh:
        pickle.dump(payload, fh)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError("unsupported checkpoint version: %r" % payload.get("version"))
    config = PipelineConfig.from_dict(payload["config"])
    model = CollabModel(config)
    names = [n for n, _ in model.named_parameters()]
    if names != payload["param_names"]:
        raise ValueError("checkpoint parameter list does not match model")
    for name, p in model.named_parameters():
        p.value = np.array(payload["params"][name])
    return model, payload


# -- training ------------------------------------------------------------------


def _write_loss_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "l_hand", "l_obj", "l_assoc",
                         "hand_epe_mm", "object_chamfer"])
        for row in rows:
            writer.writerow(row)


def train(scenes, config, out_dir, resume=None, checkpoint_every=0,
          log=print, max_seconds=None):
    """Two-phase training loop; writes loss.csv and checkpoint.pkl in out_dir.

    Phase one trains everything at config.lr; phase two freezes the image
    encoders and drops to config.finetune_lr.  With identical seeds, data,
    and config, the produced loss.csv is bit-identical across runs, and a
    resumed run reproduces the uninterrupted one.
    """
    os.makedirs(out_dir, exist_ok=True)
    total_epochs = config.epochs + config.finetune_epochs
    if resume is not None:
        model, payload = load_checkpoint(resume)
        start_epoch = payload["epoch"]
        history = list(payload["loss_history"])
        rng = np.random.default_rng(config.seed)
        if payload["rng_state"] is not None:
            rng.bit_generator.state = payload["rng_state"]
        # the saved optimizer is the fine-tune one only once an epoch past the
        # phase boundary has completed; at the exact boundary a fresh phase-2
        # optimizer gets created below, matching the uninterrupted run
        phase2 = start_epoch > config.epochs
        optimizer = Adam(model.parameters(include_encoders=not phase2),
                         lr=config.finetune_lr if phase2 else config.lr)
        if payload["optimizer"] is not None and start_epoch != config.epochs:
            optimizer.load_state_dict(payload["optimizer"])
    else:
        model = CollabModel(config)
        rng = np.random.default_rng(config.seed)
        optimizer = Adam(model.parameters(), lr=config.lr)
        start_epoch, history = 0, []

    n = len(scenes)
    bsz = min(config.batch_size, n)
    ckpt_path = os.path.join(out_dir, "checkpoint.pkl")
    csv_path = os.path.join(out_dir, "loss.csv")
    started = time.time()

    completed = start_epoch
    for epoch in range(start_epoch, total_epochs):
        if epoch == config.epochs:
            # phase switch: freeze encoders, reduce the learning rate
            optimizer = Adam(model.parameters(include_encoders=False),
                             lr=config.finetune_lr)
        order = rng.permutation(n)
        sums = np.zeros(3)
        epes, chams = [], []
        n_batches = 0
        starts = list(range(0, n - bsz + 1, bsz))
        for lo in starts:
            batch = batch_arrays(scenes, order[lo:lo + bsz])
            trace = model.forward(batch)
            loss, parts = total_loss(trace, batch, config)
            if not np.isfinite(loss.value):
                save_checkpoint(os.path.join(out_dir, "diverged.pkl"), model,
                                optimizer, epoch, rng, history)
                raise TrainingDiverged(
                    "non-finite loss at epoch %d (l_hand=%r l_obj=%r l_assoc=%r);"
                    " diagnostic checkpoint written" % (
                        epoch, parts["l_hand"], parts["l_obj"], parts["l_assoc"]))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            sums += [parts["l_hand"], parts["l_obj"], parts["l_assoc"]]
            if lo == starts[-1]:
                # reporting metrics on the last batch only; losses cover all
                epe, cham = batch_metrics(trace, batch)
                epes.append(epe)
                chams.append(cham)
            n_batches += 1
        row = [epoch, sums[0] / n_batches, sums[1] / n_batches,
               sums[2] / n_batches, float(np.mean(epes)), float(np.mean(chams))]
        history.append(row)
        completed = epoch + 1
        if log is not None and (epoch % 20 == 0 or epoch == total_epochs - 1):
            log("epoch %d  hand %.5f  obj %.5f  assoc %.5f  epe %.2fmm"
                % (epoch, row[1], row[2], row[3], row[4]))
        if checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            save_checkpoint(ckpt_path, model, optimizer, epoch + 1, rng, history)
            _write_loss_csv(csv_path, history)
        if max_seconds is not None and time.time() - started > max_seconds:
            break
    save_checkpoint(ckpt_path, model, optimizer, completed, rng, history)
    _write_loss_csv(csv_path, history)
    return model, history
