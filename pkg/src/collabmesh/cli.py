"""Command-line harness: data generation, training, evaluation, ablations,
and gradient checking.

Exit codes: 0 success, 1 validation error, 2 runtime failure, 3 gradient or
acceptance check failure.  Every run writes its resolved configuration next
to its outputs; given identical flags and seeds all commands are
deterministic.  The COLLABMESH_OUT_ROOT environment variable, when set,
anchors relative output directories.
"""

from __future__ import annotations

import csv
import json
import multiprocessing
import os
import sys
from dataclasses import asdict

import click
import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from . import synth
from .geometry import (GeometryError, Mesh, chamfer_distance, chamfer_distance_mean,
                       close_boundaries, intersection_volume, penetration_depth,
                       pose_metrics, save_obj)
from .hand import build_toy_rig, hand_forward
from .objdec import build_icosphere, decode_object, DecoderWeights
from .pipeline import (CollabModel, PipelineConfig, TrainingDiverged,
                       batch_arrays, load_checkpoint, total_loss, train)

EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_CHECK_FAILED = 3

PCK_THRESHOLDS_MM = np.arange(0.0, 51.0, 1.0)

EVAL_COLUMNS = ["scenes", "hand_epe_mm", "pck_20mm", "pck_25mm", "auc_0_50mm",
                "f_score_5mm", "f_score_15mm", "object_chamfer_mm2_sum",
                "object_chamfer_mm2_mean", "max_penetration_mm",
                "mean_intersection_cm3"]


class GradcheckFailure(Exception):
    pass


def _resolve_out(path):
    root = os.environ.get("COLLABMESH_OUT_ROOT")
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _write_resolved_config(out_dir, payload):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)


@click.group()
def cli():
    """Collaborative hand-object mesh reconstruction toolkit."""


# -- gen-data ------------------------------------------------------------------


def _gen_one(args):
    i, out_dir, seed, n_classes, contact_ratio, render, n_verts = args
    rig = build_toy_rig(seed=0, n_vertices=n_verts)
    scene = synth.generate_scene(seed + i, n_classes, rig=rig,
                                 contact_ratio=contact_ratio, render=render)
    sid = "scene_%05d" % i
    np.savez(os.path.join(out_dir, sid + ".npz"),
             image=scene.image, theta=scene.hand_params.theta,
             beta=scene.hand_params.beta, hand_vertices=scene.hand_vertices,
             hand_joints=scene.hand_joints,
             object_vertices=scene.object_mesh.vertices,
             object_faces=scene.object_mesh.faces,
             object_samples=scene.object_samples,
             feature_hand=scene.feature_hand, feature_obj=scene.feature_obj,
             class_id=scene.class_id, contact=scene.contact,
             min_distance=scene.min_distance, seed=scene.seed)
    save_obj(os.path.join(out_dir, sid + "_object.obj"), scene.object_mesh)
    save_obj(os.path.join(out_dir, sid + "_hand.obj"), scene.hand_mesh)
    return (sid, scene.class_id, int(scene.contact), synth.scene_checksum(scene))


@cli.command("gen-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--n", default=100, show_default=True)
@click.option("--classes", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--contact-ratio", default=0.5, show_default=True)
@click.option("--hand-vertices", default=778, show_default=True)
@click.option("--render/--no-render", default=True, show_default=True)
@click.option("--jobs", default=1, show_default=True)
def cmd_gen_data(out_dir, n, classes, seed, contact_ratio, hand_vertices,
                 render, jobs):
    """Generate a deterministic synthetic grasp dataset."""
    if classes < 1:
        raise click.UsageError("--classes must be >= 1")
    if n < 1:
        raise click.UsageError("--n must be >= 1")
    if not 0.0 <= contact_ratio <= 1.0:
        raise click.UsageError("--contact-ratio must lie in [0, 1]")
    out_dir = _resolve_out(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    work = [(i, out_dir, seed, classes, contact_ratio, render, hand_vertices)
            for i in range(n)]
    if jobs > 1:
        with multiprocessing.Pool(jobs) as pool:
            rows = pool.map(_gen_one, work)
    else:
        rows = [_gen_one(w) for w in work]
    with open(os.path.join(out_dir, "manifest.tsv"), "w") as fh:
        fh.write("id\tclass\tcontact\tchecksum\n")
        for row in rows:
            fh.write("%s\t%d\t%d\t%s\n" % row)
    with open(os.path.join(out_dir, "dataset.json"), "w") as fh:
        json.dump({"n": n, "n_classes": classes, "seed": seed,
                   "contact_ratio": contact_ratio, "rendered": bool(render),
                   "hand_vertices": hand_vertices}, fh)
    _write_resolved_config(out_dir, {
        "command": "gen-data", "n": n, "classes": classes, "seed": seed,
        "contact_ratio": contact_ratio, "hand_vertices": hand_vertices,
        "render": render, "out": out_dir})
    click.echo("wrote %d scenes to %s" % (n, out_dir))


# -- train ---------------------------------------------------------------------


def _load_scenes(data_dir):
    if not os.path.exists(os.path.join(data_dir, "dataset.json")):
        raise click.UsageError("no dataset found at %s (missing dataset.json)" % data_dir)
    return synth.load_dataset(data_dir)


def _build_config(config_path, overrides):
    base = {}
    if config_path:
        with open(config_path) as fh:
            base = json.load(fh)
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return PipelineConfig.from_dict(base)
    except (ValueError, TypeError) as exc:
        raise click.UsageError(str(exc))


@cli.command("train")
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--p", "p_iterations", type=int, default=None,
              help="collaboration iterations (0 = baseline)")
@click.option("--assoc/--no-assoc", "use_assoc", default=None)
@click.option("--operator", type=click.Choice(["attention", "gcn"]), default=None)
@click.option("--naive/--no-naive", "naive_exchange", default=None,
              help="exchange raw embeddings, decode meshes only at the end")
@click.option("--epochs", type=int, default=None)
@click.option("--finetune-epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--feature-injection/--images", "feature_injection", default=None)
@click.option("--resume", default=None, type=click.Path(exists=True))
@click.option("--checkpoint-every", default=0, show_default=True)
@click.option("--quiet", is_flag=True)
def cmd_train(data_dir, out_dir, config_path, resume, checkpoint_every, quiet,
              **overrides):
    """Train the collaborative pipeline on a generated dataset."""
    data_dir = _resolve_out(data_dir)
    out_dir = _resolve_out(out_dir)
    meta, scenes = _load_scenes(data_dir)
    overrides.setdefault("hand_vertices", None)
    if overrides.get("hand_vertices") is None:
        overrides["hand_vertices"] = meta.get("hand_vertices", 778)
    if overrides.get("n_classes") is None:
        overrides["n_classes"] = meta.get("n_classes", 4)
    config = _build_config(config_path, overrides)
    _write_resolved_config(out_dir, {
        "command": "train", "data": data_dir, "out": out_dir,
        "resume": resume, "checkpoint_every": checkpoint_every,
        "pipeline": asdict(config)})
    log = None if quiet else click.echo
    model, history = train(scenes, config, out_dir, resume=resume,
                           checkpoint_every=checkpoint_every, log=log)
    from .plots import plot_loss_curves
    plot_loss_curves(os.path.join(out_dir, "loss.csv"),
                     os.path.join(out_dir, "loss_curves.png"))
    click.echo("checkpoint and loss.csv written to %s" % out_dir)


# -- eval ----------------------------------------------------------------------


def _scene_chamfer(args):
    pv, gs = args
    return chamfer_distance(pv, gs), chamfer_distance_mean(pv, gs)


def evaluate_predictions(pred_joints, pred_verts, pred_objects, scenes,
                         faces, max_interaction=16, jobs=1):
    """Aggregate evaluation metrics from per-scene predictions.

    pred_joints/pred_verts: lists of (21,3)/(V,3) arrays, root-aligned to the
    ground truth before pooling; pred_objects: list of Mesh.
    """
    pj, gj = [], []
    for p, scene in zip(pred_joints, scenes):
        g = scene["hand_joints"]
        pj.append(p - p[0] + g[0])
        gj.append(g)
    pooled = pose_metrics(np.concatenate(pj), np.concatenate(gj),
                          PCK_THRESHOLDS_MM)
    work = [(mesh.vertices * 1000.0, scene["object_samples"] * 1000.0)
            for mesh, scene in zip(pred_objects, scenes)]
    if jobs > 1:
        with multiprocessing.Pool(jobs) as pool:
            pairs = pool.map(_scene_chamfer, work)
    else:
        pairs = [_scene_chamfer(w) for w in work]
    cham_sum = [p[0] for p in pairs]
    cham_mean = [p[1] for p in pairs]
    max_pen = 0.0
    inter = []
    for k in range(min(max_interaction, len(scenes))):
        hand = Mesh(pred_verts[k] - pred_joints[k][0] + scenes[k]["hand_joints"][0],
                    faces)
        obj = pred_objects[k]
        try:
            max_pen = max(max_pen, penetration_depth(hand, obj) * 1000.0)
            inter.append(intersection_volume(close_boundaries(hand), obj,
                                             voxel_size=0.005))
        except GeometryError:
            # degenerate predictions (for example an untrained decoder) can
            # exceed the voxel budget; skip the scene rather than fail eval
            continue
    return {
        "scenes": len(scenes),
        "hand_epe_mm": pooled["mean_epe_mm"],
        "pck_20mm": float(pooled["pck"][20]),
        "pck_25mm": float(pooled["pck"][25]),
        "auc_0_50mm": pooled["auc"],
        "f_score_5mm": pooled["f_score"][5.0],
        "f_score_15mm": pooled["f_score"][15.0],
        "object_chamfer_mm2_sum": float(np.mean(cham_sum)),
        "object_chamfer_mm2_mean": float(np.mean(cham_mean)),
        "max_penetration_mm": max_pen,
        "mean_intersection_cm3": float(np.mean(inter)) if inter else 0.0,
        "pck_curve": pooled["pck"],
    }


def _predict(model, scenes):
    joints, verts, objects = [], [], []
    bsz = model.config.batch_size
    for lo in range(0, len(scenes), bsz):
        batch = batch_arrays(scenes, range(lo, min(lo + bsz, len(scenes))))
        trace = model.forward(batch)
        j = trace.hand_joints[-1].value
        v = trace.hand_verts[-1].value
        o = trace.obj_verts[-1].value
        for k in range(len(j)):
            joints.append(j[k])
            verts.append(v[k])
            objects.append(Mesh(o[k], model.template.faces))
    return joints, verts, objects


@cli.command("eval")
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--export-meshes", is_flag=True)
@click.option("--max-interaction-scenes", default=16, show_default=True,
              help="cap on scenes used for voxel interaction metrics")
@click.option("--jobs", default=1, show_default=True)
def cmd_eval(ckpt_path, data_dir, out_dir, export_meshes,
             max_interaction_scenes, jobs):
    """Evaluate a checkpoint: pose, shape, and interaction metrics."""
    data_dir = _resolve_out(data_dir)
    out_dir = _resolve_out(out_dir)
    meta, scenes = _load_scenes(data_dir)
    model, payload = load_checkpoint(ckpt_path)
    if model.config.hand_vertices != meta.get("hand_vertices", 778):
        raise click.UsageError(
            "checkpoint hand rig (%d vertices) does not match dataset (%d)"
            % (model.config.hand_vertices, meta.get("hand_vertices", 778)))
    _write_resolved_config(out_dir, {
        "command": "eval", "checkpoint": ckpt_path, "data": data_dir,
        "out": out_dir, "pipeline": asdict(model.config)})
    joints, verts, objects = _predict(model, scenes)
    report = evaluate_predictions(joints, verts, objects, scenes,
                                  model.rig.faces,
                                  max_interaction=max_interaction_scenes,
                                  jobs=jobs)
    pck_curve = report.pop("pck_curve")
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EVAL_COLUMNS)
        writer.writeheader()
        writer.writerow({k: report[k] for k in EVAL_COLUMNS})
    with open(os.path.join(out_dir, "pck_curve.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold_mm", "pck"])
        for t, p in zip(PCK_THRESHOLDS_MM, pck_curve):
            writer.writerow([t, p])
    from .plots import plot_pck_curve
    plot_pck_curve(PCK_THRESHOLDS_MM, pck_curve,
                   os.path.join(out_dir, "pck_curve.png"),
                   auc=report["auc_0_50mm"])
    lines = ["%-26s %s" % (k, report[k]) for k in EVAL_COLUMNS]
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    if export_meshes:
        mesh_dir = os.path.join(out_dir, "meshes")
        os.makedirs(mesh_dir, exist_ok=True)
        for i, (v, o) in enumerate(zip(verts, objects)):
            save_obj(os.path.join(mesh_dir, "pred_hand_%05d.obj" % i),
                     Mesh(v, model.rig.faces))
            save_obj(os.path.join(mesh_dir, "pred_object_%05d.obj" % i), o)
    click.echo("\n".join(lines))


# -- ablate --------------------------------------------------------------------


ABLATE_COLUMNS = ["label", "operator", "p", "assoc", "naive", "seed", "status",
                  "hand_epe_mm", "object_chamfer"]


@cli.command("ablate")
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--p-values", default="0,1,2", show_default=True)
@click.option("--operators", default="attention,gcn", show_default=True)
@click.option("--assoc-modes", default="on,off", show_default=True)
@click.option("--seeds", default="0", show_default=True)
@click.option("--include-naive", is_flag=True,
              help="add the final-stage-decoding variant to the sweep")
@click.option("--epochs", type=int, default=None)
@click.option("--finetune-epochs", type=int, default=None)
@click.option("--quiet", is_flag=True)
def cmd_ablate(data_dir, out_dir, config_path, p_values, operators,
               assoc_modes, seeds, include_naive, epochs, finetune_epochs,
               quiet):
    """Sweep P x operator x associative-loss; emit a table CSV and figure."""
    data_dir = _resolve_out(data_dir)
    out_dir = _resolve_out(out_dir)
    meta, scenes = _load_scenes(data_dir)
    try:
        ps = [int(x) for x in p_values.split(",")]
        ops = [x.strip() for x in operators.split(",")]
        assocs = [x.strip() == "on" for x in assoc_modes.split(",")]
        seed_list = [int(x) for x in seeds.split(",")]
    except ValueError as exc:
        raise click.UsageError("bad sweep grid: %s" % exc)
    overrides = {"epochs": epochs, "finetune_epochs": finetune_epochs,
                 "hand_vertices": meta.get("hand_vertices", 778),
                 "n_classes": meta.get("n_classes", 4)}
    base = _build_config(config_path, overrides)
    _write_resolved_config(out_dir, {
        "command": "ablate", "data": data_dir, "out": out_dir,
        "p_values": ps, "operators": ops, "assoc_modes": assocs,
        "seeds": seed_list, "include_naive": include_naive,
        "pipeline": asdict(base)})

    combos = []
    for op in ops:
        for p in ps:
            for assoc in assocs:
                if p == 0 and (assoc or op != ops[0]):
                    continue        # P=0 has no exchange: one baseline row
                combos.append((op, p, assoc, False))
    if include_naive:
        combos.append((ops[0], max(ps), True, True))
    rows = []
    from dataclasses import replace
    from .pipeline import evaluate
    for op, p, assoc, naive in combos:
        for seed in seed_list:
            label = "%s_p%d_%s%s_s%d" % (op, p, "assoc" if assoc else "noassoc",
                                         "_naive" if naive else "", seed)
            cfg = replace(base, operator=op, p_iterations=p, use_assoc=assoc,
                          naive_exchange=naive, seed=seed)
            run_dir = os.path.join(out_dir, label)
            row = {"label": label, "operator": op, "p": p,
                   "assoc": int(assoc), "naive": int(naive), "seed": seed}
            try:
                model, _ = train(scenes, cfg, run_dir, log=None)
                res = evaluate(model, scenes)
                row.update(status="ok", hand_epe_mm=res["hand_epe_mm"],
                           object_chamfer=res["object_chamfer"])
            except (TrainingDiverged, RuntimeError, ValueError) as exc:
                row.update(status="failed: %s" % exc, hand_epe_mm="",
                           object_chamfer="")
            rows.append(row)
            if not quiet:
                click.echo("%s -> %s" % (label, row["status"]))
    with open(os.path.join(out_dir, "ablation.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    from .plots import plot_ablation
    ok_rows = [r for r in rows if r["status"] == "ok"]
    if ok_rows:
        plot_ablation(rows, os.path.join(out_dir, "ablation.png"))
    click.echo("ablation table written to %s" % os.path.join(out_dir, "ablation.csv"))


# -- gradcheck -----------------------------------------------------------------


def _gradcheck_suite(rng):
    """(name, callable) pairs; each callable returns the max relative error."""
    from .graphconv import AttentionGraphConv
    from .hand import HandRegressor

    def primitive(op, shape, **kw):
        def run():
            x = rng.standard_normal(shape)
            return ad.finite_difference_check(lambda t: op(t, **kw) if kw else op(t),
                                              x)
        return run

    def hand_check():
        rig = build_toy_rig(seed=0, n_vertices=64)
        theta = 0.3 * rng.standard_normal(51)
        return ad.finite_difference_check(
            lambda t: hand_forward(t, Tensor(np.zeros(10)), rig)[0].sum(), theta)

    def decoder_check():
        template = build_icosphere(0)
        weights = DecoderWeights(seed=1, latent_dim=16, hidden=8)
        lat = rng.standard_normal(16)
        return ad.finite_difference_check(
            lambda t: decode_object(t, template, weights).sum(), lat)

    def agc_check():
        conv = AttentionGraphConv(seed=2, hidden=4, heads=2, out_dim=8,
                                  tau=0.5, attn_gain=4.0)
        v = rng.standard_normal((5, 3))
        h0 = conv.init_history(5)
        return ad.finite_difference_check(
            lambda t: conv.forward(t, h0)[1].sum(), v)

    def assoc_check():
        from .assoc import associative_loss
        phi = rng.standard_normal((4, 6))
        phi2 = rng.standard_normal((4, 6))
        return ad.finite_difference_check(
            lambda t: associative_loss(t, Tensor(phi2), 2), phi)

    def encoder_check():
        from .pipeline import ConvEncoder
        enc = ConvEncoder(seed=3, image_size=8, channels=(2,), out_dim=4)
        img = rng.standard_normal((2, 8, 8, 3))
        return ad.finite_difference_check(lambda t: enc(t).sum(), img)

    def regressor_check():
        reg = HandRegressor(seed=4, feature_dim=16)
        f = rng.standard_normal((2, 16))
        return ad.finite_difference_check(
            lambda t: (reg(t)[0].sum() + reg(t)[1].sum()), f)

    return [
        ("exp", primitive(lambda t: ad.exp(t).sum(), (4, 3))),
        ("log_offset", primitive(lambda t: ad.log(ad.exp(t) + 1.0).sum(), (4, 3))),
        ("tanh", primitive(lambda t: ad.tanh(t).sum(), (4, 3))),
        ("softmax", primitive(lambda t: ad.softmax(t, axis=-1).sum(), (4, 5))),
        ("layer_norm", primitive(lambda t: ad.layer_norm(t).sum(), (4, 6))),
        ("matmul", primitive(lambda t: (t @ t.T).sum(), (4, 4))),
        ("sinc_sqrt", primitive(lambda t: ad.sinc_sqrt(ad.square(t)).sum(), (3,))),
        ("hand_forward", hand_check),
        ("decode_object", decoder_check),
        ("agc_forward", agc_check),
        ("associative_loss", assoc_check),
        ("conv_encoder", encoder_check),
        ("hand_regressor", regressor_check),
    ]


def total_loss_gradcheck(seed=0):
    """End-to-end total_loss gradient vs finite differences on a micro config."""
    rng = np.random.default_rng(seed)
    cfg = PipelineConfig(p_iterations=1, hand_vertices=64, icosphere_level=0,
                         hidden=4, heads=2, decoder_hidden=8, batch_size=2,
                         feature_injection=True, seed=seed)
    model = CollabModel(cfg)
    rig = build_toy_rig(0, 64)
    sc = [synth.generate_scene(i, 2, render=False, rig=rig) for i in range(2)]
    batch = {
        "feature_hand": np.stack([s.feature_hand for s in sc]),
        "feature_obj": np.stack([s.feature_obj for s in sc]),
        "hand_vertices": np.stack([s.hand_vertices for s in sc]),
        "hand_joints": np.stack([s.hand_joints for s in sc]),
        "object_samples": np.stack([s.object_samples[:40] for s in sc]),
        "class_id": np.array([s.class_id for s in sc]),
    }
    probe = model.conv_obj.proj
    point = probe.value.copy()

    def loss_at(x):
        probe.value = x
        trace = model.forward(batch)
        loss, _ = total_loss(trace, batch, cfg)
        return loss

    base = loss_at(point)
    for p in model.parameters():
        p.grad = None
    base.backward()
    grad = probe.grad.copy()
    eps = 1e-6
    num = np.zeros_like(point)
    flat = point.reshape(-1)
    nflat = num.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = loss_at(point).value
        flat[i] = orig - eps
        lo = loss_at(point).value
        flat[i] = orig
        nflat[i] = (hi - lo) / (2 * eps)
    probe.value = point
    denom = max(1.0, np.abs(num).max())
    return float(np.abs(grad - num).max() / denom)


@cli.command("gradcheck")
@click.option("--seed", default=0, show_default=True)
@click.option("--tolerance", default=1e-5, show_default=True)
@click.option("--inject-fault", is_flag=True, hidden=True,
              help="corrupt one backward rule to prove the check detects it")
def cmd_gradcheck(seed, tolerance, inject_fault):
    """Finite-difference checks over every differentiable component."""
    rng = np.random.default_rng(seed)
    if inject_fault:
        orig = ad.tanh

        def bad_tanh(t):
            t = ad.as_tensor(t)
            value = np.tanh(t.value)

            def bw(g):
                t._accum(g)          # wrong: drops the 1 - tanh^2 factor
            return Tensor._make(value, (t,), bw)
        ad.tanh = bad_tanh
    failed = False
    try:
        for name, check in _gradcheck_suite(rng):
            err = check()
            ok = err < tolerance
            failed = failed or not ok
            click.echo("%-18s %.3e  %s" % (name, err, "PASS" if ok else "FAIL"))
        err = total_loss_gradcheck(seed)
        ok = err < 1e-4
        failed = failed or not ok
        click.echo("%-18s %.3e  %s" % ("total_loss", err, "PASS" if ok else "FAIL"))
    finally:
        if inject_fault:
            ad.tanh = orig
    if failed:
        raise GradcheckFailure("one or more gradient checks failed")
    click.echo("all gradient checks passed")


def main():
    try:
        cli.main(standalone_mode=False)
    except click.UsageError as exc:
        click.echo("error: %s" % exc.format_message(), err=True)
        sys.exit(EXIT_VALIDATION)
    except click.ClickException as exc:
        exc.show()
        sys.exit(EXIT_VALIDATION)
    except click.exceptions.Abort:
        sys.exit(EXIT_RUNTIME)
    except GradcheckFailure as exc:
        click.echo("error: %s" % exc, err=True)
        sys.exit(EXIT_CHECK_FAILED)
    except (ValueError, ad.ShapeError) as exc:
        click.echo("error: %s" % exc, err=True)
        sys.exit(EXIT_VALIDATION)
    except Exception as exc:
        click.echo("runtime failure: %s" % exc, err=True)
        sys.exit(EXIT_RUNTIME)
    sys.exit(0)


if __name__ == "__main__":
    main()
