"""Command-line interface: ``hotrack synth|track|eval|bench``.

Exit codes: 0 success, 2 bad usage or configuration, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import functools
import hashlib
import json
import logging
import math
import os
import subprocess
import sys
import time

import numpy as np

from . import __version__, metrics, sdf as sdf_mod, synth
from .errors import (
    ConfigError, CorruptFile, EmptyCloud, LengthMismatch, MissingInitialization, SequenceIOError,
)
from .geometry import HAND, OBJECT, RigidTransform, back_project, kabsch_align
from .hand.model import BASE_JOINTS, HandModel, HandPose, HandShape
from .hand.tracker import HandTracker, init_state, visibility
from .object_tracker import ObjectTracker
from .refine import RefineContext, SilhouetteMask, e_penetr, refine_hand
from .shapes import PRIMITIVE_SYMMETRY

log = logging.getLogger("hotrack")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3
_DATA_ERRORS = (SequenceIOError, CorruptFile, LengthMismatch, MissingInitialization, EmptyCloud)


class UsageError(Exception):
    pass


@functools.lru_cache(maxsize=1)
def version_string():
    """``git describe`` of the source checkout when available, else the package version."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path, obj):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- synth -----------------------------------------------------------------

def sequence_plan(cfg):
    """``[(name, seed, object, grasp)]`` for the configured sequences."""
    s = cfg["synth"]
    objects, grasps = s["objects"], s["grasps"]
    plan = []
    for i in range(s["sequences"]):
        obj = objects[i % len(objects)]
        grasp = grasps[(i // len(objects)) % len(grasps)] if s["kind"] == "grasp" else ""
        plan.append((f"seq_{i:03d}", cfg.seed * 1000 + i, obj, grasp))
    return plan


def cmd_synth(cfg, out_dir):
    s = cfg["synth"]
    noise = cfg.noise_model()
    traj_cfg = cfg.trajectory_config()
    model = HandModel()
    entries = []
    for name, seed, obj, grasp in sequence_plan(cfg):
        path = os.path.join(out_dir, name)
        if s["kind"] == "grasp":
            traj, mesh, grid, model = synth.make_grasp_sequence(seed, obj, grasp, config=traj_cfg, model=model)
            frames = synth.render_trajectory(traj, mesh, model, noise=noise, seed=seed)
            synth.pack_sequence(path, traj, frames, mesh, noise=noise, seed=seed, model=model, sdf=grid,
                                extra={"kind": "grasp", "symmetry": PRIMITIVE_SYMMETRY[obj]})
        else:
            traj, mesh, grid = synth.object_trajectory(seed, obj, s["frames"],
                                                       max_rotation=math.radians(s["max_rotation"]),
                                                       max_translation=s["max_translation"])
            frames = synth.render_trajectory(traj, mesh, None, noise=noise, seed=seed)
            synth.pack_sequence(path, traj, frames, mesh, noise=noise, seed=seed,
                                extra={"kind": "object", "symmetry": PRIMITIVE_SYMMETRY[obj]})
        files = {f: _sha256(os.path.join(path, f)) for f in sorted(os.listdir(path))}
        entries.append({"name": name, "seed": seed, "object": obj, "grasp": grasp, "files": files})
        log.info("wrote %s (%s %s)", path, obj, grasp)
    manifest = {"version": version_string(), "config": cfg.snapshot(), "sequences": entries}
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


# -- track -----------------------------------------------------------------

def _object_sdf(seq, resolution):
    return sdf_mod.build_from_mesh(seq.object_mesh, resolution)


def track_sequence(seq, mode, cfg, frames=None):
    """Online tracking of ``seq``; yields one JSON-ready record per frame."""
    if mode not in ("object", "hand", "ho"):
        raise UsageError(f"unknown mode {mode!r}")
    n = len(seq) if frames is None else min(frames, len(seq))
    want_hand = mode in ("hand", "ho")
    if want_hand and seq.hand_joints(0) is None:
        raise MissingInitialization(f"{seq.path}: frame 0 has no hand joints; cannot run mode {mode!r}")
    if "object" not in seq.gt[0]:
        raise MissingInitialization(f"{seq.path}: frame 0 has no object pose")
    grid = _object_sdf(seq, cfg["object"]["resolution"]) if mode in ("object", "ho") else None
    depth, labels = seq.frame(0)
    cloud0 = cloud = back_project(depth, seq.intrinsics, labels)
    obj_pose = seq.object_pose(0)
    obj_tracker = ObjectTracker(grid, obj_pose, cloud0.select(OBJECT), cfg.object_config()) if grid else None
    hand_tracker = model = None
    if want_hand:
        model = HandModel()
        state = init_state(model, seq.hand_joints(0), cloud0.select(HAND))
        hand_tracker = HandTracker(model, state, cfg.hand_config())
    refine_cfg = cfg.refine_config() if mode == "ho" else None
    for t in range(n):
        rec = {"frame": t}
        if t > 0:
            depth, labels = seq.frame(t)
            cloud = back_project(depth, seq.intrinsics, labels)
        if obj_tracker is not None:
            if t == 0:
                rec["object"] = {**obj_pose.to_dict(), "energy": None, "diverged": False, "empty": False}
            else:
                obj_cloud = cloud.select(OBJECT)
                if len(obj_cloud) == 0:
                    rec["object"] = {**obj_tracker.state.pose.to_dict(), "energy": None, "diverged": False,
                                     "empty": True}
                else:
                    r = obj_tracker.track(obj_cloud)
                    rec["object"] = {**r.pose.to_dict(), "energy": r.energy, "diverged": r.diverged,
                                     "empty": False}
        if hand_tracker is not None:
            st = hand_tracker.state
            if t == 0:
                g = _fit_global(model.forward_kinematics(st.shape, st.theta), st.joints)
                hand = {"joints": st.joints.tolist(), "theta": st.theta.tolist(), **g.to_dict(),
                        "bound_joints": 0, "empty": False,
                        "shape": {"betas": st.shape.to_list(), "mode": st.shape.mode}}
                pose = HandPose(st.theta, g)
                joints = st.joints
            else:
                r = hand_tracker.track(cloud.select(HAND))
                hand = {"joints": r.joints.tolist(), "theta": r.theta.tolist(), **r.global_transform.to_dict(),
                        "bound_joints": r.bound_joints, "empty": r.empty}
                pose = HandPose(r.theta, r.global_transform)
                joints = r.joints
            if mode == "ho":
                hand_cloud = cloud.select(HAND)
                vis = (visibility(joints, hand_cloud) if len(hand_cloud)
                       else np.zeros(21, dtype=bool))
                obj_now = RigidTransform.from_dict(rec["object"])
                if vis.any():
                    ctx = RefineContext(model, st.shape, grid, obj_now, joints, vis,
                                        SilhouetteMask.from_labels(labels, seq.intrinsics))
                    refined, info = refine_hand(pose, ctx, refine_cfg)
                else:
                    refined, info = pose, {"gate_on": None, "improved": False}
                hand["refined"] = {"joints": model.joints(st.shape, refined).tolist(),
                                   **refined.to_dict(), "gate_on": info["gate_on"],
                                   "improved": info["improved"]}
            rec["hand"] = hand
        yield rec


def _fit_global(fk, joints):
    """Global transform mapping canonical FK joints onto camera-space ``joints``."""
    base = list(BASE_JOINTS)
    return kabsch_align(fk[base], joints[base])


def cmd_track(cfg, seq_dir, mode, out_path, frames=None):
    seq = synth.load_sequence(seq_dir)
    records = list(track_sequence(seq, mode, cfg, frames))
    header = {"type": "header", "version": version_string(), "mode": mode,
              "sequence": os.path.abspath(seq_dir), "frames": len(records), "config": cfg.snapshot()}
    os.makedirs(os.path.dirname(os.path.abspath(out_path)), exist_ok=True)
    with open(out_path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps({"type": "frame", **rec}, sort_keys=True) + "\n")
    diverged = sum(bool(r.get("object", {}).get("diverged")) for r in records)
    return {"frames": len(records), "diverged": diverged}


def read_results(path):
    try:
        with open(path) as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
    except (OSError, ValueError) as exc:
        raise SequenceIOError(f"cannot read results {path}: {exc}") from None
    if not rows or rows[0].get("type") != "header":
        raise SequenceIOError(f"{path}: missing results header")
    return rows[0], [r for r in rows[1:] if r.get("type") == "frame"]


def ground_truth_results(seq):
    """Results records equal to the ground truth (for checking the evaluator)."""
    header = {"type": "header", "version": version_string(), "mode": "ho" if seq.hand_joints(0) is not None
              else "object", "sequence": os.path.abspath(seq.path), "frames": len(seq), "config": {}}
    out = []
    for t in range(len(seq)):
        rec = {"type": "frame", "frame": t,
               "object": {**seq.object_pose(t).to_dict(), "energy": 0.0, "diverged": False, "empty": False}}
        if seq.hand_joints(t) is not None:
            h = seq.gt[t]["hand"]
            rec["hand"] = {"joints": h["joints"], "theta": h["theta"], "rotation": h["rotation"],
                           "translation": h["translation"], "bound_joints": 0, "empty": False}
        out.append(rec)
    return header, out


# -- eval ------------------------------------------------------------------

def _symmetry(seq):
    sym = seq.meta.get("symmetry")
    return tuple(sym) if isinstance(sym, list) else sym


def _hand_metrics(model, shape, seq, records, key, grid, obj_poses):
    pred = np.array([(r["hand"][key] if key else r["hand"])["joints"] for r in records])
    gt = np.array([seq.hand_joints(t) for t in range(len(records))])
    per_joint = metrics.per_joint_errors(pred, gt)
    curve, auc = metrics.pck_auc(per_joint)
    pd, dd = [], []
    verts_obj = seq.object_mesh.vertices
    for t, r in enumerate(records):
        h = r["hand"][key] if key else r["hand"]
        pose = HandPose(np.array(h["theta"]), RigidTransform.from_dict(h))
        mesh = model.skin_mesh(shape, pose)
        pd.append(e_penetr(mesh.vertices, grid, obj_poses[t]))
        d = metrics.disjointedness(mesh, obj_poses[t].apply(verts_obj), seq.gt[t].get("contact", False))
        if d is not metrics.NotInContact:
            dd.append(d)
    per_frame = per_joint.mean(axis=1)
    return {
        "mpjpe": float(per_joint.mean()),
        "mpjpe_max_frame": float(per_frame.max()),
        "pck_thresholds": metrics.PCK_THRESHOLDS.tolist(),
        "pck_curve": curve.tolist(),
        "auc": auc,
        "pd_mean": float(np.mean(pd)),
        "pd_max": float(np.max(pd)),
        "dd_mean": float(np.mean(dd)) if dd else None,
        "contact_frames": len(dd),
        "bound_frames": int(sum(1 for r in records if (r["hand"].get("bound_joints") or 0) > 0)),
    }


def evaluate(seq, header, records, resolution=128):
    if len(records) != len(seq):
        raise LengthMismatch(f"results have {len(records)} frames, sequence has {len(seq)}")
    report = {"version": version_string(), "sequence": os.path.abspath(seq.path), "frames": len(seq),
              "mode": header.get("mode")}
    gt_obj = [seq.object_pose(t) for t in range(len(seq))]
    has_obj = all("object" in r for r in records)
    obj_poses = [RigidTransform.from_dict(r["object"]) for r in records] if has_obj else gt_obj
    if has_obj:
        sym = _symmetry(seq)
        rot, trans = metrics.pose_errors(obj_poses, gt_obj, sym)
        acc = metrics.accuracy_from_errors(rot, trans)
        verts = seq.object_mesh.vertices
        cd = [metrics.chamfer_cd(p.apply(verts), g.apply(verts)) for p, g in zip(obj_poses, gt_obj)]
        report["object"] = {
            **acc, "symmetry": list(sym) if isinstance(sym, tuple) else sym,
            "rotation_error_deg_mean": float(rot.mean()), "rotation_error_deg_max": float(rot.max()),
            "translation_error_mean": float(trans.mean()), "translation_error_max": float(trans.max()),
            "cd_mean": float(np.mean(cd)),
            "diverged_frames": int(sum(bool(r["object"].get("diverged")) for r in records)),
        }
    if all("hand" in r for r in records):
        if seq.hand_joints(0) is None:
            raise MissingInitialization(f"{seq.path}: sequence has no hand ground truth")
        model = HandModel()
        s0 = records[0]["hand"].get("shape")
        shape = HandShape(np.array(s0["betas"]), s0["mode"]) if s0 else (seq.hand_shape or model.neutral_shape())
        grid = sdf_mod.build_from_mesh(seq.object_mesh, resolution)
        report["hand"] = _hand_metrics(model, shape, seq, records, None, grid, obj_poses)
        if all("refined" in r["hand"] for r in records):
            report["refined"] = _hand_metrics(model, shape, seq, records, "refined", grid, obj_poses)
    return report


def write_curve_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        keys = [k for k in ("hand", "refined") if k in report]
        w.writerow(["threshold_m"] + [f"pck_{k}" for k in keys])
        for i, th in enumerate(metrics.PCK_THRESHOLDS):
            w.writerow([f"{th:.3f}"] + [repr(report[k]["pck_curve"][i]) for k in keys])


def cmd_eval(cfg, results_path, seq_dir, out_path=None, curve_csv=None):
    seq = synth.load_sequence(seq_dir)
    header, records = read_results(results_path)
    report = evaluate(seq, header, records, cfg["object"]["resolution"])
    report["config"] = cfg.snapshot()
    if out_path:
        _write_json(out_path, report)
    if curve_csv and ("hand" in report):
        write_curve_csv(report, curve_csv)
    return report


# -- bench -----------------------------------------------------------------

def _stats(samples):
    a = np.asarray(samples) * 1000.0
    if a.size == 0:
        return {"frames": 0, "mean_ms": None, "p95_ms": None}
    return {"frames": int(a.size), "mean_ms": float(a.mean()), "p95_ms": float(np.percentile(a, 95))}


def cmd_bench(cfg, frames=None, refine_frames=None):
    """Per-frame timings of the object tracker, hand tracker and refinement
    on an in-memory noiseless grasp sequence; the first frame warms up."""
    b = cfg["bench"]
    frames = frames or b["frames"]
    refine_frames = b["refine_frames"] if refine_frames is None else refine_frames
    traj_cfg = synth.TrajectoryConfig(frames=max(frames + 1, 3), k_range=(1, 1))
    model = HandModel()
    traj, mesh, grid, model = synth.make_grasp_sequence(cfg.seed, "sphere", "power", config=traj_cfg, model=model)
    rendered = synth.render_trajectory(traj, mesh, model)
    intr = synth.DEFAULT_INTRINSICS
    clouds = [back_project(d, intr, l) for d, l in rendered]
    J0 = model.joints(traj.shape, traj.hand_poses[0])
    obj = ObjectTracker(grid, traj.object_poses[0], clouds[0].select(OBJECT), cfg.object_config())
    hand = HandTracker(model, init_state(model, J0, clouds[0].select(HAND), shape=traj.shape), cfg.hand_config())
    times = {"object": [], "hand": [], "refine": []}
    rcfg = cfg.refine_config()
    for t in range(1, len(clouds)):
        t0 = time.perf_counter()
        r_obj = obj.track(clouds[t].select(OBJECT))
        t1 = time.perf_counter()
        r_hand = hand.track(clouds[t].select(HAND))
        t2 = time.perf_counter()
        if t > 1:
            times["object"].append(t1 - t0)
            times["hand"].append(t2 - t1)
        if t <= refine_frames + 1:
            pose = HandPose(r_hand.theta, r_hand.global_transform)
            vis = visibility(r_hand.joints, clouds[t].select(HAND))
            ctx = RefineContext(model, traj.shape, grid, r_obj.pose, r_hand.joints, vis,
                                SilhouetteMask.from_labels(rendered[t][1], intr))
            t3 = time.perf_counter()
            refine_hand(pose, ctx, rcfg)
            if t > 1:
                times["refine"].append(time.perf_counter() - t3)
    o = cfg["object"]
    return {"version": version_string(), "config": cfg.snapshot(),
            "object_particles": o["particles"], "object_points": o["max_points"],
            "modules": {k: _stats(v) for k, v in times.items()}}


# -- entry point -----------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="hotrack", description="Hand-object tracking from depth point clouds.")
    p.add_argument("--seed", type=int, default=None, help="global seed (overrides [run] seed)")
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"hotrack {version_string()}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate synthetic sequences")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--sequences", type=int, default=None)
    s.add_argument("--frames", type=int, default=None)
    s.add_argument("--kind", choices=("grasp", "object"), default=None)

    t = sub.add_parser("track", help="track a sequence")
    t.add_argument("sequence")
    t.add_argument("--mode", choices=("object", "hand", "ho"), default="object")
    t.add_argument("--out", required=True, help="results JSON-lines path")
    t.add_argument("--frames", type=int, default=None, help="track only the first N frames")

    e = sub.add_parser("eval", help="evaluate results against ground truth")
    e.add_argument("results")
    e.add_argument("sequence")
    e.add_argument("--out", default=None, help="report JSON path")
    e.add_argument("--curve-csv", default=None, help="PCK curve CSV path")

    b = sub.add_parser("bench", help="time the per-frame tracking steps")
    b.add_argument("--frames", type=int, default=None)
    b.add_argument("--refine-frames", type=int, default=None)
    b.add_argument("--particles", type=int, default=None, help="object tracker particle count")
    b.add_argument("--points", type=int, default=None, help="object tracker points per frame")
    b.add_argument("--out", default=None, help="report JSON path")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .config import load_config

    overrides = {("run", "seed"): args.seed}
    if args.command == "synth":
        overrides.update({("synth", "sequences"): args.sequences, ("synth", "frames"): args.frames,
                          ("synth", "kind"): args.kind})
    if args.command == "bench":
        overrides.update({("object", "particles"): args.particles, ("object", "max_points"): args.points})
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "synth":
            manifest = cmd_synth(cfg, args.out)
            print(f"wrote {len(manifest['sequences'])} sequence(s) to {args.out}")
        elif args.command == "track":
            summary = cmd_track(cfg, args.sequence, args.mode, args.out, args.frames)
            print(f"tracked {summary['frames']} frame(s); diverged frames: {summary['diverged']}")
        elif args.command == "eval":
            report = cmd_eval(cfg, args.results, args.sequence, args.out, args.curve_csv)
            if not args.out:
                print(json.dumps(report, indent=2, sort_keys=True))
        elif args.command == "bench":
            report = cmd_bench(cfg, args.frames, args.refine_frames)
            if args.out:
                _write_json(args.out, report)
            print(json.dumps(report["modules"], indent=2, sort_keys=True))
    except (ConfigError, UsageError) as exc:
        print(f"hotrack: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DATA_ERRORS as exc:
        print(f"hotrack: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
