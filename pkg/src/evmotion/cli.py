"""Batch command-line front end.

Subcommands: slice, compensate, estimate-ego, estimate-obj, gen-gt,
eval-depth, eval-motion, eval-mask, synth. Data goes to files (or stdout),
diagnostics to stderr; exit code 0 only on success, 2 for usage/missing-file
errors, 1 otherwise. All outputs are byte-deterministic for a fixed --seed.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
from scipy.spatial.transform import Rotation

from . import estimation, formats, groundtruth, metrics, synth, warping
from .errors import EvMotionError
from .events import load_events, project_slice, save_events, slice_stream, subdivide
from .geometry import (CameraIntrinsics, DepthMap, MixturePoseField, Pose6,
                       flow_field, load_intrinsics, save_intrinsics)

SCHEMA = 1


def _parse_vec(text, n, name):
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != n:
        raise ValueError(f"{name} needs {n} comma-separated numbers")
    return np.asarray([float(p) for p in parts])


def _parse_geometry(text):
    w, h = text.lower().split("x")
    return int(w), int(h)


def _require_file(path, parser=None):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return path


def _read_depth(args, K):
    if args.depth is not None and args.plane_depth is not None:
        raise ValueError("--depth and --plane-depth are mutually exclusive")
    if args.depth is not None:
        z = formats.read_pfm(_require_file(args.depth))
        if z.shape != (K.height, K.width):
            raise ValueError("depth PFM geometry does not match intrinsics")
        return DepthMap(np.where(z > 0, z, 1.0), z > 0)
    if args.plane_depth is not None:
        return DepthMap.constant_plane(K.width, K.height, args.plane_depth)
    return None


def _count_map_pgm(maps):
    total = np.zeros(maps[0].pos_count.shape)
    for m in maps:
        total += m.pos_count + m.neg_count
    return np.clip(total, 0, 255).astype(np.uint8)


def _emit(args, payload):
    if getattr(args, "out", None):
        formats.write_json(args.out, payload)
    else:
        import json
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _window_slices(events, args, width, height):
    n_needed = 2 * args.K + 1
    slices = slice_stream(events, args.dt_ms / 1000.0, width, height)
    if len(slices) < n_needed:
        raise EvMotionError(
            f"stream yields {len(slices)} slices, need {n_needed} (K={args.K})")
    return slices[:n_needed]


# ---------------------------------------------------------------- slice

def cmd_slice(args):
    _require_file(args.events)
    if args.intrinsics:
        K = load_intrinsics(_require_file(args.intrinsics))
        width, height = K.width, K.height
    else:
        width, height = _parse_geometry(args.geometry)
    events = load_events(args.events, (width, height))
    if len(events) == 0:
        print(f"warning: {args.events} holds no events; nothing to do",
              file=sys.stderr)
        return 0
    slices = slice_stream(events, args.dt_ms / 1000.0, width, height)
    os.makedirs(args.out, exist_ok=True)
    entries = []
    for i, s in enumerate(slices):
        m = project_slice(s)
        names = {}
        for ch, data in (("pos", np.clip(m.pos_count, 0, 255)),
                         ("neg", np.clip(m.neg_count, 0, 255)),
                         ("time", np.rint(m.time_agg * 255.0))):
            name = f"slice_{i:04d}_{ch}.pgm"
            formats.write_pgm(os.path.join(args.out, name),
                              data.astype(np.uint8))
            names[ch] = name
        entries.append({"index": i, "t_start": s.t_start, "t_end": s.t_end,
                        "n_events": len(s), "files": names})
    formats.write_json(os.path.join(args.out, "manifest.json"),
                       {"schema": SCHEMA, "delta_t_ms": args.dt_ms,
                        "width": width, "height": height, "slices": entries})
    return 0


# ---------------------------------------------------------------- compensate

def _pose_from_args(args, t_ref):
    sources = [args.v is not None or args.omega is not None,
               args.gt_manifest is not None]
    if all(sources):
        raise argparse.ArgumentTypeError(
            "--v/--omega and --gt-manifest are mutually exclusive")
    if args.gt_manifest is not None:
        frames = groundtruth.load_frames(_require_file(args.gt_manifest))
        with_vel = [f for f in frames if f.cam_velocity is not None]
        if not with_vel:
            raise EvMotionError("manifest has no cam_velocity entries")
        nearest = min(with_vel, key=lambda f: abs(f.t - t_ref))
        return nearest.cam_velocity
    v = _parse_vec(args.v, 3, "--v") if args.v else np.zeros(3)
    omega = _parse_vec(args.omega, 3, "--omega") if args.omega else np.zeros(3)
    return Pose6(v, omega)


def cmd_compensate(args):
    _require_file(args.events)
    K = load_intrinsics(_require_file(args.intrinsics))
    events = load_events(args.events, (K.width, K.height))
    slices = _window_slices(events, args, K.width, K.height)
    mid = len(slices) // 2
    t_ref = 0.5 * (slices[mid].t_start + slices[mid].t_end)
    pose = _pose_from_args(args, t_ref)
    depth = _read_depth(args, K)
    if depth is None:
        depth = DepthMap.constant_plane(K.width, K.height, 1.0)
    flow = flow_field(depth, MixturePoseField.rigid(pose, K.width, K.height), K)
    fine_dt = args.fine_dt_ms / 1000.0

    warped = []
    diag = warping.WarpDiagnostics(0, 0, 0.0)
    for s in slices:
        w, d = warping.warp_slice(s, flow, t_ref)
        warped.append(w)
        diag = diag.merge(d)

    def losses(group):
        maps = [project_slice(s) for s in group]
        coarse = warping.coarse_loss(maps[:mid] + maps[mid + 1:], maps[mid])
        fine_maps = [project_slice(sub) for s in group
                     for sub in subdivide(s, fine_dt)]
        fine = warping.fine_loss(fine_maps, args.p)
        return coarse, fine, maps

    coarse_before, fine_before, maps_before = losses(slices)
    coarse_after, fine_after, maps_after = losses(warped)
    os.makedirs(args.out, exist_ok=True)
    formats.write_pgm(os.path.join(args.out, "before.pgm"),
                      _count_map_pgm(maps_before))
    formats.write_pgm(os.path.join(args.out, "after.pgm"),
                      _count_map_pgm(maps_after))
    formats.write_json(os.path.join(args.out, "report.json"), {
        "schema": SCHEMA,
        "pose": {"v": pose.v.tolist(), "omega": pose.omega.tolist()},
        "t_ref": t_ref,
        "coarse_loss_before": coarse_before, "fine_loss_before": fine_before,
        "coarse_loss_after": coarse_after, "fine_loss_after": fine_after,
        "diagnostics": {"events_in": diag.events_in,
                        "events_out_of_bounds": diag.events_out_of_bounds,
                        "mean_displacement": diag.mean_displacement},
    })
    return 0


# ---------------------------------------------------------------- estimate

def _estimator_config(args, depth_given):
    return estimation.EstimatorConfig(
        mode=args.mode, max_iters=args.max_iters, tol=args.tol,
        loss_weights=warping.LossWeights(p=args.p),
        multistart=args.multistart,
        depth_source="ground-truth" if depth_given else "constant-plane",
        fine_dt=args.fine_dt_ms / 1000.0, seed=args.seed,
        plane_depth=args.plane_depth if args.plane_depth else 1.0)


def cmd_estimate_ego(args):
    _require_file(args.events)
    K = load_intrinsics(_require_file(args.intrinsics))
    events = load_events(args.events, (K.width, K.height))
    slices = _window_slices(events, args, K.width, K.height)
    depth = _read_depth(args, K)
    cfg = _estimator_config(args, args.depth is not None)
    result = estimation.estimate_egomotion(slices, depth, K, cfg)
    _emit(args, {
        "schema": SCHEMA,
        "pose": {"v": result.pose.v.tolist(),
                 "omega": result.pose.omega.tolist()},
        "objective": result.objective,
        "iterations": result.iterations,
        "converged": result.converged,
        "diagnostics": {
            "events_in": result.diagnostics.events_in,
            "events_out_of_bounds": result.diagnostics.events_out_of_bounds,
            "mean_displacement": result.diagnostics.mean_displacement},
        "translation_scale": ("metric" if args.depth is not None else
                              f"plane depth {cfg.plane_depth}"),
    })
    return 0


def _read_mask(path, mask_id=None):
    pgm = formats.read_pgm(_require_file(path))
    if mask_id is not None:
        return pgm == mask_id
    return (pgm != 0) & (pgm != groundtruth.EMPTY_ID)


def cmd_estimate_obj(args):
    _require_file(args.events)
    K = load_intrinsics(_require_file(args.intrinsics))
    events = load_events(args.events, (K.width, K.height))
    slices = _window_slices(events, args, K.width, K.height)
    depth = _read_depth(args, K)
    mask = _read_mask(args.mask, args.mask_id)
    if args.ego_json:
        import json
        with open(_require_file(args.ego_json)) as fh:
            data = json.load(fh)
        ego = Pose6(np.asarray(data["pose"]["v"]),
                    np.asarray(data["pose"]["omega"]))
    else:
        v = _parse_vec(args.ego_v, 3, "--ego-v") if args.ego_v else np.zeros(3)
        w = _parse_vec(args.ego_omega, 3, "--ego-omega") if args.ego_omega \
            else np.zeros(3)
        ego = Pose6(v, w)
    cfg = _estimator_config(args, args.depth is not None)
    result = estimation.estimate_object_velocity(slices, depth, K, mask,
                                                 ego, cfg)
    _emit(args, {
        "schema": SCHEMA,
        "translation": result.translation.tolist(),
        "objective": result.objective,
        "iterations": result.iterations,
        "converged": result.converged,
    })
    return 0


# ---------------------------------------------------------------- gen-gt

def cmd_gen_gt(args):
    scene = groundtruth.load_scene(_require_file(args.scene))
    frames = groundtruth.generate_frames(scene, args.fps,
                                         splat_radius=args.splat_radius)
    groundtruth.write_frames(frames, args.out, fps=args.fps)
    print(f"wrote {len(frames)} frames to {args.out}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- eval

def _pfm_depth_pairs(pred_dir, gt_dir):
    names = sorted(f for f in os.listdir(pred_dir) if f.endswith(".pfm"))
    gt_names = sorted(f for f in os.listdir(gt_dir) if f.endswith(".pfm"))
    if not names or names != gt_names:
        raise EvMotionError("prediction and ground-truth PFM sets differ")
    for name in names:
        p = formats.read_pfm(os.path.join(pred_dir, name))
        g = formats.read_pfm(os.path.join(gt_dir, name))
        yield (name, DepthMap(np.where(p > 0, p, 1.0), p > 0),
               DepthMap(np.where(g > 0, g, 1.0), g > 0))


def cmd_eval_depth(args):
    per_frame = []
    entries = []
    n_pixels = 0
    for name, pred, gt in _pfm_depth_pairs(_require_file(args.pred),
                                           _require_file(args.gt)):
        m = metrics.depth_metrics(pred, gt, args.alignment)
        s = metrics.align_depth_scale(pred, gt, args.alignment)
        aligned = DepthMap(pred.z * s, pred.valid)
        dev = warping.depth_loss(aligned, gt, w_smooth_depth=0.0)
        per_frame.append(m)
        n_pixels += int(np.sum(pred.valid & gt.valid))
        entries.append({"frame": name, **m.as_dict(), "depth_loss": dev})
    mean = metrics.mean_depth_metrics(per_frame)
    _emit(args, {"schema": SCHEMA, "alignment": args.alignment,
                 "n_frames": len(entries), "n_pixels": n_pixels,
                 "mean": mean.as_dict(), "frames": entries})
    return 0


def _motion_entries(path):
    import json
    with open(_require_file(path)) as fh:
        data = json.load(fh)
    if "frames" in data:
        out = []
        for f in data["frames"]:
            if "cam_velocity" in f:
                out.append((np.asarray(f["cam_velocity"]["v"]),
                            np.asarray(f["cam_velocity"]["omega"])))
        return out
    return [(np.asarray(e["v"]), np.asarray(e["omega"]))
            for e in data["entries"]]


def cmd_eval_motion(args):
    pred = _motion_entries(args.pred)
    gt = _motion_entries(args.gt)
    if len(pred) != len(gt) or not pred:
        raise EvMotionError("prediction and ground-truth motion sets differ")
    aee_val = metrics.aee([p[0] for p in pred], [g[0] for g in gt],
                          scale_from_gt=args.scale_from_gt)
    # rotation rates compared as unit-time rotations (rad/s)
    rre_vals = [metrics.rre(Rotation.from_rotvec(p[1]).as_quat(),
                            Rotation.from_rotvec(g[1]).as_quat())
                for p, g in zip(pred, gt)]
    _emit(args, {"schema": SCHEMA, "n_frames": len(pred),
                 "aee": aee_val, "rre": float(np.mean(rre_vals)),
                 "scale_from_gt": bool(args.scale_from_gt)})
    return 0


def cmd_eval_mask(args):
    def gather(path):
        if os.path.isdir(path):
            names = sorted(f for f in os.listdir(path) if f.endswith(".pgm"))
            return names, [os.path.join(path, n) for n in names]
        return [os.path.basename(path)], [path]

    pred_names, pred_paths = gather(_require_file(args.pred))
    gt_names, gt_paths = gather(_require_file(args.gt))
    if pred_names != gt_names or not pred_names:
        raise EvMotionError("prediction and ground-truth mask sets differ")
    scores = []
    entries = []
    n_pixels = 0
    for name, pp, gp in zip(pred_names, pred_paths, gt_paths):
        pred = formats.read_pgm(pp).astype(np.float64) / 255.0
        gt = _read_mask(gp, args.gt_id)
        score = metrics.iou(pred, gt, args.threshold)
        scores.append(score)
        n_pixels += gt.size
        entries.append({"frame": name, "iou": score})
    _emit(args, {"schema": SCHEMA, "threshold": args.threshold,
                 "n_frames": len(scores), "n_pixels": n_pixels,
                 "mean_iou": float(np.mean(scores)), "frames": entries})
    return 0


# ---------------------------------------------------------------- synth

def cmd_synth(args):
    rng = np.random.default_rng(args.seed)
    kw = dict(n_slices=args.n_slices, delta_t=args.dt_ms / 1000.0,
              n_points=args.n_points, events_per_point=args.events_per_point)
    if args.kind == "rigid":
        rig = synth.rigid_scene(rng, **kw)
    else:
        rig = synth.imo_scene(rng, **kw)
    os.makedirs(args.out, exist_ok=True)
    save_events(rig.events, os.path.join(args.out, "events.txt"))
    save_intrinsics(rig.K, os.path.join(args.out, "intrinsics.txt"))
    formats.write_pfm(os.path.join(args.out, "depth.pfm"),
                      np.where(rig.depth.valid, rig.depth.z, 0.0))
    truth = {"schema": SCHEMA, "kind": args.kind, "seed": args.seed,
             "v": rig.ego.v.tolist(), "omega": rig.ego.omega.tolist(),
             "t_ref": rig.t_ref, "n_slices": rig.n_slices,
             "delta_t_ms": rig.delta_t * 1000.0,
             "geometry": f"{rig.K.width}x{rig.K.height}"}
    if rig.object_translation is not None:
        truth["object_translation"] = rig.object_translation.tolist()
        formats.write_pgm(os.path.join(args.out, "mask.pgm"),
                          rig.object_mask.astype(np.uint8))
    formats.write_json(os.path.join(args.out, "truth.json"), truth)
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evmotion",
        description="Event-camera motion processing pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common_window(p):
        p.add_argument("--dt-ms", type=float, default=25.0,
                       help="slice duration in ms (default 25)")
        p.add_argument("--fine-dt-ms", type=float, default=1.0,
                       help="fine sub-slice duration in ms (default 1)")
        p.add_argument("--p", type=float, default=0.5,
                       help="sharpness exponent in (0, 1) (default 0.5)")
        p.add_argument("--K", type=int, default=1, choices=(1, 2),
                       help="neighbor slices per side (default 1)")

    def depth_opts(p):
        p.add_argument("--depth", help="depth map PFM (meters, 0 = invalid)")
        p.add_argument("--plane-depth", type=float,
                       help="assume a constant-depth plane at this depth")

    p = sub.add_parser("slice", help="project a stream into slice map PGMs")
    p.add_argument("--events", required=True)
    p.add_argument("--geometry", default="346x260",
                   help="sensor WxH when no intrinsics file (default 346x260)")
    p.add_argument("--intrinsics")
    p.add_argument("--dt-ms", type=float, default=25.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("compensate",
                       help="warp a slice window with a given motion")
    p.add_argument("--events", required=True)
    p.add_argument("--intrinsics", required=True)
    common_window(p)
    depth_opts(p)
    p.add_argument("--v", help="translational velocity vx,vy,vz (m/s)")
    p.add_argument("--omega", help="rotational velocity wx,wy,wz (rad/s)")
    p.add_argument("--gt-manifest", help="take cam velocity from a frame manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compensate)

    p = sub.add_parser("estimate-ego", help="estimate camera egomotion")
    p.add_argument("--events", required=True)
    p.add_argument("--intrinsics", required=True)
    common_window(p)
    depth_opts(p)
    p.add_argument("--mode", default="6dof", choices=("6dof", "4dof-planar"))
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--multistart", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate_ego)

    p = sub.add_parser("estimate-obj", help="estimate object velocity")
    p.add_argument("--events", required=True)
    p.add_argument("--intrinsics", required=True)
    common_window(p)
    depth_opts(p)
    p.add_argument("--mask", required=True, help="object mask PGM")
    p.add_argument("--mask-id", type=int,
                   help="object id in the mask (default: any non-empty)")
    p.add_argument("--ego-v", help="known ego velocity vx,vy,vz")
    p.add_argument("--ego-omega", help="known ego rotation wx,wy,wz")
    p.add_argument("--ego-json", help="estimate-ego JSON output to reuse")
    p.add_argument("--mode", default="6dof", choices=("6dof", "4dof-planar"))
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--multistart", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate_obj)

    p = sub.add_parser("gen-gt", help="synthesize ground-truth frames")
    p.add_argument("--scene", required=True, help="scene manifest JSON")
    p.add_argument("--fps", type=float, default=40.0)
    p.add_argument("--splat-radius", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_gt)

    p = sub.add_parser("eval-depth", help="depth metrics over PFM directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--alignment", default="median",
                   choices=("median", "mean", "none"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_depth)

    p = sub.add_parser("eval-motion", help="AEE/RRE over velocity JSON files")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--scale-from-gt", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_motion)

    p = sub.add_parser("eval-mask", help="IoU of mask PGMs")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--gt-id", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_mask)

    p = sub.add_parser("synth", help="generate a synthetic test scene")
    p.add_argument("--kind", default="rigid", choices=("rigid", "imo"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-slices", type=int, default=3)
    p.add_argument("--dt-ms", type=float, default=25.0)
    p.add_argument("--n-points", type=int, default=400)
    p.add_argument("--events-per-point", type=int, default=15)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return 2
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))  # exits with code 2
    except (EvMotionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
