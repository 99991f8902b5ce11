"""Command-line interface.

Subcommands: gen-scene, train-teacher, distill, render, eval, hist-compare,
ablate. Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, desk_preset, load_config
from .distill import compare_histograms, train_student
from .evaluate import evaluate_cloud, write_history_csv, write_metrics_csv
from .rasterizer import render
from .scene import load_scene, save_scene, save_image
from .synthetic import generate_scene, reference_scene_spec, REFERENCE_SEED
from .training import train_teacher, TEACHER_VARIANTS


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser():
    parser = _Parser(prog="splatdistill",
                     description="CPU Gaussian splatting distillation pipeline")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="YAML training config", default=None)
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out-dir", default=".", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scene", parents=[], help="generate a synthetic scene")
    g.add_argument("--preset", choices=["reference"], default="reference")
    g.add_argument("--gaussians", type=int, default=None)
    g.add_argument("--views", type=int, default=None)
    g.add_argument("--size", type=int, default=None, help="square image side")

    t = sub.add_parser("train-teacher", help="train one teacher variant")
    t.add_argument("scene", help="scene directory")
    t.add_argument("--variant", choices=list(TEACHER_VARIANTS), required=True)
    t.add_argument("--iters", type=int, default=None)

    d = sub.add_parser("distill", help="distill teachers into a student")
    d.add_argument("scene", help="scene directory")
    d.add_argument("--teachers", nargs="+", required=True,
                   help="teacher checkpoint PLYs (first is the structure reference)")
    d.add_argument("--budget", type=float, default=None,
                   help="kept fraction at the pruning step")
    d.add_argument("--iters", type=int, default=None)
    d.add_argument("--no-hist", action="store_true",
                   help="disable the voxel-histogram loss")

    r = sub.add_parser("render", help="render one view from a checkpoint")
    r.add_argument("scene", help="scene directory")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--camera-index", type=int, required=True)

    e = sub.add_parser("eval", help="evaluate a checkpoint against a split")
    e.add_argument("scene", help="scene directory")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=["train", "test"], default="test")

    h = sub.add_parser("hist-compare",
                       help="voxel-histogram similarity of two checkpoints")
    h.add_argument("cloud_a")
    h.add_argument("cloud_b")
    h.add_argument("--grid", type=int, default=128)

    a = sub.add_parser("ablate",
                       help="train teachers and student variants, report PSNRs")
    a.add_argument("--scene", default=None,
                   help="scene directory (generated fresh when omitted)")
    a.add_argument("--iters", type=int, default=None)
    return parser


def _load_cfg(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else desk_preset()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _progress(tag):
    def cb(t, row):
        print(f"[{tag}] iter {t}: loss {row['loss']:.5f} "
              f"psnr {row['train_view_psnr']:.2f} n {row['n_gaussians']}")
    return cb


def _cmd_gen_scene(args):
    cfg_seed = args.seed if args.seed is not None else REFERENCE_SEED
    spec = reference_scene_spec()
    if args.gaussians is not None:
        spec.n_gaussians = args.gaussians
    if args.views is not None:
        spec.n_cameras = args.views
    if args.size is not None:
        spec.width = spec.height = args.size
    bundle, gt = generate_scene(spec, cfg_seed)
    os.makedirs(args.out_dir, exist_ok=True)
    save_scene(bundle, args.out_dir)
    save_checkpoint(gt, os.path.join(args.out_dir, "ground_truth.ply"),
                    meta={"seed": cfg_seed, "role": "ground_truth"})
    print(f"wrote scene with {spec.n_cameras} views to {args.out_dir}")
    return 0


def _cmd_train_teacher(args):
    cfg = _load_cfg(args)
    if args.iters is not None:
        cfg.total_iters = args.iters
    scene = load_scene(args.scene)
    result = train_teacher(scene, args.variant, cfg,
                           progress=_progress(args.variant))
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, f"teacher_{args.variant}.ply")
    save_checkpoint(result.cloud, out, meta={
        "iteration": cfg.total_iters,
        "seed": cfg.seed,
        "variant": args.variant,
        "config_hash": cfg.config_hash(),
        "sh_degree": result.cloud.sh_degree,
    })
    write_history_csv(result.history,
                      os.path.join(args.out_dir, f"teacher_{args.variant}_history.csv"))
    report = evaluate_cloud(result.cloud, scene, "test",
                            np.asarray(cfg.background), cfg.near_plane)
    print(f"teacher {args.variant}: test psnr {report['mean_psnr']:.2f} dB, "
          f"{len(result.cloud)} gaussians -> {out}")
    return 0


def _cmd_distill(args):
    cfg = _load_cfg(args)
    if args.iters is not None:
        cfg.total_iters = args.iters
    if args.budget is not None:
        cfg.distill.budget = args.budget
    if args.no_hist:
        cfg.distill.hist_enabled = False
    scene = load_scene(args.scene)
    teachers = [load_checkpoint(p)[0] for p in args.teachers]
    result = train_student(scene, teachers, cfg, progress=_progress("student"))
    os.makedirs(args.out_dir, exist_ok=True)
    out = os.path.join(args.out_dir, "student.ply")
    save_checkpoint(result.cloud, out, meta={
        "iteration": cfg.total_iters,
        "seed": cfg.seed,
        "budget": cfg.distill.budget,
        "teachers": [os.path.basename(p) for p in args.teachers],
        "config_hash": cfg.config_hash(),
        "sh_degree": result.cloud.sh_degree,
    })
    write_history_csv(result.history,
                      os.path.join(args.out_dir, "student_history.csv"))
    report = evaluate_cloud(result.cloud, scene, "test",
                            np.asarray(cfg.background), cfg.near_plane)
    print(f"student: test psnr {report['mean_psnr']:.2f} dB, "
          f"{len(result.cloud)} gaussians -> {out}")
    return 0


def _cmd_render(args):
    cfg = _load_cfg(args)
    scene = load_scene(args.scene)
    if not 0 <= args.camera_index < len(scene.cameras):
        raise ValueError(
            f"camera index {args.camera_index} out of range "
            f"(scene has {len(scene.cameras)} views)")
    cloud, _ = load_checkpoint(args.checkpoint)
    out = render(cloud, scene.cameras[args.camera_index],
                 np.asarray(cfg.background), near=cfg.near_plane)
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, f"render_{args.camera_index:03d}.png")
    save_image(out.image, path)
    print(f"wrote {path}")
    return 0


def _cmd_eval(args):
    cfg = _load_cfg(args)
    scene = load_scene(args.scene)
    cloud, _ = load_checkpoint(args.checkpoint)
    report = evaluate_cloud(cloud, scene, args.split,
                            np.asarray(cfg.background), cfg.near_plane)
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, f"metrics_{args.split}.csv")
    write_metrics_csv(report, path)
    print(f"{args.split}: mean psnr {report['mean_psnr']:.4f} dB, "
          f"mean ssim {report['mean_ssim']:.4f} ({len(report['views'])} views)")
    return 0


def _cmd_hist_compare(args):
    cloud_a, _ = load_checkpoint(args.cloud_a)
    cloud_b, _ = load_checkpoint(args.cloud_b)
    report = compare_histograms(cloud_a.positions, cloud_b.positions, args.grid)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _cmd_ablate(args):
    cfg = _load_cfg(args)
    if args.iters is not None:
        cfg.total_iters = args.iters
    os.makedirs(args.out_dir, exist_ok=True)
    if args.scene:
        scene = load_scene(args.scene)
    else:
        scene_dir = os.path.join(args.out_dir, "scene")
        bundle, _ = generate_scene(reference_scene_spec(),
                                   args.seed if args.seed is not None else REFERENCE_SEED)
        save_scene(bundle, scene_dir)
        scene = bundle

    bg = np.asarray(cfg.background)
    report = {"iterations": cfg.total_iters, "seed": cfg.seed, "teachers": {},
              "students": {}}
    teachers = {}
    for variant in TEACHER_VARIANTS:
        res = train_teacher(scene, variant, cfg)
        teachers[variant] = res.cloud
        ev = evaluate_cloud(res.cloud, scene, "test", bg, cfg.near_plane)
        report["teachers"][variant] = {
            "test_psnr": ev["mean_psnr"], "test_ssim": ev["mean_ssim"],
            "n_gaussians": len(res.cloud),
        }
        save_checkpoint(res.cloud,
                        os.path.join(args.out_dir, f"teacher_{variant}.ply"))

    ordered = [teachers[v] for v in TEACHER_VARIANTS]
    runs = {
        "full": (ordered, True),
        "no_hist": (ordered, False),
        "single_teacher": ([teachers["std"]], True),
    }
    for name, (tlist, hist) in runs.items():
        run_cfg = cfg.copy()
        run_cfg.distill.hist_enabled = hist
        res = train_student(scene, tlist, run_cfg)
        ev = evaluate_cloud(res.cloud, scene, "test", bg, cfg.near_plane)
        report["students"][name] = {
            "test_psnr": ev["mean_psnr"], "test_ssim": ev["mean_ssim"],
            "n_gaussians": len(res.cloud),
        }
        save_checkpoint(res.cloud,
                        os.path.join(args.out_dir, f"student_{name}.ply"))

    path = os.path.join(args.out_dir, "ablation.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


_COMMANDS = {
    "gen-scene": _cmd_gen_scene,
    "train-teacher": _cmd_train_teacher,
    "distill": _cmd_distill,
    "render": _cmd_render,
    "eval": _cmd_eval,
    "hist-compare": _cmd_hist_compare,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"splatdistill: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
