"""Multi-teacher distillation: fused pseudo-labels, contribution-based
pruning to a budget, and the voxel-histogram structure loss that keeps the
student's geometry close to the teacher's.
"""

import math

import numpy as np

from .config import TrainConfig
from .evaluate import train_test_split
from .gaussians import GaussianCloud
from .rasterizer import accumulated_blend_weights, render
from .voxelhist import (
    common_bbox,
    voxel_histogram,
    soft_voxel_histogram,
    histogram_loss,
)


def fuse_pseudo_labels(images):
    """Pixelwise mean of teacher renders. Order-independent up to float
    rounding; at least one image required."""
    if len(images) == 0:
        raise ValueError("fuse_pseudo_labels needs at least one image")
    stack = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    if any(im.shape != stack[0].shape for im in stack[1:]):
        raise ValueError("teacher renders disagree on image shape")
    return stack.mean(axis=0)


def render_pseudo_labels(teachers, cameras, background=None, near: float = 0.01):
    """Fused pseudo-label per camera. Teachers are frozen, so this runs once
    up front and the results are reused across the whole student run."""
    labels = []
    for cam in cameras:
        renders = [render(t, cam, background, near=near).image for t in teachers]
        labels.append(fuse_pseudo_labels(renders))
    return labels


def importance_scores(cloud: GaussianCloud, cameras, near: float = 0.01):
    """Per-Gaussian contribution to the training views: the sum over views
    and pixels of its composited blend weight alpha_i * T_i."""
    scores = np.zeros(len(cloud))
    for cam in cameras:
        scores += accumulated_blend_weights(cloud, cam, near=near)
    return scores


def prune_to_budget(cloud: GaussianCloud, scores, budget: float,
                    mode: str = "topk", rng: np.random.Generator = None):
    """Keep ceil(budget * N) Gaussians and drop the rest.

    'topk' keeps the highest scores (ties resolved toward the lower index);
    'sample' draws without replacement with probability proportional to
    score. Relative order of survivors is preserved either way. Returns
    (pruned cloud, sorted kept indices)."""
    if not 0.0 < budget <= 1.0:
        raise ValueError(f"budget must be in (0, 1], got {budget}")
    scores = np.asarray(scores, dtype=np.float64)
    n = len(cloud)
    if scores.shape != (n,):
        raise ValueError(f"scores shape {scores.shape} != ({n},)")
    k = min(n, math.ceil(budget * n))
    if k == n:
        return cloud.copy(), np.arange(n)

    if mode == "topk":
        order = np.argsort(-scores, kind="stable")  # ties keep lower index first
        chosen = order[:k]
    elif mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        total = scores.sum()
        if total <= 0:
            raise ValueError("sample mode needs at least one positive score")
        chosen = rng.choice(n, size=k, replace=False, p=scores / total)
    else:
        raise ValueError(f"unknown importance mode {mode!r}")
    keep = np.sort(chosen)
    return cloud.subset(keep), keep


def structure_loss_gradient(student_points, teacher_points, grid_size: int):
    """Cosine-histogram mismatch between student and teacher occupancy.

    The shared bounding box covers both point sets (recomputed every call,
    treated as constant in the gradient); the teacher side is hard-binned,
    the student side soft-binned so dL/d(student positions) exists.
    Returns (loss, (N, 3) gradient)."""
    lo, hi = common_bbox(teacher_points, student_points)
    reference = voxel_histogram(teacher_points, lo, hi, grid_size)
    student = soft_voxel_histogram(student_points, lo, hi, grid_size)
    loss, dcounts = histogram_loss(reference, student.hist)
    return loss, student.backprop(dcounts)


def compare_histograms(points_a, points_b, grid_size: int):
    """Hard-binned histogram loss between two point sets on their common box
    (symmetric diagnostic used by the CLI)."""
    lo, hi = common_bbox(points_a, points_b)
    ha = voxel_histogram(points_a, lo, hi, grid_size)
    hb = voxel_histogram(points_b, lo, hi, grid_size)
    loss, _ = histogram_loss(ha, hb)
    cosine = 1.0 - loss
    return {"cosine_similarity": cosine, "histogram_loss": loss,
            "grid_size": grid_size,
            "points_a": int(len(points_a)), "points_b": int(len(points_b)),
            "bbox_min": [float(v) for v in lo], "bbox_max": [float(v) for v in hi]}


def train_student(scene, teachers, cfg: TrainConfig, progress=None):
    """Distill frozen teacher clouds into one student.

    The student optimizes the photometric loss to ground truth plus the
    pseudo-label loss (pixelwise-mean teacher render), periodically matches
    the first teacher's voxel histogram, and prunes itself to the configured
    budget at the simplification iteration(s).
    """
    from .training import run_training, DistillContext

    if len(teachers) == 0:
        raise ValueError("train_student needs at least one teacher")
    train_idx, _ = train_test_split(len(scene.cameras))
    cameras = [scene.cameras[i] for i in train_idx]
    bg = np.asarray(cfg.background, dtype=np.float64)

    pseudo = render_pseudo_labels(teachers, cameras, bg, near=cfg.near_plane)
    ctx = DistillContext(pseudo_labels=pseudo,
                         structure_points=teachers[0].positions.copy())

    init_cloud = None
    if cfg.distill.student_init == "teacher":
        scores = importance_scores(teachers[0], cameras, near=cfg.near_plane)
        init_cloud, _ = prune_to_budget(teachers[0], scores, cfg.distill.budget)
    elif cfg.distill.student_init != "scene":
        raise ValueError(f"unknown student_init {cfg.distill.student_init!r}")

    return run_training(scene, cfg, distill=ctx, init_cloud=init_cloud,
                        progress=progress)
