"""Held-out evaluation: the canonical train/test view split and image metrics."""

import csv

import numpy as np

from .losses import psnr, ssim
from .rasterizer import render
from .scene import quantize_image


def train_test_split(n_views: int):
    """Every 8th view (0, 8, 16, ...) is a test view, the rest train."""
    idx = np.arange(n_views)
    test = idx[idx % 8 == 0]
    train = idx[idx % 8 != 0]
    return train, test


def evaluate_cloud(cloud, scene, split: str = "test", background=None,
                   near: float = 0.01) -> dict:
    """Render each view of the chosen split and score it against ground truth.

    Returns {"split", "views": [{view, psnr, ssim}...], "mean_psnr", "mean_ssim"}.
    Renders are quantized to the 8-bit image grid before scoring, matching
    the precision of the stored ground truth (a perfect model scores inf).
    """
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    train, test = train_test_split(len(scene.cameras))
    indices = train if split == "train" else test
    if background is None:
        background = np.zeros(3)

    rows = []
    for i in indices:
        cam = scene.cameras[int(i)]
        img = quantize_image(render(cloud, cam, background, near=near).image)
        gt = scene.images[int(i)]
        rows.append({
            "view": int(i),
            "psnr": psnr(img, gt),
            "ssim": ssim(img, gt),
        })
    return {
        "split": split,
        "views": rows,
        "mean_psnr": float(np.mean([r["psnr"] for r in rows])),
        "mean_ssim": float(np.mean([r["ssim"] for r in rows])),
    }


def write_metrics_csv(report: dict, path):
    """One row per view plus a trailing mean row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["view", "psnr", "ssim"])
        for row in report["views"]:
            writer.writerow([row["view"], f"{row['psnr']:.6f}", f"{row['ssim']:.6f}"])
        writer.writerow(["mean", f"{report['mean_psnr']:.6f}",
                         f"{report['mean_ssim']:.6f}"])


def write_history_csv(history, path):
    """Training curve rows as logged by the engine."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss", "train_view_psnr", "n_gaussians"])
        for row in history:
            writer.writerow([
                row["iteration"],
                f"{row['loss']:.8f}",
                f"{row['train_view_psnr']:.6f}",
                row["n_gaussians"],
            ])
