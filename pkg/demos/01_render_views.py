"""
Rendering a Gaussian cloud from a camera ring
=============================================

Builds the bundled synthetic scene, renders its ground-truth cloud from a
few viewpoints, writes the images as PNGs, and checks the compositing
bookkeeping: per pixel, the blend weights plus the light that reaches the
background must sum to one.
"""

import os

import numpy as np

from splatdistill.rasterizer import render
from splatdistill.scene import save_image
from splatdistill.synthetic import reference_scene

out_dir = os.path.join(os.path.dirname(__file__), "out", "render_views")
os.makedirs(out_dir, exist_ok=True)

bundle, gt = reference_scene()
print(f"scene: {len(gt)} gaussians, {len(bundle.cameras)} cameras, "
      f"{bundle.images[0].shape[1]}x{bundle.images[0].shape[0]} px")

for idx in (0, 4, 8, 12):
    cam = bundle.cameras[idx]
    out = render(gt, cam)
    save_image(out.image, os.path.join(out_dir, f"view_{idx:02d}.png"))

    # unit-weight check: sum over contributors of alpha*T, plus final T
    total = np.zeros_like(out.final_transmittance)
    for i in range(len(out.aux.cull.indices)):
        eff = out.aux.alphas[i]
        if eff is None:
            continue
        x0, x1, y0, y1 = out.aux.bboxes[i]
        total[y0:y1 + 1, x0:x1 + 1] += eff * out.aux.t_before[i]
    total += out.final_transmittance
    print(f"view {idx:2d}: mean px {out.image.mean():.4f}, "
          f"background light {out.final_transmittance.mean():.4f}, "
          f"max |weights - 1| = {np.abs(total - 1).max():.2e}")

print(f"wrote 4 renders to {out_dir}")
