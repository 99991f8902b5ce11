"""
Training the three robustified teachers
=======================================

Each teacher optimizes the same photometric objective but hardens itself
differently: "std" is the plain run, "perb" periodically perturbs
low-gradient Gaussians to escape shallow minima, and "drop" renders with a
random subset of Gaussians disabled so no single primitive becomes
indispensable. This demo trains all three briefly on a small synthetic
scene and reports held-out PSNR.

The full-length schedule lives in desk_preset(); here everything is cut
down so the demo finishes in about a minute.
"""

import time

from splatdistill.config import desk_preset
from splatdistill.evaluate import evaluate_cloud
from splatdistill.synthetic import SceneSpec, generate_scene
from splatdistill.training import train_teacher

spec = SceneSpec(n_gaussians=12, n_cameras=12, width=32, height=32)
bundle, gt = generate_scene(spec, seed=3)
print(f"scene: {spec.n_gaussians} ground-truth gaussians, "
      f"{spec.n_cameras} cameras at {spec.width}x{spec.height}")

cfg = desk_preset()
cfg.total_iters = 800
cfg.sh_degree = 1
cfg.densify_until = 400
cfg.perturb.t_end = 800
cfg.dropout.t1 = 800

for variant in ("std", "perb", "drop"):
    t0 = time.time()
    result = train_teacher(bundle, variant, cfg)
    metrics = evaluate_cloud(result.cloud, bundle, "test")
    print(f"{variant:4s}: {len(result.cloud):3d} gaussians, "
          f"test PSNR {metrics['mean_psnr']:6.2f} dB, "
          f"{time.time() - t0:5.1f}s")
