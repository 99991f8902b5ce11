"""
Multi-teacher distillation with a Gaussian budget
=================================================

The student never sees the ground-truth images alone: every step also pulls
it toward the pixelwise mean of the three teacher renders (the pseudo
label), and a voxel-histogram term keeps its point layout close to the
fused teacher geometry. Halfway through, the student is pruned to a 50%
Gaussian budget by accumulated blend weight, then fine-tuned.

Printed at the end: model sizes, held-out PSNR, and two structure metrics
(chamfer distance and voxel-histogram cosine similarity) between the
student and the fused teacher point set.
"""

import time

import numpy as np

from splatdistill.config import desk_preset
from splatdistill.distill import compare_histograms, train_student
from splatdistill.evaluate import evaluate_cloud
from splatdistill.synthetic import SceneSpec, generate_scene
from splatdistill.training import train_teacher
from splatdistill.voxelhist import chamfer_distance

spec = SceneSpec(n_gaussians=12, n_cameras=12, width=32, height=32)
bundle, gt = generate_scene(spec, seed=3)

cfg = desk_preset()
cfg.total_iters = 800
cfg.sh_degree = 1
cfg.densify_until = 400
cfg.perturb.t_end = 800
cfg.dropout.t1 = 800

t0 = time.time()
teachers = [train_teacher(bundle, v, cfg).cloud for v in ("std", "perb", "drop")]
print(f"teachers: sizes {[len(t) for t in teachers]}, "
      f"trained in {time.time() - t0:.0f}s")

student_cfg = cfg.copy()
student_cfg.total_iters = 600
student_cfg.densify_until = 200
student_cfg.distill.budget = 0.5
student_cfg.distill.simplify_iterations = (300,)
student_cfg.distill.hist_interval = 50
student_cfg.distill.hist_grid_size = 8  # a few dozen points: keep cells coarse

t0 = time.time()
result = train_student(bundle, teachers, student_cfg)
student = result.cloud
print(f"student: {len(student)} gaussians after the 50% budget prune, "
      f"trained in {time.time() - t0:.0f}s")

for name, cloud in [("teacher(std)", teachers[0]), ("student", student)]:
    metrics = evaluate_cloud(cloud, bundle, "test")
    print(f"{name:12s}: {len(cloud):3d} gaussians, "
          f"test PSNR {metrics['mean_psnr']:6.2f} dB")

fused_points = np.concatenate([t.positions for t in teachers])
print(f"chamfer distance student vs fused teachers: "
      f"{chamfer_distance(student.positions, fused_points):.4f}")

# occupancy agreement depends on the voxel resolution: with only a few
# dozen points, cells much smaller than the typical nearest-neighbour gap
# stop overlapping at all, so coarse grids are the informative ones here
for grid in (2, 4, 8):
    stats = compare_histograms(student.positions, fused_points, grid_size=grid)
    print(f"voxel grid {grid}^3: cosine similarity "
          f"{stats['cosine_similarity']:.3f}, "
          f"histogram loss {stats['histogram_loss']:.3f}")
