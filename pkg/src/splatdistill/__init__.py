"""splatdistill: CPU 3D Gaussian splatting with multi-teacher distillation.

The pipeline trains three robustified Gaussian-splatting teachers (plain,
parameter-perturbed, dropout-regularized), fuses their renders into
pseudo-labels, and distills them into a compact student that is pruned to a
budget by rendering contribution and regularized toward the teacher's voxel
occupancy histogram.
"""

from .gaussians import (
    GaussianCloud,
    Camera,
    activate,
    covariance3d,
    gaussian_weight,
    project_covariance,
    look_at_camera,
    quat_to_rotmat,
    rotmat_to_quat,
    rotation_to_6d,
    rotation_from_6d,
    normalize_quaternions,
)
from .sh import eval_sh, sh_basis, num_coeffs
from .rasterizer import (
    render,
    render_backward,
    cull_and_sort,
    accumulated_blend_weights,
    RenderOutput,
    GaussianGrads,
    RenderError,
)
from .losses import l1_loss, ssim, dssim_loss, color_loss, kd_loss, psnr
from .voxelhist import (
    VoxelHistogram,
    common_bbox,
    voxel_histogram,
    soft_voxel_histogram,
    histogram_loss,
    chamfer_distance,
)
from .config import TrainConfig, desk_preset, load_config, save_config
from .optim import AdamState, adam_step, position_lr
from .training import (
    run_training,
    train_teacher,
    perturb_step,
    dropout_rate,
    densify_and_prune,
    TrainResult,
    TrainingDiverged,
    TEACHER_VARIANTS,
)
from .distill import (
    fuse_pseudo_labels,
    render_pseudo_labels,
    importance_scores,
    prune_to_budget,
    structure_loss_gradient,
    train_student,
)
from .scene import SceneBundle, load_scene, save_scene, scene_extent
from .checkpoint import save_checkpoint, load_checkpoint
from .synthetic import SceneSpec, generate_scene, reference_scene, reference_scene_spec
from .evaluate import train_test_split, evaluate_cloud

__version__ = "0.1.0"
