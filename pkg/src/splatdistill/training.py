"""The shared optimization loop behind teacher and student training.

Teacher variants differ only in which robustness mechanism runs: 'std' is
plain optimization, 'perb' periodically injects parameter noise into
high-gradient Gaussians, 'drop' renders with randomly dropped Gaussians at a
linearly ramped rate (inference always uses the full cloud). The student
additionally optimizes against fused pseudo-labels, matches the teacher's
voxel occupancy histogram, and prunes itself to a budget.

Every random decision draws from its own child stream of the config seed, so
a run is bit-reproducible and disabling one mechanism does not shift the
random numbers used by another.
"""

from dataclasses import dataclass
import numpy as np
from scipy.special import expit, logit
from scipy.spatial import cKDTree

from . import sh
from .config import TrainConfig, DropoutConfig, PerturbConfig
from .gaussians import (
    GaussianCloud,
    normalize_quaternions,
    quat_to_rotmat,
    rotmat_to_quat,
    rotation_to_6d,
    rotation_from_6d,
)
from .losses import color_loss, kd_loss, psnr
from .optim import AdamState, adam_step, group_learning_rates
from .rasterizer import GaussianGrads, render, render_backward
from .evaluate import train_test_split

TEACHER_VARIANTS = ("std", "perb", "drop")


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries the iteration and the last finite cloud."""

    def __init__(self, iteration: int, last_good: GaussianCloud):
        super().__init__(f"non-finite loss at iteration {iteration}")
        self.iteration = iteration
        self.last_good = last_good


@dataclass
class TrainResult:
    cloud: GaussianCloud
    history: list  # dict rows: iteration, loss, train_view_psnr, n_gaussians


@dataclass
class DistillContext:
    """Frozen-teacher inputs for student training."""

    pseudo_labels: list            # fused (H, W, 3) per training view
    structure_points: np.ndarray   # teacher positions for the histogram reference


def dropout_rate(t: int, cfg: DropoutConfig) -> float:
    """Linear ramp: 0 at t0, r_init at t1, clamped outside the window."""
    if t <= cfg.t0:
        return 0.0
    if t >= cfg.t1:
        return cfg.r_init
    return cfg.r_init * (t - cfg.t0) / (cfg.t1 - cfg.t0)


def sample_dropout_mask(n: int, rate: float, rng: np.random.Generator):
    """Keep mask with each Gaussian dropped independently at `rate`."""
    return rng.random(n) >= rate


def perturb_step(cloud: GaussianCloud, avg_grads, cfg: PerturbConfig,
                 rng: np.random.Generator, scene_extent: float,
                 default_threshold: float) -> int:
    """Add noise to every Gaussian whose averaged view-space gradient exceeds
    the threshold. Positions move in world units, rotations through the 6D
    representation, scales in log space, opacities in logit space. Returns
    the number of perturbed Gaussians."""
    threshold = cfg.grad_threshold
    if threshold is None:
        threshold = default_threshold
    sel = np.nonzero(avg_grads > threshold)[0]
    if sel.size == 0:
        return 0
    sigma_pos = cfg.sigma_position
    if sigma_pos is None:
        sigma_pos = 0.01 * scene_extent

    cloud.positions[sel] += rng.normal(size=(sel.size, 3)) * sigma_pos

    rot = quat_to_rotmat(normalize_quaternions(cloud.rotations[sel]))
    six = rotation_to_6d(rot) + rng.normal(size=(sel.size, 6)) * cfg.sigma_rotation
    cloud.rotations[sel] = rotmat_to_quat(rotation_from_6d(six))

    cloud.log_scales[sel] += rng.normal(size=(sel.size, 3)) * cfg.sigma_scale
    cloud.opacity_logits[sel] += rng.normal(size=sel.size) * cfg.sigma_opacity
    return int(sel.size)


def init_cloud_from_points(points, colors, cfg: TrainConfig,
                           rng: np.random.Generator) -> GaussianCloud:
    """Standard cloud initialization from a colored point set.

    Scales start isotropic at the mean distance to the three nearest
    neighbors; rotations at identity; opacities at the configured constant.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    k = sh.num_coeffs(cfg.sh_degree)
    coeffs = np.zeros((n, k, 3))
    coeffs[:, 0, :] = sh.rgb_to_dc(np.asarray(colors, dtype=np.float64))

    if n > 1:
        dists, _ = cKDTree(points).query(points, k=min(4, n))
        mean_sq = np.mean(dists[:, 1:] ** 2, axis=1)
    else:
        mean_sq = np.full(n, 1e-4)
    mean_sq = np.maximum(mean_sq, 1e-7)
    log_scales = np.tile(0.5 * np.log(mean_sq)[:, None], (1, 3))

    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    opacity_logits = np.full(n, logit(cfg.initial_opacity))
    return GaussianCloud(points.copy(), rotations, log_scales, opacity_logits,
                         coeffs, cfg.sh_degree)


def _scatter_grads(grads_sub: GaussianGrads, keep_idx, n: int) -> GaussianGrads:
    """Embed subcloud gradients back into full-cloud arrays (zeros elsewhere)."""
    full = GaussianGrads(
        positions=np.zeros((n, 3)),
        rotations=np.zeros((n, 4)),
        log_scales=np.zeros((n, 3)),
        opacity_logits=np.zeros(n),
        sh_coeffs=np.zeros((n,) + grads_sub.sh_coeffs.shape[1:]),
        means2d=np.zeros((n, 2)),
    )
    full.positions[keep_idx] = grads_sub.positions
    full.rotations[keep_idx] = grads_sub.rotations
    full.log_scales[keep_idx] = grads_sub.log_scales
    full.opacity_logits[keep_idx] = grads_sub.opacity_logits
    full.sh_coeffs[keep_idx] = grads_sub.sh_coeffs
    full.means2d[keep_idx] = grads_sub.means2d
    return full


def densify_and_prune(cloud: GaussianCloud, opt: AdamState, avg_grads,
                      cfg: TrainConfig, scene_extent: float,
                      rng: np.random.Generator):
    """One density-control step: clone small high-gradient Gaussians, split
    large ones (children sampled from the parent, scales divided by the split
    factor), then prune transparent ones. Optimizer moments follow the cloud;
    new rows start at zero. Returns the updated (cloud, stats dict)."""
    n = len(cloud)
    scales = np.exp(cloud.log_scales)
    max_scale = scales.max(axis=1)
    over = avg_grads > cfg.densify_grad_threshold
    small = max_scale < cfg.clone_scale_fraction * scene_extent
    clone_mask = over & small
    split_mask = over & ~small

    added = int(clone_mask.sum()) + 2 * int(split_mask.sum())
    capped = n - int(split_mask.sum()) + added > cfg.max_gaussians
    if capped:
        clone_mask[:] = False
        split_mask[:] = False

    pieces = [cloud.subset(~split_mask)]
    new_rows = 0
    if clone_mask.any():
        pieces.append(cloud.subset(clone_mask & ~split_mask))
        new_rows += len(pieces[-1])
    if split_mask.any():
        parents = cloud.subset(split_mask)
        p = len(parents)
        rot = quat_to_rotmat(normalize_quaternions(parents.rotations))
        basis = rot * np.exp(parents.log_scales)[:, None, :]  # R diag(s)
        noise = rng.normal(size=(2 * p, 3))
        centers = np.repeat(parents.positions, 2, axis=0)
        samples = centers + np.einsum("mij,mj->mi", np.repeat(basis, 2, axis=0), noise)
        children = GaussianCloud(
            positions=samples,
            rotations=np.repeat(parents.rotations, 2, axis=0),
            log_scales=np.repeat(
                parents.log_scales - np.log(cfg.split_factor), 2, axis=0),
            opacity_logits=np.repeat(parents.opacity_logits, 2),
            sh_coeffs=np.repeat(parents.sh_coeffs, 2, axis=0),
            sh_degree=parents.sh_degree,
        )
        pieces.append(children)
        new_rows += 2 * p

    merged = concat_clouds(pieces)
    opt.filter_rows(~split_mask)
    opt.append_rows(new_rows)

    keep = expit(merged.opacity_logits) >= cfg.opacity_prune_threshold
    pruned = int((~keep).sum())
    if pruned:
        merged = merged.subset(keep)
        opt.filter_rows(keep)
    stats = {
        "cloned": int((clone_mask & ~split_mask).sum()),
        "split": int(split_mask.sum()),
        "pruned": pruned,
        "capped": capped,
    }
    return merged, stats


def concat_clouds(clouds) -> GaussianCloud:
    degree = clouds[0].sh_degree
    if any(c.sh_degree != degree for c in clouds):
        raise ValueError("cannot concatenate clouds of different SH degree")
    return GaussianCloud(
        np.concatenate([c.positions for c in clouds]),
        np.concatenate([c.rotations for c in clouds]),
        np.concatenate([c.log_scales for c in clouds]),
        np.concatenate([c.opacity_logits for c in clouds]),
        np.concatenate([c.sh_coeffs for c in clouds]),
        degree,
    )


def reset_opacity(cloud: GaussianCloud, opt: AdamState, ceiling: float = 0.01):
    """Clamp opacities down to `ceiling` and restart the opacity moments."""
    cloud.opacity_logits[:] = np.minimum(cloud.opacity_logits, logit(ceiling))
    opt.reset_group("opacity_logits")


def run_training(scene, cfg: TrainConfig, *, enable_perturb=False,
                 enable_dropout=False, distill: "DistillContext" = None,
                 init_cloud: GaussianCloud = None,
                 progress=None) -> TrainResult:
    """Optimize a cloud against the scene's training views.

    Args:
        scene: SceneBundle; views are split train/test and only training
            views drive gradients.
        cfg: full schedule.
        enable_perturb / enable_dropout: teacher robustness mechanisms.
        distill: when given, adds the pseudo-label loss, the periodic
            histogram loss, and budget pruning (student mode).
        init_cloud: start from this cloud instead of the scene points.
        progress: optional callable(iteration, stats_dict) for logging.
    """
    from .distill import prune_to_budget, importance_scores, structure_loss_gradient

    train_idx, _ = train_test_split(len(scene.cameras))
    cameras = [scene.cameras[i] for i in train_idx]
    targets = [scene.images[i] for i in train_idx]
    extent = scene.extent
    bg = np.asarray(cfg.background, dtype=np.float64)

    seq = np.random.SeedSequence(cfg.seed)
    r_init, r_views, r_perturb, r_dropout, r_densify = (
        np.random.default_rng(s) for s in seq.spawn(5)
    )

    if init_cloud is not None:
        cloud = init_cloud.copy()
        if cloud.sh_degree != cfg.sh_degree:
            raise ValueError(
                f"init cloud degree {cloud.sh_degree} != config {cfg.sh_degree}")
    else:
        cloud = init_cloud_from_points(scene.points, scene.point_colors, cfg, r_init)
    opt = AdamState.for_cloud(cloud)
    accum = np.zeros(len(cloud))
    denom = np.zeros(len(cloud))

    simplify_at = set()
    if distill is not None:
        simplify_at = {int(t) for t in cfg.distill.simplify_iterations}

    history = []
    last_good = cloud.copy()
    view_order = []

    for t in range(1, cfg.total_iters + 1):
        if not view_order:
            view_order = list(r_views.permutation(len(cameras)))
        vi = view_order.pop()
        cam, target = cameras[vi], targets[vi]

        if t in simplify_at and len(cloud):
            scores = importance_scores(cloud, cameras, near=cfg.near_plane)
            cloud, keep = prune_to_budget(
                cloud, scores, cfg.distill.budget,
                mode=cfg.distill.importance_mode, rng=r_densify)
            opt.filter_rows(keep)
            accum = accum[keep]
            denom = denom[keep]

        if enable_dropout:
            rate = dropout_rate(t, cfg.dropout)
            keep_mask = sample_dropout_mask(len(cloud), rate, r_dropout)
            keep_idx = np.nonzero(keep_mask)[0]
            active = cloud.subset(keep_idx)
        else:
            keep_idx = None
            active = cloud

        out = render(active, cam, bg, near=cfg.near_plane)
        if distill is not None:
            loss, grad_img = kd_loss(out.image, target, distill.pseudo_labels[vi],
                                     cfg.loss.lambda_kd, cfg.loss.lambda_dssim)
        else:
            loss, grad_img = color_loss(out.image, target, cfg.loss.lambda_dssim)
        grads = render_backward(active, cam, grad_img, out.aux, bg,
                                near=cfg.near_plane)
        if keep_idx is not None:
            grads = _scatter_grads(grads, keep_idx, len(cloud))

        if (distill is not None and cfg.distill.hist_enabled
                and t % cfg.distill.hist_interval == 0):
            hloss, hgrad = structure_loss_gradient(
                cloud.positions, distill.structure_points,
                cfg.distill.hist_grid_size)
            loss += cfg.distill.hist_weight * hloss
            grads.positions += cfg.distill.hist_weight * hgrad

        if not np.isfinite(loss):
            raise TrainingDiverged(t, last_good)

        # densification statistics: view-space gradient in NDC units
        visible = out.aux.cull.indices
        if keep_idx is not None:
            visible = keep_idx[visible]
        ndc_scale = np.array([cam.width / 2.0, cam.height / 2.0])
        gnorm = np.linalg.norm(grads.means2d[visible] * ndc_scale, axis=1)
        accum[visible] += gnorm
        denom[visible] += 1.0

        lrs = group_learning_rates(cfg.lr, extent, t, cfg.total_iters)
        adam_step(opt, grads, cloud, lrs)

        # Perturbation reads the same gradient accumulator densification is
        # about to consume and reset, so it must run first.
        if (enable_perturb and cfg.perturb.t_start <= t <= cfg.perturb.t_end
                and t % cfg.perturb.interval == 0):
            avg = np.where(denom > 0, accum / np.maximum(denom, 1.0), 0.0)
            perturb_step(cloud, avg, cfg.perturb, r_perturb, extent,
                         cfg.densify_grad_threshold)

        if (cfg.densify_from <= t < cfg.densify_until
                and t % cfg.densify_interval == 0):
            avg = np.where(denom > 0, accum / np.maximum(denom, 1.0), 0.0)
            cloud, _ = densify_and_prune(cloud, opt, avg, cfg, extent, r_densify)
            accum = np.zeros(len(cloud))
            denom = np.zeros(len(cloud))

        if (cfg.opacity_reset_interval > 0 and t % cfg.opacity_reset_interval == 0
                and t < cfg.densify_until):
            reset_opacity(cloud, opt)

        if t % cfg.log_interval == 0 or t == cfg.total_iters:
            row = {
                "iteration": t,
                "loss": float(loss),
                "train_view_psnr": psnr(np.clip(out.image, 0.0, 1.0), target),
                "n_gaussians": len(cloud),
            }
            history.append(row)
            last_good = cloud.copy()
            if progress is not None:
                progress(t, row)

    return TrainResult(cloud=cloud, history=history)


def train_teacher(scene, variant: str, cfg: TrainConfig,
                  progress=None) -> TrainResult:
    """Train one teacher. 'std': plain; 'perb': with perturbation; 'drop':
    with ramped dropout. The variant overrides the corresponding config
    switches so exactly one mechanism is active."""
    if variant not in TEACHER_VARIANTS:
        raise ValueError(f"unknown teacher variant {variant!r}; "
                         f"expected one of {TEACHER_VARIANTS}")
    return run_training(
        scene, cfg,
        enable_perturb=(variant == "perb"),
        enable_dropout=(variant == "drop"),
        progress=progress,
    )
