"""Training mechanics: dropout schedule, gradient-driven perturbation,
density control, opacity resets, and the end-to-end loop contract."""

import numpy as np
import pytest
from scipy.special import expit, logit

from splatdistill.config import TrainConfig, DropoutConfig, PerturbConfig
from splatdistill.gaussians import GaussianCloud, quat_to_rotmat
from splatdistill.optim import AdamState
from splatdistill.synthetic import SceneSpec, generate_scene
from splatdistill.training import (
    TrainingDiverged,
    concat_clouds,
    densify_and_prune,
    dropout_rate,
    init_cloud_from_points,
    perturb_step,
    reset_opacity,
    run_training,
    sample_dropout_mask,
    train_teacher,
)
from splatdistill.scene import SceneBundle
from splatdistill.evaluate import train_test_split, evaluate_cloud


def make_cloud(rng, n=6, degree=0):
    k = (degree + 1) ** 2
    return GaussianCloud(
        positions=rng.normal(size=(n, 3)),
        rotations=rng.normal(size=(n, 4)),
        log_scales=rng.normal(size=(n, 3)) * 0.2 - 2.0,
        opacity_logits=rng.normal(size=n),
        sh_coeffs=rng.normal(size=(n, k, 3)) * 0.2,
        sh_degree=degree,
    )


# ---------------------------------------------------------------------------
# dropout schedule

def test_dropout_rate_published_anchors():
    cfg = DropoutConfig(enabled=True, r_init=0.2, t0=500, t1=15000)
    assert dropout_rate(500, cfg) == 0.0
    assert dropout_rate(15000, cfg) == 0.2
    assert dropout_rate(7750, cfg) == 0.1  # exact midpoint of the ramp


def test_dropout_rate_clamps_outside_window():
    cfg = DropoutConfig(enabled=True, r_init=0.2, t0=500, t1=15000)
    assert dropout_rate(0, cfg) == 0.0
    assert dropout_rate(499, cfg) == 0.0
    assert dropout_rate(10 ** 7, cfg) == 0.2


def test_dropout_rate_linear_in_between():
    cfg = DropoutConfig(enabled=True, r_init=0.3, t0=1000, t1=2000)
    for t in (1250, 1500, 1750):
        expected = 0.3 * (t - 1000) / 1000
        assert dropout_rate(t, cfg) == expected


def test_dropout_mask_rate_and_extremes():
    rng = np.random.default_rng(0)
    n = 200000
    keep = sample_dropout_mask(n, 0.25, rng)
    assert keep.dtype == bool and keep.shape == (n,)
    assert abs(keep.mean() - 0.75) < 0.005
    assert sample_dropout_mask(50, 0.0, rng).all()
    assert not sample_dropout_mask(50, 1.0, rng).any()


# ---------------------------------------------------------------------------
# perturbation

def test_perturb_noop_below_threshold():
    rng = np.random.default_rng(1)
    cloud = make_cloud(rng)
    before = cloud.copy()
    cfg = PerturbConfig(enabled=True)
    count = perturb_step(cloud, np.zeros(len(cloud)), cfg,
                         np.random.default_rng(2), 1.0, 0.0002)
    assert count == 0
    assert np.array_equal(cloud.positions, before.positions)
    assert np.array_equal(cloud.rotations, before.rotations)


def test_perturb_touches_only_selected_rows():
    rng = np.random.default_rng(3)
    cloud = make_cloud(rng, n=8)
    before = cloud.copy()
    grads = np.zeros(8)
    grads[[2, 5]] = 1.0
    cfg = PerturbConfig(enabled=True)
    count = perturb_step(cloud, grads, cfg, np.random.default_rng(4), 2.0, 0.5)
    assert count == 2
    changed = np.any(cloud.positions != before.positions, axis=1)
    assert list(np.nonzero(changed)[0]) == [2, 5]
    untouched = [0, 1, 3, 4, 6, 7]
    assert np.array_equal(cloud.log_scales[untouched], before.log_scales[untouched])
    assert np.array_equal(cloud.opacity_logits[untouched],
                          before.opacity_logits[untouched])


def test_perturb_rotations_stay_valid():
    # noise enters through the 6D representation, so results must stay
    # unit-norm and orthonormal no matter the draw
    rng = np.random.default_rng(5)
    cloud = make_cloud(rng, n=1000)
    cfg = PerturbConfig(enabled=True, sigma_rotation=0.3)
    perturb_step(cloud, np.ones(1000), cfg, np.random.default_rng(6), 1.0, 0.5)
    assert np.allclose(np.linalg.norm(cloud.rotations, axis=1), 1.0, atol=1e-9)
    mats = quat_to_rotmat(cloud.rotations)
    eye = np.einsum("nij,nkj->nik", mats, mats)
    assert np.max(np.abs(eye - np.eye(3))) < 1e-9
    assert np.allclose(np.linalg.det(mats), 1.0, atol=1e-9)


def test_perturb_position_noise_scales_with_extent():
    rng = np.random.default_rng(7)
    cloud_a = make_cloud(rng, n=4000)
    cloud_b = cloud_a.copy()
    before = cloud_a.positions.copy()
    cfg = PerturbConfig(enabled=True)
    perturb_step(cloud_a, np.ones(4000), cfg, np.random.default_rng(8), 1.0, 0.5)
    perturb_step(cloud_b, np.ones(4000), cfg, np.random.default_rng(8), 10.0, 0.5)
    da = np.std(cloud_a.positions - before)
    db = np.std(cloud_b.positions - before)
    assert abs(da - 0.01) < 0.001       # sigma defaults to 0.01 * extent
    assert abs(db / da - 10.0) < 0.05


def test_perturb_explicit_threshold_overrides_default():
    rng = np.random.default_rng(9)
    cloud = make_cloud(rng, n=3)
    cfg = PerturbConfig(enabled=True, grad_threshold=5.0)
    count = perturb_step(cloud, np.array([1.0, 4.9, 5.1]), cfg,
                         np.random.default_rng(10), 1.0, 0.0)
    assert count == 1


# ---------------------------------------------------------------------------
# initialization

def test_init_cloud_from_points_basic_contract():
    rng = np.random.default_rng(11)
    pts = rng.normal(size=(40, 3))
    colors = rng.uniform(0, 1, size=(40, 3))
    cfg = TrainConfig(sh_degree=2, initial_opacity=0.1)
    cloud = init_cloud_from_points(pts, colors, cfg, np.random.default_rng(0))
    assert len(cloud) == 40
    assert cloud.sh_coeffs.shape == (40, 9, 3)
    assert np.array_equal(cloud.positions, pts)
    # identity rotations, uniform starting opacity
    assert np.allclose(cloud.rotations, [1.0, 0, 0, 0])
    assert np.allclose(expit(cloud.opacity_logits), 0.1)
    # isotropic scales set from the local point spacing
    assert np.allclose(cloud.log_scales, cloud.log_scales[:, :1])
    # higher bands start at zero so initial color is view-independent
    assert np.all(cloud.sh_coeffs[:, 1:, :] == 0.0)


def test_init_cloud_scales_follow_density():
    rng = np.random.default_rng(12)
    dense = rng.normal(size=(100, 3)) * 0.1
    sparse = rng.normal(size=(100, 3)) * 10.0
    cfg = TrainConfig()
    c_dense = init_cloud_from_points(dense, np.full((100, 3), 0.5), cfg,
                                     np.random.default_rng(0))
    c_sparse = init_cloud_from_points(sparse, np.full((100, 3), 0.5), cfg,
                                      np.random.default_rng(0))
    assert c_dense.log_scales.mean() < c_sparse.log_scales.mean()


# ---------------------------------------------------------------------------
# density control

def densify_fixture(opacities=(0.8, 0.8, 0.8, 0.8)):
    n = len(opacities)
    cloud = GaussianCloud(
        positions=np.arange(n * 3, dtype=np.float64).reshape(n, 3),
        rotations=np.tile([1.0, 0, 0, 0], (n, 1)),
        log_scales=np.zeros((n, 3)),
        opacity_logits=logit(np.asarray(opacities, dtype=np.float64)),
        sh_coeffs=np.zeros((n, 1, 3)),
        sh_degree=0,
    )
    return cloud


def test_densify_clones_small_high_gradient():
    cloud = densify_fixture()
    cloud.log_scales[:] = np.log(0.001)  # small next to extent 1.0
    opt = AdamState.for_cloud(cloud)
    cfg = TrainConfig(densify_grad_threshold=0.5, max_gaussians=100)
    grads = np.array([1.0, 0.0, 0.0, 1.0])
    out, stats = densify_and_prune(cloud, opt, grads, cfg, 1.0,
                                   np.random.default_rng(13))
    assert stats == {"cloned": 2, "split": 0, "pruned": 0, "capped": False}
    assert len(out) == 6
    # clones are exact copies appended after the survivors
    assert np.array_equal(out.positions[4], cloud.positions[0])
    assert np.array_equal(out.positions[5], cloud.positions[3])
    assert opt.m["positions"].shape[0] == 6


def test_densify_splits_large_high_gradient():
    cloud = densify_fixture()
    cloud.log_scales[:] = np.log(0.5)  # large next to extent 1.0
    opt = AdamState.for_cloud(cloud)
    cfg = TrainConfig(densify_grad_threshold=0.5, max_gaussians=100,
                      split_factor=1.6)
    grads = np.array([0.0, 1.0, 0.0, 0.0])
    out, stats = densify_and_prune(cloud, opt, grads, cfg, 1.0,
                                   np.random.default_rng(14))
    assert stats["split"] == 1 and stats["cloned"] == 0
    # parent removed, two children appended: 4 - 1 + 2
    assert len(out) == 5
    kept = cloud.positions[[0, 2, 3]]
    assert np.array_equal(out.positions[:3], kept)
    children_scales = np.exp(out.log_scales[3:])
    assert np.allclose(children_scales, 0.5 / 1.6)
    # children sampled from the parent's own footprint: within a few sigma
    d = np.linalg.norm(out.positions[3:] - cloud.positions[1], axis=1)
    assert np.all(d < 5 * 0.5 * np.sqrt(3))
    assert np.all(d > 0)


def test_densify_split_children_scatter_matches_parent_shape():
    # anisotropic parent: children spread along the long axis
    cloud = densify_fixture(opacities=(0.9,))
    cloud.log_scales[0] = np.log([1.0, 0.01, 0.01])
    opt = AdamState.for_cloud(cloud)
    cfg = TrainConfig(densify_grad_threshold=0.5, max_gaussians=1000)
    rng = np.random.default_rng(15)
    offsets = []
    for _ in range(het := 300):
        out, _ = densify_and_prune(cloud.copy(), AdamState.for_cloud(cloud),
                                   np.array([1.0]), cfg, 100.0, rng)
        offsets.append(out.positions - cloud.positions[0])
    offsets = np.concatenate(offsets)
    spread = offsets.std(axis=0)
    assert spread[0] > 20 * spread[1]
    assert abs(spread[0] - 1.0) < 0.1


def test_densify_prunes_transparent():
    cloud = densify_fixture(opacities=(0.8, 0.001, 0.8, 0.002))
    opt = AdamState.for_cloud(cloud)
    cfg = TrainConfig(densify_grad_threshold=0.5, opacity_prune_threshold=0.005)
    out, stats = densify_and_prune(cloud, opt, np.zeros(4), cfg, 1.0,
                                   np.random.default_rng(16))
    assert stats["pruned"] == 2
    assert len(out) == 2
    assert np.array_equal(out.positions, cloud.positions[[0, 2]])
    assert opt.m["positions"].shape[0] == 2


def test_densify_cap_blocks_growth_but_not_pruning():
    cloud = densify_fixture(opacities=(0.8, 0.8, 0.001, 0.8))
    opt = AdamState.for_cloud(cloud)
    cfg = TrainConfig(densify_grad_threshold=0.5, max_gaussians=4,
                      opacity_prune_threshold=0.005)
    grads = np.ones(4)
    out, stats = densify_and_prune(cloud, opt, grads, cfg, 1.0,
                                   np.random.default_rng(17))
    assert stats["capped"] is True
    assert stats["cloned"] == 0 and stats["split"] == 0
    assert stats["pruned"] == 1
    assert len(out) == 3


def test_concat_clouds_rejects_mixed_degree():
    rng = np.random.default_rng(18)
    with pytest.raises(ValueError):
        concat_clouds([make_cloud(rng, degree=0), make_cloud(rng, degree=1)])


def test_reset_opacity_clamps_down_only():
    rng = np.random.default_rng(19)
    cloud = make_cloud(rng, n=5)
    cloud.opacity_logits = logit(np.array([0.9, 0.5, 0.004, 0.05, 0.99]))
    opt = AdamState.for_cloud(cloud)
    opt.m["opacity_logits"][:] = 1.0
    reset_opacity(cloud, opt, ceiling=0.01)
    ops = expit(cloud.opacity_logits)
    assert np.allclose(ops[[0, 1, 3, 4]], 0.01)
    assert np.isclose(ops[2], 0.004)  # already below the ceiling: untouched
    assert np.all(opt.m["opacity_logits"] == 0.0)


# ---------------------------------------------------------------------------
# end-to-end loop

def small_scene():
    spec = SceneSpec(n_gaussians=4, n_cameras=8, width=24, height=24,
                     world_radius=0.7, ring_radius=2.0)
    return generate_scene(spec, 100)


def small_config(iters=60):
    cfg = TrainConfig(
        total_iters=iters, sh_degree=0, seed=3,
        densify_from=20, densify_until=40, densify_interval=20,
        opacity_reset_interval=10 ** 9, max_gaussians=50, log_interval=10,
    )
    cfg.perturb.t_start = 20
    cfg.perturb.t_end = 40
    cfg.perturb.interval = 20
    cfg.dropout.t0 = 10
    cfg.dropout.t1 = 40
    return cfg


def test_run_training_is_deterministic():
    bundle, _ = small_scene()
    a = run_training(bundle, small_config())
    b = run_training(bundle, small_config())
    assert np.array_equal(a.cloud.positions, b.cloud.positions)
    assert np.array_equal(a.cloud.sh_coeffs, b.cloud.sh_coeffs)
    assert a.history == b.history


def test_run_training_loss_decreases():
    bundle, _ = small_scene()
    res = run_training(bundle, small_config(iters=120))
    first = res.history[0]["loss"]
    last = res.history[-1]["loss"]
    assert last < first * 0.7
    assert res.history[-1]["iteration"] == 120
    for row in res.history:
        assert set(row) == {"iteration", "loss", "train_view_psnr", "n_gaussians"}


def test_teacher_variant_validation():
    bundle, _ = small_scene()
    with pytest.raises(ValueError, match="variant"):
        train_teacher(bundle, "mean", small_config())


def test_std_teacher_equals_plain_run_bitwise():
    # with perturbation and dropout off, the std variant must consume RNG
    # streams identically to a plain run
    bundle, _ = small_scene()
    a = train_teacher(bundle, "std", small_config())
    b = run_training(bundle, small_config())
    assert np.array_equal(a.cloud.positions, b.cloud.positions)
    assert np.array_equal(a.cloud.rotations, b.cloud.rotations)
    assert np.array_equal(a.cloud.opacity_logits, b.cloud.opacity_logits)


def test_teacher_variants_diverge_from_std():
    bundle, _ = small_scene()
    std = train_teacher(bundle, "std", small_config())
    perb = train_teacher(bundle, "perb", small_config())
    drop = train_teacher(bundle, "drop", small_config())
    assert not np.array_equal(std.cloud.positions, perb.cloud.positions)
    assert not np.array_equal(std.cloud.positions, drop.cloud.positions)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # NaN target by design
def test_training_diverges_on_non_finite_target():
    bundle, _ = small_scene()
    images = [img.copy() for img in bundle.images]
    images[3][5, 5, 0] = np.inf  # a training view (view 0 is held out)
    broken = SceneBundle(cameras=bundle.cameras, images=images,
                         points=bundle.points, point_colors=bundle.point_colors)
    with pytest.raises(TrainingDiverged) as exc_info:
        run_training(broken, small_config())
    assert exc_info.value.last_good is not None


def test_train_test_split_every_eighth():
    train_idx, test_idx = train_test_split(16)
    assert list(test_idx) == [0, 8]
    assert len(train_idx) == 14
    assert set(train_idx) | set(test_idx) == set(range(16))


def test_small_scene_converges_to_high_psnr():
    # 4 Gaussians, 8 views at 24px: vanilla optimization must fit this
    bundle, _ = small_scene()
    cfg = small_config(iters=2000)
    cfg.densify_until = 500
    res = run_training(bundle, cfg)
    ev = evaluate_cloud(res.cloud, bundle, "train")
    assert ev["mean_psnr"] >= 25.0
