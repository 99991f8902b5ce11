"""Distillation stage: pseudo-label fusion, importance-driven pruning,
structure matching gradients, and the student training entry point."""

import numpy as np
import pytest

from splatdistill.config import TrainConfig
from splatdistill.distill import (
    compare_histograms,
    fuse_pseudo_labels,
    importance_scores,
    prune_to_budget,
    render_pseudo_labels,
    structure_loss_gradient,
    train_student,
)
from splatdistill.gaussians import GaussianCloud
from splatdistill.rasterizer import render, accumulated_blend_weights
from splatdistill.synthetic import SceneSpec, generate_scene
from splatdistill.training import train_teacher
from splatdistill.evaluate import train_test_split
from splatdistill.voxelhist import voxel_histogram, histogram_loss, common_bbox


def make_cloud(rng, n=10, degree=0):
    k = (degree + 1) ** 2
    return GaussianCloud(
        positions=rng.normal(size=(n, 3)) * 0.5,
        rotations=rng.normal(size=(n, 4)),
        log_scales=np.log(rng.uniform(0.05, 0.2, size=(n, 3))),
        opacity_logits=rng.uniform(-1, 1, size=n),
        sh_coeffs=rng.normal(size=(n, k, 3)) * 0.2,
        sh_degree=degree,
    )


def test_fusion_is_pixelwise_mean():
    rng = np.random.default_rng(0)
    imgs = [rng.uniform(0, 1, size=(9, 7, 3)) for _ in range(3)]
    fused = fuse_pseudo_labels(imgs)
    # brute-force per-pixel loop
    expected = np.zeros((9, 7, 3))
    for y in range(9):
        for x in range(7):
            for c in range(3):
                expected[y, x, c] = (imgs[0][y, x, c] + imgs[1][y, x, c]
                                     + imgs[2][y, x, c]) / 3.0
    assert np.max(np.abs(fused - expected)) < 1e-12


def test_fusion_permutation_invariant():
    rng = np.random.default_rng(1)
    imgs = [rng.uniform(0, 1, size=(6, 6, 3)) for _ in range(4)]
    a = fuse_pseudo_labels(imgs)
    b = fuse_pseudo_labels(imgs[::-1])
    assert np.max(np.abs(a - b)) < 1e-15


def test_fusion_validates_input():
    with pytest.raises(ValueError):
        fuse_pseudo_labels([])
    a = np.zeros((4, 4, 3))
    b = np.zeros((4, 5, 3))
    with pytest.raises(ValueError):
        fuse_pseudo_labels([a, b])


def test_render_pseudo_labels_matches_manual_fusion():
    rng = np.random.default_rng(2)
    bundle, gt = generate_scene(
        SceneSpec(n_gaussians=6, n_cameras=4, width=24, height=24), 5)
    teachers = [make_cloud(rng, n=8) for _ in range(3)]
    cams = bundle.cameras[:2]
    bg = np.zeros(3)
    out = render_pseudo_labels(teachers, cams, bg)
    assert len(out) == 2
    for ci, cam in enumerate(cams):
        manual = fuse_pseudo_labels([render(t, cam, bg).image for t in teachers])
        assert np.array_equal(out[ci], manual)


def test_importance_sums_blend_weights_over_views():
    rng = np.random.default_rng(3)
    bundle, _ = generate_scene(
        SceneSpec(n_gaussians=5, n_cameras=6, width=24, height=24), 6)
    cloud = make_cloud(rng, n=12)
    cams = bundle.cameras[:3]
    scores = importance_scores(cloud, cams)
    expected = np.zeros(12)
    for cam in cams:
        expected += accumulated_blend_weights(cloud, cam)
    assert np.allclose(scores, expected, atol=1e-12)


def test_importance_zero_for_invisible():
    rng = np.random.default_rng(4)
    cloud = make_cloud(rng, n=6)
    cloud.positions[4] = [0.0, 0.0, 100.0]  # far outside every view
    bundle, _ = generate_scene(
        SceneSpec(n_gaussians=4, n_cameras=4, width=24, height=24), 7)
    scores = importance_scores(cloud, bundle.cameras)
    assert scores[4] == 0.0
    assert scores.max() > 0


def test_prune_keeps_ceil_of_budget():
    rng = np.random.default_rng(5)
    cloud = make_cloud(rng, n=10)
    scores = np.arange(10, dtype=np.float64)
    pruned, keep = prune_to_budget(cloud, scores, 0.45)
    assert len(pruned) == 5  # ceil(0.45 * 10)
    assert list(keep) == [5, 6, 7, 8, 9]  # the top scores, original order
    assert np.array_equal(pruned.positions, cloud.positions[keep])


def test_prune_tie_break_prefers_lower_index():
    rng = np.random.default_rng(6)
    cloud = make_cloud(rng, n=6)
    scores = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0])
    _, keep = prune_to_budget(cloud, scores, 0.5)
    assert list(keep) == [0, 1, 2]


def test_prune_full_budget_is_identity():
    rng = np.random.default_rng(7)
    cloud = make_cloud(rng, n=7)
    pruned, keep = prune_to_budget(cloud, rng.uniform(size=7), 1.0)
    assert list(keep) == list(range(7))
    assert np.array_equal(pruned.positions, cloud.positions)
    pruned.positions[0, 0] = 99.0  # returned cloud must be an independent copy
    assert cloud.positions[0, 0] != 99.0


def test_prune_preserves_original_ordering():
    rng = np.random.default_rng(8)
    cloud = make_cloud(rng, n=9)
    scores = np.array([5.0, 1.0, 9.0, 3.0, 8.0, 2.0, 7.0, 0.5, 6.0])
    _, keep = prune_to_budget(cloud, scores, 0.5)
    # top-5 scores are at indices 2,4,6,8,0; keep must be sorted ascending
    assert list(keep) == [0, 2, 4, 6, 8]


def test_prune_sample_mode_reproducible_and_weighted():
    rng = np.random.default_rng(9)
    cloud = make_cloud(rng, n=50)
    scores = np.zeros(50)
    scores[:25] = 100.0
    scores[25:] = 1e-9
    a, keep_a = prune_to_budget(cloud, scores, 0.4, mode="sample",
                                rng=np.random.default_rng(42))
    b, keep_b = prune_to_budget(cloud, scores, 0.4, mode="sample",
                                rng=np.random.default_rng(42))
    assert np.array_equal(keep_a, keep_b)
    assert len(a) == 20
    # nearly all picks should come from the heavy half
    assert np.sum(keep_a < 25) >= 18
    assert np.all(np.diff(keep_a) > 0)


def test_prune_validates_budget():
    rng = np.random.default_rng(10)
    cloud = make_cloud(rng, n=4)
    with pytest.raises(ValueError):
        prune_to_budget(cloud, np.ones(4), 0.0)
    with pytest.raises(ValueError):
        prune_to_budget(cloud, np.ones(4), 1.5)
    with pytest.raises(ValueError):
        prune_to_budget(cloud, np.ones(3), 0.5)  # score length mismatch


def test_structure_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    student = rng.uniform(-0.8, 0.8, size=(25, 3))
    teacher = rng.uniform(-1.0, 1.0, size=(40, 3))
    loss, grad = structure_loss_gradient(student, teacher, grid_size=4)
    assert 0.0 <= loss <= 1.0
    h = 1e-6
    for pi in (0, 12, 24):
        for d in range(3):
            orig = student[pi, d]
            student[pi, d] = orig + h
            lp = structure_loss_gradient(student, teacher, 4)[0]
            student[pi, d] = orig - h
            lm = structure_loss_gradient(student, teacher, 4)[0]
            student[pi, d] = orig
            fd = (lp - lm) / (2 * h)
            assert abs(grad[pi, d] - fd) < 1e-6


def test_structure_loss_low_for_identical_and_descends():
    # teacher side is hard-binned, student side soft-binned, so identical
    # sets give a small positive mismatch, far below an unrelated set's
    rng = np.random.default_rng(12)
    pts = rng.uniform(-1, 1, size=(30, 3))
    loss_same, grad = structure_loss_gradient(pts, pts.copy(), grid_size=4)
    loss_other, _ = structure_loss_gradient(
        rng.uniform(-1, 1, size=(30, 3)), pts, grid_size=4)
    assert 0.0 <= loss_same < 0.3
    assert loss_same < 0.5 * loss_other
    # the gradient is a descent direction
    stepped = pts - 1e-3 * grad
    loss_step, _ = structure_loss_gradient(stepped, pts, grid_size=4)
    assert loss_step < loss_same


def test_structure_loss_uses_common_bbox():
    # student entirely outside the teacher hull still produces a valid loss
    rng = np.random.default_rng(13)
    student = rng.uniform(5.0, 6.0, size=(20, 3))
    teacher = rng.uniform(-1.0, 0.0, size=(20, 3))
    loss, _ = structure_loss_gradient(student, teacher, grid_size=4)
    assert abs(loss - 1.0) < 1e-9  # disjoint occupancy


def test_compare_histograms_consistent_with_loss():
    rng = np.random.default_rng(14)
    a = rng.uniform(-1, 1, size=(60, 3))
    b = rng.uniform(-1, 1, size=(45, 3))
    report = compare_histograms(a, b, grid_size=4)
    bmin, bmax = common_bbox(a, b)
    ha = voxel_histogram(a, bmin, bmax, 4)
    hb = voxel_histogram(b, bmin, bmax, 4)
    expected, _ = histogram_loss(ha, hb)
    assert abs(report["histogram_loss"] - expected) < 1e-12
    assert abs(report["cosine_similarity"] - (1.0 - expected)) < 1e-12
    assert report["grid_size"] == 4
    assert report["points_a"] == 60 and report["points_b"] == 45


# ---------------------------------------------------------------------------
# student training

def student_fixture():
    bundle, _ = generate_scene(
        SceneSpec(n_gaussians=4, n_cameras=8, width=24, height=24,
                  world_radius=0.7, ring_radius=2.0), 100)
    cfg = TrainConfig(
        total_iters=60, sh_degree=0, seed=5,
        densify_from=10 ** 9, opacity_reset_interval=10 ** 9,
        max_gaussians=100, log_interval=10,
    )
    cfg.distill.simplify_iterations = (30,)
    cfg.distill.budget = 0.5
    cfg.distill.hist_interval = 10
    cfg.distill.hist_grid_size = 8
    teacher_cfg = TrainConfig(
        total_iters=80, sh_degree=0, seed=1,
        densify_from=10 ** 9, opacity_reset_interval=10 ** 9,
        max_gaussians=100, log_interval=20,
    )
    teachers = [train_teacher(bundle, "std", teacher_cfg).cloud]
    return bundle, teachers, cfg


def test_train_student_prunes_to_budget():
    bundle, teachers, cfg = student_fixture()
    res = train_student(bundle, teachers, cfg)
    n0 = len(bundle.points)
    assert len(res.cloud) == int(np.ceil(0.5 * n0))
    # history records the drop at the simplify iteration
    n_at = {row["iteration"]: row["n_gaussians"] for row in res.history}
    assert n_at[20] == n0
    assert n_at[40] == len(res.cloud)


def test_train_student_deterministic():
    bundle, teachers, cfg = student_fixture()
    a = train_student(bundle, teachers, cfg)
    b = train_student(bundle, teachers, cfg)
    assert np.array_equal(a.cloud.positions, b.cloud.positions)
    assert a.history == b.history


def test_train_student_requires_teachers():
    bundle, _, cfg = student_fixture()
    with pytest.raises(ValueError):
        train_student(bundle, [], cfg)


def test_train_student_teacher_warm_start():
    bundle, teachers, cfg = student_fixture()
    cfg.distill.student_init = "teacher"
    cfg.distill.simplify_iterations = ()
    res = train_student(bundle, teachers, cfg)
    # warm start prunes the teacher to budget before optimizing
    assert len(res.cloud) == int(np.ceil(0.5 * len(teachers[0])))


def test_train_student_rejects_unknown_init():
    bundle, teachers, cfg = student_fixture()
    cfg.distill.student_init = "warm"
    with pytest.raises(ValueError):
        train_student(bundle, teachers, cfg)


def test_pseudo_labels_follow_train_split_order():
    # the view at global index 1 is the first training view; its pseudo
    # label must be the fused teacher render for that camera
    bundle, teachers, cfg = student_fixture()
    train_idx, _ = train_test_split(len(bundle.cameras))
    cams = [bundle.cameras[i] for i in train_idx]
    bg = np.asarray(cfg.background, dtype=np.float64)
    labels = render_pseudo_labels(teachers, cams, bg)
    direct = fuse_pseudo_labels(
        [render(t, bundle.cameras[train_idx[0]], bg).image for t in teachers])
    assert np.array_equal(labels[0], direct)
