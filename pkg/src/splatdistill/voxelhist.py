"""Voxel occupancy histograms over point sets and the cosine structure loss.

Two binning modes: hard floor binning (counting, non-differentiable) and a
soft trilinear splat whose bin weights are differentiable in the points, so
the structure loss can steer Gaussian centers.
"""

from dataclasses import dataclass
import numpy as np


@dataclass
class VoxelHistogram:
    """Occupancy counts over a regular grid inside an axis-aligned box.

    counts is flat with layout ((ix * grid_size) + iy) * grid_size + iz.
    """

    bbox_min: np.ndarray
    bbox_max: np.ndarray
    grid_size: int
    counts: np.ndarray

    def __post_init__(self):
        self.bbox_min = np.asarray(self.bbox_min, dtype=np.float64).reshape(3)
        self.bbox_max = np.asarray(self.bbox_max, dtype=np.float64).reshape(3)
        if not np.all(self.bbox_max > self.bbox_min):
            raise ValueError("bbox_max must exceed bbox_min on every axis")
        if self.grid_size < 1:
            raise ValueError("grid_size must be positive")

    @property
    def total_mass(self):
        return float(self.counts.sum())


def common_bbox(points_a, points_b, inflate: float = 1e-6):
    """Axis-aligned box covering both point sets, inflated on every side.

    The inflation is `inflate` times the diagonal length of the raw box (or
    `inflate` itself for a degenerate box), so boundary points always bin
    strictly inside.
    """
    points_a = np.asarray(points_a, dtype=np.float64)
    points_b = np.asarray(points_b, dtype=np.float64)
    if points_a.size == 0 or points_b.size == 0:
        raise ValueError("common_bbox needs non-empty point sets")
    lo = np.minimum(points_a.min(axis=0), points_b.min(axis=0))
    hi = np.maximum(points_a.max(axis=0), points_b.max(axis=0))
    pad = inflate * float(np.linalg.norm(hi - lo))
    if pad == 0.0:
        pad = inflate
    return lo - pad, hi + pad


def voxel_histogram(points, bbox_min, bbox_max, grid_size: int) -> VoxelHistogram:
    """Hard-binned occupancy histogram: each point adds 1 to the voxel whose
    floor index contains it; out-of-box points clamp to the boundary voxel."""
    points = np.asarray(points, dtype=np.float64)
    hist = VoxelHistogram(bbox_min, bbox_max, grid_size,
                          np.zeros(grid_size ** 3, dtype=np.float64))
    if points.size == 0:
        return hist
    extent = (hist.bbox_max - hist.bbox_min) / grid_size
    idx = np.floor((points - hist.bbox_min) / extent).astype(np.int64)
    idx = np.clip(idx, 0, grid_size - 1)
    flat = (idx[:, 0] * grid_size + idx[:, 1]) * grid_size + idx[:, 2]
    np.add.at(hist.counts, flat, 1.0)
    return hist


@dataclass
class SoftVoxelHistogram:
    """Trilinear occupancy histogram plus the state needed to backpropagate
    count gradients to the points that produced it."""

    hist: VoxelHistogram
    _flat: np.ndarray     # (N, 8) voxel ids per corner
    _weights: np.ndarray  # (N, 8)
    _dw_dp: np.ndarray    # (N, 8, 3) d weight / d point

    def backprop(self, count_grads):
        """Map dL/dcounts (grid_size^3,) to dL/dpoints (N, 3)."""
        count_grads = np.asarray(count_grads, dtype=np.float64)
        g = count_grads[self._flat]  # (N, 8)
        return np.einsum("nc,nca->na", g, self._dw_dp)


def soft_voxel_histogram(points, bbox_min, bbox_max, grid_size: int) -> SoftVoxelHistogram:
    """Differentiable histogram: each point splats unit mass onto the eight
    voxel centers around it with trilinear weights. Total mass equals the
    point count exactly; a point at a voxel center gives that voxel all of
    its mass. Corner indices clamp at the boundary (gradients there cancel
    because both corners land in the same voxel)."""
    points = np.asarray(points, dtype=np.float64)
    base = VoxelHistogram(bbox_min, bbox_max, grid_size,
                          np.zeros(grid_size ** 3, dtype=np.float64))
    n = points.shape[0]
    extent = (base.bbox_max - base.bbox_min) / grid_size
    # Voxel i's center sits at bbox_min + (i + 0.5) * extent.
    u = (points - base.bbox_min) / extent - 0.5
    i0 = np.floor(u)
    frac = u - i0

    corners = np.array(
        [[0, 0, 0], [0, 0, 1], [0, 1, 0], [0, 1, 1],
         [1, 0, 0], [1, 0, 1], [1, 1, 0], [1, 1, 1]],
        dtype=np.int64,
    )
    idx = i0[:, None, :].astype(np.int64) + corners[None, :, :]  # (N, 8, 3)
    idx = np.clip(idx, 0, grid_size - 1)
    flat = (idx[..., 0] * grid_size + idx[..., 1]) * grid_size + idx[..., 2]

    # per-axis weight is (1 - frac) for the low corner and frac for the high
    axis_w = np.where(corners[None, :, :] == 0, 1.0 - frac[:, None, :], frac[:, None, :])
    weights = axis_w[..., 0] * axis_w[..., 1] * axis_w[..., 2]  # (N, 8)

    # d weight / d frac_axis flips sign with the corner bit; d frac / d p = 1/extent
    sign = np.where(corners[None, :, :] == 0, -1.0, 1.0)
    dw = np.empty((n, 8, 3))
    dw[..., 0] = sign[..., 0] * axis_w[..., 1] * axis_w[..., 2]
    dw[..., 1] = sign[..., 1] * axis_w[..., 0] * axis_w[..., 2]
    dw[..., 2] = sign[..., 2] * axis_w[..., 0] * axis_w[..., 1]
    dw = dw / extent[None, None, :]

    np.add.at(base.counts, flat.reshape(-1), weights.reshape(-1))
    return SoftVoxelHistogram(hist=base, _flat=flat, _weights=weights, _dw_dp=dw)


def histogram_loss(reference: VoxelHistogram, candidate: VoxelHistogram):
    """One minus cosine similarity between two histograms on the same grid.

    Returns (loss, dL/dcandidate_counts). Scale-invariant in either input.
    """
    if reference.grid_size != candidate.grid_size:
        raise ValueError("histogram grids differ")
    if not (np.array_equal(reference.bbox_min, candidate.bbox_min)
            and np.array_equal(reference.bbox_max, candidate.bbox_max)):
        raise ValueError("histogram bounding boxes differ")
    a = reference.counts
    b = candidate.counts
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0:
        raise ValueError("reference histogram is empty")
    if nb == 0.0:
        raise ValueError("candidate histogram is empty")
    dot = float(a @ b)
    loss = 1.0 - dot / (na * nb)
    grad = -(a / (na * nb) - dot * b / (na * nb * nb * nb))
    return loss, grad


def chamfer_distance(points_a, points_b):
    """Symmetric mean squared nearest-neighbor distance between point sets.

    mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2, computed by brute force.
    """
    a = np.asarray(points_a, dtype=np.float64)
    b = np.asarray(points_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("point sets must be (N, D) with matching D")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("chamfer_distance needs non-empty point sets")
    from scipy.spatial.distance import cdist

    d2 = cdist(a, b, metric="sqeuclidean")
    return float(np.mean(d2.min(axis=1)) + np.mean(d2.min(axis=0)))
