"""Core Gaussian-cloud and camera types plus the geometry that connects them.

Parameters are stored unconstrained (log-scales, opacity logits, raw quaternions)
and mapped through activations on use, so optimizers can step freely.
"""

from dataclasses import dataclass
import numpy as np
from scipy.special import expit

from . import sh

# Low-pass term added to every projected 2x2 covariance: guarantees a minimum
# splat footprint of about one pixel and keeps the conic inverse well posed.
COV2D_REG = 0.3

DEFAULT_NEAR_PLANE = 0.01


@dataclass
class GaussianCloud:
    """Learnable scene representation.

    Attributes:
        positions: (N, 3) world-space means.
        rotations: (N, 4) quaternions in (w, x, y, z) order; normalized on use.
        log_scales: (N, 3) log of per-axis standard deviations.
        opacity_logits: (N,) pre-sigmoid opacities.
        sh_coeffs: (N, K, 3) SH coefficients per color channel, K = (sh_degree+1)^2.
        sh_degree: band limit of the stored coefficients.
    """

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray
    sh_degree: int = 0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        self.rotations = np.atleast_2d(np.asarray(self.rotations, dtype=np.float64))
        self.log_scales = np.atleast_2d(np.asarray(self.log_scales, dtype=np.float64))
        self.opacity_logits = np.atleast_1d(
            np.asarray(self.opacity_logits, dtype=np.float64)
        )
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=np.float64)

    def __len__(self):
        return self.positions.shape[0]

    def validate(self):
        n = len(self)
        k = sh.num_coeffs(self.sh_degree)
        if self.positions.shape != (n, 3):
            raise ValueError(f"positions shape {self.positions.shape} != ({n}, 3)")
        if self.rotations.shape != (n, 4):
            raise ValueError(f"rotations shape {self.rotations.shape} != ({n}, 4)")
        if self.log_scales.shape != (n, 3):
            raise ValueError(f"log_scales shape {self.log_scales.shape} != ({n}, 3)")
        if self.opacity_logits.shape != (n,):
            raise ValueError(
                f"opacity_logits shape {self.opacity_logits.shape} != ({n},)"
            )
        if self.sh_coeffs.shape != (n, k, 3):
            raise ValueError(
                f"sh_coeffs shape {self.sh_coeffs.shape} != ({n}, {k}, 3) "
                f"for degree {self.sh_degree}"
            )
        for name in ("positions", "rotations", "log_scales", "opacity_logits", "sh_coeffs"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                idx = int(np.argwhere(~np.isfinite(arr).reshape(n, -1).all(axis=1))[0, 0])
                raise ValueError(f"non-finite {name} at Gaussian {idx}")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("zero-norm quaternion")
        return self

    def copy(self):
        return GaussianCloud(
            self.positions.copy(),
            self.rotations.copy(),
            self.log_scales.copy(),
            self.opacity_logits.copy(),
            self.sh_coeffs.copy(),
            self.sh_degree,
        )

    def subset(self, index):
        """New cloud containing rows selected by a boolean mask or index array."""
        return GaussianCloud(
            self.positions[index],
            self.rotations[index],
            self.log_scales[index],
            self.opacity_logits[index],
            self.sh_coeffs[index],
            self.sh_degree,
        )


@dataclass
class ActivatedGaussians:
    """Cloud parameters mapped through their activations."""

    positions: np.ndarray      # (N, 3)
    rotations: np.ndarray      # (N, 4) unit quaternions
    rot_matrices: np.ndarray   # (N, 3, 3)
    scales: np.ndarray         # (N, 3) positive
    opacities: np.ndarray      # (N,) in (0, 1)
    sh_coeffs: np.ndarray      # (N, K, 3)


def activate(cloud: GaussianCloud) -> ActivatedGaussians:
    q = normalize_quaternions(cloud.rotations)
    return ActivatedGaussians(
        positions=cloud.positions,
        rotations=q,
        rot_matrices=quat_to_rotmat(q),
        scales=np.exp(cloud.log_scales),
        opacities=expit(cloud.opacity_logits),
        sh_coeffs=cloud.sh_coeffs,
    )


# ---------------------------------------------------------------------------
# rotations

def normalize_quaternions(q):
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_rotmat(q):
    """Unit quaternions (..., 4) in (w, x, y, z) order to rotation matrices (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    m[..., 0, 1] = 2.0 * (x * y - w * z)
    m[..., 0, 2] = 2.0 * (x * z + w * y)
    m[..., 1, 0] = 2.0 * (x * y + w * z)
    m[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    m[..., 1, 2] = 2.0 * (y * z - w * x)
    m[..., 2, 0] = 2.0 * (x * z - w * y)
    m[..., 2, 1] = 2.0 * (y * z + w * x)
    m[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return m


def rotmat_to_quat(m):
    """Rotation matrices (..., 3, 3) to unit quaternions (..., 4), w >= 0 canonical.

    Shepperd's method: pick the largest of (w, x, y, z) from the diagonal to
    avoid the cancellation each individual formula suffers near its own zero.
    """
    m = np.asarray(m, dtype=np.float64)
    batch = m.shape[:-2]
    mm = m.reshape((-1, 3, 3))
    t = np.stack(
        [
            1.0 + mm[:, 0, 0] + mm[:, 1, 1] + mm[:, 2, 2],
            1.0 + mm[:, 0, 0] - mm[:, 1, 1] - mm[:, 2, 2],
            1.0 - mm[:, 0, 0] + mm[:, 1, 1] - mm[:, 2, 2],
            1.0 - mm[:, 0, 0] - mm[:, 1, 1] + mm[:, 2, 2],
        ],
        axis=1,
    )
    best = np.argmax(t, axis=1)
    r = np.sqrt(np.maximum(t[np.arange(len(mm)), best], 0.0))
    q = np.empty((len(mm), 4), dtype=np.float64)
    inv = np.where(r > 0, 0.5 / np.maximum(r, 1e-300), 0.0)
    for case in range(4):
        sel = best == case
        if not np.any(sel):
            continue
        s, iv = 0.5 * r[sel], inv[sel]
        a = mm[sel]
        if case == 0:
            q[sel, 0] = s
            q[sel, 1] = (a[:, 2, 1] - a[:, 1, 2]) * iv
            q[sel, 2] = (a[:, 0, 2] - a[:, 2, 0]) * iv
            q[sel, 3] = (a[:, 1, 0] - a[:, 0, 1]) * iv
        elif case == 1:
            q[sel, 0] = (a[:, 2, 1] - a[:, 1, 2]) * iv
            q[sel, 1] = s
            q[sel, 2] = (a[:, 0, 1] + a[:, 1, 0]) * iv
            q[sel, 3] = (a[:, 0, 2] + a[:, 2, 0]) * iv
        elif case == 2:
            q[sel, 0] = (a[:, 0, 2] - a[:, 2, 0]) * iv
            q[sel, 1] = (a[:, 0, 1] + a[:, 1, 0]) * iv
            q[sel, 2] = s
            q[sel, 3] = (a[:, 1, 2] + a[:, 2, 1]) * iv
        else:
            q[sel, 0] = (a[:, 1, 0] - a[:, 0, 1]) * iv
            q[sel, 1] = (a[:, 0, 2] + a[:, 2, 0]) * iv
            q[sel, 2] = (a[:, 1, 2] + a[:, 2, 1]) * iv
            q[sel, 3] = s
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    flip = q[:, 0] < 0
    q[flip] = -q[flip]
    return q.reshape(batch + (4,))


def rotation_to_6d(m):
    """First two columns of a rotation matrix, column-major: (..., 6)."""
    m = np.asarray(m, dtype=np.float64)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def rotation_from_6d(v):
    """Gram-Schmidt a 6D rotation representation back to (..., 3, 3).

    Raises ValueError on degenerate input: first column shorter than 1e-9,
    or the two columns parallel within 1e-9.
    """
    v = np.asarray(v, dtype=np.float64)
    c1, c2 = v[..., :3], v[..., 3:]
    n1 = np.linalg.norm(c1, axis=-1)
    n2 = np.linalg.norm(c2, axis=-1)
    if np.any(n1 < 1e-9) or np.any(n2 < 1e-9):
        raise ValueError("degenerate 6D rotation: near-zero column")
    b1 = c1 / n1[..., None]
    cosang = np.einsum("...i,...i->...", b1, c2 / n2[..., None])
    if np.any(np.abs(cosang) > 1.0 - 1e-9):
        raise ValueError("degenerate 6D rotation: columns nearly parallel")
    c2p = c2 - np.einsum("...i,...i->...", b1, c2)[..., None] * b1
    b2 = c2p / np.linalg.norm(c2p, axis=-1, keepdims=True)
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1)


def random_rotations(rng: np.random.Generator, n: int):
    """Uniformly random unit quaternions, (n, 4)."""
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# covariance

def covariance3d(rotation, scale):
    """World-space covariance R diag(s)^2 R^T.

    Args:
        rotation: (..., 4) quaternion(s) or (..., 3, 3) rotation matrices.
        scale: (..., 3) positive per-axis standard deviations.

    Returns:
        (..., 3, 3) symmetric positive definite matrices.
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape[-1] == 4:
        r = quat_to_rotmat(normalize_quaternions(rotation))
    elif rotation.shape[-2:] == (3, 3):
        r = rotation
    else:
        raise ValueError(f"rotation shape {rotation.shape} is neither quaternion nor matrix")
    s = np.asarray(scale, dtype=np.float64)
    m = r * s[..., None, :]  # columns scaled: M = R diag(s)
    return m @ np.swapaxes(m, -1, -2)


# ---------------------------------------------------------------------------
# cameras

@dataclass
class Camera:
    """Pinhole camera; world_to_camera is the 3x4 [R|t] with camera-space z forward."""

    focal: np.ndarray            # (2,) fx, fy in pixels
    principal_point: np.ndarray  # (2,) cx, cy in pixels
    world_to_camera: np.ndarray  # (3, 4) row-major [R|t]
    width: int
    height: int
    name: str = ""

    def __post_init__(self):
        self.focal = np.asarray(self.focal, dtype=np.float64).reshape(2)
        self.principal_point = np.asarray(
            self.principal_point, dtype=np.float64
        ).reshape(2)
        self.world_to_camera = np.asarray(
            self.world_to_camera, dtype=np.float64
        ).reshape(3, 4)
        r = self.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
            raise ValueError(f"camera {self.name!r}: rotation block not orthonormal")

    @property
    def rotation(self):
        return self.world_to_camera[:, :3]

    @property
    def translation(self):
        return self.world_to_camera[:, 3]

    @property
    def center(self):
        """Camera position in world space: -R^T t."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points):
        """World points (..., 3) into camera space."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation


def look_at_camera(eye, target, up, focal, width, height, name=""):
    """Build a camera at `eye` looking toward `target` (camera z points at the target)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    # Screen y grows downward, so the camera's y axis points against the up vector.
    right = np.cross(np.asarray(up, dtype=np.float64), fwd)
    nr = np.linalg.norm(right)
    if nr < 1e-9:
        raise ValueError("look_at_camera: view direction parallel to up")
    right = right / nr
    down = np.cross(fwd, right)
    r = np.stack([right, down, fwd], axis=0)
    t = -r @ eye
    focal = np.broadcast_to(np.asarray(focal, dtype=np.float64), (2,))
    pp = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    return Camera(focal, pp, np.concatenate([r, t[:, None]], axis=1), width, height, name)


def projection_jacobian(cam_points, focal):
    """Jacobian of the pinhole projection at camera-space points.

    Args:
        cam_points: (..., 3) with z > 0.
        focal: (2,) fx, fy.

    Returns:
        (..., 2, 3): rows are d(pixel_x)/d(x,y,z) and d(pixel_y)/d(x,y,z).
    """
    p = np.asarray(cam_points, dtype=np.float64)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    fx, fy = focal[0], focal[1]
    j = np.zeros(p.shape[:-1] + (2, 3), dtype=np.float64)
    inv_z = 1.0 / z
    j[..., 0, 0] = fx * inv_z
    j[..., 0, 2] = -fx * x * inv_z * inv_z
    j[..., 1, 1] = fy * inv_z
    j[..., 1, 2] = -fy * y * inv_z * inv_z
    return j


def project_points(camera: Camera, positions):
    """World positions to (pixels (..., 2), depths (...,), cam_points (..., 3))."""
    cam = camera.to_camera(positions)
    z = cam[..., 2]
    px = cam[..., :2] * camera.focal / z[..., None] + camera.principal_point
    return px, z, cam


def project_covariance(cov3d, camera: Camera, position, near: float = DEFAULT_NEAR_PLANE):
    """Project world covariance(s) to screen space: J W Sigma W^T J^T + reg*I.

    Args:
        cov3d: (..., 3, 3) world covariance.
        camera: target view.
        position: (..., 3) world mean(s); camera-space depth must exceed `near`.

    Returns:
        (..., 2, 2) positive definite screen covariance.
    """
    cov3d = np.asarray(cov3d, dtype=np.float64)
    cam = camera.to_camera(position)
    if np.any(cam[..., 2] <= near):
        raise ValueError("project_covariance: point behind the near plane")
    j = projection_jacobian(cam, camera.focal)
    w = camera.rotation
    m = j @ w  # (..., 2, 3)
    cov2d = m @ cov3d @ np.swapaxes(m, -1, -2)
    cov2d = cov2d + COV2D_REG * np.eye(2)
    return cov2d


def gaussian_weight(pixel, mean2d, cov2d):
    """Unnormalized Gaussian falloff exp(-0.5 d^T Sigma'^-1 d) at a pixel.

    Uses the explicit 2x2 inverse. Equals 1 exactly when pixel == mean2d.
    Supports broadcasting over leading dimensions.
    """
    pixel = np.asarray(pixel, dtype=np.float64)
    mean2d = np.asarray(mean2d, dtype=np.float64)
    cov2d = np.asarray(cov2d, dtype=np.float64)
    d = pixel - mean2d
    a = cov2d[..., 0, 0]
    b = cov2d[..., 0, 1]
    c = cov2d[..., 1, 1]
    det = a * c - b * b
    dx, dy = d[..., 0], d[..., 1]
    # d^T Sigma^-1 d expanded through the adjugate
    quad = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
    return np.exp(-0.5 * quad)


def conic_from_cov2d(cov2d):
    """Inverse 2x2 covariance as (a, b, c) with inverse = [[a, b], [b, c]]."""
    cov2d = np.asarray(cov2d, dtype=np.float64)
    a = cov2d[..., 0, 0]
    b = cov2d[..., 0, 1]
    c = cov2d[..., 1, 1]
    det = a * c - b * b
    return c / det, -b / det, a / det, det
