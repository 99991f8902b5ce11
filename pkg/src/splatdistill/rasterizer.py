"""Differentiable CPU rasterizer for Gaussian clouds.

Forward: project, cull, depth-sort, then per-Gaussian front-to-back alpha
compositing over the pixels where the splat can matter. Backward: exact
analytic gradients for every cloud parameter, derived by reverse-mode
differentiation of the same compositing recurrence.

Per-Gaussian pixel loops are restricted to the ellipse where alpha >= 1/255
is attainable, which is bit-equivalent to iterating all pixels because
weaker contributions are skipped by the alpha floor anyway.
"""

from dataclasses import dataclass
import numpy as np

from . import sh
from .gaussians import (
    Camera,
    GaussianCloud,
    activate,
    covariance3d,
    projection_jacobian,
    DEFAULT_NEAR_PLANE,
)

ALPHA_MIN = 1.0 / 255.0   # contributions below this are skipped
ALPHA_CAP = 0.99          # per-sample alpha ceiling
STOP_TRANSMITTANCE = 1e-4  # pixel is done once remaining transmittance drops below


class RenderError(RuntimeError):
    """Raised when a cloud cannot be rendered; carries the offending index."""

    def __init__(self, message, gaussian_index=None):
        super().__init__(message)
        self.gaussian_index = gaussian_index


@dataclass
class CullResult:
    """Visible Gaussians for one view, sorted by increasing depth (ties by index)."""

    indices: np.ndarray    # (M,) int, positions into the source cloud
    depths: np.ndarray     # (M,) camera-space z
    means2d: np.ndarray    # (M, 2) pixel-space means
    cov2d: np.ndarray      # (M, 2, 2) regularized screen covariance
    opacities: np.ndarray  # (M,) activated peak alphas


@dataclass
class RenderAux:
    """Per-contributor state captured by the forward pass for reuse in backward."""

    cull: CullResult
    bboxes: np.ndarray           # (M, 4) int: x0, x1, y0, y1 inclusive; x0 > x1 if empty
    alphas: list                 # per survivor: (h, w) effective alpha, 0 where skipped
    t_before: list               # per survivor: (h, w) transmittance before compositing it
    final_transmittance: np.ndarray  # (H, W)
    background: np.ndarray       # (3,)


@dataclass
class RenderOutput:
    image: np.ndarray                # (H, W, 3) linear RGB
    final_transmittance: np.ndarray  # (H, W) light reaching the background
    aux: RenderAux


@dataclass
class GaussianGrads:
    """Loss gradients w.r.t. raw cloud parameters (zeros for non-contributors)."""

    positions: np.ndarray       # (N, 3)
    rotations: np.ndarray       # (N, 4)
    log_scales: np.ndarray      # (N, 3)
    opacity_logits: np.ndarray  # (N,)
    sh_coeffs: np.ndarray       # (N, K, 3)
    means2d: np.ndarray         # (N, 2) raw pixel-space mean gradient (densify signal)

    def scaled_by(self, factor: float):
        return GaussianGrads(
            self.positions * factor,
            self.rotations * factor,
            self.log_scales * factor,
            self.opacity_logits * factor,
            self.sh_coeffs * factor,
            self.means2d * factor,
        )


def _check_finite(cloud: GaussianCloud):
    for name in ("positions", "rotations", "log_scales", "opacity_logits", "sh_coeffs"):
        arr = getattr(cloud, name)
        flat = np.isfinite(arr).reshape(len(cloud), -1).all(axis=1)
        if not flat.all():
            idx = int(np.argmin(flat))
            raise RenderError(f"non-finite {name} at Gaussian {idx}", idx)


def _eig_max_2x2(cov2d):
    """Largest eigenvalue of symmetric 2x2 matrices, closed form."""
    a = cov2d[..., 0, 0]
    b = cov2d[..., 0, 1]
    c = cov2d[..., 1, 1]
    mid = 0.5 * (a + c)
    det = a * c - b * b
    return mid + np.sqrt(np.maximum(mid * mid - det, 0.0))


def cull_and_sort(cloud: GaussianCloud, camera: Camera,
                  near: float = DEFAULT_NEAR_PLANE) -> CullResult:
    """Frustum-cull, project, and depth-sort a cloud for one view.

    Removes Gaussians at or behind the near plane and those whose 3-sigma
    projected extent misses the image. Survivors are ordered by camera-space
    depth, ties broken by original index so the order is total.
    """
    act = activate(cloud)
    cam_pts = camera.to_camera(act.positions)
    z = cam_pts[:, 2]
    front = np.nonzero(z > near)[0]

    empty = CullResult(
        indices=np.empty(0, dtype=np.int64),
        depths=np.empty(0),
        means2d=np.empty((0, 2)),
        cov2d=np.empty((0, 2, 2)),
        opacities=np.empty(0),
    )
    if front.size == 0:
        return empty

    pf = cam_pts[front]
    means2d = pf[:, :2] * camera.focal / pf[:, 2:3] + camera.principal_point
    cov3 = covariance3d(act.rot_matrices[front], act.scales[front])
    j = projection_jacobian(pf, camera.focal)
    m = j @ camera.rotation
    cov2d = m @ cov3 @ np.swapaxes(m, 1, 2)
    cov2d[:, 0, 0] += 0.3
    cov2d[:, 1, 1] += 0.3

    if not np.all(np.isfinite(cov2d)):
        bad = int(front[np.argmin(np.isfinite(cov2d).reshape(len(front), -1).all(axis=1))])
        raise RenderError(f"non-finite projected covariance at Gaussian {bad}", bad)
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    if np.any(det <= 0.0):
        bad = int(front[np.argmax(det <= 0.0)])
        raise RenderError(f"degenerate projected covariance at Gaussian {bad}", bad)

    radius = 3.0 * np.sqrt(_eig_max_2x2(cov2d))
    on_image = (
        (means2d[:, 0] + radius >= 0.0)
        & (means2d[:, 0] - radius <= camera.width - 1.0)
        & (means2d[:, 1] + radius >= 0.0)
        & (means2d[:, 1] - radius <= camera.height - 1.0)
    )
    if not np.any(on_image):
        return empty

    keep = np.nonzero(on_image)[0]
    idx = front[keep]
    order = np.lexsort((idx, pf[keep, 2]))
    keep = keep[order]
    return CullResult(
        indices=front[keep],
        depths=pf[keep, 2],
        means2d=means2d[keep],
        cov2d=cov2d[keep],
        opacities=act.opacities[front[keep]],
    )


def _support_bboxes(cull: CullResult, width: int, height: int):
    """Inclusive pixel bboxes covering every pixel where alpha >= 1/255 can hold.

    alpha = opacity * exp(-q/2) >= 1/255 requires q <= 2*ln(255*opacity), and
    q >= |d|^2 / lambda_max bounds the ellipse by a circle of radius
    sqrt(2*ln(255*opacity)*lambda_max).
    """
    lam = _eig_max_2x2(cull.cov2d)
    logterm = np.log(np.maximum(cull.opacities * 255.0, 1e-12))
    radius = np.sqrt(2.0 * np.maximum(logterm, 0.0) * lam)
    radius[logterm <= 0.0] = -1.0  # opacity below 1/255: empty support

    x0 = np.maximum(np.ceil(cull.means2d[:, 0] - radius), 0.0)
    x1 = np.minimum(np.floor(cull.means2d[:, 0] + radius), width - 1.0)
    y0 = np.maximum(np.ceil(cull.means2d[:, 1] - radius), 0.0)
    y1 = np.minimum(np.floor(cull.means2d[:, 1] + radius), height - 1.0)
    boxes = np.stack([x0, x1, y0, y1], axis=1)
    bad = radius < 0.0
    boxes[bad] = [1.0, 0.0, 1.0, 0.0]  # canonical empty box
    return boxes.astype(np.int64)


def _survivor_colors(cloud: GaussianCloud, camera: Camera, indices):
    """View-dependent colors for survivors; returns (pre-clamp, clamped, dirs, dists)."""
    offs = cloud.positions[indices] - camera.center
    dist = np.linalg.norm(offs, axis=1)
    dirs = offs / dist[:, None]
    basis = sh.sh_basis(dirs, cloud.sh_degree)
    pre = np.einsum("mk,mkc->mc", basis, cloud.sh_coeffs[indices]) + 0.5
    return pre, np.maximum(pre, 0.0), dirs, dist, basis


def render(cloud: GaussianCloud, camera: Camera, background=None,
           near: float = DEFAULT_NEAR_PLANE) -> RenderOutput:
    """Rasterize a cloud into an image by front-to-back alpha compositing.

    Per pixel: C = sum_i c_i alpha_i T_i + background * T_final with
    T_i = prod_{j<i} (1 - alpha_j), alpha_i = min(0.99, o_i * g_i). Samples
    with alpha < 1/255 are skipped and a pixel stops accepting contributions
    once its transmittance falls below 1e-4.
    """
    _check_finite(cloud)
    if background is None:
        background = np.zeros(3)
    background = np.asarray(background, dtype=np.float64).reshape(3)

    h, w = camera.height, camera.width
    image = np.zeros((h, w, 3), dtype=np.float64)
    transmittance = np.ones((h, w), dtype=np.float64)

    cull = cull_and_sort(cloud, camera, near)
    m = len(cull.indices)
    boxes = _support_bboxes(cull, w, h)
    alphas = [None] * m
    t_before = [None] * m

    if m:
        _, colors, _, _, _ = _survivor_colors(cloud, camera, cull.indices)
        a = cull.cov2d[:, 0, 0]
        b = cull.cov2d[:, 0, 1]
        c = cull.cov2d[:, 1, 1]
        det = a * c - b * b
        conic = np.stack([c / det, -b / det, a / det], axis=1)

        for i in range(m):
            x0, x1, y0, y1 = boxes[i]
            if x0 > x1 or y0 > y1:
                continue
            dx = np.arange(x0, x1 + 1, dtype=np.float64) - cull.means2d[i, 0]
            dy = np.arange(y0, y1 + 1, dtype=np.float64) - cull.means2d[i, 1]
            dx = dx[None, :]
            dy = dy[:, None]
            quad = conic[i, 0] * dx * dx + 2.0 * conic[i, 1] * dx * dy + conic[i, 2] * dy * dy
            alpha = np.minimum(ALPHA_CAP, cull.opacities[i] * np.exp(-0.5 * quad))

            region = (slice(y0, y1 + 1), slice(x0, x1 + 1))
            t_cur = transmittance[region]
            eff = np.where((alpha >= ALPHA_MIN) & (t_cur >= STOP_TRANSMITTANCE), alpha, 0.0)

            t_before[i] = t_cur.copy()
            alphas[i] = eff
            image[region] += (eff * t_cur)[:, :, None] * colors[i]
            transmittance[region] = t_cur * (1.0 - eff)

    image += transmittance[:, :, None] * background
    aux = RenderAux(cull, boxes, alphas, t_before, transmittance, background)
    return RenderOutput(image=image, final_transmittance=transmittance, aux=aux)


def render_backward(cloud: GaussianCloud, camera: Camera, grad_image,
                    aux: RenderAux = None, background=None,
                    near: float = DEFAULT_NEAR_PLANE) -> GaussianGrads:
    """Backpropagate an image gradient through render() to all cloud parameters.

    Args:
        cloud, camera: exactly as passed to the matching forward render.
        grad_image: (H, W, 3) dL/dpixel.
        aux: forward-pass record; rendered afresh when omitted.

    Returns:
        GaussianGrads with zeros for Gaussians that contributed to no pixel.
    """
    if aux is None:
        aux = render(cloud, camera, background, near).aux
    grad_image = np.asarray(grad_image, dtype=np.float64)

    n = len(cloud)
    k = sh.num_coeffs(cloud.sh_degree)
    grads = GaussianGrads(
        positions=np.zeros((n, 3)),
        rotations=np.zeros((n, 4)),
        log_scales=np.zeros((n, 3)),
        opacity_logits=np.zeros((n,)),
        sh_coeffs=np.zeros((n, k, 3)),
        means2d=np.zeros((n, 2)),
    )
    cull = aux.cull
    m = len(cull.indices)
    if m == 0:
        return grads

    pre, colors, dirs, dists, basis = _survivor_colors(cloud, camera, cull.indices)
    a = cull.cov2d[:, 0, 0]
    b = cull.cov2d[:, 0, 1]
    c = cull.cov2d[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    d_mean2d = np.zeros((m, 2))
    d_cov2d = np.zeros((m, 2, 2))
    d_opacity = np.zeros(m)
    d_color = np.zeros((m, 3))

    # Suffix S = sum over later contributors of c*alpha*T plus background*T_final:
    # dC/dalpha_i = c_i T_i - S_i / (1 - alpha_i).
    suffix = aux.final_transmittance[:, :, None] * aux.background

    for i in range(m - 1, -1, -1):
        eff = aux.alphas[i]
        if eff is None:
            continue
        x0, x1, y0, y1 = aux.bboxes[i]
        region = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        tb = aux.t_before[i]
        gi = grad_image[region]
        weight = eff * tb

        d_color[i] = np.einsum("yxc,yx->c", gi, weight)

        dc_dalpha = colors[i] * tb[:, :, None] - suffix[region] / (1.0 - eff)[:, :, None]
        dalpha = np.einsum("yxc,yxc->yx", gi, dc_dalpha)
        live = (eff > 0.0) & (eff < ALPHA_CAP)  # capped samples have zero alpha grad
        dalpha = np.where(live, dalpha, 0.0)

        suffix[region] += weight[:, :, None] * colors[i]

        opa = cull.opacities[i]
        gval = eff / opa  # Gaussian falloff where the sample was live
        d_opacity[i] = np.sum(dalpha * gval)

        coef = dalpha * eff  # dL/dg * g = dalpha * opacity * g
        dx = np.arange(x0, x1 + 1, dtype=np.float64)[None, :] - cull.means2d[i, 0]
        dy = np.arange(y0, y1 + 1, dtype=np.float64)[:, None] - cull.means2d[i, 1]
        ux = conic[i, 0] * dx + conic[i, 1] * dy
        uy = conic[i, 1] * dx + conic[i, 2] * dy
        d_mean2d[i, 0] = np.sum(coef * ux)
        d_mean2d[i, 1] = np.sum(coef * uy)
        half = 0.5 * coef
        d_cov2d[i, 0, 0] = np.sum(half * ux * ux)
        d_cov2d[i, 0, 1] = np.sum(half * ux * uy)
        d_cov2d[i, 1, 0] = d_cov2d[i, 0, 1]
        d_cov2d[i, 1, 1] = np.sum(half * uy * uy)

    idx = cull.indices
    act = activate(cloud)
    scales = act.scales[idx]
    rot = act.rot_matrices[idx]
    q_unit = act.rotations[idx]

    # --- color path: SH coefficients and the view-direction dependence on position
    live_c = (pre > 0.0).astype(np.float64)
    dcol = d_color * live_c
    grads.sh_coeffs[idx] = np.einsum("mk,mc->mkc", basis, dcol)
    if cloud.sh_degree > 0:
        basis_grad = sh.sh_basis_grad(dirs, cloud.sh_degree)
        ddir = np.einsum("mc,mkc,mka->ma", dcol, cloud.sh_coeffs[idx], basis_grad)
        # dir = (p - cam) / |p - cam|: project out the radial component
        radial = np.einsum("ma,ma->m", ddir, dirs)
        dpos_dir = (ddir - radial[:, None] * dirs) / dists[:, None]
    else:
        dpos_dir = np.zeros((m, 3))

    # --- geometry path: screen covariance back to world covariance and mean
    cam_pts = camera.to_camera(cloud.positions[idx])
    j = projection_jacobian(cam_pts, camera.focal)
    w_rot = camera.rotation
    mproj = j @ w_rot
    cov3 = covariance3d(rot, scales)

    d_cov3 = np.swapaxes(mproj, 1, 2) @ d_cov2d @ mproj
    d_mproj = 2.0 * d_cov2d @ mproj @ cov3
    d_j = d_mproj @ w_rot.T

    x, y, z = cam_pts[:, 0], cam_pts[:, 1], cam_pts[:, 2]
    fx, fy = camera.focal
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    d_cam = np.zeros((m, 3))
    d_cam[:, 0] = d_j[:, 0, 2] * (-fx * inv_z2)
    d_cam[:, 1] = d_j[:, 1, 2] * (-fy * inv_z2)
    d_cam[:, 2] = (
        d_j[:, 0, 0] * (-fx * inv_z2)
        + d_j[:, 0, 2] * (2.0 * fx * x * inv_z2 * inv_z)
        + d_j[:, 1, 1] * (-fy * inv_z2)
        + d_j[:, 1, 2] * (2.0 * fy * y * inv_z2 * inv_z)
    )
    d_cam += np.einsum("mij,mi->mj", j, d_mean2d)
    dpos = d_cam @ w_rot + dpos_dir
    grads.positions[idx] = dpos

    # --- world covariance back to rotation and scale: cov3 = (R diag(s)) (R diag(s))^T
    m3 = rot * scales[:, None, :]
    d_m3 = 2.0 * d_cov3 @ m3
    d_rot = d_m3 * scales[:, None, :]
    d_scale = np.einsum("mrk,mrk->mk", d_m3, rot)
    grads.log_scales[idx] = d_scale * scales

    # --- rotation back to the raw quaternion through normalization
    d_q_unit = np.einsum("mij,mijk->mk", d_rot, _rotmat_quat_jacobian(q_unit))
    q_raw = cloud.rotations[idx]
    q_norm = np.linalg.norm(q_raw, axis=1)
    radial_q = np.einsum("mk,mk->m", d_q_unit, q_unit)
    grads.rotations[idx] = (d_q_unit - radial_q[:, None] * q_unit) / q_norm[:, None]

    # --- opacity through the sigmoid
    opa = cull.opacities
    grads.opacity_logits[idx] = d_opacity * opa * (1.0 - opa)

    grads.means2d[idx] = d_mean2d
    return grads


def _rotmat_quat_jacobian(q):
    """d(rotation matrix)/d(unit quaternion): (..., 3, 3, 4) for (w, x, y, z)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    jac = np.zeros(q.shape[:-1] + (3, 3, 4), dtype=np.float64)
    two = 2.0
    # dR/dw
    jac[..., 0, 1, 0] = -two * z
    jac[..., 0, 2, 0] = two * y
    jac[..., 1, 0, 0] = two * z
    jac[..., 1, 2, 0] = -two * x
    jac[..., 2, 0, 0] = -two * y
    jac[..., 2, 1, 0] = two * x
    # dR/dx
    jac[..., 0, 1, 1] = two * y
    jac[..., 0, 2, 1] = two * z
    jac[..., 1, 0, 1] = two * y
    jac[..., 1, 1, 1] = -2.0 * two * x
    jac[..., 1, 2, 1] = -two * w
    jac[..., 2, 0, 1] = two * z
    jac[..., 2, 1, 1] = two * w
    jac[..., 2, 2, 1] = -2.0 * two * x
    # dR/dy
    jac[..., 0, 0, 2] = -2.0 * two * y
    jac[..., 0, 1, 2] = two * x
    jac[..., 0, 2, 2] = two * w
    jac[..., 1, 0, 2] = two * x
    jac[..., 1, 2, 2] = two * z
    jac[..., 2, 0, 2] = -two * w
    jac[..., 2, 1, 2] = two * z
    jac[..., 2, 2, 2] = -2.0 * two * y
    # dR/dz
    jac[..., 0, 0, 3] = -2.0 * two * z
    jac[..., 0, 1, 3] = -two * w
    jac[..., 0, 2, 3] = two * x
    jac[..., 1, 0, 3] = two * w
    jac[..., 1, 1, 3] = -2.0 * two * z
    jac[..., 1, 2, 3] = two * y
    jac[..., 2, 0, 3] = two * x
    jac[..., 2, 1, 3] = two * y
    return jac


def accumulated_blend_weights(cloud: GaussianCloud, camera: Camera,
                              near: float = DEFAULT_NEAR_PLANE):
    """Sum of alpha_i * T_i over all pixels of one view, per Gaussian: (N,).

    This is each Gaussian's total contribution weight to the rendered image,
    used as the importance signal for pruning.
    """
    out = render(cloud, camera, near=near)
    scores = np.zeros(len(cloud))
    aux = out.aux
    for i, gidx in enumerate(aux.cull.indices):
        eff = aux.alphas[i]
        if eff is None:
            continue
        scores[gidx] += float(np.sum(eff * aux.t_before[i]))
    return scores
