"""Real spherical harmonics for view-dependent color.

Hardcoded low-order basis (degree <= 3) with analytic direction gradients,
so the renderer backward pass never needs numeric differentiation.
"""

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

MAX_DEGREE = 3


def num_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def rgb_to_dc(rgb):
    """Convert base color to the degree-0 coefficient (inverse of the +0.5 offset)."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / C0


def dc_to_rgb(dc):
    return np.asarray(dc, dtype=np.float64) * C0 + 0.5


def sh_basis(dirs, degree: int):
    """Evaluate the real SH basis at unit directions.

    Args:
        dirs: (..., 3) unit view directions.
        degree: band limit, 0..3.

    Returns:
        (..., (degree+1)^2) basis values.
    """
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"unsupported SH degree {degree}")
    dirs = np.asarray(dirs, dtype=np.float64)
    out = np.empty(dirs.shape[:-1] + (num_coeffs(degree),), dtype=np.float64)
    out[..., 0] = C0
    if degree >= 1:
        x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        out[..., 1] = -C1 * y
        out[..., 2] = C1 * z
        out[..., 3] = -C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out[..., 4] = C2[0] * xy
        out[..., 5] = C2[1] * yz
        out[..., 6] = C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = C2[3] * xz
        out[..., 8] = C2[4] * (xx - yy)
    if degree >= 3:
        out[..., 9] = C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = C3[1] * xy * z
        out[..., 11] = C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = C3[5] * z * (xx - yy)
        out[..., 15] = C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis_grad(dirs, degree: int):
    """Jacobian of sh_basis w.r.t. the direction components.

    Returns (..., (degree+1)^2, 3); entry [..., k, a] = d basis_k / d dir_a.
    """
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"unsupported SH degree {degree}")
    dirs = np.asarray(dirs, dtype=np.float64)
    grad = np.zeros(dirs.shape[:-1] + (num_coeffs(degree), 3), dtype=np.float64)
    if degree >= 1:
        x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        grad[..., 1, 1] = -C1
        grad[..., 2, 2] = C1
        grad[..., 3, 0] = -C1
    if degree >= 2:
        grad[..., 4, 0] = C2[0] * y
        grad[..., 4, 1] = C2[0] * x
        grad[..., 5, 1] = C2[1] * z
        grad[..., 5, 2] = C2[1] * y
        grad[..., 6, 0] = C2[2] * (-2.0 * x)
        grad[..., 6, 1] = C2[2] * (-2.0 * y)
        grad[..., 6, 2] = C2[2] * (4.0 * z)
        grad[..., 7, 0] = C2[3] * z
        grad[..., 7, 2] = C2[3] * x
        grad[..., 8, 0] = C2[4] * (2.0 * x)
        grad[..., 8, 1] = C2[4] * (-2.0 * y)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        grad[..., 9, 0] = C3[0] * (6.0 * x * y)
        grad[..., 9, 1] = C3[0] * (3.0 * xx - 3.0 * yy)
        grad[..., 10, 0] = C3[1] * y * z
        grad[..., 10, 1] = C3[1] * x * z
        grad[..., 10, 2] = C3[1] * x * y
        grad[..., 11, 0] = C3[2] * (-2.0 * x * y)
        grad[..., 11, 1] = C3[2] * (4.0 * zz - xx - 3.0 * yy)
        grad[..., 11, 2] = C3[2] * (8.0 * y * z)
        grad[..., 12, 0] = C3[3] * (-6.0 * x * z)
        grad[..., 12, 1] = C3[3] * (-6.0 * y * z)
        grad[..., 12, 2] = C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
        grad[..., 13, 0] = C3[4] * (4.0 * zz - 3.0 * xx - yy)
        grad[..., 13, 1] = C3[4] * (-2.0 * x * y)
        grad[..., 13, 2] = C3[4] * (8.0 * x * z)
        grad[..., 14, 0] = C3[5] * (2.0 * x * z)
        grad[..., 14, 1] = C3[5] * (-2.0 * y * z)
        grad[..., 14, 2] = C3[5] * (xx - yy)
        grad[..., 15, 0] = C3[6] * (3.0 * xx - 3.0 * yy)
        grad[..., 15, 1] = C3[6] * (-6.0 * x * y)
    return grad


def eval_sh(coeffs, view_dir, degree: int):
    """Evaluate SH color: rgb = max(0, sum_k coeffs_k * basis_k + 0.5).

    Args:
        coeffs: (..., K, 3) with K >= (degree+1)^2.
        view_dir: (..., 3) unit direction from camera center to the Gaussian.
        degree: band limit to evaluate.

    Returns:
        (..., 3) non-negative linear RGB.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    k = num_coeffs(degree)
    if coeffs.shape[-2] < k:
        raise ValueError(
            f"need {k} SH coefficients for degree {degree}, got {coeffs.shape[-2]}"
        )
    basis = sh_basis(view_dir, degree)
    rgb = np.einsum("...k,...kc->...c", basis, coeffs[..., :k, :]) + 0.5
    return np.maximum(rgb, 0.0)
