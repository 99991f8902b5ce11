"""Procedural test scenes: a cloud of random Gaussians watched by a camera
ring, rendered to ground-truth views with the package's own rasterizer.

Images are passed through the 8-bit PNG quantizer before use, so a scene
generated in memory is bit-identical to the same scene after a disk round
trip.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import logit

from . import sh
from .gaussians import GaussianCloud, look_at_camera, random_rotations
from .rasterizer import render
from .scene import SceneBundle, quantize_image

# Seed of the canonical small scene used by the test-suite and demos.
REFERENCE_SEED = 7


@dataclass
class SceneSpec:
    """Knobs for the generator; defaults give the canonical desk-size scene."""

    n_gaussians: int = 50
    n_cameras: int = 16
    width: int = 64
    height: int = 64
    fov_deg: float = 50.0
    ring_radius: float = 2.5
    ring_height: float = 0.6
    world_radius: float = 1.0
    scale_range: tuple = (0.06, 0.18)
    opacity_range: tuple = (0.55, 0.95)
    color_range: tuple = (0.15, 0.85)
    point_jitter: float = 0.04
    background: tuple = (0.0, 0.0, 0.0)


def reference_scene_spec() -> SceneSpec:
    return SceneSpec()


def _random_ground_truth(spec: SceneSpec, rng) -> GaussianCloud:
    n = spec.n_gaussians
    # uniform in a ball: direction from normals, radius via the cube-root law
    raw = rng.normal(size=(n, 3))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    radii = spec.world_radius * rng.random(n) ** (1.0 / 3.0)
    positions = raw * radii[:, None]

    rotations = random_rotations(rng, n)
    lo, hi = spec.scale_range
    log_scales = np.log(rng.uniform(lo, hi, size=(n, 3)))
    o_lo, o_hi = spec.opacity_range
    opacity_logits = logit(rng.uniform(o_lo, o_hi, size=n))
    c_lo, c_hi = spec.color_range
    colors = rng.uniform(c_lo, c_hi, size=(n, 3))
    coeffs = np.zeros((n, 1, 3))
    coeffs[:, 0, :] = sh.rgb_to_dc(colors)
    return GaussianCloud(positions, rotations, log_scales, opacity_logits,
                         coeffs, sh_degree=0)


def ring_cameras(spec: SceneSpec):
    focal = 0.5 * spec.width / math.tan(math.radians(spec.fov_deg) / 2.0)
    cams = []
    for i in range(spec.n_cameras):
        ang = 2.0 * math.pi * i / spec.n_cameras
        eye = np.array([
            spec.ring_radius * math.cos(ang),
            spec.ring_radius * math.sin(ang),
            spec.ring_height,
        ])
        cams.append(look_at_camera(eye, np.zeros(3), np.array([0.0, 0.0, 1.0]),
                                   focal, spec.width, spec.height,
                                   name=f"view_{i:03d}"))
    return cams


def generate_scene(spec: SceneSpec, seed: int):
    """Build a synthetic scene; returns (SceneBundle, ground-truth cloud).

    Deterministic in (spec, seed): same inputs give bit-identical bundles.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    gt = _random_ground_truth(spec, rng)
    cameras = ring_cameras(spec)
    bg = np.asarray(spec.background, dtype=np.float64)
    images = [quantize_image(render(gt, cam, bg).image) for cam in cameras]

    jitter = rng.normal(size=gt.positions.shape) * spec.point_jitter
    points = gt.positions + jitter
    colors = np.clip(sh.dc_to_rgb(gt.sh_coeffs[:, 0, :]), 0.0, 1.0)
    bundle = SceneBundle(cameras=cameras, images=images, points=points,
                         point_colors=colors)
    return bundle, gt


def reference_scene():
    """The canonical 50-Gaussian, 16-view, 64x64 scene with its fixed seed."""
    return generate_scene(reference_scene_spec(), REFERENCE_SEED)
