"""Scene bundles on disk: cameras.json, 8-bit PNG views, and an initial
point cloud. Pixel values are linear in [0, 1], stored as value/255 with no
gamma handling anywhere.
"""

from dataclasses import dataclass
import json
import os

import numpy as np
from PIL import Image

from .gaussians import Camera

CAMERAS_FILE = "cameras.json"
POINTS_FILE = "points.ply"


@dataclass
class SceneBundle:
    """Everything training needs for one scene."""

    cameras: list          # Camera per view
    images: list           # (H, W, 3) float64 in [0, 1] per view
    points: np.ndarray     # (P, 3) initial Gaussian centers
    point_colors: np.ndarray  # (P, 3) in [0, 1]

    def __post_init__(self):
        if len(self.cameras) < 2:
            raise ValueError("scene needs at least two cameras")
        if len(self.cameras) != len(self.images):
            raise ValueError("camera/image count mismatch")
        self.points = np.asarray(self.points, dtype=np.float64)
        self.point_colors = np.asarray(self.point_colors, dtype=np.float64)

    @property
    def extent(self) -> float:
        return scene_extent(self.cameras)


def scene_extent(cameras) -> float:
    """Radius of the camera-center bounding sphere, padded by 10 percent.

    Normalizes learning rates and densification thresholds across scene sizes.
    """
    centers = np.stack([c.center for c in cameras])
    mean = centers.mean(axis=0)
    radius = float(np.linalg.norm(centers - mean, axis=1).max())
    return max(radius * 1.1, 1e-6)


def save_image(img, path):
    """Quantize a [0, 1] float image to 8-bit PNG (round to nearest)."""
    arr = np.asarray(img, dtype=np.float64)
    q = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path)


def load_image(path):
    """Read an 8-bit PNG back to float64 via value/255 (no sRGB decode)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def quantize_image(img):
    """The PNG round trip as a pure function: float [0,1] -> uint8 -> float."""
    arr = np.asarray(img, dtype=np.float64)
    return np.rint(np.clip(arr, 0.0, 1.0) * 255.0) / 255.0


def _camera_to_json(cam: Camera, image_name: str) -> dict:
    return {
        "fx": float(cam.focal[0]),
        "fy": float(cam.focal[1]),
        "cx": float(cam.principal_point[0]),
        "cy": float(cam.principal_point[1]),
        "width": int(cam.width),
        "height": int(cam.height),
        "world_to_camera": [[float(v) for v in row] for row in cam.world_to_camera],
        "image": image_name,
    }


def _camera_from_json(entry: dict, name: str) -> Camera:
    try:
        return Camera(
            focal=np.array([entry["fx"], entry["fy"]]),
            principal_point=np.array([entry["cx"], entry["cy"]]),
            world_to_camera=np.array(entry["world_to_camera"], dtype=np.float64),
            width=int(entry["width"]),
            height=int(entry["height"]),
            name=name,
        )
    except KeyError as exc:
        raise ValueError(f"camera entry {name!r} missing key {exc}") from exc


def save_scene(bundle: SceneBundle, scene_dir):
    """Write cameras.json, one PNG per view, and the initial points."""
    from .checkpoint import save_point_ply

    os.makedirs(scene_dir, exist_ok=True)
    entries = []
    for i, (cam, img) in enumerate(zip(bundle.cameras, bundle.images)):
        image_name = f"view_{i:03d}.png"
        save_image(img, os.path.join(scene_dir, image_name))
        entries.append(_camera_to_json(cam, image_name))
    with open(os.path.join(scene_dir, CAMERAS_FILE), "w") as fh:
        json.dump({"cameras": entries}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_point_ply(os.path.join(scene_dir, POINTS_FILE),
                   bundle.points, bundle.point_colors)


def load_scene(scene_dir) -> SceneBundle:
    """Read a scene directory written by save_scene (or hand-authored to match)."""
    from .checkpoint import load_point_ply

    cam_path = os.path.join(scene_dir, CAMERAS_FILE)
    if not os.path.isfile(cam_path):
        raise FileNotFoundError(f"no {CAMERAS_FILE} in {scene_dir}")
    with open(cam_path) as fh:
        data = json.load(fh)
    if "cameras" not in data or not isinstance(data["cameras"], list):
        raise ValueError(f"{cam_path}: expected a top-level 'cameras' list")

    cameras, images = [], []
    for i, entry in enumerate(data["cameras"]):
        name = entry.get("image", f"camera_{i}")
        cam = _camera_from_json(entry, name)
        img_path = os.path.join(scene_dir, entry["image"])
        if not os.path.isfile(img_path):
            raise FileNotFoundError(f"view image missing: {img_path}")
        img = load_image(img_path)
        if img.shape != (cam.height, cam.width, 3):
            raise ValueError(
                f"{img_path}: image is {img.shape[:2]}, camera says "
                f"({cam.height}, {cam.width})"
            )
        cameras.append(cam)
        images.append(img)

    pts_path = os.path.join(scene_dir, POINTS_FILE)
    if not os.path.isfile(pts_path):
        raise FileNotFoundError(f"initial point cloud missing: {pts_path}")
    points, colors = load_point_ply(pts_path)
    return SceneBundle(cameras=cameras, images=images, points=points,
                       point_colors=colors)
