"""Binary little-endian PLY checkpoints in the layout most Gaussian-splatting
viewers expect, plus a JSON metadata sidecar.

Per-vertex properties, all float32:
    x y z  nx ny nz  f_dc_0..2  f_rest_{0..3*(K-1)-1}  opacity  scale_0..2  rot_0..3
where rot is the (w, x, y, z) quaternion, scale is the log-scale, opacity the
logit, and f_rest is channel-major (all of red's coefficients, then green's,
then blue's). Normals are written as zeros and ignored on load.
"""

import json
import math
import os

import numpy as np

from . import sh
from .gaussians import GaussianCloud

_PLY_MAGIC = b"ply"
_TYPE_MAP = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "uchar": "u1",
    "uint8": "u1",
    "char": "i1",
    "short": "<i2",
    "ushort": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
}


def _cloud_property_names(degree: int):
    n_rest = 3 * (sh.num_coeffs(degree) - 1)
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(n_rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2",
              "rot_0", "rot_1", "rot_2", "rot_3"]
    return names


def _write_ply(path, names, types, columns, count):
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {count}"]
    header += [f"property {t} {n}" for t, n in zip(types, names)]
    header.append("end_header")
    dtype = np.dtype([(n, _TYPE_MAP[t]) for n, t in zip(names, types)])
    rec = np.empty(count, dtype=dtype)
    for name, col in zip(names, columns):
        rec[name] = col
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


def _read_ply(path):
    """Parse header + payload; returns (structured array, property name list)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(_PLY_MAGIC):
        raise ValueError(f"{path}: not a PLY file")
    end = blob.find(b"end_header\n")
    if end < 0:
        raise ValueError(f"{path}: unterminated PLY header")
    header = blob[:end].decode("ascii", errors="replace").splitlines()
    payload = blob[end + len(b"end_header\n"):]

    fmt = None
    count = None
    props = []
    element = None
    for line in header[1:]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            element = tok[1]
            if element == "vertex":
                count = int(tok[2])
        elif tok[0] == "property" and element == "vertex":
            if tok[1] == "list":
                raise ValueError(f"{path}: list properties are not supported")
            if tok[1] not in _TYPE_MAP:
                raise ValueError(f"{path}: unsupported property type {tok[1]!r}")
            props.append((tok[2], _TYPE_MAP[tok[1]]))
    if fmt != "binary_little_endian":
        raise ValueError(f"{path}: expected binary_little_endian, got {fmt!r}")
    if count is None:
        raise ValueError(f"{path}: no vertex element")
    dtype = np.dtype(props)
    need = count * dtype.itemsize
    if len(payload) < need:
        raise ValueError(f"{path}: truncated payload ({len(payload)} < {need} bytes)")
    rec = np.frombuffer(payload[:need], dtype=dtype)
    return rec, [p[0] for p in props]


def meta_path(ply_path) -> str:
    root, _ = os.path.splitext(str(ply_path))
    return root + ".meta.json"


def save_checkpoint(cloud: GaussianCloud, path, meta: dict = None):
    """Write a cloud as float32 PLY; optional metadata lands in a sidecar."""
    n = len(cloud)
    k = sh.num_coeffs(cloud.sh_degree)
    names = _cloud_property_names(cloud.sh_degree)
    zeros = np.zeros(n, dtype=np.float32)
    cols = [
        cloud.positions[:, 0], cloud.positions[:, 1], cloud.positions[:, 2],
        zeros, zeros, zeros,
        cloud.sh_coeffs[:, 0, 0], cloud.sh_coeffs[:, 0, 1], cloud.sh_coeffs[:, 0, 2],
    ]
    rest = cloud.sh_coeffs[:, 1:, :].transpose(0, 2, 1).reshape(n, 3 * (k - 1))
    cols += [rest[:, i] for i in range(rest.shape[1])]
    cols += [cloud.opacity_logits]
    cols += [cloud.log_scales[:, i] for i in range(3)]
    cols += [cloud.rotations[:, i] for i in range(4)]
    cols = [np.asarray(c, dtype=np.float32) for c in cols]
    _write_ply(path, names, ["float"] * len(names), cols, n)

    if meta is not None:
        with open(meta_path(path), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_checkpoint(path):
    """Read a cloud checkpoint; returns (GaussianCloud, meta dict or None).

    Accepts any property order and ignores extras such as normals, but every
    required field must be present and the f_rest count must correspond to a
    whole SH degree.
    """
    rec, names = _read_ply(path)
    have = set(names)
    required = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"}
    missing = required - have
    if missing:
        raise ValueError(f"{path}: missing properties {sorted(missing)}")

    rest_names = sorted((n for n in names if n.startswith("f_rest_")),
                        key=lambda s: int(s.split("_")[-1]))
    n_rest = len(rest_names)
    if rest_names != [f"f_rest_{i}" for i in range(n_rest)]:
        raise ValueError(f"{path}: non-contiguous f_rest properties")
    if n_rest % 3 != 0:
        raise ValueError(f"{path}: f_rest count {n_rest} is not a multiple of 3")
    k = n_rest // 3 + 1
    degree = int(math.isqrt(k)) - 1
    if sh.num_coeffs(degree) != k or degree > sh.MAX_DEGREE:
        raise ValueError(f"{path}: {n_rest} f_rest properties match no SH degree")

    n = len(rec)

    def col(name):
        return np.asarray(rec[name], dtype=np.float64)

    coeffs = np.zeros((n, k, 3))
    coeffs[:, 0, 0] = col("f_dc_0")
    coeffs[:, 0, 1] = col("f_dc_1")
    coeffs[:, 0, 2] = col("f_dc_2")
    if n_rest:
        rest = np.stack([col(nm) for nm in rest_names], axis=1)
        coeffs[:, 1:, :] = rest.reshape(n, 3, k - 1).transpose(0, 2, 1)

    cloud = GaussianCloud(
        positions=np.stack([col("x"), col("y"), col("z")], axis=1),
        rotations=np.stack([col(f"rot_{i}") for i in range(4)], axis=1),
        log_scales=np.stack([col(f"scale_{i}") for i in range(3)], axis=1),
        opacity_logits=col("opacity"),
        sh_coeffs=coeffs,
        sh_degree=degree,
    ).validate()

    meta = None
    mpath = meta_path(path)
    if os.path.isfile(mpath):
        with open(mpath) as fh:
            meta = json.load(fh)
    return cloud, meta


def save_point_ply(path, points, colors=None):
    """Plain xyz (+ uchar rgb) point cloud, for scene initialization files."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    names = ["x", "y", "z"]
    types = ["float"] * 3
    cols = [points[:, i].astype(np.float32) for i in range(3)]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.float64)
        names += ["red", "green", "blue"]
        types += ["uchar"] * 3
        q = np.rint(np.clip(colors, 0.0, 1.0) * 255.0).astype(np.uint8)
        cols += [q[:, i] for i in range(3)]
    _write_ply(path, names, types, cols, n)


def load_point_ply(path):
    """Returns (points (N, 3), colors (N, 3) in [0, 1]; colors default to gray)."""
    rec, names = _read_ply(path)
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise ValueError(f"{path}: point cloud missing property {axis!r}")
    points = np.stack([np.asarray(rec[a], dtype=np.float64) for a in "xyz"], axis=1)
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack(
            [np.asarray(rec[c], dtype=np.float64) for c in ("red", "green", "blue")],
            axis=1,
        ) / 255.0
    else:
        colors = np.full((points.shape[0], 3), 0.5)
    return points, colors
