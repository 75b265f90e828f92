"""Exchange file formats: PFM maps, label PNGs, binary PLY point clouds.

These are bit-exact contracts shared with external consumers (in particular
the confidence-network trainer):

- PFM: little-endian float32, header ``Pf`` (1 channel) or ``PF`` (3
  channels), scale line ``-1.0``, rows stored bottom-to-top. Two-channel
  maps (polar normals) are stored as 3-channel PFM with a zero third channel.
- Label PNG: 8-bit grayscale, 0 = outlier, 255 = inlier, 128 = undefined.
- PLY: binary little-endian, one vertex element with properties
  x, y, z, nx, ny, nz (float32) and red, green, blue (uint8), in emission
  order.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import IoFailure

LABEL_OUTLIER = 0
LABEL_INLIER = 1
LABEL_UNDEFINED = 2

_LABEL_TO_PNG = {LABEL_OUTLIER: 0, LABEL_INLIER: 255, LABEL_UNDEFINED: 128}
_PNG_TO_LABEL = {v: k for k, v in _LABEL_TO_PNG.items()}


def write_pfm(path, data: np.ndarray) -> None:
    """Write a (H, W) or (H, W, 3) float32 array as PFM."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise IoFailure(f"PFM supports (H, W) or (H, W, 3) arrays, got {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale = little-endian
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    """Read a PFM file written by write_pfm (or any conformant writer)."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise IoFailure(f"{path}: not a PFM file (header {header!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise IoFailure(f"{path}: malformed PFM dimension line")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        count = w * h * channels
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise IoFailure(f"{path}: truncated PFM payload")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype).astype(np.float32)
    if channels == 1:
        data = data.reshape(h, w)
    else:
        data = data.reshape(h, w, 3)
    return data[::-1].copy()


def write_two_channel_pfm(path, data: np.ndarray) -> None:
    """Store an (H, W, 2) map as 3-channel PFM with a zero third channel."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 3 or data.shape[2] != 2:
        raise IoFailure(f"expected (H, W, 2) array, got {data.shape}")
    padded = np.zeros((data.shape[0], data.shape[1], 3), dtype=np.float32)
    padded[..., :2] = data
    write_pfm(path, padded)


def read_two_channel_pfm(path) -> np.ndarray:
    """Read back an (H, W, 2) map stored by write_two_channel_pfm."""
    data = read_pfm(path)
    if data.ndim != 3:
        raise IoFailure(f"{path}: expected a 3-channel PFM")
    return data[..., :2].copy()


def write_image_png(path, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) image as 8-bit PNG. Float inputs are in [0, 1]."""
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8:
        rgb = np.clip(np.round(np.asarray(rgb, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(path)


def read_image_png(path) -> np.ndarray:
    """Read a PNG as (H, W, 3) uint8."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def write_label_png(path, labels: np.ndarray) -> None:
    """Write a label map per the 0/255/128 contract."""
    labels = np.asarray(labels)
    out = np.full(labels.shape, _LABEL_TO_PNG[LABEL_UNDEFINED], dtype=np.uint8)
    out[labels == LABEL_OUTLIER] = _LABEL_TO_PNG[LABEL_OUTLIER]
    out[labels == LABEL_INLIER] = _LABEL_TO_PNG[LABEL_INLIER]
    Image.fromarray(out, mode="L").save(path)


def read_label_png(path) -> np.ndarray:
    """Read a label map PNG back to {0, 1, 2} codes."""
    with Image.open(path) as im:
        raw = np.asarray(im.convert("L"))
    unknown = ~np.isin(raw, list(_PNG_TO_LABEL))
    if unknown.any():
        raise IoFailure(f"{path}: pixel values outside the label contract")
    out = np.empty(raw.shape, dtype=np.uint8)
    for png_value, label in _PNG_TO_LABEL.items():
        out[raw == png_value] = label
    return out


_PLY_HEADER = """ply
format binary_little_endian 1.0
element vertex {count}
property float x
property float y
property float z
property float nx
property float ny
property float nz
property uchar red
property uchar green
property uchar blue
end_header
"""

_PLY_DTYPE = np.dtype(
    [
        ("x", "<f4"),
        ("y", "<f4"),
        ("z", "<f4"),
        ("nx", "<f4"),
        ("ny", "<f4"),
        ("nz", "<f4"),
        ("red", "u1"),
        ("green", "u1"),
        ("blue", "u1"),
    ]
)


def write_ply(path, positions: np.ndarray, normals: np.ndarray, colors: np.ndarray) -> None:
    """Write a point cloud as binary little-endian PLY, preserving point order."""
    positions = np.asarray(positions, dtype=np.float32).reshape(-1, 3)
    normals = np.asarray(normals, dtype=np.float32).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    if not (len(positions) == len(normals) == len(colors)):
        raise IoFailure("positions, normals and colors must have equal length")
    rec = np.empty(len(positions), dtype=_PLY_DTYPE)
    rec["x"], rec["y"], rec["z"] = positions.T
    rec["nx"], rec["ny"], rec["nz"] = normals.T
    rec["red"], rec["green"], rec["blue"] = colors.T
    with open(path, "wb") as f:
        f.write(_PLY_HEADER.format(count=len(positions)).encode("ascii"))
        f.write(rec.tobytes())


def read_ply(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a PLY written by write_ply; returns (positions, normals, colors)."""
    path = Path(path)
    with open(path, "rb") as f:
        line = f.readline()
        if line.strip() != b"ply":
            raise IoFailure(f"{path}: not a PLY file")
        count = None
        while True:
            line = f.readline()
            if not line:
                raise IoFailure(f"{path}: unterminated PLY header")
            line = line.strip()
            if line.startswith(b"element vertex"):
                count = int(line.split()[-1])
            if line == b"end_header":
                break
        if count is None:
            raise IoFailure(f"{path}: missing vertex element")
        raw = f.read(count * _PLY_DTYPE.itemsize)
    if len(raw) != count * _PLY_DTYPE.itemsize:
        raise IoFailure(f"{path}: truncated PLY payload")
    rec = np.frombuffer(raw, dtype=_PLY_DTYPE)
    positions = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    normals = np.stack([rec["nx"], rec["ny"], rec["nz"]], axis=1).astype(np.float64)
    colors = np.stack([rec["red"], rec["green"], rec["blue"]], axis=1)
    return positions, normals, colors


def write_depth_pfm(path, depth: np.ndarray, valid: np.ndarray) -> None:
    """Depth-map PFM: invalid pixels are stored as 0 (depth is always > 0)."""
    out = np.where(valid, depth, 0.0).astype(np.float32)
    write_pfm(path, out)


def read_depth_pfm(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a depth-map PFM; returns (depth float64, valid bool)."""
    data = read_pfm(path).astype(np.float64)
    valid = data > 0
    return data, valid
