"""Workspace loading: camera files, images, and source-view selection.

A workspace directory holds images/ plus cameras/ with either the standard
sparse-reconstruction text pair (cameras.txt + images.txt, PINHOLE model) or
one JSON pose file per image. An optional scene.json supplies the scene depth
range used by the estimator and by source selection.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, MissingImage, ParseError
from .geometry import Camera, View
from .patchmatch import resample_image

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

# source-selection heuristic bounds
MAX_AXIS_ANGLE_DEG = 60.0
BASELINE_DEPTH_RANGE = (0.01, 2.0)


@dataclass
class SceneBundle:
    """Ordered views with per-view source lists and workspace paths."""

    root: Path
    views: list[View]
    sources: list[list[int]] = field(default_factory=list)
    depth_range: tuple[float, float] | None = None

    def view_names(self) -> list[str]:
        return [v.name for v in self.views]


def _quaternion_to_rotation(qw, qx, qy, qz) -> np.ndarray:
    n = math.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
    qw, qx, qy, qz = qw / n, qx / n, qy / n, qz / n
    return np.array(
        [
            [1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qz * qw), 2 * (qx * qz + qy * qw)],
            [2 * (qx * qy + qz * qw), 1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qx * qw)],
            [2 * (qx * qz - qy * qw), 2 * (qy * qz + qx * qw), 1 - 2 * (qx * qx + qy * qy)],
        ]
    )


def _parse_cameras_txt(path: Path) -> dict[int, dict]:
    cameras = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 4:
            raise ParseError("camera line needs ID MODEL WIDTH HEIGHT PARAMS", path, lineno)
        try:
            cam_id = int(parts[0])
            model = parts[1]
            width, height = int(parts[2]), int(parts[3])
            params = [float(p) for p in parts[4:]]
        except ValueError as exc:
            raise ParseError(f"malformed camera line: {exc}", path, lineno) from exc
        if model == "PINHOLE":
            if len(params) != 4:
                raise ParseError("PINHOLE needs fx fy cx cy", path, lineno)
            fx, fy, cx, cy = params
        elif model == "SIMPLE_PINHOLE":
            if len(params) != 3:
                raise ParseError("SIMPLE_PINHOLE needs f cx cy", path, lineno)
            fx = fy = params[0]
            cx, cy = params[1], params[2]
        else:
            raise ParseError(f"unsupported camera model {model!r}", path, lineno)
        cameras[cam_id] = dict(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)
    if not cameras:
        raise ParseError("no cameras found", path, 0)
    return cameras


def _parse_images_txt(path: Path) -> list[dict]:
    entries = []
    expect_pose = True
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if line.startswith("#"):
            continue
        if not expect_pose:
            # 2D-point line of the previous image; content ignored
            expect_pose = True
            continue
        if not line:
            continue
        parts = line.split()
        if len(parts) < 10:
            raise ParseError(
                "image line needs ID QW QX QY QZ TX TY TZ CAMERA_ID NAME", path, lineno
            )
        try:
            qw, qx, qy, qz = (float(p) for p in parts[1:5])
            tx, ty, tz = (float(p) for p in parts[5:8])
            cam_id = int(parts[8])
        except ValueError as exc:
            raise ParseError(f"malformed image line: {exc}", path, lineno) from exc
        entries.append(
            dict(
                name=" ".join(parts[9:]),
                camera_id=cam_id,
                R=_quaternion_to_rotation(qw, qx, qy, qz),
                t=np.array([tx, ty, tz]),
            )
        )
        expect_pose = False
    if not entries:
        raise ParseError("no images found", path, 0)
    return entries


def _parse_camera_json(path: Path) -> dict:
    try:
        data = json.loads(path.read_text())
        return dict(
            name=data.get("image", path.stem),
            camera=Camera(
                fx=float(data["fx"]),
                fy=float(data["fy"]),
                cx=float(data["cx"]),
                cy=float(data["cy"]),
                R=np.asarray(data["R"], dtype=np.float64),
                t=np.asarray(data["t"], dtype=np.float64),
                width=int(data["width"]),
                height=int(data["height"]),
            ),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"malformed camera JSON: {exc}", path, 0) from exc


def _find_image(images_dir: Path, name: str) -> Path:
    direct = images_dir / name
    if direct.exists():
        return direct
    for suffix in IMAGE_SUFFIXES:
        candidate = images_dir / (Path(name).stem + suffix)
        if candidate.exists():
            return candidate
    raise MissingImage(f"no image file for {name!r} under {images_dir}")


def _load_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return rgb


def select_sources(
    cameras: list[Camera],
    representative_depth: float | None,
) -> list[list[int]]:
    """Shared-frustum source selection.

    A view j is a source for i when the optical-axis angle is below 60
    degrees and, when a representative scene depth is known, the
    baseline/depth ratio lies in [0.01, 2]. Sources are ordered by baseline,
    closest first.
    """
    axes = [c.optical_axis() for c in cameras]
    centers = [c.center() for c in cameras]
    cos_limit = math.cos(math.radians(MAX_AXIS_ANGLE_DEG))
    out = []
    for i in range(len(cameras)):
        scored = []
        for j in range(len(cameras)):
            if j == i:
                continue
            if float(axes[i] @ axes[j]) <= cos_limit:
                continue
            baseline = float(np.linalg.norm(centers[i] - centers[j]))
            if representative_depth is not None:
                ratio = baseline / representative_depth
                if not (BASELINE_DEPTH_RANGE[0] <= ratio <= BASELINE_DEPTH_RANGE[1]):
                    continue
            scored.append((baseline, j))
        scored.sort()
        out.append([j for _, j in scored])
    return out


def load_scene(root, downsample: float = 1.0, depth_range=None) -> SceneBundle:
    """Load a workspace into calibrated views with per-view source lists.

    Views are ordered by image name. `downsample` < 1 resamples images and
    intrinsics together. An explicit depth_range overrides scene.json.
    """
    root = Path(root)
    images_dir = root / "images"
    cameras_dir = root / "cameras"
    if not images_dir.is_dir():
        raise ConfigError(f"workspace {root} has no images/ directory")
    if not cameras_dir.is_dir():
        raise ConfigError(f"workspace {root} has no cameras/ directory")

    if depth_range is None:
        scene_json = root / "scene.json"
        if scene_json.exists():
            data = json.loads(scene_json.read_text())
            if "depth_range" in data:
                lo, hi = data["depth_range"]
                depth_range = (float(lo), float(hi))

    entries = []
    cams_txt = cameras_dir / "cameras.txt"
    imgs_txt = cameras_dir / "images.txt"
    if cams_txt.exists() and imgs_txt.exists():
        cam_models = _parse_cameras_txt(cams_txt)
        for image_entry in _parse_images_txt(imgs_txt):
            cam_id = image_entry["camera_id"]
            if cam_id not in cam_models:
                raise ParseError(f"image references unknown camera {cam_id}", imgs_txt, 0)
            model = cam_models[cam_id]
            entries.append(
                dict(
                    name=image_entry["name"],
                    camera=Camera(R=image_entry["R"], t=image_entry["t"], **model),
                )
            )
    else:
        json_files = sorted(cameras_dir.glob("*.json"))
        if not json_files:
            raise ConfigError(f"{cameras_dir} has neither cameras.txt/images.txt nor *.json poses")
        entries = [_parse_camera_json(p) for p in json_files]

    entries.sort(key=lambda e: e["name"])
    views = []
    for entry in entries:
        path = _find_image(images_dir, entry["name"])
        image = _load_image(path)
        cam = entry["camera"]
        if image.shape[0] != cam.height or image.shape[1] != cam.width:
            raise ConfigError(
                f"{path.name}: image is {image.shape[1]}x{image.shape[0]} but the camera "
                f"says {cam.width}x{cam.height}"
            )
        if downsample != 1.0:
            cam = cam.scaled(downsample)
            image = resample_image(image, cam.width, cam.height)
        views.append(View(name=Path(entry["name"]).stem, image=image, camera=cam))

    rep_depth = None
    if depth_range is not None:
        rep_depth = 0.5 * (depth_range[0] + depth_range[1])
    else:
        logger.warning("no depth range (scene.json or flag); source selection uses angles only")
    sources = select_sources([v.camera for v in views], rep_depth)
    for name, src in zip((v.name for v in views), sources):
        logger.debug("sources for %s: %s", name, src)
    return SceneBundle(root=root, views=views, sources=sources, depth_range=depth_range)
