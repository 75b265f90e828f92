"""Deterministic synthetic plane scenes for tests and demo workspaces.

A scene is a textured 3D plane observed by pinhole cameras. The texture is a
closed-form function of the plane coordinates (value noise plus oriented
gratings), so every view samples the exact same continuous signal and the
analytic ray-plane depth is an oracle for the estimators.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .geometry import Camera, View
from .patchmatch import DepthNormalMap


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int) -> np.ndarray:
    """Integer lattice hash to [0, 1); deterministic across platforms."""
    mask = np.uint64(0xFFFFFFFF)
    h = (
        ix.astype(np.uint64) * np.uint64(374761393)
        + iy.astype(np.uint64) * np.uint64(668265263)
        + np.uint64(seed % (1 << 32)) * np.uint64(2246822519)
    ) & mask
    h ^= h >> np.uint64(13)
    h = (h * np.uint64(1274126177)) & mask
    h ^= h >> np.uint64(16)
    return (h & np.uint64(0xFFFFFF)).astype(np.float64) / float(0x1000000)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def value_noise(s: np.ndarray, t: np.ndarray, scale: float, seed: int) -> np.ndarray:
    """Smooth non-periodic noise over plane coordinates, in [0, 1]."""
    x = np.asarray(s, dtype=np.float64) / scale
    y = np.asarray(t, dtype=np.float64) / scale
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = _smoothstep(x - x0)
    fy = _smoothstep(y - y0)
    ix = x0.astype(np.int64)
    iy = y0.astype(np.int64)
    v00 = _hash01(ix, iy, seed)
    v01 = _hash01(ix + 1, iy, seed)
    v10 = _hash01(ix, iy + 1, seed)
    v11 = _hash01(ix + 1, iy + 1, seed)
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


@dataclass
class PlaneScene:
    """A textured plane with its observing views and analytic ground truth."""

    plane_point: np.ndarray
    plane_normal: np.ndarray  # world frame, unit
    views: list[View]
    gt_maps: list[DepthNormalMap]
    depth_range: tuple[float, float]
    texture_seed: int = 7
    textureless_band: tuple[float, float] | None = None
    basis: tuple[np.ndarray, np.ndarray] = field(default=None)

    def plane_distance(self, points: np.ndarray) -> np.ndarray:
        """Signed distance of world points to the plane."""
        return (np.asarray(points) - self.plane_point) @ self.plane_normal


def _plane_basis(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(n, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


def _texture(s: np.ndarray, t: np.ndarray, seed: int, band: tuple[float, float] | None) -> np.ndarray:
    v = (
        0.5
        + 0.40 * (value_noise(s, t, 0.06, seed) - 0.5)
        + 0.34 * (value_noise(s, t, 0.022, seed + 101) - 0.5)
        + 0.10 * np.sin(2.0 * np.pi * (9.0 * s + 4.0 * t))
        + 0.08 * np.sin(2.0 * np.pi * (-3.0 * s + 11.0 * t) + 1.7)
    )
    if band is not None:
        inside = (t >= band[0]) & (t <= band[1])
        v = np.where(inside, 0.5, v)
    return np.clip(v, 0.02, 0.98)


def _render_plane_view(
    cam: Camera,
    p0: np.ndarray,
    n: np.ndarray,
    e1: np.ndarray,
    e2: np.ndarray,
    seed: int,
    band,
    name: str,
) -> tuple[View, DepthNormalMap]:
    w, h = cam.width, cam.height
    xs = (np.arange(w) - cam.cx) / cam.fx
    ys = (np.arange(h) - cam.cy) / cam.fy
    dirs_cam = np.empty((h, w, 3))
    dirs_cam[..., 0] = xs[None, :]
    dirs_cam[..., 1] = ys[:, None]
    dirs_cam[..., 2] = 1.0
    dirs_world = dirs_cam @ cam.R  # R^T applied to each ray
    center = cam.center()

    denom = dirs_world @ n
    t_ray = ((p0 - center) @ n) / denom
    points = center[None, None, :] + t_ray[..., None] * dirs_world
    depth = t_ray  # camera-frame z equals the ray parameter for z=1 rays

    rel = points - p0
    s_coord = rel @ e1
    t_coord = rel @ e2
    base = _texture(s_coord, t_coord, seed, band)
    tint = value_noise(s_coord, t_coord, 0.15, seed + 7) - 0.5
    if band is not None:
        tint = np.where((t_coord >= band[0]) & (t_coord <= band[1]), 0.0, tint)
    img = np.stack(
        [
            np.clip(base + 0.20 * tint, 0.0, 1.0),
            base,
            np.clip(base - 0.20 * tint, 0.0, 1.0),
        ],
        axis=-1,
    ).astype(np.float32)

    n_cam = cam.R @ n
    if n_cam[2] > 0:  # orient camera-facing
        n_cam = -n_cam
    normal = np.broadcast_to(n_cam, (h, w, 3)).copy()
    valid = depth > 0
    gt = DepthNormalMap(depth=depth.copy(), normal=normal, valid=valid)
    return View(name=name, image=img, camera=cam), gt


def rotation_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def make_plane_scene(
    width: int = 320,
    height: int = 240,
    n_views: int = 2,
    baseline: float = 0.3,
    plane_depth: float = 2.0,
    focal: float | None = None,
    slanted: bool = True,
    texture_seed: int = 7,
    textureless_band: tuple[float, float] | None = None,
) -> PlaneScene:
    """Cameras on a short horizontal arc observing one textured plane.

    View 0 sits at the origin looking along +z; the others are translated by
    multiples of `baseline` along x with a slight inward yaw.
    """
    if focal is None:
        focal = 1.75 * width  # keep the field of view fixed across image sizes
    p0 = np.array([0.0, 0.0, plane_depth])
    if slanted:
        n = np.array([0.15, -0.10, -1.0])
    else:
        n = np.array([0.0, 0.0, -1.0])
    n = n / np.linalg.norm(n)
    e1, e2 = _plane_basis(n)

    views = []
    gt_maps = []
    for i in range(n_views):
        offset = np.array([baseline * i, 0.02 * i, 0.0])
        # converge on the plane's central intersection so the views overlap fully
        yaw = math.atan2(baseline * i, plane_depth)
        R = rotation_y(yaw)
        t = -R @ offset  # camera center sits at `offset`
        cam = Camera(
            fx=focal,
            fy=focal,
            cx=(width - 1) / 2.0,
            cy=(height - 1) / 2.0,
            R=R,
            t=t,
            width=width,
            height=height,
        )
        view, gt = _render_plane_view(
            cam, p0, n, e1, e2, texture_seed, textureless_band, name=f"view{i:02d}"
        )
        views.append(view)
        gt_maps.append(gt)

    depths = np.concatenate([g.depth[g.valid].ravel() for g in gt_maps])
    z_lo = float(depths.min())
    z_hi = float(depths.max())
    margin = 0.6 * (z_hi - z_lo) + 0.2
    scene = PlaneScene(
        plane_point=p0,
        plane_normal=n,
        views=views,
        gt_maps=gt_maps,
        depth_range=(max(0.05, z_lo - margin), z_hi + margin),
        texture_seed=texture_seed,
        textureless_band=textureless_band,
        basis=(e1, e2),
    )
    return scene


def gt_plane_cloud(scene: PlaneScene, step: int = 1) -> np.ndarray:
    """Plane points on the reference pixel grid, visible in every view."""
    ref = scene.views[0]
    gt = scene.gt_maps[0]
    cam = ref.camera
    ys, xs = np.mgrid[0 : cam.height : step, 0 : cam.width : step]
    z = gt.depth[ys, xs]
    dirs = np.stack(
        [(xs - cam.cx) / cam.fx * z, (ys - cam.cy) / cam.fy * z, z], axis=-1
    )
    pts = (dirs - cam.t) @ cam.R  # R^T (X_cam - t)
    pts = pts.reshape(-1, 3)
    keep = np.ones(len(pts), dtype=bool)
    for view in scene.views:
        c = view.camera
        p_cam = pts @ c.R.T + c.t
        ok = p_cam[:, 2] > 1e-9
        with np.errstate(divide="ignore", invalid="ignore"):
            px = c.fx * p_cam[:, 0] / p_cam[:, 2] + c.cx
            py = c.fy * p_cam[:, 1] / p_cam[:, 2] + c.cy
        ok &= (px >= 0) & (px <= c.width - 1) & (py >= 0) & (py <= c.height - 1)
        keep &= ok
    return pts[keep]


def _quaternion_from_rotation(R: np.ndarray) -> np.ndarray:
    """(w, x, y, z) quaternion of a rotation matrix."""
    tr = np.trace(R)
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        w = 0.25 * s
        x = (R[2, 1] - R[1, 2]) / s
        y = (R[0, 2] - R[2, 0]) / s
        z = (R[1, 0] - R[0, 1]) / s
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            w = (R[2, 1] - R[1, 2]) / s
            x = 0.25 * s
            y = (R[0, 1] + R[1, 0]) / s
            z = (R[0, 2] + R[2, 0]) / s
        elif i == 1:
            s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
            w = (R[0, 2] - R[2, 0]) / s
            x = (R[0, 1] + R[1, 0]) / s
            y = 0.25 * s
            z = (R[1, 2] + R[2, 1]) / s
        else:
            s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
            w = (R[1, 0] - R[0, 1]) / s
            x = (R[0, 2] + R[2, 0]) / s
            y = (R[1, 2] + R[2, 1]) / s
            z = 0.25 * s
    q = np.array([w, x, y, z])
    return q / np.linalg.norm(q)


def write_workspace(scene: PlaneScene, root) -> Path:
    """Materialize a scene as an on-disk workspace the CLI can consume.

    Layout: images/*.png, cameras/cameras.txt + cameras/images.txt (PINHOLE
    text pair), scene.json with the depth range, and gt/ with analytic depth
    PFMs plus the reference plane cloud.
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "cameras").mkdir(parents=True, exist_ok=True)
    (root / "gt").mkdir(parents=True, exist_ok=True)

    cam_lines = [
        "# Camera list with one line of data per camera:",
        "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]",
    ]
    img_lines = [
        "# Image list with two lines of data per image:",
        "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
        "#   POINTS2D[] as (X, Y, POINT3D_ID)",
    ]
    for i, view in enumerate(scene.views):
        cam = view.camera
        name = f"{view.name}.png"
        formats.write_image_png(root / "images" / name, view.image)
        cam_lines.append(
            f"{i + 1} PINHOLE {cam.width} {cam.height} "
            f"{cam.fx:.12g} {cam.fy:.12g} {cam.cx:.12g} {cam.cy:.12g}"
        )
        q = _quaternion_from_rotation(cam.R)
        t = cam.t
        img_lines.append(
            f"{i + 1} {q[0]:.17g} {q[1]:.17g} {q[2]:.17g} {q[3]:.17g} "
            f"{t[0]:.17g} {t[1]:.17g} {t[2]:.17g} {i + 1} {name}"
        )
        img_lines.append("")
        gt = scene.gt_maps[i]
        formats.write_depth_pfm(root / "gt" / f"{view.name}.pfm", gt.depth, gt.valid)

    (root / "cameras" / "cameras.txt").write_text("\n".join(cam_lines) + "\n")
    (root / "cameras" / "images.txt").write_text("\n".join(img_lines) + "\n")
    (root / "scene.json").write_text(
        json.dumps({"depth_range": list(scene.depth_range)}, indent=2) + "\n"
    )

    cloud = gt_plane_cloud(scene)
    normals = np.broadcast_to(scene.plane_normal, cloud.shape)
    colors = np.full(cloud.shape, 128, dtype=np.uint8)
    formats.write_ply(root / "gt" / "cloud.ply", cloud, normals, colors)
    return root
