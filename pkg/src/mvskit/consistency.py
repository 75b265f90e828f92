"""Cross-view geometric verification: counter maps and label maps.

A counter map stores, per reference pixel, how many source views verify the
estimated depth (reprojection, relative depth and normal checks). A label
map marks estimated depths as inlier/outlier against a ground-truth depth
map by comparing the two projections into the source views; pixels without
ground truth or without a valid estimate stay undefined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoSources, ResolutionMismatch
from .formats import LABEL_INLIER, LABEL_OUTLIER, LABEL_UNDEFINED
from .geometry import Camera
from .patchmatch import DepthNormalMap

_MIN_Z = 1e-9


@dataclass
class ConsistencyThresholds:
    """Pass criteria for one source view to verify a pixel.

    Defaults are looser than the fusion thresholds so counter maps carry
    graded support information rather than a binary fusion mask.
    """

    max_reproj: float = 2.0
    rel_depth_tol: float = 0.01
    max_normal_angle_deg: float = 30.0


@dataclass
class CounterMap:
    """Per-pixel count of source views that verified the depth estimate."""

    count: np.ndarray  # (H, W) int32
    n_sources: int

    @property
    def height(self) -> int:
        return self.count.shape[0]

    @property
    def width(self) -> int:
        return self.count.shape[1]


@dataclass
class LabelMap:
    """Per-pixel inlier/outlier/undefined codes (see formats for the PNG contract)."""

    labels: np.ndarray  # (H, W) uint8 with LABEL_* codes

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def inlier(self) -> np.ndarray:
        return self.labels == LABEL_INLIER

    @property
    def outlier(self) -> np.ndarray:
        return self.labels == LABEL_OUTLIER

    @property
    def defined(self) -> np.ndarray:
        return self.labels != LABEL_UNDEFINED


def _project_all(cam: Camera, points: np.ndarray):
    """Project an (..., 3) world-point array; returns (px, py, z)."""
    p = points @ cam.R.T + cam.t
    z = p[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = cam.fx * p[..., 0] / z + cam.cx
        py = cam.fy * p[..., 1] / z + cam.cy
    return px, py, z


def _unproject_grid(cam: Camera, depth: np.ndarray) -> np.ndarray:
    h, w = depth.shape
    xs = (np.arange(w) - cam.cx) / cam.fx
    ys = (np.arange(h) - cam.cy) / cam.fy
    pts = np.empty((h, w, 3))
    pts[..., 0] = xs[None, :] * depth
    pts[..., 1] = ys[:, None] * depth
    pts[..., 2] = depth
    return (pts - cam.t) @ cam.R


def _source_support(
    ref_map: DepthNormalMap,
    ref_cam: Camera,
    src_map: DepthNormalMap,
    src_cam: Camera,
    thresholds: ConsistencyThresholds,
) -> np.ndarray:
    """Boolean (H, W) mask of reference pixels verified by one source view.

    Source depth lookups use nearest-neighbor sampling; the forward-backward
    reprojection goes through the looked-up source pixel's own viewing ray.
    """
    h, w = ref_map.depth.shape
    ok = ref_map.valid.copy()
    world = _unproject_grid(ref_cam, ref_map.depth)

    px, py, z_proj = _project_all(src_cam, world)
    ok &= z_proj > _MIN_Z
    px = np.where(ok & np.isfinite(px), px, -1.0)
    py = np.where(ok & np.isfinite(py), py, -1.0)
    qx = np.round(px).astype(np.int64)
    qy = np.round(py).astype(np.int64)
    inb = ok & (qx >= 0) & (qx < src_cam.width) & (qy >= 0) & (qy < src_cam.height)
    qxc = np.clip(qx, 0, src_cam.width - 1)
    qyc = np.clip(qy, 0, src_cam.height - 1)

    ok = inb & src_map.valid[qyc, qxc]
    z_look = src_map.depth[qyc, qxc]

    # (b) relative depth difference at the looked-up source pixel
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(z_look - z_proj) / z_proj
    ok &= rel <= thresholds.rel_depth_tol

    # (a) forward-backward reprojection distance
    src_pts = np.empty((h, w, 3))
    src_pts[..., 0] = (qxc - src_cam.cx) / src_cam.fx * z_look
    src_pts[..., 1] = (qyc - src_cam.cy) / src_cam.fy * z_look
    src_pts[..., 2] = z_look
    back_world = (src_pts - src_cam.t) @ src_cam.R
    bx, by, bz = _project_all(ref_cam, back_world)
    ok &= bz > _MIN_Z
    xs, ys = np.meshgrid(np.arange(w), np.arange(h))
    dist = np.hypot(bx - xs, by - ys)
    ok &= dist <= thresholds.max_reproj

    # (c) normal consistency in the world frame
    n_ref_world = ref_map.normal @ ref_cam.R
    n_src_world = (src_map.normal @ src_cam.R)[qyc, qxc]
    cos = np.clip((n_ref_world * n_src_world).sum(axis=-1), -1.0, 1.0)
    ok &= cos >= np.cos(np.deg2rad(thresholds.max_normal_angle_deg))
    return ok


def check_pixel_consistency(
    ref_map: DepthNormalMap,
    ref_cam: Camera,
    src_maps: list[DepthNormalMap],
    src_cams: list[Camera],
    pixel,
    thresholds: ConsistencyThresholds | None = None,
) -> list[bool]:
    """Per-source verification verdicts for a single reference pixel."""
    thresholds = thresholds or ConsistencyThresholds()
    x, y = int(pixel[0]), int(pixel[1])
    if not ref_map.valid[y, x]:
        raise ValueError(f"pixel ({x}, {y}) has no valid reference depth")
    out = []
    for src_map, src_cam in zip(src_maps, src_cams):
        mask = _source_support(ref_map, ref_cam, src_map, src_cam, thresholds)
        out.append(bool(mask[y, x]))
    return out


def build_counter_map(
    ref_map: DepthNormalMap,
    ref_cam: Camera,
    src_maps: list[DepthNormalMap],
    src_cams: list[Camera],
    thresholds: ConsistencyThresholds | None = None,
) -> CounterMap:
    """Count passing sources per pixel; zero where the reference is invalid."""
    thresholds = thresholds or ConsistencyThresholds()
    for m in src_maps:
        if m.depth.shape != ref_map.depth.shape:
            raise ResolutionMismatch(
                f"source map {m.depth.shape} vs reference {ref_map.depth.shape}"
            )
    count = np.zeros(ref_map.depth.shape, dtype=np.int32)
    for src_map, src_cam in zip(src_maps, src_cams):
        count += _source_support(ref_map, ref_cam, src_map, src_cam, thresholds).astype(np.int32)
    count[~ref_map.valid] = 0
    return CounterMap(count=count, n_sources=len(src_maps))


def build_label_map(
    est: DepthNormalMap,
    gt: DepthNormalMap,
    ref_cam: Camera,
    src_cams: list[Camera],
    max_dist: float = 2.0,
) -> LabelMap:
    """Inlier/outlier labels from estimated-vs-ground-truth projections.

    Each valid pixel is projected into every source camera twice, once with
    the estimated and once with the ground-truth depth; the pixel is an
    inlier iff the minimum projection distance over sources is <= max_dist.
    Pixels with missing ground truth or an invalid estimate are undefined.
    Sources where either projection falls behind the camera are skipped; a
    pixel with no usable source is an outlier.
    """
    if est.depth.shape != gt.depth.shape:
        raise ResolutionMismatch(f"est {est.depth.shape} vs gt {gt.depth.shape}")
    if len(src_cams) < 1:
        raise NoSources("label maps need at least one source camera")

    h, w = est.depth.shape
    defined = est.valid & gt.valid
    world_est = _unproject_grid(ref_cam, est.depth)
    world_gt = _unproject_grid(ref_cam, gt.depth)

    min_dist = np.full((h, w), np.inf)
    for cam in src_cams:
        ex, ey, ez = _project_all(cam, world_est)
        gx, gy, gz = _project_all(cam, world_gt)
        usable = (ez > _MIN_Z) & (gz > _MIN_Z)
        d = np.hypot(ex - gx, ey - gy)
        d[~usable] = np.inf
        min_dist = np.minimum(min_dist, d)

    labels = np.full((h, w), LABEL_UNDEFINED, dtype=np.uint8)
    labels[defined & (min_dist <= max_dist)] = LABEL_INLIER
    labels[defined & ~(min_dist <= max_dist)] = LABEL_OUTLIER
    return LabelMap(labels=labels)
