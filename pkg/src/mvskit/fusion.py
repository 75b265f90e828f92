"""Outlier filtering and multi-view depth fusion into a point cloud.

Fusion is a greedy single pass in fixed (view, row-major) traversal order:
each unconsumed valid pixel gathers source pixels that pass the reprojection,
relative-depth and normal checks; if the group is large enough, one point is
emitted as the average of the supporting surface points and all members are
consumed. Fixed traversal makes the output byte-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba.typed import List as NumbaList

from . import _kernels, formats
from .confidence import ConfidenceMap
from .consistency import CounterMap
from .errors import MissingMaps, OutOfRange, ShapeMismatch
from .geometry import View
from .patchmatch import DepthNormalMap


@dataclass(frozen=True)
class FusionConfig:
    """Consistency thresholds and support requirement for fusion."""

    max_normal_angle_deg: float = 20.0
    max_reproj: float = 1.0
    min_support: int = 2
    rel_depth_tol: float = 0.01

    def __post_init__(self):
        if min(self.max_normal_angle_deg, self.max_reproj, self.rel_depth_tol) <= 0:
            raise ValueError("fusion thresholds must be positive")
        if self.min_support <= 0:
            raise ValueError("min_support must be positive")

    @staticmethod
    def default() -> "FusionConfig":
        return FusionConfig()

    @staticmethod
    def dense_video() -> "FusionConfig":
        """High-redundancy preset: quartered normal tolerance, 3 supports."""
        return FusionConfig(max_normal_angle_deg=5.0, min_support=3)

    @staticmethod
    def refined() -> "FusionConfig":
        """Preset for refined maps, whose normals are accurate to a few degrees."""
        return FusionConfig(max_normal_angle_deg=5.0)


@dataclass
class FusedPointCloud:
    """Fused 3D points with normals, colors and per-point support counts."""

    positions: np.ndarray  # (N, 3) float64, world frame
    normals: np.ndarray  # (N, 3) float64, unit
    colors: np.ndarray  # (N, 3) uint8
    support: np.ndarray  # (N,) int64

    def __len__(self) -> int:
        return len(self.positions)

    def save_ply(self, path) -> None:
        formats.write_ply(path, self.positions, self.normals, self.colors)

    @staticmethod
    def load_ply(path) -> "FusedPointCloud":
        positions, normals, colors = formats.read_ply(path)
        return FusedPointCloud(
            positions=positions,
            normals=normals,
            colors=colors,
            support=np.zeros(len(positions), dtype=np.int64),
        )


def filter_by_confidence(dn_map: DepthNormalMap, conf: ConfidenceMap, tau: float) -> DepthNormalMap:
    """Invalidate pixels whose confidence is below tau (tau in [0, 1])."""
    if not (0.0 <= tau <= 1.0):
        raise OutOfRange(f"tau must be in [0, 1], got {tau}")
    if conf.values.shape != dn_map.depth.shape:
        raise ShapeMismatch(f"confidence {conf.values.shape} vs map {dn_map.depth.shape}")
    keep = conf.valid & (conf.values >= tau)
    out = dn_map.copy()
    out.valid &= keep
    return out


def filter_by_support(dn_map: DepthNormalMap, counter: CounterMap, k: int) -> DepthNormalMap:
    """Invalidate pixels verified by fewer than k source views."""
    if counter.count.shape != dn_map.depth.shape:
        raise ShapeMismatch(f"counter {counter.count.shape} vs map {dn_map.depth.shape}")
    out = dn_map.copy()
    out.valid &= counter.count >= k
    return out


def fuse(views: list[View], maps: list[DepthNormalMap], config: FusionConfig | None = None) -> FusedPointCloud:
    """Fuse per-view depth/normal maps into one consistent point cloud."""
    config = config or FusionConfig()
    if len(maps) != len(views) or any(m is None for m in maps):
        raise MissingMaps("every view needs a depth/normal map")
    for view, m in zip(views, maps):
        if m.depth.shape != view.gray.shape:
            raise MissingMaps(
                f"map resolution {m.depth.shape} does not match view {view.gray.shape}"
            )

    depths = NumbaList()
    valids = NumbaList()
    normals = NumbaList()
    images = NumbaList()
    for view, m in zip(views, maps):
        depths.append(np.ascontiguousarray(m.depth, dtype=np.float64))
        valids.append(m.valid.astype(np.uint8))
        normals.append(np.ascontiguousarray(m.normal, dtype=np.float64))
        images.append(view.image)

    K_all = np.stack(
        [np.array([v.camera.fx, v.camera.fy, v.camera.cx, v.camera.cy]) for v in views]
    )
    R_all = np.stack([v.camera.R for v in views])
    t_all = np.stack([v.camera.t for v in views])

    total = int(sum(m.depth.size for m in maps))
    out_pos = np.empty((total, 3))
    out_normal = np.empty((total, 3))
    out_color = np.empty((total, 3))
    out_support = np.empty(total, dtype=np.int64)

    count = _kernels.fuse_views(
        depths,
        valids,
        normals,
        images,
        K_all,
        R_all,
        t_all,
        config.max_reproj,
        config.rel_depth_tol,
        float(np.cos(np.deg2rad(config.max_normal_angle_deg))),
        config.min_support,
        out_pos,
        out_normal,
        out_color,
        out_support,
    )
    colors = np.clip(np.round(out_color[:count] * 255.0), 0, 255).astype(np.uint8)
    return FusedPointCloud(
        positions=out_pos[:count].copy(),
        normals=out_normal[:count].copy(),
        colors=colors,
        support=out_support[:count].copy(),
    )
