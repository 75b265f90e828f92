"""Pinhole camera math: projection, plane-induced warping, normal encodings.

Conventions used throughout the toolkit:

- World and camera frames are right-handed; the camera looks along +z with
  image y pointing down.
- A camera stores the world-to-camera pose: ``X_cam = R @ X_world + t``.
- Pixel coordinates are (x, y) with the origin at the center of the top-left
  pixel; arrays are indexed ``[y, x]``.
- Per-pixel geometric failures (ray parallel to a plane, intersection behind
  the camera) are reported as NaN / invalid flags, not exceptions. Hard
  errors are reserved for malformed inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCamera, NonPositiveDepth, NotUnit

# Ray-plane intersections with |n . dir| below this are treated as parallel.
DEGENERATE_DENOM = 1e-12

# Minimum camera-frame z for a point to count as "in front" of the camera.
MIN_CAMERA_Z = 1e-9


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics plus world-to-camera pose.

    Attributes:
        fx, fy: Focal lengths in pixels (> 0).
        cx, cy: Principal point in pixels, inside the image.
        R: 3x3 world-to-camera rotation (orthonormal, det +1).
        t: Translation, scene units. X_cam = R @ X_world + t.
        width, height: Image size in pixels.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )
        err = np.abs(self.R @ self.R.T - np.eye(3)).max()
        if err > 1e-9:
            raise ValueError(f"rotation is not orthonormal (max deviation {err:.3e})")
        if abs(np.linalg.det(self.R) - 1.0) > 1e-9:
            raise ValueError("rotation must have determinant +1")

    @property
    def K(self) -> np.ndarray:
        """3x3 intrinsic matrix."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    def optical_axis(self) -> np.ndarray:
        """Viewing direction (+z of the camera frame) in world coordinates."""
        return self.R.T @ np.array([0.0, 0.0, 1.0])

    def ray(self, pixel) -> np.ndarray:
        """Camera-frame viewing ray of a pixel, normalized to z = 1."""
        x, y = float(pixel[0]), float(pixel[1])
        return np.array([(x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0])

    def scaled(self, factor: float) -> "Camera":
        """Camera for an image resampled by `factor` (pixel-center convention)."""
        w = max(1, int(round(self.width * factor)))
        h = max(1, int(round(self.height * factor)))
        sx = w / self.width
        sy = h / self.height
        return Camera(
            fx=self.fx * sx,
            fy=self.fy * sy,
            cx=(self.cx + 0.5) * sx - 0.5,
            cy=(self.cy + 0.5) * sy - 0.5,
            R=self.R,
            t=self.t,
            width=w,
            height=h,
        )


@dataclass(frozen=True)
class PlaneHypothesis:
    """Per-pixel PatchMatch state: a depth and a unit normal in the camera frame.

    The normal must face the camera for the pixel the hypothesis belongs to
    (n . ray < 0); that is enforced at construction sites, since the pixel's
    viewing ray is not part of the type.
    """

    depth: float
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "normal", np.asarray(self.normal, dtype=np.float64).reshape(3))
        if not self.depth > 0:
            raise NonPositiveDepth(f"hypothesis depth must be > 0, got {self.depth}")
        norm = float(np.linalg.norm(self.normal))
        if abs(norm - 1.0) > 1e-6:
            raise NotUnit(f"hypothesis normal has length {norm}")


@dataclass(frozen=True)
class PolarNormal:
    """Unit normal encoded as (theta, phi) polar angles.

    theta = arccos(-n_z) in [0, pi]: camera-facing normals map near 0.
    phi = atan2(n_y, n_x) in [-pi, pi]; irrelevant at the poles.
    """

    theta: float
    phi: float


@dataclass
class View:
    """One calibrated input image.

    Attributes:
        name: Identifier (typically the image file stem).
        image: (H, W, 3) float32 RGB in [0, 1].
        camera: Calibrated camera for this image.
        gray: (H, W) float32 luma, derived from `image`.
    """

    name: str
    image: np.ndarray
    camera: Camera
    gray: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.image = np.ascontiguousarray(self.image, dtype=np.float32)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"view image must be (H, W, 3), got {self.image.shape}")
        h, w = self.image.shape[:2]
        if (w, h) != (self.camera.width, self.camera.height):
            raise ValueError(
                f"image size {w}x{h} does not match camera {self.camera.width}x{self.camera.height}"
            )
        if self.gray is None:
            self.gray = luma(self.image)
        self.gray = np.ascontiguousarray(self.gray, dtype=np.float32)


def luma(rgb: np.ndarray) -> np.ndarray:
    """Rec.601 luma of an (H, W, 3) image."""
    rgb = np.asarray(rgb, dtype=np.float32)
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def project(cam: Camera, point) -> tuple[np.ndarray, float]:
    """Project a world point; returns (pixel, camera-frame depth).

    The pixel may fall outside the image bounds; callers check.

    Raises:
        BehindCamera: if the camera-frame z is <= 1e-9.
    """
    p_cam = cam.R @ np.asarray(point, dtype=np.float64).reshape(3) + cam.t
    z = p_cam[2]
    if z <= MIN_CAMERA_Z:
        raise BehindCamera(f"point has camera-frame z = {z:.3e}")
    pixel = np.array([cam.fx * p_cam[0] / z + cam.cx, cam.fy * p_cam[1] / z + cam.cy])
    return pixel, float(z)


def unproject(cam: Camera, pixel, depth: float) -> np.ndarray:
    """World point seen at `pixel` with the given camera-frame depth.

    Raises:
        NonPositiveDepth: if depth <= 0.
    """
    if not depth > 0:
        raise NonPositiveDepth(f"depth must be > 0, got {depth}")
    p_cam = cam.ray(pixel) * float(depth)
    return cam.R.T @ (p_cam - cam.t)


def plane_induced_depth(cam: Camera, src_pixel, hyp: PlaneHypothesis, dst_pixel) -> float:
    """Depth at `dst_pixel` of its viewing ray intersected with the plane at `src_pixel`.

    The plane passes through the 3D point of (src_pixel, hyp.depth) with
    camera-frame normal hyp.normal. Returns NaN when the ray is parallel to
    the plane (|n . ray| < 1e-12) or the intersection lies behind the camera;
    propagation must skip those values.
    """
    ray_i = cam.ray(src_pixel)
    ray_j = cam.ray(dst_pixel)
    n = hyp.normal
    rho = float(n @ ray_i) * hyp.depth  # n . P_i
    denom = float(n @ ray_j)
    if abs(denom) < DEGENERATE_DENOM:
        return float("nan")
    z = rho / denom
    if z <= 0.0:
        return float("nan")
    return z


def plane_homography(ref_cam: Camera, src_cam: Camera, anchor_pixel, hyp: PlaneHypothesis) -> np.ndarray:
    """3x3 homography mapping ref pixels to src pixels through the local plane.

    The plane is hyp anchored at `anchor_pixel` in the reference camera frame.
    """
    ray = ref_cam.ray(anchor_pixel)
    n = hyp.normal
    rho = float(n @ ray) * hyp.depth
    R_rel = src_cam.R @ ref_cam.R.T
    t_rel = src_cam.t - R_rel @ ref_cam.t
    M = R_rel + np.outer(t_rel, n) / rho
    K_ref_inv = np.array(
        [
            [1.0 / ref_cam.fx, 0.0, -ref_cam.cx / ref_cam.fx],
            [0.0, 1.0 / ref_cam.fy, -ref_cam.cy / ref_cam.fy],
            [0.0, 0.0, 1.0],
        ]
    )
    return src_cam.K @ M @ K_ref_inv


def warp_patch(
    ref_cam: Camera,
    src_cam: Camera,
    center,
    hyp: PlaneHypothesis,
    offsets,
) -> tuple[np.ndarray, np.ndarray]:
    """Map reference-patch pixels into the source view through the local plane.

    Args:
        center: Patch center pixel in the reference image.
        offsets: (P, 2) array of integer or float pixel offsets.

    Returns:
        (pixels, valid): (P, 2) source pixel coordinates and a (P,) bool mask.
        A patch pixel is invalid when its ray misses the plane, the
        intersection is behind either camera, or the warped position leaves
        the source image bounds.
    """
    offsets = np.asarray(offsets, dtype=np.float64).reshape(-1, 2)
    cx, cy = float(center[0]), float(center[1])
    q = offsets + np.array([cx, cy])
    H = plane_homography(ref_cam, src_cam, center, hyp)

    ones = np.ones((q.shape[0], 1))
    warped_h = np.hstack([q, ones]) @ H.T
    w = warped_h[:, 2]

    # Plane depth along each reference ray; also yields the src-side z sign.
    n = hyp.normal
    ray_c = ref_cam.ray(center)
    rho = float(n @ ray_c) * hyp.depth
    denom = (
        n[0] * (q[:, 0] - ref_cam.cx) / ref_cam.fx
        + n[1] * (q[:, 1] - ref_cam.cy) / ref_cam.fy
        + n[2]
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        z_ref = rho / denom
        pixels = warped_h[:, :2] / w[:, None]

    valid = (np.abs(denom) >= DEGENERATE_DENOM) & (z_ref > 0)
    valid &= z_ref * w > MIN_CAMERA_Z  # src-side depth = z_ref * w
    valid &= np.isfinite(pixels).all(axis=1)
    valid &= (
        (pixels[:, 0] >= 0)
        & (pixels[:, 0] <= src_cam.width - 1)
        & (pixels[:, 1] >= 0)
        & (pixels[:, 1] <= src_cam.height - 1)
    )
    pixels[~valid] = np.nan
    return pixels, valid


def normal_to_polar(n) -> PolarNormal:
    """Encode a unit normal as polar angles; see PolarNormal for the convention.

    Raises:
        NotUnit: when ||n|| deviates from 1 by more than 1e-6.
    """
    n = np.asarray(n, dtype=np.float64).reshape(3)
    norm = float(np.linalg.norm(n))
    if abs(norm - 1.0) > 1e-6:
        raise NotUnit(f"normal has length {norm}")
    theta = math.acos(max(-1.0, min(1.0, -n[2])))
    if abs(n[0]) == 0.0 and abs(n[1]) == 0.0:
        phi = 0.0  # pole: phi is irrelevant, fixed to 0 by convention
    else:
        phi = math.atan2(n[1], n[0])
    return PolarNormal(theta=theta, phi=phi)


def polar_to_normal(p: PolarNormal) -> np.ndarray:
    """Decode polar angles back to a unit normal."""
    st = math.sin(p.theta)
    return np.array([st * math.cos(p.phi), st * math.sin(p.phi), -math.cos(p.theta)])


def normals_to_polar_maps(normal: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Vectorized polar encoding of an (H, W, 3) normal map.

    Returns an (H, W, 2) array of (theta, phi); invalid pixels encode to the
    camera-facing pole (0, 0).
    """
    nz = np.clip(-normal[..., 2], -1.0, 1.0)
    theta = np.arccos(nz)
    phi = np.arctan2(normal[..., 1], normal[..., 0])
    at_pole = (normal[..., 0] == 0.0) & (normal[..., 1] == 0.0)
    phi = np.where(at_pole, 0.0, phi)
    out = np.stack([theta, phi], axis=-1)
    out[~valid] = 0.0
    return out


def polar_maps_to_normals(polar: np.ndarray) -> np.ndarray:
    """Inverse of normals_to_polar_maps for an (H, W, 2) array."""
    theta = polar[..., 0]
    phi = polar[..., 1]
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), -np.cos(theta)], axis=-1)
