"""PatchMatch multi-view stereo with red-black checkerboard propagation.

The propagation state is a per-pixel plane hypothesis (depth + camera-frame
normal). One iteration updates all pixels of one checkerboard color from the
frozen opposite color: sampled hypotheses are transferred plane-based (the
destination ray intersected with the sample's local plane), ranked by their
stored costs, topped up with perturbation candidates and re-scored with a
bilateral-weighted NCC aggregated over the best source views. A hypothesis is
replaced only by a strictly cheaper candidate, so stored costs never increase
and ties keep the incumbent, which makes runs bit-reproducible for a fixed
seed.

Multi-scale estimation runs the same machinery over an image pyramid with a
geometric-consistency term against the coarser level's depth maps and a
best-of-two detail restorer at each upsampling step.
"""

from __future__ import annotations

import functools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba.typed import List as NumbaList
from PIL import Image

from . import _kernels
from .errors import BadRange, InsufficientViews
from .geometry import Camera, PlaneHypothesis, View

logger = logging.getLogger(__name__)

RED = 0
BLACK = 1
_COLOR_NAMES = {"red": RED, "black": BLACK, RED: RED, BLACK: BLACK}


@dataclass(frozen=True)
class MatchCost:
    """Photometric matching cost: 1 - NCC in [0, 2], or invalid (inf)."""

    value: float

    @property
    def is_valid(self) -> bool:
        return math.isfinite(self.value)

    @staticmethod
    def invalid() -> "MatchCost":
        return MatchCost(float("inf"))


@dataclass
class PatchMatchConfig:
    """Parameters of the PatchMatch estimator.

    depth_range is (z_min, z_max) in scene units and must be set before
    estimation. sigma_spatial defaults to half the patch radius.
    """

    iterations: int = 8
    patch_radius: int = 5
    samples_per_direction: int = 6
    k_select: int = 8
    k_update: int = 16
    levels: int = 3
    downsample_factor: float = 0.5
    geometric_weight: float = 0.2
    geometric_cap: float = 3.0
    depth_range: tuple[float, float] | None = None
    sigma_color: float = 0.1
    sigma_spatial: float | None = None
    # precompute the per-pixel bilateral weight table below this pixel count
    max_weight_table_pixels: int = 1 << 20

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.k_update < self.k_select:
            raise ValueError("k_update must be >= k_select")
        if not (0.0 < self.downsample_factor < 1.0):
            raise ValueError("downsample factor must be in (0, 1)")
        if self.depth_range is not None:
            zmin, zmax = self.depth_range
            if not (0.0 < zmin <= zmax):
                raise BadRange(f"invalid depth range [{zmin}, {zmax}]")

    @property
    def hypotheses_per_pixel(self) -> int:
        return 4 * self.samples_per_direction

    @property
    def patch_sigma_spatial(self) -> float:
        return self.sigma_spatial if self.sigma_spatial is not None else self.patch_radius / 2.0

    def require_depth_range(self) -> tuple[float, float]:
        if self.depth_range is None:
            raise BadRange("config.depth_range is not set")
        return self.depth_range


@dataclass
class DepthNormalMap:
    """Per-pixel plane hypotheses with a validity mask.

    depth: (H, W) float64; normal: (H, W, 3) float64, camera frame, unit on
    valid pixels; valid: (H, W) bool.
    """

    depth: np.ndarray
    normal: np.ndarray
    valid: np.ndarray

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def hypothesis_at(self, x: int, y: int) -> PlaneHypothesis:
        return PlaneHypothesis(depth=float(self.depth[y, x]), normal=self.normal[y, x].copy())

    def copy(self) -> "DepthNormalMap":
        return DepthNormalMap(self.depth.copy(), self.normal.copy(), self.valid.copy())


@dataclass
class PatchMatchState:
    """Mutable estimation state for one reference view.

    cost holds each pixel's stored multi-view matching cost (inf where no
    valid match exists). inherited_valid marks pixels whose hypothesis was
    carried over from a coarser pyramid level with a finite cost there.
    """

    ref_index: int
    depth: np.ndarray
    normal: np.ndarray
    cost: np.ndarray
    inherited_valid: np.ndarray

    def to_map(self) -> DepthNormalMap:
        valid = np.isfinite(self.cost) | self.inherited_valid
        return DepthNormalMap(self.depth.copy(), self.normal.copy(), valid)


# ---------------------------------------------------------------------------
# sampling pattern


@functools.lru_cache(maxsize=8)
def checkerboard_offsets(samples_per_direction: int = 6) -> np.ndarray:
    """Offsets of the diagonal checkerboard sampling pattern.

    Four diagonal rays from the center; along each ray the samples hug the
    exact diagonal alternately at (2m-1, 2m) and (2m, 2m-1), so every offset
    has odd parity (opposite checkerboard color) and the 8-neighborhood of
    the center is excluded. With 6 samples per direction this yields the
    24-hypothesis pattern. The set is closed under both axis reflections and
    under transposition.
    """
    out = []
    for sx, sy in ((1, -1), (-1, -1), (1, 1), (-1, 1)):
        pairs = []
        m = 1
        while len(pairs) < samples_per_direction:
            pairs.append((sx * (2 * m - 1), sy * 2 * m))
            if len(pairs) < samples_per_direction:
                pairs.append((sx * 2 * m, sy * (2 * m - 1)))
            m += 1
        out.extend(pairs)
    return np.array(out, dtype=np.int64)


def checkerboard_samples(pixel, width: int, height: int, samples_per_direction: int = 6) -> np.ndarray:
    """Absolute sample locations for a pixel, with out-of-bounds ones dropped."""
    x, y = int(pixel[0]), int(pixel[1])
    locs = checkerboard_offsets(samples_per_direction) + np.array([x, y], dtype=np.int64)
    keep = (
        (locs[:, 0] >= 0) & (locs[:, 0] < width) & (locs[:, 1] >= 0) & (locs[:, 1] < height)
    )
    return locs[keep]


@functools.lru_cache(maxsize=8)
def _patch_offsets(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1, dtype=np.int64)
    oy, ox = np.meshgrid(r, r, indexing="ij")
    return np.stack([ox.ravel(), oy.ravel()], axis=1)


def _spatial_weights(radius: int, sigma_spatial: float) -> np.ndarray:
    off = _patch_offsets(radius).astype(np.float64)
    d2 = off[:, 0] ** 2 + off[:, 1] ** 2
    return np.exp(-d2 / (2.0 * sigma_spatial**2))


def build_weight_table(view: View, config: PatchMatchConfig) -> np.ndarray:
    """Precompute bilateral weights (H, W, P) from the reference image.

    Weight = exp(-mean-squared RGB difference to the patch center / 2
    sigma_c^2) times the spatial Gaussian. Out-of-bounds patch pixels keep
    weight 0 (the kernels skip them by bounds checks anyway).
    """
    h, w = view.gray.shape
    offsets = _patch_offsets(config.patch_radius)
    spatial = _spatial_weights(config.patch_radius, config.patch_sigma_spatial)
    rgb = view.image.astype(np.float64)
    table = np.zeros((h, w, offsets.shape[0]), dtype=np.float32)
    inv = 1.0 / (2.0 * config.sigma_color**2)
    for p, (ox, oy) in enumerate(offsets):
        ys0, ys1 = max(0, -oy), min(h, h - oy)
        xs0, xs1 = max(0, -ox), min(w, w - ox)
        if ys0 >= ys1 or xs0 >= xs1:
            continue
        diff = rgb[ys0 + oy : ys1 + oy, xs0 + ox : xs1 + ox] - rgb[ys0:ys1, xs0:xs1]
        dc2 = (diff**2).mean(axis=2)
        table[ys0:ys1, xs0:xs1, p] = np.exp(-dc2 * inv) * spatial[p]
    return table


# ---------------------------------------------------------------------------
# kernel argument packing

_DUMMY_WEIGHTS = np.zeros((1, 1, 1), dtype=np.float32)
_DUMMY_PRIOR = np.zeros((1, 1), dtype=np.float64)
_DUMMY_PRIOR_VALID = np.zeros((1, 1), dtype=np.uint8)


def _camera_k(cam: Camera) -> np.ndarray:
    return np.array([cam.fx, cam.fy, cam.cx, cam.cy], dtype=np.float64)


def _relative_pose(ref: Camera, src: Camera) -> tuple[np.ndarray, np.ndarray]:
    M = src.R @ ref.R.T
    t = src.t - M @ ref.t
    return np.ascontiguousarray(M), np.ascontiguousarray(t)


class _Packs:
    """Numba-ready arrays for one reference view and its sources."""

    def __init__(self, views, ref_index, config, priors=None, weights=None):
        ref = views[ref_index]
        self.ref = ref
        self.ref_k = _camera_k(ref.camera)
        self.ref_gray = ref.gray
        self.ref_rgb = ref.image
        if weights is not None:
            self.weights = weights
            self.use_weights = True
        else:
            self.weights = _DUMMY_WEIGHTS
            self.use_weights = False

        src_views = [v for i, v in enumerate(views) if i != ref_index]
        self.src_indices = [i for i in range(len(views)) if i != ref_index]
        self.src_grays = NumbaList()
        for v in src_views:
            self.src_grays.append(v.gray)
        self.src_k = np.stack([_camera_k(v.camera) for v in src_views])
        M_list, t_list = [], []
        for v in src_views:
            M, t = _relative_pose(ref.camera, v.camera)
            M_list.append(M)
            t_list.append(t)
        self.M_all = np.stack(M_list)
        self.t_all = np.stack(t_list)

        self.offsets = _patch_offsets(config.patch_radius)
        self.spatial = _spatial_weights(config.patch_radius, config.patch_sigma_spatial)
        self.inv_two_sigma_c2 = 1.0 / (2.0 * config.sigma_color**2)

        self.priors = NumbaList()
        self.priors_valid = NumbaList()
        if priors is not None:
            self.use_geom = True
            for i in self.src_indices:
                pm = priors[i]
                self.priors.append(np.ascontiguousarray(pm.depth, dtype=np.float64))
                self.priors_valid.append(pm.valid.astype(np.uint8))
        else:
            self.use_geom = False
            for _ in src_views:
                self.priors.append(_DUMMY_PRIOR)
                self.priors_valid.append(_DUMMY_PRIOR_VALID)

    def photo_args(self):
        return (
            self.ref_gray,
            self.ref_rgb,
            self.weights,
            self.use_weights,
            self.ref_k,
            self.src_grays,
            self.src_k,
            self.M_all,
            self.t_all,
            self.offsets,
            self.spatial,
            self.inv_two_sigma_c2,
        )

    def geom_args(self, config):
        return (
            self.use_geom,
            self.priors,
            self.priors_valid,
            config.geometric_weight,
            config.geometric_cap,
        )


# ---------------------------------------------------------------------------
# operations


def initialize_random(view: View, depth_range, seed: int) -> DepthNormalMap:
    """Random PatchMatch bootstrap: uniform depths, camera-facing normals.

    Deterministic for a fixed seed. Raises BadRange unless
    0 < z_min <= z_max.
    """
    zmin, zmax = float(depth_range[0]), float(depth_range[1])
    if not (0.0 < zmin <= zmax):
        raise BadRange(f"invalid depth range [{zmin}, {zmax}]")
    h, w = view.gray.shape
    rng = np.random.Generator(np.random.PCG64(seed))
    depth = rng.uniform(zmin, zmax, size=(h, w))
    if zmin == zmax:
        depth = np.full((h, w), zmin)

    z = rng.uniform(-1.0, 1.0, size=(h, w))
    phi = rng.uniform(-np.pi, np.pi, size=(h, w))
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    normal = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)

    cam = view.camera
    xs = (np.arange(w) - cam.cx) / cam.fx
    ys = (np.arange(h) - cam.cy) / cam.fy
    rays = np.empty((h, w, 3))
    rays[..., 0] = xs[None, :]
    rays[..., 1] = ys[:, None]
    rays[..., 2] = 1.0
    rn = np.linalg.norm(rays, axis=-1, keepdims=True)
    rhat = rays / rn
    nd = (normal * rhat).sum(axis=-1)
    normal[nd > 0] *= -1.0
    nd = (normal * rhat).sum(axis=-1)
    grazing = nd > -1e-6
    if grazing.any():
        normal[grazing] -= 0.01 * rhat[grazing]
        normal[grazing] /= np.linalg.norm(normal[grazing], axis=-1, keepdims=True)
    return DepthNormalMap(depth=depth, normal=normal, valid=np.ones((h, w), dtype=bool))


def bilateral_ncc_cost(ref_view: View, src_view: View, center, hyp: PlaneHypothesis, config: PatchMatchConfig) -> MatchCost:
    """Bilateral-weighted NCC cost of one hypothesis against one source view."""
    x, y = int(center[0]), int(center[1])
    pack = _Packs([ref_view, src_view], 0, config)
    value = _kernels.ncc_cost(
        x,
        y,
        float(hyp.depth),
        float(hyp.normal[0]),
        float(hyp.normal[1]),
        float(hyp.normal[2]),
        pack.ref_gray,
        pack.ref_rgb,
        pack.weights,
        pack.use_weights,
        pack.ref_k[0],
        pack.ref_k[1],
        pack.ref_k[2],
        pack.ref_k[3],
        pack.src_grays[0],
        pack.src_k[0, 0],
        pack.src_k[0, 1],
        pack.src_k[0, 2],
        pack.src_k[0, 3],
        pack.M_all[0],
        pack.t_all[0],
        pack.offsets,
        pack.spatial,
        pack.inv_two_sigma_c2,
    )
    return MatchCost(float(value))


def perturb(
    hyp: PlaneHypothesis,
    iteration: int,
    depth_range,
    ray=(0.0, 0.0, 1.0),
    rng: np.random.Generator | None = None,
) -> list[PlaneHypothesis]:
    """The 8 perturbation candidates for one pixel at red-black iteration i.

    epsilon = 2^-i bounds both the multiplicative depth perturbation and the
    normal rotation (as a fraction of 90 degrees). `ray` is the pixel's
    camera-frame viewing ray, used to keep normals camera-facing.
    """
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    zmin, zmax = float(depth_range[0]), float(depth_range[1])
    if not (0.0 < zmin <= zmax):
        raise BadRange(f"invalid depth range [{zmin}, {zmax}]")
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(iteration))
    eps = 2.0 ** (-iteration)
    rand = rng.random(7)
    out_z = np.empty(8)
    out_n = np.empty((8, 3))
    n = _kernels.perturb_candidates(
        float(hyp.depth),
        np.asarray(hyp.normal, dtype=np.float64),
        np.asarray(ray, dtype=np.float64),
        eps,
        zmin,
        zmax,
        rand,
        out_z,
        out_n,
    )
    return [PlaneHypothesis(depth=float(out_z[i]), normal=out_n[i].copy()) for i in range(n)]


def multi_view_cost(
    ref_view: View,
    src_views: list[View],
    center,
    hyp: PlaneHypothesis,
    config: PatchMatchConfig,
    geometric: list[DepthNormalMap | None] | None = None,
) -> float:
    """Aggregated matching cost of a hypothesis over several source views.

    `geometric`, when given, must hold one prior DepthNormalMap per source
    view (same order); the capped forward-backward reprojection error is then
    added, scaled by config.geometric_weight. Returns inf when no source
    yields a valid photometric cost.
    """
    if len(src_views) < 1:
        raise InsufficientViews("multi_view_cost needs at least one source view")
    views = [ref_view] + list(src_views)
    priors = None
    if geometric is not None:
        if len(geometric) != len(src_views):
            raise ValueError("need one prior map per source view")
        priors = [None] + list(geometric)
    pack = _Packs(views, 0, config, priors=priors)
    x, y = int(center[0]), int(center[1])
    value = _kernels.multi_view_cost(
        x,
        y,
        float(hyp.depth),
        float(hyp.normal[0]),
        float(hyp.normal[1]),
        float(hyp.normal[2]),
        *pack.photo_args(),
        config.k_select,
        *pack.geom_args(config),
    )
    return float(value)


def aggregate_source_costs(costs, k_select: int) -> float:
    """Mean of the k_select best finite per-source costs (inf when none)."""
    arr = np.asarray(costs, dtype=np.float64)
    return float(_kernels.aggregate_costs(arr, int(k_select)))


def compute_costs(
    state: PatchMatchState,
    views: list[View],
    config: PatchMatchConfig,
    priors=None,
    weights=None,
) -> None:
    """Fill state.cost with the multi-view cost of every current hypothesis."""
    pack = _Packs(views, state.ref_index, config, priors=priors, weights=weights)
    _kernels.compute_costs(
        state.depth,
        state.normal,
        state.cost,
        *pack.photo_args(),
        config.k_select,
        *pack.geom_args(config),
    )


def init_state(
    views: list[View],
    ref_index: int,
    config: PatchMatchConfig,
    seed: int,
    priors=None,
    weights=None,
) -> PatchMatchState:
    """Random initialization plus an initial cost evaluation."""
    depth_range = config.require_depth_range()
    dn = initialize_random(views[ref_index], depth_range, seed)
    h, w = dn.depth.shape
    state = PatchMatchState(
        ref_index=ref_index,
        depth=dn.depth,
        normal=dn.normal,
        cost=np.full((h, w), np.inf),
        inherited_valid=np.zeros((h, w), dtype=bool),
    )
    compute_costs(state, views, config, priors=priors, weights=weights)
    return state


def run_iteration(
    state: PatchMatchState,
    views: list[View],
    color,
    iteration: int,
    config: PatchMatchConfig,
    priors=None,
    weights=None,
    rng: np.random.Generator | None = None,
) -> PatchMatchState:
    """One red or black half-iteration, updating state in place.

    All pixels of the given color update independently from the frozen
    opposite color; a pixel's hypothesis changes only when a candidate beats
    its stored cost strictly.
    """
    color = _COLOR_NAMES[color]
    zmin, zmax = config.require_depth_range()
    if rng is None:
        rng = np.random.Generator(np.random.PCG64(iteration))
    h, w = state.depth.shape
    rand = rng.random((h, w, 7))
    eps = 2.0 ** (-iteration)
    pack = _Packs(views, state.ref_index, config, priors=priors, weights=weights)
    _kernels.run_color(
        color,
        eps,
        state.depth,
        state.normal,
        state.cost,
        rand,
        checkerboard_offsets(config.samples_per_direction),
        zmin,
        zmax,
        config.k_select,
        config.k_update,
        *pack.photo_args(),
        *pack.geom_args(config),
    )
    return state


# ---------------------------------------------------------------------------
# multi-scale estimation


def resample_image(image: np.ndarray, width: int, height: int) -> np.ndarray:
    """Area-resample an (H, W, 3) float image (PIL BOX filter per channel)."""
    channels = []
    for c in range(image.shape[2]):
        im = Image.fromarray(np.ascontiguousarray(image[..., c], dtype=np.float32), mode="F")
        channels.append(np.asarray(im.resize((width, height), resample=Image.BOX)))
    return np.stack(channels, axis=-1)


def _view_pyramid(view: View, levels: int, factor: float) -> list[View]:
    """Pyramid of a view; index 0 is the input resolution."""
    out = [view]
    for _ in range(1, levels):
        prev = out[-1]
        cam = prev.camera.scaled(factor)
        img = resample_image(prev.image, cam.width, cam.height)
        out.append(View(name=prev.name, image=img, camera=cam))
    return out


def _upsample_map(dn: DepthNormalMap, width: int, height: int) -> DepthNormalMap:
    """Nearest-neighbor upsample of a depth/normal map (pixel-center aligned)."""
    ch, cw = dn.depth.shape
    xs = np.clip(np.round((np.arange(width) + 0.5) * cw / width - 0.5).astype(int), 0, cw - 1)
    ys = np.clip(np.round((np.arange(height) + 0.5) * ch / height - 0.5).astype(int), 0, ch - 1)
    return DepthNormalMap(
        depth=dn.depth[np.ix_(ys, xs)].copy(),
        normal=dn.normal[np.ix_(ys, xs)].copy(),
        valid=dn.valid[np.ix_(ys, xs)].copy(),
    )


def _weight_table_or_none(view: View, config: PatchMatchConfig):
    h, w = view.gray.shape
    if h * w <= config.max_weight_table_pixels:
        return build_weight_table(view, config)
    return None


def estimate_single_scale(
    views: list[View],
    ref_index: int,
    config: PatchMatchConfig,
    seed: int = 0,
) -> PatchMatchState:
    """Plain single-scale PatchMatch: random init plus red-black iterations."""
    if len(views) < 2:
        raise InsufficientViews("need at least two views")
    weights = _weight_table_or_none(views[ref_index], config)
    state = init_state(views, ref_index, config, seed, weights=weights)
    for i in range(1, config.iterations + 1):
        for color in (RED, BLACK):
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence((seed, ref_index, i, color)))
            )
            run_iteration(state, views, color, i, config, weights=weights, rng=rng)
    return state


_photometric_pass = estimate_single_scale


def _geometric_pass(state, views, config, seed, priors) -> PatchMatchState:
    weights = _weight_table_or_none(views[state.ref_index], config)
    compute_costs(state, views, config, priors=priors, weights=weights)
    for i in range(1, config.iterations + 1):
        for color in (RED, BLACK):
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence((seed, state.ref_index, 1000 + i, color)))
            )
            run_iteration(state, views, color, i, config, priors=priors, weights=weights, rng=rng)
    return state


def _restore_details(
    photo_state: PatchMatchState,
    upsampled: DepthNormalMap,
    views,
    config,
) -> PatchMatchState:
    """Best-of-two per pixel: fine-scale photometric vs. upsampled hypothesis.

    Ties keep the upsampled hypothesis. Validity inherited from the coarser
    level survives wherever the upsampled hypothesis wins.
    """
    ref_index = photo_state.ref_index
    weights = _weight_table_or_none(views[ref_index], config)
    h, w = upsampled.depth.shape
    up_state = PatchMatchState(
        ref_index=ref_index,
        depth=np.ascontiguousarray(upsampled.depth),
        normal=np.ascontiguousarray(upsampled.normal),
        cost=np.full((h, w), np.inf),
        inherited_valid=upsampled.valid.copy(),
    )
    compute_costs(up_state, views, config, weights=weights)

    photo_wins = photo_state.cost < up_state.cost
    depth = np.where(photo_wins, photo_state.depth, up_state.depth)
    normal = np.where(photo_wins[..., None], photo_state.normal, up_state.normal)
    cost = np.where(photo_wins, photo_state.cost, up_state.cost)
    inherited = np.where(photo_wins, False, up_state.inherited_valid)
    return PatchMatchState(
        ref_index=ref_index,
        depth=np.ascontiguousarray(depth),
        normal=np.ascontiguousarray(normal),
        cost=np.ascontiguousarray(cost),
        inherited_valid=inherited,
    )


def estimate_all_multiscale(
    views: list[View],
    config: PatchMatchConfig,
    seed: int = 0,
    threads: int = 1,
) -> list[DepthNormalMap]:
    """Jointly estimate depth/normal maps for every view, coarse to fine.

    The coarsest level runs photometrically from random initialization. Each
    finer level runs its own photometric pass, restores details against the
    upsampled coarser result, then iterates with the geometric-consistency
    term against the restored maps of all views. Per-view work at one level
    is independent and runs on a thread pool; results do not depend on the
    thread count.
    """
    if len(views) < 2:
        raise InsufficientViews("need at least two views")
    config.require_depth_range()
    pyramids = [_view_pyramid(v, config.levels, config.downsample_factor) for v in views]

    def for_all(fn):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                return list(pool.map(fn, range(len(views))))
        return [fn(i) for i in range(len(views))]

    results: list[DepthNormalMap] = []
    for level in range(config.levels - 1, -1, -1):
        level_views = [pyr[level] for pyr in pyramids]
        level_seed_base = (seed, level)

        def photo(i, _views=level_views, _s=level_seed_base):
            return _photometric_pass(
                _views, i, config, np.random.SeedSequence(_s + (i,)).generate_state(1)[0]
            )

        photo_states = for_all(photo)

        if level == config.levels - 1:
            states = photo_states
        else:
            cam = level_views[0].camera
            restored = [
                _restore_details(
                    photo_states[i],
                    _upsample_map(results[i], level_views[i].camera.width, level_views[i].camera.height),
                    level_views,
                    config,
                )
                for i in range(len(views))
            ]
            prior_maps = [st.to_map() for st in restored]

            def geo(i, _views=level_views, _priors=prior_maps, _s=level_seed_base):
                return _geometric_pass(
                    restored[i],
                    _views,
                    config,
                    np.random.SeedSequence(_s + (i, 7)).generate_state(1)[0],
                    _priors,
                )

            states = for_all(geo)
        results = [st.to_map() for st in states]
        logger.debug(
            "level %d done (%dx%d), valid fraction %.3f",
            level,
            level_views[0].camera.width,
            level_views[0].camera.height,
            float(np.mean([r.valid.mean() for r in results])),
        )
    return results


def estimate_depth_multiscale(
    views: list[View],
    ref_index: int,
    config: PatchMatchConfig,
    seed: int = 0,
) -> DepthNormalMap:
    """Multi-scale PatchMatch for one reference view.

    The geometric-consistency term needs source depth maps, so all views are
    estimated jointly level by level; only the reference map is returned.
    Use estimate_all_multiscale when every map is wanted.
    """
    if not (0 <= ref_index < len(views)):
        raise IndexError(f"ref_index {ref_index} out of range")
    if config.levels == 1:
        return estimate_single_scale(views, ref_index, config, seed).to_map()
    return estimate_all_multiscale(views, config, seed=seed)[ref_index]
