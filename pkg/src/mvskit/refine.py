"""Confidence-weighted piecewise-planar depth refinement.

Works on the inverse depth d = 1/z, where locally planar surfaces are affine
over the image plane: d_j = d_i + u_i . (j - i) with a per-pixel plane
orientation u_i. The refined fields minimize

    sum_i c_i |d_i - dbar_i|
    + lambda sum_edges w_ij |d_j - d_i - u_i . (j - i)|
    + lambda mu sum_edges w_ij ||u_j - u_i||_1

which is jointly convex and piecewise linear in (d, u). The solver is a
diagonally preconditioned first-order primal-dual scheme; every proximal
step is closed form (soft shrinkage / clamping). Primal iterates may
oscillate, so the best-objective iterate is tracked and returned, which
guarantees objective(output) <= objective(initialization).

Pixels with no valid input depth take c = 0 and are inpainted purely by the
regularizer. Edge weights w_ij = exp(-beta ||I_i - I_j||) come from an
optional guide image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .confidence import ConfidenceMap
from .errors import NonFiniteInput, ShapeMismatch
from .geometry import Camera


@dataclass
class RefineConfig:
    """Solver parameters; lam balances data term against the regularizer."""

    lam: float = 1.0
    mu: float = 0.5
    beta: float = 10.0
    iterations: int = 400
    tolerance: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class RefinementState:
    """Refined inverse depth d and plane-orientation field u.

    d: (H, W) float64, strictly positive; u: (H, W, 2) float64 with the
    (d/dx, d/dy) inverse-depth slopes. objective_history holds the monitored
    objective value per iteration (index 0 is the initialization).
    """

    d: np.ndarray
    u: np.ndarray
    objective_history: list[float] = field(default_factory=list)


def invert_depth(depth: np.ndarray, valid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise inverse depth; invalid pixels map to 0 with validity False."""
    depth = np.asarray(depth, dtype=np.float64)
    if valid is None:
        valid = depth > 0
    valid = np.asarray(valid, dtype=bool) & (depth > 0)
    d = np.zeros_like(depth)
    d[valid] = 1.0 / depth[valid]
    return d, valid


def depth_from_inverse(d: np.ndarray, valid: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of invert_depth."""
    d = np.asarray(d, dtype=np.float64)
    if valid is None:
        valid = d > 0
    valid = np.asarray(valid, dtype=bool) & (d > 0)
    z = np.zeros_like(d)
    z[valid] = 1.0 / d[valid]
    return z, valid


def planar_extrapolate(d_i: float, u_i, i, j) -> float:
    """Inverse depth at pixel j of the local plane (d_i, u_i) anchored at i."""
    u_i = np.asarray(u_i, dtype=np.float64)
    delta = np.asarray(j, dtype=np.float64) - np.asarray(i, dtype=np.float64)
    return float(d_i + u_i @ delta)


def edge_weights_from_guide(guide: np.ndarray | None, shape, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-edge weights exp(-beta ||I_i - I_j||) for the 4-neighborhood.

    Returns (w_h, w_v) with shapes (H, W-1) and (H-1, W); all ones without a
    guide image.
    """
    h, w = shape
    if guide is None:
        return np.ones((h, w - 1)), np.ones((h - 1, w))
    guide = np.asarray(guide, dtype=np.float64)
    if guide.ndim == 2:
        guide = guide[..., None]
    if guide.shape[:2] != (h, w):
        raise ShapeMismatch(f"guide {guide.shape[:2]} vs field {(h, w)}")
    dh = np.linalg.norm(guide[:, 1:] - guide[:, :-1], axis=-1)
    dv = np.linalg.norm(guide[1:, :] - guide[:-1, :], axis=-1)
    return np.exp(-beta * dh), np.exp(-beta * dv)


def _planarity_residuals(d, u):
    rh = d[:, 1:] - d[:, :-1] - u[:, :-1, 0]
    rv = d[1:, :] - d[:-1, :] - u[:-1, :, 1]
    return rh, rv


def regularizer_g(d: np.ndarray, u: np.ndarray, weights=None, mu: float = 0.5) -> float:
    """Weighted L1 planarity residuals plus mu times the u total variation."""
    d = np.asarray(d, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if u.shape != d.shape + (2,):
        raise ShapeMismatch(f"u must be {d.shape + (2,)}, got {u.shape}")
    w_h, w_v = weights if weights is not None else edge_weights_from_guide(None, d.shape, 0.0)
    if w_h.shape != (d.shape[0], d.shape[1] - 1) or w_v.shape != (d.shape[0] - 1, d.shape[1]):
        raise ShapeMismatch("edge weight shapes do not match the field")
    rh, rv = _planarity_residuals(d, u)
    g = float((w_h * np.abs(rh)).sum() + (w_v * np.abs(rv)).sum())
    for k in range(2):
        g += mu * float((w_h * np.abs(u[:, 1:, k] - u[:, :-1, k])).sum())
        g += mu * float((w_v * np.abs(u[1:, :, k] - u[:-1, :, k])).sum())
    return g


def _objective(d, u, d_bar, c, w_h, w_v, lam, mu):
    data = float((c * np.abs(d - d_bar)).sum())
    return data + lam * regularizer_g(d, u, (w_h, w_v), mu)


def refine(
    d_bar: np.ndarray,
    confidence: ConfidenceMap | np.ndarray,
    guide: np.ndarray | None,
    config: RefineConfig | None = None,
    valid: np.ndarray | None = None,
    u0: np.ndarray | None = None,
) -> RefinementState:
    """Minimize the confidence-weighted piecewise-planar objective.

    Args:
        d_bar: (H, W) input inverse depth.
        confidence: per-pixel data weights in [0, 1].
        guide: optional (H, W, 3) image steering the edge weights.
        valid: optional mask; invalid pixels get c = 0 and are inpainted.
        u0: optional initial plane-orientation field (defaults to zero).

    Returns:
        RefinementState with d clamped to [d_min/2, 2 d_max] of the valid
        input range and the monitored objective history.
    """
    config = config or RefineConfig()
    d_bar = np.asarray(d_bar, dtype=np.float64)
    if isinstance(confidence, ConfidenceMap):
        c = np.where(confidence.valid, confidence.values, 0.0)
    else:
        c = np.asarray(confidence, dtype=np.float64)
    if c.shape != d_bar.shape:
        raise ShapeMismatch(f"confidence {c.shape} vs d_bar {d_bar.shape}")
    if not np.isfinite(d_bar).all():
        raise NonFiniteInput("d_bar contains non-finite values (encode holes as d <= 0)")
    if not np.isfinite(c).all():
        raise NonFiniteInput("confidence contains non-finite values")
    if valid is None:
        valid = d_bar > 0
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise NonFiniteInput("no valid input pixels")

    h, w = d_bar.shape
    c = np.where(valid, c, 0.0)
    d_lo = float(d_bar[valid].min()) / 2.0
    d_hi = float(d_bar[valid].max()) * 2.0

    # invalid pixels start from the valid median; their data weight is zero
    fill = float(np.median(d_bar[valid]))
    d_ref = np.where(valid, d_bar, fill)

    w_h, w_v = edge_weights_from_guide(guide, (h, w), config.beta)
    lam, mu = config.lam, config.mu

    d = d_ref.copy()
    u = np.zeros((h, w, 2)) if u0 is None else np.asarray(u0, dtype=np.float64).copy()
    if u.shape != (h, w, 2):
        raise ShapeMismatch(f"u0 must be {(h, w, 2)}, got {u.shape}")

    ph = np.zeros((h, w - 1))
    pv = np.zeros((h - 1, w))
    qhx = np.zeros((h, w - 1))
    qhy = np.zeros((h, w - 1))
    qvx = np.zeros((h - 1, w))
    qvy = np.zeros((h - 1, w))

    sigma_p, sigma_q = 1.0 / 3.0, 1.0 / 2.0
    tau_d, tau_u = 1.0 / 4.0, 1.0 / 5.0
    rad_p_h = lam * w_h
    rad_p_v = lam * w_v
    rad_q_h = lam * mu * w_h
    rad_q_v = lam * mu * w_v

    d_bar_ex = d.copy()
    u_ex = u.copy()

    energy = _objective(d, u, d_ref, c, w_h, w_v, lam, mu)
    history = [energy]
    best_energy = energy
    best_d = d.copy()
    best_u = u.copy()

    for _ in range(config.iterations):
        # dual ascent on the extrapolated primal, then projection
        rh, rv = _planarity_residuals(d_bar_ex, u_ex)
        ph = np.clip(ph + sigma_p * rh, -rad_p_h, rad_p_h)
        pv = np.clip(pv + sigma_p * rv, -rad_p_v, rad_p_v)
        qhx = np.clip(qhx + sigma_q * (u_ex[:, 1:, 0] - u_ex[:, :-1, 0]), -rad_q_h, rad_q_h)
        qhy = np.clip(qhy + sigma_q * (u_ex[:, 1:, 1] - u_ex[:, :-1, 1]), -rad_q_h, rad_q_h)
        qvx = np.clip(qvx + sigma_q * (u_ex[1:, :, 0] - u_ex[:-1, :, 0]), -rad_q_v, rad_q_v)
        qvy = np.clip(qvy + sigma_q * (u_ex[1:, :, 1] - u_ex[:-1, :, 1]), -rad_q_v, rad_q_v)

        # adjoint K^T applied to the duals
        div_d = np.zeros((h, w))
        div_d[:, :-1] -= ph
        div_d[:, 1:] += ph
        div_d[:-1, :] -= pv
        div_d[1:, :] += pv

        div_ux = np.zeros((h, w))
        div_ux[:, :-1] -= ph
        div_ux[:, :-1] -= qhx
        div_ux[:, 1:] += qhx
        div_ux[:-1, :] -= qvx
        div_ux[1:, :] += qvx

        div_uy = np.zeros((h, w))
        div_uy[:-1, :] -= pv
        div_uy[:, :-1] -= qhy
        div_uy[:, 1:] += qhy
        div_uy[:-1, :] -= qvy
        div_uy[1:, :] += qvy

        d_prev = d
        u_prev = u

        # primal proximal step: shrink toward d_ref, clamp to the depth box
        v = d - tau_d * div_d
        diff = v - d_ref
        shrunk = np.sign(diff) * np.maximum(np.abs(diff) - tau_d * c, 0.0)
        d = np.clip(d_ref + shrunk, d_lo, d_hi)

        u = u.copy()
        u[..., 0] = u_prev[..., 0] - tau_u * div_ux
        u[..., 1] = u_prev[..., 1] - tau_u * div_uy

        d_bar_ex = 2.0 * d - d_prev
        u_ex = 2.0 * u - u_prev

        energy = _objective(d, u, d_ref, c, w_h, w_v, lam, mu)
        history.append(energy)
        if energy < best_energy:
            best_energy = energy
            best_d = d.copy()
            best_u = u.copy()
        rel_change = abs(history[-2] - energy) / max(1.0, abs(history[-2]))
        if rel_change < config.tolerance:
            break

    return RefinementState(d=best_d, u=best_u, objective_history=history)


def state_to_normals(state: RefinementState, camera: Camera) -> np.ndarray:
    """Camera-frame unit normals of the surface z(p) = 1/d(p).

    The tangent plane at each pixel follows from the local inverse-depth
    plane (d_i, u_i); normals are oriented toward the camera.
    """
    d = state.d
    u = state.u
    h, w = d.shape
    if not (np.isfinite(d).all() and (d > 0).all()):
        raise NonFiniteInput("state.d must be finite and positive")
    z = 1.0 / d
    xs = (np.arange(w) - camera.cx) / camera.fx
    ys = (np.arange(h) - camera.cy) / camera.fy
    dirx = np.broadcast_to(xs[None, :], (h, w))
    diry = np.broadcast_to(ys[:, None], (h, w))

    dz_dx = -(z**2) * u[..., 0]
    dz_dy = -(z**2) * u[..., 1]

    # tangents: t_x = d/dx [z * dir], t_y = d/dy [z * dir]
    tx = np.empty((h, w, 3))
    tx[..., 0] = dz_dx * dirx + z / camera.fx
    tx[..., 1] = dz_dx * diry
    tx[..., 2] = dz_dx
    ty = np.empty((h, w, 3))
    ty[..., 0] = dz_dy * dirx
    ty[..., 1] = dz_dy * diry + z / camera.fy
    ty[..., 2] = dz_dy

    n = np.cross(tx, ty)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    norm[norm == 0] = 1.0
    n /= norm
    facing = n[..., 0] * dirx + n[..., 1] * diry + n[..., 2]
    n[facing > 0] *= -1.0
    return n
