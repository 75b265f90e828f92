import numpy as np
import pytest

from mvskit.errors import NonFiniteInput, ShapeMismatch
from mvskit.geometry import Camera
from mvskit.refine import (
    RefineConfig,
    depth_from_inverse,
    invert_depth,
    planar_extrapolate,
    refine,
    regularizer_g,
    state_to_normals,
)


def affine_field(h, w, d0=0.5, gx=0.002, gy=0.001):
    ys, xs = np.mgrid[0:h, 0:w]
    d = d0 + gx * xs + gy * ys
    u = np.zeros((h, w, 2))
    u[..., 0] = gx
    u[..., 1] = gy
    return d, u


class TestInvertDepth:
    def test_simple_value(self):
        d, valid = invert_depth(np.array([[2.0]]))
        assert d[0, 0] == 0.5
        assert valid[0, 0]

    def test_roundtrip_random(self, rng):
        z = rng.uniform(0.1, 50.0, size=(40, 30))
        d, v = invert_depth(z)
        z2, v2 = depth_from_inverse(d, v)
        assert np.abs((z2 - z) / z).max() < 1e-12
        assert v2.all()

    def test_invalid_stays_invalid(self):
        z = np.array([[2.0, 0.0]])
        valid = np.array([[True, False]])
        d, v = invert_depth(z, valid)
        assert d[0, 1] == 0.0
        assert not v[0, 1]
        assert v[0, 0]


class TestPlanarExtrapolate:
    def test_zero_slope(self):
        assert planar_extrapolate(0.7, (0.0, 0.0), (3, 4), (10, -2)) == 0.7

    def test_direct_evaluation(self):
        assert planar_extrapolate(1.0, (0.1, 0.0), (0, 0), (2, 0)) == pytest.approx(1.2)

    def test_linearity_in_offset(self, rng):
        for _ in range(20):
            d = rng.uniform(0.1, 2)
            u = rng.normal(size=2) * 0.01
            i = rng.integers(0, 100, 2)
            j = i + rng.integers(-20, 20, 2)
            inc1 = planar_extrapolate(d, u, i, j) - d
            inc2 = planar_extrapolate(d, u, i, i + 2 * (j - i)) - d
            assert inc2 == pytest.approx(2 * inc1, abs=1e-15)


class TestRegularizer:
    def test_zero_on_exact_affine(self):
        d, u = affine_field(32, 24)
        assert regularizer_g(d, u) == pytest.approx(0.0, abs=1e-10)

    def test_zero_on_constant(self):
        d = np.full((16, 16), 0.8)
        u = np.zeros((16, 16, 2))
        assert regularizer_g(d, u) == 0.0

    def test_single_pixel_step_counts_crossing_edges(self):
        h = w = 9
        d = np.zeros((h, w))
        step = 0.25
        d[4, 4] = step
        u = np.zeros((h, w, 2))
        # 4 edges cross the bump
        assert regularizer_g(d, u) == pytest.approx(4 * step, rel=1e-12)

    def test_nonnegative(self, rng):
        for _ in range(20):
            d = rng.normal(size=(12, 12))
            u = rng.normal(size=(12, 12, 2)) * 0.1
            assert regularizer_g(d, u) >= 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            regularizer_g(np.zeros((4, 4)), np.zeros((4, 4, 3)))


class TestRefine:
    def test_lambda_zero_returns_input(self):
        d_bar, _ = affine_field(16, 16)
        d_bar = d_bar + 0.05 * np.sin(np.arange(256)).reshape(16, 16)
        c = np.full((16, 16), 0.7)
        st = refine(d_bar, c, None, RefineConfig(lam=0.0, iterations=50))
        assert np.array_equal(st.d, d_bar)

    def test_exact_affine_fixed_point(self):
        d_bar, u_true = affine_field(32, 32)
        st = refine(d_bar, np.ones((32, 32)), None, RefineConfig(iterations=100), u0=u_true)
        assert st.objective_history[0] == pytest.approx(0.0, abs=1e-9)
        assert np.abs(st.d - d_bar).max() <= 1e-9
        assert np.abs(st.u - u_true).max() <= 1e-9

    def test_objective_final_leq_initial_random(self, rng):
        for _ in range(100):
            h, w = int(rng.integers(6, 14)), int(rng.integers(6, 14))
            d_bar = rng.uniform(0.2, 2.0, size=(h, w))
            c = rng.random((h, w))
            st = refine(d_bar, c, None, RefineConfig(iterations=40))
            assert st.objective_history[-1] <= st.objective_history[0] + 1e-9
            final = min(st.objective_history)
            assert final <= st.objective_history[0] + 1e-9

    def test_salt_noise_rmse_halved_piecewise_planar(self, rng):
        # two planes meeting mid-image; 20% of pixels replaced by salt noise
        h = w = 96
        ys, xs = np.mgrid[0:h, 0:w]
        d_gt = np.where(xs < w // 2, 0.6 + 0.002 * xs + 0.001 * ys, 1.1 - 0.003 * xs)
        d_gt = np.clip(d_gt, 0.1, None)
        noise_mask = rng.random((h, w)) < 0.2
        d_noisy = d_gt.copy()
        d_noisy[noise_mask] = rng.uniform(0.15, 2.5, noise_mask.sum())
        c = np.where(noise_mask, 0.0, 1.0)
        st = refine(d_noisy, c, None, RefineConfig(iterations=400))
        rmse_in = float(np.sqrt(((d_noisy - d_gt) ** 2).mean()))
        rmse_out = float(np.sqrt(((st.d - d_gt) ** 2).mean()))
        assert rmse_out <= 0.5 * rmse_in

    def test_inpaints_invalid_pixels(self):
        d_bar, _ = affine_field(48, 48)
        valid = np.ones((48, 48), dtype=bool)
        valid[20:28, 20:28] = False
        hole_truth = d_bar[20:28, 20:28].copy()
        d_in = d_bar.copy()
        d_in[~valid] = 0.0
        st = refine(d_in, np.ones((48, 48)), None, RefineConfig(iterations=300), valid=valid)
        assert np.abs(st.d[20:28, 20:28] - hole_truth).max() < 0.01

    def test_output_all_finite_and_positive(self, rng):
        d_bar = rng.uniform(0.2, 2.0, size=(20, 20))
        c = rng.random((20, 20))
        st = refine(d_bar, c, None, RefineConfig(iterations=60))
        assert np.isfinite(st.d).all() and np.isfinite(st.u).all()
        assert (st.d > 0).all()
        # clamped to [d_min/2, 2 d_max] of the valid input
        assert st.d.min() >= d_bar.min() / 2 - 1e-12
        assert st.d.max() <= d_bar.max() * 2 + 1e-12

    def test_scaling_equivariance_lambda_zero(self, rng):
        d_bar = rng.uniform(0.2, 2.0, size=(12, 12))
        c = rng.random((12, 12))
        st1 = refine(d_bar, c, None, RefineConfig(lam=0.0, iterations=30))
        st2 = refine(3.0 * d_bar, c, None, RefineConfig(lam=0.0, iterations=30))
        assert np.allclose(st2.d, 3.0 * st1.d, rtol=1e-12)

    def test_non_finite_rejected(self):
        d = np.ones((4, 4))
        d[0, 0] = np.nan
        with pytest.raises(NonFiniteInput):
            refine(d, np.ones((4, 4)), None, RefineConfig(iterations=5))
        with pytest.raises(NonFiniteInput):
            refine(np.ones((4, 4)), np.full((4, 4), np.inf), None, RefineConfig(iterations=5))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            refine(np.ones((4, 4)), np.ones((5, 5)), None, RefineConfig(iterations=5))

    def test_edge_weights_reduce_cross_edge_smoothing(self):
        # a depth step aligned with a guide-image edge survives refinement
        h = w = 32
        d_gt = np.where(np.arange(w)[None, :] < w // 2, 0.5, 1.0) * np.ones((h, w))
        guide = np.zeros((h, w, 3))
        guide[:, w // 2 :] = 1.0
        c = np.full((h, w), 0.2)  # weak data term
        st = refine(d_gt, c, guide, RefineConfig(iterations=200))
        step_kept = st.d[:, w // 2 + 2].mean() - st.d[:, w // 2 - 2].mean()
        assert step_kept > 0.4


class TestStateToNormals:
    def _camera(self, w=64, h=48, f=100.0):
        return Camera(fx=f, fy=f, cx=(w - 1) / 2, cy=(h - 1) / 2, R=np.eye(3), t=np.zeros(3), width=w, height=h)

    def test_fronto_parallel_at_principal_point(self):
        cam = self._camera()
        from mvskit.refine import RefinementState

        d = np.full((48, 64), 0.5)
        u = np.zeros((48, 64, 2))
        n = state_to_normals(RefinementState(d=d, u=u), cam)
        cx, cy = int(cam.cx), int(cam.cy)
        assert np.allclose(n[cy, cx], [0.0, 0.0, -1.0], atol=1e-6)

    def test_unit_norm_everywhere(self, rng):
        from mvskit.refine import RefinementState

        cam = self._camera()
        d = rng.uniform(0.3, 1.5, size=(48, 64))
        u = rng.normal(size=(48, 64, 2)) * 1e-3
        n = state_to_normals(RefinementState(d=d, u=u), cam)
        assert np.abs(np.linalg.norm(n, axis=-1) - 1.0).max() < 1e-6

    def test_slanted_plane_matches_analytic_normal(self):
        # plane z = 1 / (d0 + gx x + gy y): analytically n ~ (gx fx, gy fy, ...)
        from mvskit.synthetic import make_plane_scene
        from mvskit.refine import RefinementState, invert_depth

        scene = make_plane_scene(width=64, height=48)
        cam = scene.views[0].camera
        gt = scene.gt_maps[0]
        d, _ = invert_depth(gt.depth, gt.valid)
        # true u: finite differences are exact for an affine inverse-depth field
        ux = np.gradient(d, axis=1)
        uy = np.gradient(d, axis=0)
        u = np.stack([ux, uy], axis=-1)
        n = state_to_normals(RefinementState(d=d, u=u), cam)
        dots = np.clip((n * gt.normal).sum(-1), -1.0, 1.0)
        angles = np.degrees(np.arccos(dots))
        assert np.quantile(angles, 0.99) < 1.0
