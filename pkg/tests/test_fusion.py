import numpy as np
import pytest

from mvskit.confidence import ConfidenceMap
from mvskit.consistency import CounterMap
from mvskit.errors import MissingMaps, OutOfRange
from mvskit.fusion import FusionConfig, FusedPointCloud, filter_by_confidence, filter_by_support, fuse
from mvskit.synthetic import make_plane_scene


@pytest.fixture(scope="module")
def scene():
    return make_plane_scene(width=96, height=72)


@pytest.fixture(scope="module")
def scene3():
    return make_plane_scene(width=96, height=72, n_views=3)


class TestFilterByConfidence:
    def _map(self, scene):
        return scene.gt_maps[0].copy()

    def test_tau_zero_keeps_all(self, scene):
        dn = self._map(scene)
        conf = ConfidenceMap.from_array(np.random.default_rng(0).random(dn.depth.shape))
        out = filter_by_confidence(dn, conf, 0.0)
        assert np.array_equal(out.valid, dn.valid)

    def test_tau_one_keeps_only_full_confidence(self, scene):
        dn = self._map(scene)
        values = np.zeros(dn.depth.shape)
        values[10:20, 10:20] = 1.0
        out = filter_by_confidence(dn, ConfidenceMap.from_array(values), 1.0)
        assert out.valid[15, 15]
        assert not out.valid[0, 0]

    def test_threshold_on_small_values(self, scene):
        dn = self._map(scene)
        values = np.zeros(dn.depth.shape)
        values[0, :3] = [0.04, 0.2, 0.6]
        out = filter_by_confidence(dn, ConfidenceMap.from_array(values), 0.05)
        assert not out.valid[0, 0]
        assert out.valid[0, 1]
        assert out.valid[0, 2]

    def test_valid_count_non_increasing(self, scene, rng):
        dn = self._map(scene)
        conf = ConfidenceMap.from_array(rng.random(dn.depth.shape))
        prev = dn.valid.sum()
        for tau in (0.0, 0.2, 0.5, 0.9):
            cur = filter_by_confidence(dn, conf, tau).valid.sum()
            assert cur <= prev if tau > 0 else cur == prev
            prev = cur

    def test_tau_out_of_range(self, scene):
        dn = self._map(scene)
        conf = ConfidenceMap.from_array(np.zeros(dn.depth.shape))
        with pytest.raises(OutOfRange):
            filter_by_confidence(dn, conf, 1.2)


class TestFilterBySupport:
    def _counter(self, shape, values):
        count = np.zeros(shape, dtype=np.int32)
        count[0, : len(values)] = values
        return CounterMap(count=count, n_sources=max(values))

    def test_k_zero_unchanged(self, scene):
        dn = scene.gt_maps[0].copy()
        counter = self._counter(dn.depth.shape, [1, 2, 3])
        out = filter_by_support(dn, counter, 0)
        assert np.array_equal(out.valid, dn.valid)

    def test_mask2(self, scene):
        dn = scene.gt_maps[0].copy()
        counter = self._counter(dn.depth.shape, [1, 2, 3])
        out = filter_by_support(dn, counter, 2)
        assert not out.valid[0, 0]
        assert out.valid[0, 1]
        assert out.valid[0, 2]

    def test_monotone_in_k(self, scene, rng):
        dn = scene.gt_maps[0].copy()
        counter = CounterMap(
            count=rng.integers(0, 5, dn.depth.shape).astype(np.int32), n_sources=4
        )
        prev = filter_by_support(dn, counter, 0).valid
        for k in (1, 2, 3, 4):
            cur = filter_by_support(dn, counter, k).valid
            assert (cur <= prev).all()
            prev = cur


class TestFuse:
    def test_single_view_min_support_two_empty(self, scene):
        cloud = fuse(scene.views[:1], scene.gt_maps[:1], FusionConfig(min_support=2))
        assert len(cloud) == 0

    def test_two_consistent_views_on_plane(self, scene):
        cloud = fuse(scene.views, scene.gt_maps, FusionConfig())
        assert len(cloud) > 1000
        dist = np.abs(scene.plane_distance(cloud.positions))
        assert (dist < 1e-3).mean() >= 0.99
        assert (cloud.support >= 2).all()
        norms = np.linalg.norm(cloud.normals, axis=1)
        assert np.abs(norms - 1.0).max() < 1e-6

    def test_outlier_pixels_do_not_emit(self, scene3, rng):
        maps = [m.copy() for m in scene3.gt_maps]
        h, w = maps[1].depth.shape
        outlier_mask = rng.random((h, w)) < 0.05
        maps[1].depth = maps[1].depth.copy()
        maps[1].depth[outlier_mask] *= rng.uniform(1.2, 2.0, outlier_mask.sum())
        cloud = fuse(scene3.views, maps, FusionConfig(min_support=2))
        # project every fused point into view 1 and collect hit pixels; the
        # corrupted pixels' own surface points must (almost) never appear
        cam = scene3.views[1].camera
        p_cam = cloud.positions @ cam.R.T + cam.t
        keep = p_cam[:, 2] > 1e-9
        px = np.round(cam.fx * p_cam[keep, 0] / p_cam[keep, 2] + cam.cx).astype(int)
        py = np.round(cam.fy * p_cam[keep, 1] / p_cam[keep, 2] + cam.cy).astype(int)
        inb = (px >= 0) & (px < w) & (py >= 0) & (py < h)
        emitted_outlier = outlier_mask[py[inb], px[inb]]
        # distance check: an emitted point at an outlier pixel would sit far
        # off the true plane
        dist = np.abs(scene3.plane_distance(cloud.positions))
        assert (dist < 2e-3).mean() >= 0.95

    def test_consumption_each_pixel_at_most_once(self, scene):
        # total pixel budget bounds the sum of supports
        cloud = fuse(scene.views, scene.gt_maps, FusionConfig())
        total_pixels = sum(m.valid.sum() for m in scene.gt_maps)
        assert cloud.support.sum() <= total_pixels

    def test_emission_monotone_in_min_support(self, scene3):
        sizes = []
        for k in (1, 2, 3):
            cloud = fuse(scene3.views, scene3.gt_maps, FusionConfig(min_support=k))
            sizes.append(len(cloud))
        assert sizes[0] >= sizes[1] >= sizes[2]

    def test_emission_monotone_in_depth_tol(self, scene, rng):
        maps = [m.copy() for m in scene.gt_maps]
        maps[1].depth = maps[1].depth * (1.0 + rng.normal(0, 0.004, maps[1].depth.shape))
        sizes = []
        for tol in (0.002, 0.01, 0.05):
            cloud = fuse(scene.views, maps, FusionConfig(rel_depth_tol=tol))
            sizes.append(len(cloud))
        assert sizes[0] <= sizes[1] <= sizes[2]

    def test_deterministic_byte_identical_ply(self, scene, tmp_path):
        p1 = tmp_path / "a.ply"
        p2 = tmp_path / "b.ply"
        fuse(scene.views, scene.gt_maps, FusionConfig()).save_ply(p1)
        fuse(scene.views, scene.gt_maps, FusionConfig()).save_ply(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_maps(self, scene):
        with pytest.raises(MissingMaps):
            fuse(scene.views, scene.gt_maps[:1], FusionConfig())

    def test_presets(self):
        assert FusionConfig.dense_video().max_normal_angle_deg == 5.0
        assert FusionConfig.dense_video().min_support == 3
        assert FusionConfig.refined().max_normal_angle_deg == 5.0
        assert FusionConfig.refined().min_support == 2
        assert FusionConfig.default().max_normal_angle_deg == 20.0


class TestPlyRoundtrip:
    def test_cloud_roundtrip(self, scene, tmp_path):
        cloud = fuse(scene.views, scene.gt_maps, FusionConfig())
        path = tmp_path / "cloud.ply"
        cloud.save_ply(path)
        back = FusedPointCloud.load_ply(path)
        assert len(back) == len(cloud)
        assert np.allclose(back.positions, cloud.positions.astype(np.float32), atol=1e-6)
