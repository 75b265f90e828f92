import numpy as np
import pytest

from mvskit import formats
from mvskit.errors import IoFailure


class TestPfm:
    def test_single_channel_roundtrip_bit_exact(self, tmp_path, rng):
        data = rng.normal(size=(37, 53)).astype(np.float32)
        path = tmp_path / "map.pfm"
        formats.write_pfm(path, data)
        back = formats.read_pfm(path)
        assert back.dtype == np.float32
        assert np.array_equal(back, data)

    def test_three_channel_roundtrip_bit_exact(self, tmp_path, rng):
        data = rng.normal(size=(16, 9, 3)).astype(np.float32)
        path = tmp_path / "map3.pfm"
        formats.write_pfm(path, data)
        assert np.array_equal(formats.read_pfm(path), data)

    def test_header_contract(self, tmp_path):
        path = tmp_path / "hdr.pfm"
        formats.write_pfm(path, np.zeros((2, 3), dtype=np.float32))
        raw = path.read_bytes()
        assert raw.startswith(b"Pf\n3 2\n-1.0\n")  # little-endian scale

    def test_two_channel_stored_as_three(self, tmp_path, rng):
        data = rng.normal(size=(8, 8, 2)).astype(np.float32)
        path = tmp_path / "polar.pfm"
        formats.write_two_channel_pfm(path, data)
        full = formats.read_pfm(path)
        assert full.shape == (8, 8, 3)
        assert np.array_equal(full[..., 2], np.zeros((8, 8), dtype=np.float32))
        assert np.array_equal(formats.read_two_channel_pfm(path), data)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.pfm"
        path.write_bytes(b"nonsense")
        with pytest.raises(IoFailure):
            formats.read_pfm(path)

    def test_rejects_truncated(self, tmp_path):
        path = tmp_path / "trunc.pfm"
        formats.write_pfm(path, np.zeros((4, 4), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(IoFailure):
            formats.read_pfm(path)


class TestLabelPng:
    def test_roundtrip_and_encoding(self, tmp_path):
        labels = np.array(
            [
                [formats.LABEL_OUTLIER, formats.LABEL_INLIER],
                [formats.LABEL_UNDEFINED, formats.LABEL_INLIER],
            ],
            dtype=np.uint8,
        )
        path = tmp_path / "labels.png"
        formats.write_label_png(path, labels)
        back = formats.read_label_png(path)
        assert np.array_equal(back, labels)

        from PIL import Image

        raw = np.asarray(Image.open(path))
        assert raw[0, 0] == 0  # outlier
        assert raw[0, 1] == 255  # inlier
        assert raw[1, 0] == 128  # undefined

    def test_rejects_off_contract_values(self, tmp_path):
        from PIL import Image

        path = tmp_path / "bad.png"
        Image.fromarray(np.full((2, 2), 7, dtype=np.uint8), mode="L").save(path)
        with pytest.raises(IoFailure):
            formats.read_label_png(path)


class TestPly:
    def test_roundtrip(self, tmp_path, rng):
        n = 17
        pos = rng.normal(size=(n, 3))
        normals = rng.normal(size=(n, 3))
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        colors = rng.integers(0, 256, size=(n, 3), dtype=np.uint8)
        path = tmp_path / "cloud.ply"
        formats.write_ply(path, pos, normals, colors)
        p2, n2, c2 = formats.read_ply(path)
        assert np.allclose(p2, pos.astype(np.float32))
        assert np.allclose(n2, normals.astype(np.float32))
        assert np.array_equal(c2, colors)

    def test_binary_little_endian_layout(self, tmp_path):
        path = tmp_path / "one.ply"
        formats.write_ply(path, [[1.0, 2.0, 3.0]], [[0.0, 0.0, -1.0]], [[10, 20, 30]])
        raw = path.read_bytes()
        header_end = raw.index(b"end_header\n") + len(b"end_header\n")
        assert b"format binary_little_endian 1.0" in raw[:header_end]
        payload = raw[header_end:]
        assert len(payload) == 27  # 6 float32 + 3 uint8
        assert np.frombuffer(payload[:24], dtype="<f4").tolist() == [1, 2, 3, 0, 0, -1]
        assert list(payload[24:]) == [10, 20, 30]

    def test_order_preserved(self, tmp_path):
        pos = np.array([[float(i), 0.0, 0.0] for i in range(10)])
        normals = np.tile([0.0, 0.0, 1.0], (10, 1))
        colors = np.zeros((10, 3), dtype=np.uint8)
        path = tmp_path / "ordered.ply"
        formats.write_ply(path, pos, normals, colors)
        p2, _, _ = formats.read_ply(path)
        assert np.array_equal(p2[:, 0], np.arange(10, dtype=np.float64))


class TestDepthPfm:
    def test_invalid_as_zero(self, tmp_path):
        depth = np.array([[1.0, 2.0], [3.0, 4.0]])
        valid = np.array([[True, False], [True, True]])
        path = tmp_path / "depth.pfm"
        formats.write_depth_pfm(path, depth, valid)
        d2, v2 = formats.read_depth_pfm(path)
        assert np.array_equal(v2, valid)
        assert d2[0, 1] == 0.0
        assert d2[1, 1] == pytest.approx(4.0)
