from __future__ import annotations

import numpy as np
import pytest

from dynstereo import imageio
from dynstereo.data import DisparitySequence, StereoVideo


def test_pfm_round_trip_and_row_order(tmp_path):
    arr = np.arange(12, dtype=np.float32).reshape(3, 4) - 2.5
    blob = imageio.encode_pfm(arr)
    assert blob.startswith(b"Pf\n4 3\n-1.0\n")
    # bottom row is stored first
    first = np.frombuffer(blob[len(b"Pf\n4 3\n-1.0\n"):][:16], "<f4")
    assert np.array_equal(first, arr[2])
    path = tmp_path / "a.pfm"
    path.write_bytes(blob)
    assert np.array_equal(imageio.read_pfm(path), arr)


def test_pfm_big_endian_read(tmp_path):
    arr = np.array([[1.5, -2.0]], np.float32)
    path = tmp_path / "b.pfm"
    path.write_bytes(b"Pf\n2 1\n1.0\n" + arr.astype(">f4").tobytes())
    assert np.array_equal(imageio.read_pfm(path), arr)


def test_ppm_and_pgm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (3, 5, 7)) / 255.0
    (tmp_path / "a.ppm").write_bytes(imageio.encode_ppm(img))
    np.testing.assert_allclose(imageio.read_ppm(tmp_path / "a.ppm"), img, atol=1e-6)
    mask = np.random.default_rng(1).random((5, 7)) > 0.5
    (tmp_path / "m.pgm").write_bytes(imageio.encode_pgm(mask))
    assert np.array_equal(imageio.read_pgm(tmp_path / "m.pgm"), mask)


def test_header_comments_are_skipped(tmp_path):
    path = tmp_path / "c.ppm"
    path.write_bytes(b"P6\n# made by hand\n1 1\n255\n" + bytes([255, 0, 51]))
    np.testing.assert_allclose(imageio.read_ppm(path)[:, 0, 0], [1.0, 0.0, 0.2], atol=1e-6)


def test_wrong_magic_raises(tmp_path):
    path = tmp_path / "x.pfm"
    path.write_bytes(b"P6\n1 1\n255\n\x00\x00\x00")
    with pytest.raises(ValueError, match="PFM"):
        imageio.read_pfm(path)


def test_video_and_disparity_layout_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    video = StereoVideo(rng.integers(0, 256, (3, 3, 4, 6)) / 255.0, rng.integers(0, 256, (3, 3, 4, 6)) / 255.0)
    imageio.write_video(video, tmp_path)
    back = imageio.read_video(tmp_path)
    np.testing.assert_allclose(back.left, video.left, atol=1e-6)
    seq = DisparitySequence(rng.standard_normal((3, 4, 6)), rng.random((3, 4, 6)) > 0.5)
    imageio.write_disparity(seq, tmp_path)
    got = imageio.read_disparity(tmp_path)
    assert np.array_equal(got.values, seq.values) and np.array_equal(got.valid, seq.valid)


def test_missing_frames_are_named(tmp_path):
    imageio.write_video(StereoVideo(np.zeros((3, 3, 2, 2)), np.zeros((3, 3, 2, 2))), tmp_path)
    (tmp_path / "left" / "frame_00001.ppm").unlink()
    with pytest.raises(imageio.LayoutError, match="frame_00001.ppm"):
        imageio.read_video(tmp_path)


def test_left_right_count_mismatch(tmp_path):
    imageio.write_video(StereoVideo(np.zeros((2, 3, 2, 2)), np.zeros((2, 3, 2, 2))), tmp_path)
    (tmp_path / "right" / "frame_00001.ppm").unlink()
    with pytest.raises(imageio.LayoutError, match="1 right"):
        imageio.read_video(tmp_path)


def test_flat_text_sorted_round_trip(tmp_path):
    imageio.write_flat_text(tmp_path / "m.txt", {"b": "2", "a": "x y"})
    assert (tmp_path / "m.txt").read_text() == "a = x y\nb = 2\n"
    assert imageio.read_flat_text(tmp_path / "m.txt") == {"a": "x y", "b": "2"}
