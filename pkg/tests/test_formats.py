import numpy as np
import pytest

from deepsurfels import FormatError, FrameRGBD, TruncatedFileError
from deepsurfels.formats import (list_frames, pfm_bytes, ppm_bytes, read_camera, read_frame, read_pfm,
                                 read_ppm, write_camera, write_frame, write_image, write_pfm, write_ppm)
from deepsurfels.scenegen import intrinsics, look_at

from helpers import simple_camera


def test_ppm_round_trip_and_layout(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (5, 7, 3)) / 255.0
    write_ppm(tmp_path / "a.ppm", img)
    data = (tmp_path / "a.ppm").read_bytes()
    assert data.startswith(b"P6\n7 5\n255\n") and len(data) == 11 + 5 * 7 * 3
    assert data[11:14] == bytes(np.round(img[0, 0] * 255).astype(np.uint8))
    back = read_ppm(tmp_path / "a.ppm")
    assert np.array_equal(back, img)
    assert ppm_bytes(back) == data


def test_ppm_quantization_and_clamping():
    raw = ppm_bytes(np.array([[[-0.5, 0.5, 2.0], [0.2, 1 / 510 - 1e-9, 1.0]]]))
    assert list(raw[-6:]) == [0, 128, 255, 51, 0, 255]


def test_ppm_header_comments_and_errors(tmp_path):
    px = bytes([10, 20, 30, 40, 50, 60])
    (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n2 1\n# depth\n255\n" + px)
    np.testing.assert_array_equal(read_ppm(tmp_path / "c.ppm")[0, 1] * 255, [40, 50, 60])
    (tmp_path / "p3.ppm").write_bytes(b"P3\n1 1\n255\n1 2 3\n")
    with pytest.raises(FormatError):
        read_ppm(tmp_path / "p3.ppm")
    (tmp_path / "deep.ppm").write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(FormatError):
        read_ppm(tmp_path / "deep.ppm")
    (tmp_path / "short.ppm").write_bytes(b"P6\n2 1\n255\n" + px[:5])
    with pytest.raises(TruncatedFileError):
        read_ppm(tmp_path / "short.ppm")


def test_png_output(tmp_path):
    from PIL import Image

    img = np.random.default_rng(1).integers(0, 256, (4, 6, 3)) / 255.0
    write_image(tmp_path / "a.png", img)
    assert np.array_equal(np.asarray(Image.open(tmp_path / "a.png")) / 255.0, img)
    write_image(tmp_path / "a.ppm", img)
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), img)


def test_pfm_round_trip_and_layout(tmp_path):
    depth = np.arange(6, dtype=np.float32).reshape(2, 3) + 0.25
    write_pfm(tmp_path / "d.pfm", depth)
    data = (tmp_path / "d.pfm").read_bytes()
    assert data.startswith(b"Pf\n3 2\n-1.0\n")
    # bottom-up: the first stored row is the last image row
    assert np.array_equal(np.frombuffer(data[12:24], "<f4"), depth[1])
    assert np.array_equal(read_pfm(tmp_path / "d.pfm"), depth)
    color = np.random.default_rng(2).random((3, 4, 3)).astype(np.float32)
    write_pfm(tmp_path / "c.pfm", color)
    back = read_pfm(tmp_path / "c.pfm")
    assert back.dtype == np.float32 and back.tobytes() == color.tobytes()
    assert pfm_bytes(back) == (tmp_path / "c.pfm").read_bytes()


def test_pfm_big_endian_and_errors(tmp_path):
    vals = np.array([[1.5, -2.0]], np.float32)
    (tmp_path / "be.pfm").write_bytes(b"Pf\n2 1\n1.0\n" + vals.astype(">f4").tobytes())
    assert np.array_equal(read_pfm(tmp_path / "be.pfm"), vals)
    (tmp_path / "bad.pfm").write_bytes(b"P6\n1 1\n255\n" + bytes(3))
    with pytest.raises(FormatError):
        read_pfm(tmp_path / "bad.pfm")
    (tmp_path / "short.pfm").write_bytes(b"Pf\n2 2\n-1.0\n" + bytes(12))
    with pytest.raises(TruncatedFileError):
        read_pfm(tmp_path / "short.pfm")


def test_camera_json_round_trip(tmp_path):
    from deepsurfels import Camera

    cam = Camera(intrinsics(64, 48, 55.0), look_at((0.3, 1.1, -2.7), (0.1, 0.0, 0.2)), 64, 48)
    write_camera(tmp_path / "c.json", cam)
    back = read_camera(tmp_path / "c.json")
    assert back.K.tobytes() == cam.K.tobytes() and back.T_wc.tobytes() == cam.T_wc.tobytes()
    assert (back.width, back.height) == (64, 48)
    (tmp_path / "bad.json").write_text('{"K": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]}')
    with pytest.raises(FormatError):
        read_camera(tmp_path / "bad.json")
    (tmp_path / "junk.json").write_text("{not json")
    with pytest.raises(FormatError):
        read_camera(tmp_path / "junk.json")


def test_frame_directory(tmp_path):
    rng = np.random.default_rng(3)
    cam = simple_camera(5, 4, f=5.0, c=2.0)
    for name in ("0002", "0000", "0001"):
        depth = rng.uniform(0.5, 2.0, (4, 5)) * (rng.random((4, 5)) < 0.7)
        write_frame(tmp_path / "frames", name, cam, FrameRGBD(rng.random((4, 5, 3)), depth))
    assert list_frames(tmp_path) == ["0000", "0001", "0002"]
    assert list_frames(tmp_path / "frames") == ["0000", "0001", "0002"]
    _, frame = read_frame(tmp_path, "0001")
    rgb8 = read_ppm(tmp_path / "frames" / "0001.ppm")
    assert np.array_equal(frame.rgb, rgb8)
    assert np.array_equal(frame.depth, read_pfm(tmp_path / "frames" / "0001.pfm").astype(np.float64))
    write_pfm(tmp_path / "frames" / "0001.pfm", np.full((4, 5), np.nan, np.float32))
    assert not read_frame(tmp_path, "0001")[1].valid.any()
    with pytest.raises(FileNotFoundError):
        list_frames(tmp_path / "nope")
