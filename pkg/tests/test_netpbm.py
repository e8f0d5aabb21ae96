import numpy as np
import numpy.testing as npt
import pytest

from seaclear import FileFormatError, Grid, ParameterError
from seaclear.netpbm import DEPTH_SCALE, read_depth, read_image, write_depth, write_image


def test_pgm_8bit_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    raw = rng.integers(0, 256, size=(1, 5, 7))
    g = Grid(raw / 255.0)
    path = tmp_path / "a.pgm"
    write_image(path, g, maxval=255)
    back = read_image(path)
    npt.assert_array_equal(back.data, g.data)
    # a second write is byte-identical
    path2 = tmp_path / "b.pgm"
    write_image(path2, back, maxval=255)
    assert path.read_bytes() == path2.read_bytes()


def test_ppm_16bit_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    raw = rng.integers(0, 65536, size=(3, 4, 6))
    g = Grid(raw / 65535.0)
    path = tmp_path / "a.ppm"
    write_image(path, g, maxval=65535)
    back = read_image(path)
    npt.assert_array_equal(back.data, g.data)


def test_16bit_is_big_endian(tmp_path):
    g = Grid(np.array([[[1.0]]]))
    path = tmp_path / "one.pgm"
    write_image(path, g, maxval=65535)
    body = path.read_bytes()
    assert body.endswith(b"\xff\xff")
    g2 = Grid(np.array([[[256 / 65535.0]]]))
    write_image(path, g2, maxval=65535)
    assert path.read_bytes().endswith(b"\x01\x00")  # 0x0100 big-endian


def test_rounding_half_away_from_zero(tmp_path):
    # 0.5/255 scaled: value*255 = 0.5 exactly -> rounds to 1, not 0.
    g = Grid(np.array([[[0.5 / 255.0]]]))
    path = tmp_path / "r.pgm"
    write_image(path, g, maxval=255)
    assert read_image(path).data[0, 0, 0] == 1.0 / 255.0


def test_values_clipped_on_write(tmp_path):
    g = Grid(np.array([[[-0.5, 1.5]]]))
    path = tmp_path / "c.pgm"
    write_image(path, g, maxval=255)
    back = read_image(path)
    npt.assert_array_equal(back.data, [[[0.0, 1.0]]])


def test_comments_are_skipped(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# a comment\n2 1\n# another\n255\n\x10\x20")
    g = read_image(path)
    npt.assert_allclose(g.data, [[[16 / 255, 32 / 255]]])


def test_missing_file():
    with pytest.raises(FileFormatError, match="nope.pgm"):
        read_image("nope.pgm")


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.pgm"
    path.write_bytes(b"P3\n1 1\n255\n0")
    with pytest.raises(FileFormatError, match="magic"):
        read_image(path)


def test_truncated_raster(tmp_path):
    path = tmp_path / "t.pgm"
    path.write_bytes(b"P5\n4 4\n255\n\x00\x00")
    with pytest.raises(FileFormatError, match="raster"):
        read_image(path)


def test_wrong_channel_count_rejected(tmp_path):
    with pytest.raises(ParameterError):
        write_image(tmp_path / "x.ppm", Grid.zeros(2, 2, 2))


def test_depth_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    depth = Grid(rng.integers(0, 65536, size=(1, 4, 4)) * DEPTH_SCALE)
    path = tmp_path / "d.pgm"
    write_depth(path, depth)
    back = read_depth(path)
    npt.assert_array_equal(back.data, depth.data)
    assert b"depth-scale" in path.read_bytes()


def test_depth_custom_scale(tmp_path):
    depth = Grid(np.array([[[2.0]]]))
    path = tmp_path / "d.pgm"
    write_depth(path, depth, scale=0.001)
    back = read_depth(path)
    npt.assert_allclose(back.data, 2.0, rtol=1e-9)


def test_depth_rejects_color(tmp_path):
    path = tmp_path / "c.ppm"
    write_image(path, Grid.zeros(3, 2, 2))
    with pytest.raises(FileFormatError, match="single-channel"):
        read_depth(path)
