"""Portable pixmap reader/writer checks."""

import numpy as np
import pytest

from saliencybench.errors import IOFormatError
from saliencybench.imageio import read_pgm, read_ppm, write_pgm, write_ppm


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.uniform(0, 1, (3, 8, 8))
    path = tmp_path / "img.ppm"
    write_ppm(path, arr)
    back = read_ppm(path)
    assert back.shape == (3, 8, 8)
    assert np.abs(back - arr).max() <= 0.5 / 255 + 1e-12


def test_ppm_byte_grid_values_survive_exactly(tmp_path):
    # values exactly on byte grid survive the round trip bit for bit
    arr = np.arange(192, dtype=float).reshape(3, 8, 8) / 255.0
    path = tmp_path / "grid.ppm"
    write_ppm(path, arr)
    np.testing.assert_array_equal(read_ppm(path), arr)


def test_grayscale_ppm_replicates_channels(tmp_path):
    arr = np.random.default_rng(1).uniform(0, 1, (1, 8, 8))
    path = tmp_path / "gray.ppm"
    write_ppm(path, arr)
    back = read_ppm(path)
    np.testing.assert_array_equal(back[0], back[1])
    np.testing.assert_array_equal(back[0], back[2])


def test_pgm_round_trip(tmp_path):
    arr = np.random.default_rng(2).uniform(0, 1, (8, 10))
    path = tmp_path / "m.pgm"
    write_pgm(path, arr)
    back = read_pgm(path)
    assert back.shape == (8, 10)
    assert np.abs(back - arr).max() <= 0.5 / 255 + 1e-12


def test_header_comments_are_skipped(tmp_path):
    path = tmp_path / "c.pgm"
    body = bytes(range(4))
    path.write_bytes(b"P5\n# a comment\n2 2\n# another\n255\n" + body)
    back = read_pgm(path)
    assert back.shape == (2, 2)
    assert back[0, 1] == pytest.approx(1 / 255)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "x.ppm"
    path.write_bytes(b"P4\n2 2\n255\n" + bytes(12))
    with pytest.raises(IOFormatError):
        read_ppm(path)


def test_non_byte_maxval_rejected(tmp_path):
    path = tmp_path / "x.pgm"
    path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(IOFormatError):
        read_pgm(path)
