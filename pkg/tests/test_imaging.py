import json

import numpy as np
import png
import pytest
from hypothesis import given, settings, strategies as st

from csid.errors import DecodeError, UnsupportedFormatError
from csid.imaging import (ImageRGB, extract_channel, load_image, neighborhood_offsets,
                          sample_pixels, save_png, save_ppm)


def write_png(path, codes, bitdepth, greyscale=False):
    h, w = codes.shape[:2]
    planes = 1 if greyscale else 3
    writer = png.Writer(width=w, height=h, greyscale=greyscale, bitdepth=bitdepth)
    with open(path, "wb") as fh:
        writer.write(fh, codes.reshape(h, w * planes).tolist())


def test_8bit_png_extremes(tmp_path):
    codes = np.array([[[255, 0, 128], [0, 0, 0]]], dtype=np.uint8)
    write_png(tmp_path / "a.png", codes, 8)
    img = load_image(tmp_path / "a.png")
    assert img.data[0, 0, 0] == 1.0
    assert img.data[0, 0, 1] == 0.0
    assert img.data[0, 0, 2] == pytest.approx(128 / 255)
    assert img.space_tag is None


def test_16bit_png_half_code(tmp_path):
    codes = np.full((2, 2, 3), 32768, dtype=np.uint16)
    write_png(tmp_path / "b.png", codes, 16)
    img = load_image(tmp_path / "b.png")
    assert img.data[0, 0, 0] == pytest.approx(32768 / 65535, abs=1e-15)
    assert img.data[0, 0, 0] == pytest.approx(0.500008, abs=1e-6)


def test_ppm_8_and_16_bit(tmp_path):
    data = np.random.default_rng(0).integers(0, 256, (3, 4, 3)) / 255.0
    save_ppm(ImageRGB(data), tmp_path / "a.ppm", maxval=255)
    np.testing.assert_allclose(load_image(tmp_path / "a.ppm").data, data, atol=1e-12)
    (tmp_path / "b.ppm").write_bytes(b"P6\n# comment\n1 1\n65535\n" + bytes([0x80, 0x00] * 3))
    assert load_image(tmp_path / "b.ppm").data[0, 0, 0] == pytest.approx(32768 / 65535)


def test_sidecar_label(tmp_path):
    save_png(ImageRGB(np.zeros((2, 2, 3))), tmp_path / "x.png", bitdepth=8)
    (tmp_path / "labels.json").write_text(json.dumps({"x.png": "ProPhotoRGB"}))
    assert load_image(tmp_path / "x.png").space_tag == "ProPhotoRGB"


def test_decode_errors(tmp_path):
    with pytest.raises(DecodeError):
        load_image(tmp_path / "missing.png")
    (tmp_path / "junk.png").write_bytes(b"\x89PNG\r\n\x1a\n garbage")
    with pytest.raises(DecodeError):
        load_image(tmp_path / "junk.png")
    (tmp_path / "t.txt").write_bytes(b"hello")
    with pytest.raises(UnsupportedFormatError):
        load_image(tmp_path / "t.txt")


def test_greyscale_is_unsupported(tmp_path):
    write_png(tmp_path / "g.png", np.zeros((2, 2), dtype=np.uint8), 8, greyscale=True)
    with pytest.raises(UnsupportedFormatError):
        load_image(tmp_path / "g.png")
    (tmp_path / "g.ppm").write_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(UnsupportedFormatError):
        load_image(tmp_path / "g.ppm")


def test_png_round_trip_16bit(tmp_path):
    data = np.random.default_rng(1).random((5, 7, 3))
    save_png(ImageRGB(data), tmp_path / "r.png", bitdepth=16)
    back = load_image(tmp_path / "r.png").data
    assert np.abs(back - data).max() <= 0.5 / 65535 + 1e-12


def test_extract_channel():
    img = ImageRGB(np.dstack([np.full((3, 3), 0.3), np.zeros((3, 3)), np.ones((3, 3))]))
    np.testing.assert_array_equal(extract_channel(img, 0), np.full((3, 3), 0.3))
    with pytest.raises(ValueError):
        extract_channel(img, 3)
    small = ImageRGB(np.arange(12).reshape(2, 2, 3) / 11.0)
    for k in range(3):
        plane = extract_channel(small, k)
        for m in range(2):
            for n in range(2):
                assert plane[m, n] == small.data[m, n, k]


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 31))
@settings(max_examples=30, deadline=None)
def test_extract_then_reassemble_is_identity(h, w, seed):
    img = ImageRGB(np.random.default_rng(seed).random((h, w, 3)))
    again = ImageRGB.from_planes([extract_channel(img, k) for k in range(3)])
    np.testing.assert_array_equal(again.data, img.data)


def test_sample_pixels_exhaustive_and_deterministic():
    plane = np.arange(20, dtype=np.float64).reshape(4, 5) / 19
    full = sample_pixels(plane, 20, seed=3)
    assert sorted(full) == sorted(plane.ravel())
    np.testing.assert_array_equal(sample_pixels(plane, 7, 11), sample_pixels(plane, 7, 11))
    with pytest.raises(ValueError):
        sample_pixels(plane, 21, 0)


def test_sample_pixels_mean_within_three_standard_errors():
    rng = np.random.default_rng(5)
    plane = rng.beta(2, 5, size=(400, 602))
    s = sample_pixels(plane, 5000, seed=9)
    se = plane.std() / np.sqrt(5000)
    assert abs(s.mean() - plane.mean()) < 3 * se
    # distinct grid positions: plane values are continuous so duplicates would show up
    assert len(np.unique(s)) == 5000


def test_neighborhood_sweep_order():
    offs = neighborhood_offsets(1, include_center=True)
    assert offs[0] == (-1, -1) and offs[1] == (-1, 0) and offs[3] == (0, -1)
    assert len(neighborhood_offsets(2, include_center=False)) == 24
    assert len(neighborhood_offsets(3, include_center=True)) == 49


def test_image_invariants():
    with pytest.raises(ValueError):
        ImageRGB(np.full((2, 2, 3), 1.5))
    with pytest.raises(UnsupportedFormatError):
        ImageRGB(np.zeros((2, 2)))
