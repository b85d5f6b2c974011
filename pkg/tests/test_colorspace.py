import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csid.colorspace import (SPACES, ColorSpaceDef, Registry, Transfer, build_dataset,
                             convert_image, convert_pixels, decode_transfer, default_registry,
                             encode_transfer, plan_conversion, read_manifest)
from csid.errors import DatasetError, LabelingError, RegistryError, SingularGeometryError
from csid.imaging import ImageRGB, load_image, quantize, save_png

from oracles import textbook_rgb_to_xyz

REG = default_registry()


def in_gamut_pixels(src, dst, count, seed):
    """Random encoded pixels of ``src`` whose conversion to ``dst`` needs no clipping."""
    rng = np.random.default_rng(seed)
    plan = plan_conversion(src, dst)
    kept = []
    while sum(len(k) for k in kept) < count:
        p = rng.random((20000, 3))
        lin = convert_pixels(p, plan, clip=False)
        kept.append(p[np.all((lin >= 0) & (lin <= 1), axis=1)])
    return np.concatenate(kept)[:count]


def test_five_registered_spaces():
    assert len(SPACES) == 5 and set(REG) == set(SPACES)
    assert list(SPACES) == sorted(SPACES)
    with pytest.raises(RegistryError):
        REG["LabD50"]


@pytest.mark.parametrize("sid", SPACES)
def test_matrix_maps_white_to_white(sid):
    cs = REG[sid]
    np.testing.assert_allclose(cs.rgb_to_xyz @ np.ones(3), cs.white_XYZ, atol=1e-6)
    np.testing.assert_allclose(cs.rgb_to_xyz @ np.zeros(3), 0.0)
    assert abs(np.linalg.det(cs.rgb_to_xyz)) > 1e-12
    np.testing.assert_allclose(cs.rgb_to_xyz, textbook_rgb_to_xyz(cs.primaries, cs.white_point),
                               atol=1e-12)


def test_published_white_points():
    np.testing.assert_allclose(REG["sRGB"].rgb_to_xyz.sum(axis=1), [0.9505, 1.0, 1.0890], atol=1e-3)
    np.testing.assert_allclose(REG["ProPhotoRGB"].rgb_to_xyz.sum(axis=1), [0.9642, 1.0, 0.8249],
                               atol=1e-3)
    # well-known sRGB matrix row
    np.testing.assert_allclose(REG["sRGB"].rgb_to_xyz[1], [0.2126, 0.7152, 0.0722], atol=2e-4)


def test_collinear_primaries_rejected():
    with pytest.raises(SingularGeometryError):
        ColorSpaceDef("bad", ((0.2, 0.2), (0.3, 0.3), (0.4, 0.4)), (0.3127, 0.329), Transfer(2.2))


@pytest.mark.parametrize("sid", SPACES)
def test_transfer_endpoints_and_monotone(sid):
    cs = REG[sid]
    assert decode_transfer(0.0, cs) == 0.0
    assert decode_transfer(1.0, cs) == pytest.approx(1.0, abs=1e-15)
    assert encode_transfer(0.0, cs) == 0.0
    assert encode_transfer(1.0, cs) == pytest.approx(1.0, abs=1e-15)
    grid = np.linspace(0, 1, 1024)
    assert np.all(np.diff(decode_transfer(grid, cs)) > 0)
    v = np.linspace(0, 1, 1000)
    np.testing.assert_allclose(encode_transfer(decode_transfer(v, cs), cs), v, atol=1e-9)


def test_srgb_transfer_values():
    cs = REG["sRGB"]
    assert decode_transfer(0.5, cs) == pytest.approx(((0.5 + 0.055) / 1.055) ** 2.4, rel=1e-12)
    assert decode_transfer(0.5, cs) == pytest.approx(0.2140, abs=1e-4)
    assert encode_transfer(0.2140, cs) == pytest.approx(0.5, abs=1e-4)
    assert decode_transfer(0.02, cs) == pytest.approx(0.02 / 12.92)
    assert decode_transfer(0.5, REG["AdobeRGB"]) == pytest.approx(0.5 ** (563 / 256))
    assert decode_transfer(0.5, REG["AppleRGB"]) == pytest.approx(0.5 ** 1.8)
    assert decode_transfer(0.01, REG["ProPhotoRGB"]) == pytest.approx(0.01 / 16)


def test_encode_clips_above_one():
    assert encode_transfer(1.7, REG["AdobeRGB"]) == pytest.approx(1.0)


def test_identity_plan():
    for s in SPACES:
        np.testing.assert_allclose(plan_conversion(s, s).adapted_matrix, np.eye(3), atol=1e-9)


def test_shared_white_maps_white_to_white():
    plan = plan_conversion("sRGB", "AdobeRGB")
    np.testing.assert_allclose(plan.adapted_matrix @ np.ones(3), np.ones(3), atol=1e-6)


def test_plan_composition_is_identity():
    fwd = plan_conversion("sRGB", "ProPhotoRGB").adapted_matrix
    back = plan_conversion("ProPhotoRGB", "sRGB").adapted_matrix
    np.testing.assert_allclose(back @ fwd, np.eye(3), atol=1e-6)


def test_same_white_needs_no_adaptation():
    # with no chromatic adaptation the plan is the plain matrix product
    for a, b in itertools.permutations(SPACES, 2):
        if REG[a].white_point == REG[b].white_point:
            expect = np.linalg.inv(REG[b].rgb_to_xyz) @ REG[a].rgb_to_xyz
            np.testing.assert_allclose(plan_conversion(a, b).adapted_matrix, expect, atol=1e-12)


@pytest.mark.parametrize("src,dst", list(itertools.permutations(SPACES, 2)))
def test_black_and_white_fixed_points(src, dst):
    plan = plan_conversion(src, dst)
    out = convert_pixels(np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]), plan)
    np.testing.assert_allclose(out, [[0, 0, 0], [1, 1, 1]], atol=1e-6)


def test_round_trip_in_gamut():
    p = in_gamut_pixels("sRGB", "AdobeRGB", 10_000, seed=0)
    fwd = convert_pixels(p, plan_conversion("sRGB", "AdobeRGB"))
    back = convert_pixels(fwd, plan_conversion("AdobeRGB", "sRGB"))
    assert np.abs(back - p).max() < 1e-3


@given(st.lists(st.floats(0, 1), min_size=3, max_size=3))
@settings(max_examples=200, deadline=None)
def test_adobe_srgb_round_trip_property(px):
    p = np.array([px])
    fwd = convert_pixels(p, plan_conversion("AdobeRGB", "sRGB"), clip=False)
    if np.all((fwd >= 0) & (fwd <= 1)):
        enc = convert_pixels(p, plan_conversion("AdobeRGB", "sRGB"))
        back = convert_pixels(enc, plan_conversion("sRGB", "AdobeRGB"))
        np.testing.assert_allclose(back, p, atol=1e-3)


def test_convert_image_identity_and_tags():
    data = np.random.default_rng(2).random((4, 4, 3))
    img = ImageRGB(data, space_tag="sRGB")
    same = convert_image(img, plan_conversion("sRGB", "sRGB"))
    np.testing.assert_array_equal(same.data, data)
    out = convert_image(img, plan_conversion("sRGB", "ProPhotoRGB"))
    assert out.space_tag == "ProPhotoRGB"
    assert out.data.min() >= 0 and out.data.max() <= 1
    with pytest.raises(LabelingError):
        convert_image(img, plan_conversion("AdobeRGB", "sRGB"))


def test_registry_overrides(tmp_path):
    path = tmp_path / "spaces.json"
    path.write_text(json.dumps({"AppleRGB": {"transfer": {"exponent": 2.2}}}))
    reg = Registry.from_file(path)
    assert reg["AppleRGB"].transfer.exponent == 2.2
    assert reg["sRGB"] == REG["sRGB"]
    with pytest.raises(RegistryError):
        Registry({"CMYK": {}})


def test_build_dataset(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    rng = np.random.default_rng(0)
    sources = []
    for i in range(2):
        img = ImageRGB(rng.integers(0, 256, (6, 5, 3)) / 255.0)
        save_png(img, src / f"s{i}.png", bitdepth=8)
        sources.append(load_image(src / f"s{i}.png"))
    manifest = build_dataset(src, tmp_path / "out", "sRGB")
    rows = read_manifest(manifest)
    assert len(rows) == 10
    assert all(sum(r["space"] == s for r in rows) == 2 for s in SPACES)
    assert len(list((tmp_path / "out").glob("*.png"))) == 10
    again = load_image(tmp_path / "out" / "s0__sRGB.png")
    assert again.space_tag == "sRGB"
    np.testing.assert_array_equal(quantize(again, 16), quantize(sources[0], 16))
    first = manifest.read_bytes()
    build_dataset(src, tmp_path / "out", "sRGB")
    assert manifest.read_bytes() == first


def test_build_dataset_empty(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(DatasetError):
        build_dataset(tmp_path / "empty", tmp_path / "out", "sRGB")
