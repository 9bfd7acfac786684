import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geopose.data import (
    City,
    DatasetRecord,
    ElevationMask,
    FormatError,
    GeoPoseLabel,
    RgbImage,
    area_resample,
    clean_outliers,
    decode_ele,
    decode_ppm,
    encode_ele,
    encode_ppm,
    format_labels_csv,
    load_dataset,
    make_model_input,
    parse_labels_csv,
    save_dataset,
    scale_to_px_per_dam,
    stack_inputs,
)

from oracles import block_mean


def mask(values):
    return ElevationMask(np.asarray(values, dtype=np.float32))


def record(rid="img0", elev=None, size=4, city=City.OMAHA):
    elev = np.zeros((size, size), np.float32) if elev is None else elev
    rgb = RgbImage(np.full(elev.shape + (3,), 128, np.uint8))
    return DatasetRecord(rid, city, rgb, ElevationMask(elev), GeoPoseLabel(0.002, 1.0))


# -- cleaning ---------------------------------------------------------------


def test_atlanta_over_limit_untouched():
    v = np.full((20, 20), 300.0, np.float32)
    v.reshape(-1)[:101] = 4500.0
    out, n = clean_outliers(mask(v), City.ATLANTA)
    assert n == 0
    np.testing.assert_array_equal(out.values, v)


def test_atlanta_few_spikes_take_median():
    v = np.full((10, 10), 300.0, np.float32)
    v.reshape(-1)[:5] = 4500.0
    out, n = clean_outliers(mask(v), "Atlanta")
    assert n == 5
    np.testing.assert_array_equal(out.values, 300.0)


def test_atlanta_median_ignores_nan_and_outliers():
    v = np.array([[100, 200, 300], [np.nan, 5000, 6000], [400, 500, 600]], np.float32)
    out, n = clean_outliers(mask(v), City.ATLANTA)
    assert n == 2
    assert out.values[1, 1] == out.values[1, 2] == 350.0
    assert np.isnan(out.values[1, 0])


def test_atlanta_threshold_is_strict():
    v = np.full((3, 3), 4000.0, np.float32)
    out, n = clean_outliers(mask(v), City.ATLANTA)
    assert n == 0
    np.testing.assert_array_equal(out.values, v)


def test_san_fernando_caps_every_pixel_above_3000():
    v = np.full((20, 20), 250.0, np.float32)
    v[:10] = 3500.0  # 200 pixels: no count limit in San Fernando
    out, n = clean_outliers(mask(v), City.SAN_FERNANDO)
    assert n == 200
    np.testing.assert_array_equal(out.values, 250.0)


@pytest.mark.parametrize("city", [City.JACKSONVILLE, City.OMAHA])
def test_noop_cities(city):
    v = np.random.default_rng(0).uniform(0, 9000, (8, 8)).astype(np.float32)
    v[0, 0] = np.nan
    out, n = clean_outliers(mask(v), city)
    assert n == 0
    np.testing.assert_array_equal(out.values, v)


def test_all_nan_rejected():
    with pytest.raises(ValueError, match="NaN"):
        clean_outliers(mask(np.full((2, 2), np.nan)), City.ATLANTA)


def test_unknown_city_rejected():
    with pytest.raises(FormatError, match="unknown city"):
        clean_outliers(mask(np.zeros((2, 2))), "Paris")


masks = st.integers(0, 2**31 - 1).map(
    lambda s: np.where(
        np.random.default_rng(s).random((12, 12)) < 0.1,
        np.nan,
        np.random.default_rng(s + 1).choice([200.0, 1500.0, 3200.0, 4500.0, 8000.0], size=(12, 12)),
    ).astype(np.float32)
)


@given(masks, st.sampled_from(list(City)))
@settings(max_examples=60, deadline=None)
def test_cleaning_idempotent_and_nan_preserving(values, city):
    if np.isnan(values).all():
        return
    once, _ = clean_outliers(mask(values), city)
    twice, n2 = clean_outliers(once, city)
    np.testing.assert_array_equal(once.values, twice.values)
    assert once.nan_count == mask(values).nan_count
    assert n2 == 0 or city is City.ATLANTA and n2 > 100


# -- resampling -------------------------------------------------------------


def test_resample_constant():
    np.testing.assert_array_equal(area_resample(np.full((4, 4), 7.0), 2, 2), np.full((2, 2), 7.0))


def test_resample_block_means_and_global_mean():
    x = np.random.default_rng(1).uniform(0, 100, (8, 12, 3))
    out = area_resample(x, 3, 2)
    for c in range(3):
        np.testing.assert_allclose(out[..., c], block_mean(x[..., c], 4), atol=1e-12)
    assert abs(out.mean() - x.mean()) < 1e-12


def test_resample_fractional_weights():
    x = np.array([[0.0, 3.0, 6.0]])
    # 3 -> 2: each output covers 1.5 input pixels
    np.testing.assert_allclose(area_resample(x, 2, 1), [[(0 + 1.5) / 1.5, (1.5 + 6) / 1.5]])


def test_resample_nan_propagates_to_covering_pixel_only():
    x = np.zeros((4, 4))
    x[0, 0] = np.nan
    out = area_resample(x, 2, 2)
    assert np.isnan(out[0, 0]) and not np.isnan(out[1:, :]).any() and not np.isnan(out[0, 1])


def test_resample_rejects_upsampling():
    with pytest.raises(ValueError, match="downsamples"):
        area_resample(np.zeros((4, 4)), 8, 8)


@given(st.integers(0, 10_000), st.sampled_from([1, 2, 4, 8]))
@settings(max_examples=30, deadline=None)
def test_resample_integer_factor_matches_block_oracle(seed, f):
    x = np.random.default_rng(seed).normal(size=(16, 16))
    np.testing.assert_allclose(area_resample(x, 16 // f, 16 // f), block_mean(x, f), atol=1e-12)


# -- units and model inputs -------------------------------------------------


def test_scale_units():
    assert scale_to_px_per_dam(0.01) == pytest.approx(10.0)
    assert scale_to_px_per_dam(0.000386) == pytest.approx(0.386)
    assert scale_to_px_per_dam(1.0) == 1000.0
    with pytest.raises(ValueError):
        scale_to_px_per_dam(0.0)


def test_model_input_layout():
    px = np.zeros((8, 8, 3), np.uint8)
    px[0, 0] = (255, 0, 51)
    elev = np.zeros((8, 8), np.float32)
    elev[1, 1] = 2500.0
    t = make_model_input(RgbImage(px), ElevationMask(elev))
    assert t.shape == (1, 8, 8, 4)
    assert t.data[0, 0, 0, :3].tolist() == [1.0, 0.0, 0.2]
    assert t.data[0, 1, 1, 3] == 0.5
    assert np.all(t.data[..., :3] >= 0) and np.all(t.data[..., :3] <= 1)


def test_model_input_rejects_nan():
    e = np.zeros((4, 4), np.float32)
    e[2, 2] = np.nan
    with pytest.raises(ValueError, match="interpolation"):
        make_model_input(RgbImage(np.zeros((4, 4, 3), np.uint8)), ElevationMask(e))


def test_stack_inputs_channel_sets():
    recs = [record(f"r{i}") for i in range(3)]
    assert stack_inputs(recs, "rgb").shape == (3, 4, 4, 3)
    assert stack_inputs(recs, "rgb-elevation").shape == (3, 4, 4, 4)
    assert stack_inputs(recs, "elevation").shape == (3, 4, 4, 1)
    with pytest.raises(ValueError):
        stack_inputs(recs, "depth")


# -- file formats -----------------------------------------------------------


def test_ppm_round_trip_bytes():
    px = np.random.default_rng(2).integers(0, 256, (5, 7, 3), dtype=np.uint8)
    blob = encode_ppm(RgbImage(px))
    assert blob.startswith(b"P6\n7 5\n255\n")
    back = decode_ppm(blob)
    np.testing.assert_array_equal(back.pixels, px)
    assert encode_ppm(back) == blob


def test_ppm_header_comments_and_errors():
    body = bytes(range(6))
    img = decode_ppm(b"P6 # made by hand\n2 1\n# max\n255\n" + body)
    assert img.pixels.reshape(-1).tolist() == list(range(6))
    with pytest.raises(FormatError, match="magic"):
        decode_ppm(b"P3\n1 1\n255\n" + bytes(3))
    with pytest.raises(FormatError, match="truncated"):
        decode_ppm(b"P6\n2 2\n255\n" + bytes(5))
    with pytest.raises(FormatError, match="maxval"):
        decode_ppm(b"P6\n1 1\n65535\n" + bytes(6))


def test_ele_round_trip_and_nan():
    v = np.array([[0.0, 1.5, np.nan], [3000.0, -0.0, 7.25]], np.float32)
    blob = encode_ele(ElevationMask(v))
    assert blob[:4] == b"ELE1" and int.from_bytes(blob[4:8], "little") == 3
    back = decode_ele(blob)
    assert back.has_nan and back.nan_count == 1
    assert encode_ele(back) == blob
    with pytest.raises(FormatError, match="magic"):
        decode_ele(b"ELE2" + blob[4:])
    with pytest.raises(FormatError, match="truncated"):
        decode_ele(blob[:-2])


def test_labels_parse_example():
    rows = parse_labels_csv("id,city,scale_px_per_cm,angle_rad\nimg7,Atlanta,0.0123,0.85\n")
    assert rows == [("img7", City.ATLANTA, GeoPoseLabel(0.0123, 0.85))]


def test_labels_errors():
    with pytest.raises(FormatError, match="header"):
        parse_labels_csv("id,city,scale,angle\n")
    with pytest.raises(FormatError, match="unknown city"):
        parse_labels_csv("id,city,scale_px_per_cm,angle_rad\na,Paris,0.1,0.1\n")
    with pytest.raises(FormatError, match="line 2"):
        parse_labels_csv("id,city,scale_px_per_cm,angle_rad\na,Omaha,-1,0.1\n")


def test_labels_round_trip_exact_floats():
    label = GeoPoseLabel(0.1 + 0.2, math.pi / 3)
    text = format_labels_csv([("x", City.OMAHA, label)])
    assert parse_labels_csv(text)[0][2] == label


def test_dataset_directory_round_trip(tmp_path):
    e = np.arange(16, dtype=np.float32).reshape(4, 4)
    e[3, 3] = np.nan
    recs = [record("a", e, city=City.ATLANTA), record("b")]
    save_dataset(tmp_path, recs)
    back = load_dataset(tmp_path)
    assert [r.id for r in back] == ["a", "b"]
    assert [r.has_nan for r in back] == [bool(np.isnan(r.elevation.values).any()) for r in recs]
    np.testing.assert_array_equal(back[0].elevation.values, e)
    assert back[0].city is City.ATLANTA


def test_record_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        DatasetRecord("x", City.OMAHA, RgbImage(np.zeros((4, 4, 3))), ElevationMask(np.zeros((4, 5))),
                      GeoPoseLabel(1.0, 0.0))
