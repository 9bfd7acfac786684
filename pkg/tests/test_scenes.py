import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geopose.data import City, encode_ele, encode_ppm
from geopose.scenes import (
    TWO_PI,
    Building,
    CameraPose,
    SceneConfig,
    SceneSpec,
    flow_vector,
    make_dataset,
    render_scene,
)

ROOF = (200, 200, 200)
WALL = (100, 80, 60)


def building(x0, y0, x1, y1, h):
    return Building(x0, y0, x1, y1, h, ROOF, WALL)


def test_flow_vector_examples():
    assert flow_vector(0.0, CameraPose(1.0, 0.3)) == (0.0, 0.0)
    dx, dy = flow_vector(100.0, CameraPose(0.0, 0.5))
    assert (dx, dy) == (0.0, -50.0)
    dx, dy = flow_vector(250.0, CameraPose(2.0, 0.004))
    assert math.hypot(dx, dy) / 250.0 == pytest.approx(0.004, rel=1e-15)


def test_flow_vector_rejects_negative_height():
    with pytest.raises(ValueError):
        flow_vector(-1.0, CameraPose(0.0, 1.0))


def test_pose_validation():
    with pytest.raises(ValueError):
        CameraPose(TWO_PI, 0.1)
    with pytest.raises(ValueError):
        CameraPose(0.0, 0.0)


def test_empty_scene_is_flat_ground():
    rgb, elev, label = render_scene(SceneSpec(16, 12, (), (10, 20, 30)), CameraPose(0.7, 0.01))
    assert np.all(rgb.pixels == (10, 20, 30))
    assert np.all(elev.values == 0.0)
    assert (label.scale, label.angle) == (0.01, 0.7)


def test_opposite_angles_mirror_vertically():
    spec = SceneSpec(40, 40, (building(14, 14, 26, 26, 1000.0),))
    up = render_scene(spec, CameraPose(0.0, 0.008))
    down = render_scene(spec, CameraPose(math.pi, 0.008))
    np.testing.assert_array_equal(up[0].pixels[::-1], down[0].pixels)
    np.testing.assert_array_equal(up[1].values[::-1], down[1].values)


def test_nadir_limit_roof_over_footprint():
    spec = SceneSpec(20, 20, (building(3, 5, 9, 12, 1500.0),))
    rgb, elev, _ = render_scene(spec, CameraPose(1.234, 1e-9))
    expected = np.zeros((20, 20), np.float32)
    expected[5:12, 3:9] = 1500.0
    np.testing.assert_array_equal(elev.values, expected)
    assert np.all(rgb.pixels[5:12, 3:9] == ROOF)


def test_mask_max_is_tallest_building_and_walls_ramp():
    spec = SceneSpec(64, 64, (building(10, 30, 20, 40, 900.0), building(35, 30, 45, 40, 2100.0)))
    _, elev, _ = render_scene(spec, CameraPose(0.0, 0.01))
    assert elev.values.max() == np.float32(2100.0)
    # flow is 21 px straight up: roof on rows 9..18, wall ramp on rows 19..39
    column = elev.values[:, 40]
    assert np.all(column[9:19] == np.float32(2100.0))
    assert np.all(np.diff(column[19:40]) < 0)
    assert column[39] == pytest.approx(2100.0 * 0.5 / 21, rel=1e-6)
    assert column[40] == 0.0


def test_taller_building_wins_overlap():
    spec = SceneSpec(40, 40, (building(10, 20, 20, 30, 2000.0), building(12, 10, 18, 16, 500.0)))
    _, elev, _ = render_scene(spec, CameraPose(0.0, 0.005))
    # the tall roof is shifted 10 px up over the short building's footprint
    assert elev.values[12, 15] == np.float32(2000.0)


def test_off_canvas_rejected():
    spec = SceneSpec(20, 20, (building(2, 2, 6, 6, 1000.0),))
    with pytest.raises(ValueError, match="leaves"):
        render_scene(spec, CameraPose(0.0, 0.01))


def test_footprint_outside_canvas_rejected():
    with pytest.raises(ValueError):
        SceneSpec(10, 10, (building(5, 5, 12, 8, 100.0),))


def test_zero_height_building_rejected():
    with pytest.raises(ValueError):
        building(1, 1, 3, 3, 0.0)


@given(st.floats(0.0, TWO_PI, exclude_max=True), st.floats(0.002, 0.02), st.floats(100.0, 800.0))
@settings(max_examples=40, deadline=None)
def test_mask_values_bounded_by_height(angle, scale, h):
    spec = SceneSpec(64, 64, (building(26, 26, 38, 38, h),))
    _, elev, _ = render_scene(spec, CameraPose(angle, scale))
    assert elev.values.min() >= 0.0
    assert elev.values.max() == np.float32(h)


# -- datasets ---------------------------------------------------------------


def test_dataset_deterministic_bytes():
    a = make_dataset(12, 32, seed=3)
    b = make_dataset(12, 32, seed=3)
    for ra, rb in zip(a, b):
        assert ra.id == rb.id and ra.city == rb.city and ra.label == rb.label
        assert encode_ppm(ra.rgb) == encode_ppm(rb.rgb)
        assert encode_ele(ra.elevation) == encode_ele(rb.elevation)


def test_dataset_seed_changes_content():
    a = make_dataset(4, 32, seed=1)
    b = make_dataset(4, 32, seed=2)
    assert any(ra.label != rb.label for ra, rb in zip(a, b))


def test_dataset_nan_and_spike_counts():
    recs = make_dataset(40, 32, seed=5, nan_fraction=0.25, outlier_fraction=0.1)
    assert sum(r.has_nan for r in recs) == 10
    spiked = [r for r in recs if np.nanmax(r.elevation.values) > 4000.0]
    assert len(spiked) == 4 and all(r.city is City.ATLANTA for r in spiked)
    assert [r.id for r in recs[:2]] == ["img0000", "img0001"]


def test_dataset_without_nan():
    assert not any(r.has_nan for r in make_dataset(20, 32, seed=9, nan_fraction=0.0))


def test_dataset_labels_in_range():
    cfg = SceneConfig()
    for r in make_dataset(30, 64, seed=11):
        assert 0.0 <= r.label.angle < TWO_PI
        assert cfg.scale_band[0] <= r.label.scale <= cfg.scale_band[1]


def test_dataset_cities_follow_source_mix():
    recs = make_dataset(300, 32, seed=2, outlier_fraction=0.0)
    counts = {c: sum(r.city is c for r in recs) for c in City}
    assert counts[City.SAN_FERNANDO] > counts[City.ATLANTA]
    assert all(v > 0 for v in counts.values())


def test_default_benchmark_generation_budget():
    t0 = time.perf_counter()
    recs = make_dataset(512, 64, seed=7)
    assert len(recs) == 512
    assert time.perf_counter() - t0 < 60.0


def test_dataset_rejects_empty():
    with pytest.raises(ValueError):
        make_dataset(0)
