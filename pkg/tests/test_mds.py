import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geopose.mds import (
    Embedding2D,
    classical_mds,
    double_center,
    embed_latents,
    pairwise_sq_dist,
    power_iteration,
    top_eigenpairs,
)

from oracles import pair_sq_dist


def test_two_points():
    np.testing.assert_array_equal(pairwise_sq_dist([[0.0, 0.0], [3.0, 0.0]]), [[0, 9], [9, 0]])


def test_duplicate_rows_zero_distance():
    d = pairwise_sq_dist([[1.0, 2.0], [1.0, 2.0], [0.0, 0.0]])
    assert d[0, 1] == 0.0 and d[1, 0] == 0.0


def test_sq_dist_matches_loop():
    X = np.random.default_rng(0).normal(size=(5, 4))
    np.testing.assert_allclose(pairwise_sq_dist(X), pair_sq_dist(X), atol=1e-12)


def test_sq_dist_rejects_single_point():
    with pytest.raises(ValueError):
        pairwise_sq_dist([[1.0, 2.0]])


def test_double_center_rows_sum_to_zero():
    B = double_center(pairwise_sq_dist(np.random.default_rng(1).normal(size=(6, 3))))
    np.testing.assert_allclose(B.sum(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(B, B.T)


def test_power_iteration_dominant_pair():
    A = np.diag([5.0, 2.0, 1.0])
    lam, v = power_iteration(A, np.ones(3))
    assert lam == pytest.approx(5.0)
    assert abs(v[0]) == pytest.approx(1.0)


def test_top_eigenpairs_match_numpy():
    M = np.random.default_rng(2).normal(size=(6, 6))
    S = M @ M.T
    vals, _ = top_eigenpairs(S, 3)
    np.testing.assert_allclose(vals, np.sort(np.linalg.eigvalsh(S))[::-1][:3], rtol=1e-8)


def test_regular_triangle():
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]])
    coords = classical_mds(pairwise_sq_dist(tri))
    np.testing.assert_allclose(pairwise_sq_dist(coords), pairwise_sq_dist(tri), atol=1e-6)


def test_collinear_second_axis_zero():
    t = np.random.default_rng(3).normal(size=10)
    pts = np.stack([2 * t + 1, -t], axis=1)
    coords = classical_mds(pairwise_sq_dist(pts))
    assert np.max(np.abs(coords[:, 1])) <= 1e-8


def test_coords_centered_and_shape():
    X = np.random.default_rng(4).normal(size=(12, 5))
    coords = classical_mds(pairwise_sq_dist(X))
    assert coords.shape == (12, 2)
    np.testing.assert_allclose(coords.mean(axis=0), 0.0, atol=1e-9)


def test_mds_validation():
    with pytest.raises(ValueError):
        classical_mds(np.zeros((2, 2)))
    D = pairwise_sq_dist(np.random.default_rng(5).normal(size=(4, 2)))
    D[0, 1] += 1.0
    with pytest.raises(ValueError, match="symmetric"):
        classical_mds(D)
    with pytest.raises(ValueError):
        classical_mds(np.zeros((3, 4)))


@given(st.integers(0, 10_000), st.floats(0, 2 * np.pi))
@settings(max_examples=25, deadline=None)
def test_rotation_invariance_of_distances(seed, theta):
    X = np.random.default_rng(seed).normal(size=(8, 2))
    R = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    a = pairwise_sq_dist(classical_mds(pairwise_sq_dist(X)))
    b = pairwise_sq_dist(classical_mds(pairwise_sq_dist(X @ R.T)))
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_embed_latents_and_csv():
    z = np.random.default_rng(6).normal(size=(4, 8))
    emb = embed_latents(["a", "b", "c", "d"], z, np.arange(4.0))
    assert isinstance(emb, Embedding2D)
    lines = emb.to_csv([1.0, 2.0, 3.0, 4.0], [0.1, 0.2, 0.3, 0.4]).splitlines()
    assert lines[0] == "id,x,y,scale_px_per_dam,angle_rad"
    assert lines[1].startswith("a,") and lines[1].endswith(",1.0,0.1")
    assert len(lines) == 5
    assert "np." not in "".join(lines)
    x, y = (float(v) for v in lines[1].split(",")[1:3])
    assert (x, y) == tuple(emb.coords[0])
