import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trac.motion import (
    AffineState,
    DegenerateWarpError,
    ParticleSet,
    TrackingFailure,
    TransitionModel,
    affine_warp,
    propagate,
    resample,
    systematic_indices,
    update_weights,
)


def cloud(n, seed=0, state=AffineState(50.0, 60.0, 1.2, 0.9, 0.1, 0.01)):
    return ParticleSet.replicate(state, n, seed=seed)


# -- AffineState ------------------------------------------------------------

def test_box_round_trip():
    s = AffineState.from_box((10, 20, 48, 24), (32, 32))
    assert (s.x, s.y, s.scale, s.aspect) == (34.0, 32.0, 1.5, 0.5)
    np.testing.assert_allclose(s.bounding_box((32, 32)), [10, 20, 48, 24])


def test_matrix_maps_unit_square_corners():
    s = AffineState(100, 50, 2.0, 0.5, 0.0, 0.0)
    A = s.matrix((32, 32))
    np.testing.assert_allclose(A @ [0, 0, 1], [68, 34])
    np.testing.assert_allclose(A @ [1, 1, 1], [132, 66])
    assert abs(np.linalg.det(A[:, :2])) > 0


def test_invalid_states_rejected():
    with pytest.raises(ValueError):
        AffineState(0, 0, scale=0.0)
    with pytest.raises(ValueError):
        AffineState(0, 0, aspect=-1.0)
    with pytest.raises(ValueError):
        AffineState(float("nan"), 0)


def test_bounding_box_clamps_to_frame():
    s = AffineState(5, 5, 1.0, 1.0)
    np.testing.assert_allclose(s.bounding_box((32, 32), (100, 100)), [0, 0, 21, 21])


def test_transition_model_validation():
    with pytest.raises(ValueError):
        TransitionModel((1, 1, 1))
    with pytest.raises(ValueError):
        TransitionModel((1, 1, 1, 1, 1, -1))


# -- propagate --------------------------------------------------------------

def test_zero_std_propagation_is_identity():
    ps = cloud(50)
    out = propagate(ps, TransitionModel((0,) * 6))
    assert np.array_equal(out.states, ps.states)
    np.testing.assert_array_equal(out.weights, ps.weights)


def test_zero_std_after_propagation_is_idempotent():
    ps = propagate(cloud(50), TransitionModel())
    again = propagate(ps, TransitionModel((0,) * 6))
    assert np.array_equal(again.states, ps.states)


def test_propagation_moments():
    n = 10_000
    ps = propagate(cloud(n, seed=123), TransitionModel((1, 1, 0, 0, 0, 0)))
    xy = ps.states[:, :2] - [50.0, 60.0]
    # 3 sigma of the sample mean, 5% of the std
    assert np.all(np.abs(xy.mean(axis=0)) < 3 / math.sqrt(n))
    assert np.all(np.abs(xy.std(axis=0) - 1) < 0.05)
    np.testing.assert_array_equal(ps.states[:, 2:], np.tile([1.2, 0.9, 0.1, 0.01], (n, 1)))


def test_propagation_is_seed_deterministic():
    a = propagate(cloud(100, seed=9), TransitionModel())
    b = propagate(cloud(100, seed=9), TransitionModel())
    assert np.array_equal(a.states, b.states)


def test_propagation_keeps_weights():
    ps = cloud(4)
    ps.weights = np.array([0.1, 0.2, 0.3, 0.4])
    out = propagate(ps, TransitionModel())
    np.testing.assert_array_equal(out.weights, ps.weights)


# -- update_weights ---------------------------------------------------------

def test_update_weights_hand_cases():
    ps = cloud(3)
    np.testing.assert_allclose(update_weights(ps, [2, 1, 1]).weights, [0.5, 0.25, 0.25])
    np.testing.assert_allclose(update_weights(ps, [0, 3, 0]).weights, [0, 1, 0])
    two = cloud(2)
    np.testing.assert_allclose(update_weights(two, [1, 3]).weights, [0.25, 0.75])


def test_all_zero_likelihood_is_tracking_failure():
    with pytest.raises(TrackingFailure):
        update_weights(cloud(3), [0, 0, 0])


def test_bad_likelihoods_rejected():
    with pytest.raises(ValueError):
        update_weights(cloud(3), [1, -1, 1])
    with pytest.raises(ValueError):
        update_weights(cloud(3), [1, 1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=50).filter(lambda v: sum(v) > 0))
def test_updated_weights_sum_to_one(lik):
    w = update_weights(cloud(len(lik)), lik).weights
    assert abs(w.sum() - 1) <= 1e-9
    assert np.all(w >= 0)


# -- resample ---------------------------------------------------------------

def test_equal_weights_keep_every_particle_once():
    for u in (0.0, 0.3, 0.999):
        idx = systematic_indices(np.full(7, 1 / 7), u)
        assert sorted(idx.tolist()) == list(range(7))


def test_degenerate_weights_copy_one_particle():
    w = np.zeros(6)
    w[0] = 1.0
    for u in (0.0, 0.5, 0.99):
        assert np.all(systematic_indices(w, u) == 0)


def test_three_quarter_fixture_over_all_offsets():
    # strata (u + j) / 4 sit below the 0.75 cut for j = 0, 1, 2 whatever u is
    for u in np.linspace(0, 1, 101, endpoint=False):
        idx = systematic_indices(np.array([0.75, 0.25]), u, n=4)
        assert np.bincount(idx, minlength=2).tolist() == [3, 1]


def test_resample_output_is_uniform_and_same_size():
    ps = update_weights(propagate(cloud(40, seed=4), TransitionModel()),
                        np.random.default_rng(0).random(40))
    out = resample(ps)
    assert len(out) == 40
    np.testing.assert_array_equal(out.weights, np.full(40, 1 / 40))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=30), st.floats(0, 0.999999))
def test_copy_counts_within_one_of_expectation(raw, u):
    w = np.array(raw) / np.sum(raw)
    counts = np.bincount(systematic_indices(w, u), minlength=len(w))
    assert counts.sum() == len(w)
    assert np.all(np.abs(counts - len(w) * w) < 1 + 1e-9)


# -- affine_warp ------------------------------------------------------------

def test_constant_region_gives_constant_patch():
    img = np.zeros((60, 80, 3))
    img[10:50, 20:70] = [0.2, 0.4, 0.6]
    patch = affine_warp(img, AffineState(45, 30), (16, 16))
    np.testing.assert_allclose(patch, np.broadcast_to([0.2, 0.4, 0.6], (16, 16, 3)), atol=1e-12)


def test_translation_equals_direct_crop():
    yy, xx = np.mgrid[0:60, 0:80]
    img = (3 * xx + 2 * yy).astype(float) / 255
    # a 16x12 region with top-left at (x=21, y=17): centre (29, 23)
    patch = affine_warp(img, AffineState(29, 23), (16, 12))
    np.testing.assert_allclose(patch, img[17:29, 21:37], atol=1 / 255)


def test_rotation_by_pi_on_checkerboard():
    yy, xx = np.mgrid[0:64, 0:64]
    img = (((xx // 4) + (yy // 4)) % 2).astype(float)
    crop = img[16:48, 16:48]
    patch = affine_warp(img, AffineState(32, 32, rotation=math.pi), (32, 32))
    assert np.max(np.abs(patch - crop[::-1, ::-1])) <= 2 / 255


def test_edge_clamping():
    img = np.arange(12, dtype=float).reshape(3, 4)
    patch = affine_warp(img, AffineState(-10, -10), (2, 2))
    np.testing.assert_array_equal(patch, np.zeros((2, 2)))


def test_degenerate_warp_rejected():
    with pytest.raises(DegenerateWarpError):
        affine_warp(np.zeros((10, 10)), AffineState(5, 5, skew=0.0, rotation=0.0, scale=1e-9), (4, 4))
    with pytest.raises(ValueError):
        affine_warp(np.zeros((0, 0)), AffineState(5, 5), (4, 4))
