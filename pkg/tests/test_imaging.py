import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from depthsr.imaging import (
    ColorImage,
    DepthMap,
    FeatureMap,
    bicubic_resample,
    cubic_kernel,
    default_constants,
    sobel_adjoint,
    sobel_gradients,
    sobel_kernels,
    sobel_magnitude,
    ssim_map,
    ssim_mean,
    ssim_mean_grad,
)

import oracles

unit = st.floats(0.0, 1.0, allow_nan=False)


def images(min_side=2, max_side=12):
    shape = st.tuples(st.integers(min_side, max_side), st.integers(min_side, max_side))
    return shape.flatmap(lambda s: arrays(np.float64, s, elements=unit))


# --- containers ---------------------------------------------------------

def test_depthmap_defaults_and_validation():
    d = DepthMap(np.full((3, 4), 0.5))
    assert d.shape == (3, 4) and d.valid_mask.all()
    with pytest.raises(ValueError):
        DepthMap(np.full((3, 4), 1.5))
    with pytest.raises(ValueError):
        DepthMap(np.array([[np.nan, 0.1]]))
    with pytest.raises(ValueError):
        DepthMap(np.zeros((2, 2)), valid_mask=np.ones((3, 2), bool))
    # out-of-range values are fine where the mask says invalid
    DepthMap(np.array([[2.0, 0.3]]), valid_mask=np.array([[False, True]]))


def test_color_and_feature_validation():
    with pytest.raises(ValueError):
        ColorImage(np.zeros((4, 4, 4)))
    with pytest.raises(ValueError):
        ColorImage(np.full((4, 4, 3), -0.1))
    assert ColorImage(np.ones((2, 3, 3))).luma() == pytest.approx(np.ones((2, 3)))
    with pytest.raises(ValueError):
        FeatureMap(np.zeros((2, 0, 3)))
    with pytest.raises(ValueError):
        FeatureMap(np.array([[[np.inf]]]))


# --- bicubic ------------------------------------------------------------

def test_cubic_kernel_partition_of_unity():
    for t in np.linspace(0, 1, 11):
        w = cubic_kernel(np.array([t + 1, t, t - 1, t - 2]))
        assert w.sum() == pytest.approx(1.0, abs=1e-14)
    assert cubic_kernel(0.0) == 1.0
    assert cubic_kernel(1.0) == 0.0 and cubic_kernel(2.0) == 0.0


def test_bicubic_ramp_matches_scalar_oracle():
    src = np.tile(np.arange(4.0), (4, 1))
    out = bicubic_resample(src, 4, 8)
    np.testing.assert_allclose(out, oracles.bicubic_scalar(src, 4, 8), atol=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_bicubic_random_shapes_match_oracle(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(2, 12, size=2)
    oh, ow = rng.integers(1, 25, size=2)
    src = rng.random((h, w))
    np.testing.assert_allclose(bicubic_resample(src, oh, ow),
                               oracles.bicubic_scalar(src, oh, ow), atol=1e-6)


@given(images(), st.integers(1, 20), st.integers(1, 20), unit)
@settings(max_examples=40, deadline=None)
def test_bicubic_constant_exact(img, oh, ow, c):
    out = bicubic_resample(np.full(img.shape, c), oh, ow)
    assert np.all(out == c)


@given(images())
@settings(max_examples=30, deadline=None)
def test_bicubic_identity_size(img):
    assert np.array_equal(bicubic_resample(img, *img.shape), img)


@given(images(), st.floats(-3, 3), st.floats(-2, 2), st.integers(1, 16), st.integers(1, 16))
@settings(max_examples=40, deadline=None)
def test_bicubic_commutes_with_affine(img, alpha, beta, oh, ow):
    lhs = bicubic_resample(alpha * img + beta, oh, ow)
    rhs = alpha * bicubic_resample(img, oh, ow) + beta
    np.testing.assert_allclose(lhs, rhs, atol=1e-6)


def test_bicubic_rejects_bad_input():
    with pytest.raises(ValueError):
        bicubic_resample(np.zeros((1, 5)), 2, 2)
    with pytest.raises(ValueError):
        bicubic_resample(np.zeros((3, 3)), 0, 2)
    with pytest.raises(ValueError):
        bicubic_resample(np.array([[0.0, np.inf], [0, 0]]), 4, 4)


def test_bicubic_overshoot_is_not_clipped():
    step = np.zeros((4, 8))
    step[:, 4:] = 1.0
    out = bicubic_resample(step, 4, 32)
    assert out.max() > 1.0 and out.min() < 0.0


# --- sobel --------------------------------------------------------------

def test_sobel5_kernels_match_hand_construction():
    kx, ky = sobel_kernels(5)
    okx, oky = oracles.sobel5()
    assert np.array_equal(kx, okx) and np.array_equal(ky, oky)


def test_sobel_matches_dense_oracle(rng):
    img = rng.random((9, 11))
    kx, ky = oracles.sobel5()
    np.testing.assert_allclose(sobel_magnitude(img), oracles.sobel_magnitude_dense(img, kx, ky), atol=1e-12)
    kx3, ky3 = sobel_kernels(3)
    np.testing.assert_allclose(sobel_magnitude(img, 3), oracles.sobel_magnitude_dense(img, kx3, ky3), atol=1e-12)


@pytest.mark.parametrize("k", [3, 5])
def test_sobel_step_edge_support(k):
    img = np.zeros((12, 16))
    img[:, 8:] = 1.0
    mag = sobel_magnitude(img, k)
    kx, ky = sobel_kernels(k)
    np.testing.assert_allclose(mag, oracles.sobel_magnitude_dense(img, kx, ky), atol=1e-12)
    r = (k - 1) // 2
    cols = np.nonzero(mag.any(axis=0))[0]
    assert cols.min() >= 8 - r - 1 and cols.max() <= 8 + r
    assert np.all(mag[:, :8 - r - 1] == 0) and np.all(mag[:, 8 + r + 1:] == 0)


def test_sobel_constant_is_zero():
    assert np.all(sobel_magnitude(np.full((7, 7), 0.42)) == 0)


@given(images(5, 12), st.floats(-1, 1), st.floats(0, 4))
@settings(max_examples=40, deadline=None)
def test_sobel_offset_and_scale(img, c, alpha):
    base = sobel_magnitude(img)
    np.testing.assert_allclose(sobel_magnitude(img + c), base, atol=1e-12)
    np.testing.assert_allclose(sobel_magnitude(alpha * img), alpha * base, atol=1e-12)


def test_sobel_rejects_bad_args():
    with pytest.raises(ValueError):
        sobel_magnitude(np.zeros((8, 8)), 4)
    with pytest.raises(ValueError):
        sobel_magnitude(np.zeros((4, 8)), 5)


def test_sobel_adjoint_is_transpose(rng):
    img = rng.random((8, 10))
    u, v = rng.random((2, 8, 10))
    gx, gy = sobel_gradients(img)
    lhs = (gx * u).sum() + (gy * v).sum()
    rhs = (img * sobel_adjoint(u, v)).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


# --- ssim ---------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_ssim_matches_window_oracle(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((2, 20, 20))
    assert ssim_mean(a, b) == pytest.approx(oracles.ssim_windows(a, b), abs=1e-6)


def test_ssim_constant_closed_form():
    c1, c2 = default_constants()
    got = ssim_mean(np.full((16, 16), 0.2), np.full((16, 16), 0.6))
    want = (2 * 0.2 * 0.6 + c1) / (0.2 ** 2 + 0.6 ** 2 + c1)
    assert got == pytest.approx(want, abs=1e-9)


@given(images(11, 16))
@settings(max_examples=30, deadline=None)
def test_ssim_self_similarity(img):
    assert ssim_mean(img, img) == pytest.approx(1.0, abs=1e-9)


@given(images(11, 14).flatmap(lambda a: st.tuples(st.just(a), arrays(np.float64, a.shape, elements=unit))))
@settings(max_examples=30, deadline=None)
def test_ssim_symmetric_and_bounded(pair):
    a, b = pair
    s = ssim_mean(a, b)
    assert s == pytest.approx(ssim_mean(b, a), abs=1e-12)
    assert -1.0 - 1e-12 <= s <= 1.0 + 1e-12


def test_ssim_map_valid_window_count(rng):
    a, b = rng.random((2, 20, 17))
    assert ssim_map(a, b).shape == (10, 7)


def test_ssim_grad_matches_finite_differences(rng):
    a, b = rng.random((2, 13, 14))
    _, grad = ssim_mean_grad(a, b)
    num = oracles.central_difference(lambda x: ssim_mean(x, b), a, 1e-5)
    np.testing.assert_allclose(grad, num, atol=1e-8)


def test_ssim_rejects_bad_args():
    with pytest.raises(ValueError):
        ssim_mean(np.zeros((12, 12)), np.zeros((12, 13)))
    with pytest.raises(ValueError):
        ssim_mean(np.zeros((10, 10)), np.zeros((10, 10)))


def test_primitives_deterministic(rng):
    a, b = rng.random((2, 16, 16))
    assert np.array_equal(bicubic_resample(a, 40, 24), bicubic_resample(a.copy(), 40, 24))
    assert np.array_equal(sobel_magnitude(a), sobel_magnitude(a.copy()))
    assert ssim_mean(a, b) == ssim_mean(a.copy(), b.copy())
