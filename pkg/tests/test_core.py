import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ablpath.core import (
    AblationPath,
    DimensionError,
    GridDomain,
    Image,
    Mask,
    ParameterError,
    SaliencyMap,
    blend,
    gaussian_blur,
    gaussian_kernel,
    interpolate,
    linear_path,
    make_blur_baseline,
    make_constant_baseline,
    path_density,
)


def dense_reflect_blur(img, sigma):
    """Direct 2-D correlation with half-sample mirror indexing, one output pixel at a time."""
    r = math.ceil(3 * sigma)
    xs = np.arange(-r, r + 1)
    k1 = np.exp(-0.5 * (xs / sigma) ** 2)
    k1 /= k1.sum()

    def mirror(i, n):
        period = 2 * n
        i %= period
        return i if i < n else period - 1 - i

    H, W = img.shape
    out = np.zeros_like(img)
    for y in range(H):
        for x in range(W):
            acc = 0.0
            for a, dy in enumerate(xs):
                for b, dx in enumerate(xs):
                    acc += k1[a] * k1[b] * img[mirror(y + dy, H), mirror(x + dx, W)]
            out[y, x] = acc
    return out


def test_grid_domain():
    d = GridDomain(4, 5)
    assert d.shape == (4, 5)
    assert d.measure_weight == pytest.approx(1 / 20)
    assert d.mean(np.ones((4, 5))) == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        GridDomain(0, 3)


def test_values_are_immutable_copies():
    arr = np.zeros((3, 3, 1))
    img = Image(arr)
    arr[0, 0, 0] = 5
    assert img.values[0, 0, 0] == 0
    with pytest.raises(ValueError):
        img.values[0, 0, 0] = 1.0


def test_constructors_reject_bad_input():
    with pytest.raises(DimensionError):
        Image(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        Mask(np.array([[np.nan]]))
    with pytest.raises(ParameterError):
        AblationPath(np.zeros((2, 3, 3)))


def test_image_from_grey_array():
    assert Image.from_array(np.zeros((4, 6))).shape == (4, 6, 1)


def test_interpolate_endpoints_and_midpoint():
    rng = np.random.default_rng(0)
    xi = Image(rng.random((4, 4, 3)))
    beta = Image(rng.random((4, 4, 3)))
    assert np.array_equal(interpolate(Mask(np.zeros((4, 4))), xi, beta).values, xi.values)
    assert np.array_equal(interpolate(Mask(np.ones((4, 4))), xi, beta).values, beta.values)
    mid = interpolate(Mask(np.full((4, 4), 0.5)), xi, beta).values
    assert np.allclose(mid, 0.5 * (xi.values + beta.values), atol=1e-15)


def test_interpolate_shape_mismatch():
    xi = Image(np.zeros((4, 4, 1)))
    with pytest.raises(DimensionError):
        interpolate(Mask(np.zeros((3, 4))), xi, xi)
    with pytest.raises(DimensionError):
        interpolate(Mask(np.zeros((4, 4))), xi, Image(np.zeros((4, 4, 2))))


def test_blend_stack_matches_single_masks():
    rng = np.random.default_rng(1)
    xi, beta = rng.random((3, 5, 2)), rng.random((3, 5, 2))
    masks = rng.random((4, 3, 5))
    stacked = blend(masks, xi, beta)
    for k in range(4):
        assert np.array_equal(stacked[k], interpolate(Mask(masks[k]), Image(xi), Image(beta)).values)


@pytest.mark.parametrize("sigma", [0.4, 1.0, 2.5])
def test_gaussian_kernel(sigma):
    k = gaussian_kernel(sigma)
    assert len(k) == 2 * math.ceil(3 * sigma) + 1
    assert k.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(k, k[::-1])
    assert np.array_equal(gaussian_kernel(0.0), [1.0])
    with pytest.raises(ParameterError):
        gaussian_kernel(-1)


def test_blur_sigma_zero_is_identity():
    x = np.random.default_rng(2).random((5, 6))
    assert np.array_equal(gaussian_blur(x, 0.0), x)


def test_blur_constant_unchanged():
    assert np.allclose(gaussian_blur(np.full((7, 9), 0.3), 2.0), 0.3, atol=1e-15)


@pytest.mark.parametrize("sigma", [0.7, 2.0])
def test_blur_impulse_matches_dense_oracle(sigma):
    img = np.zeros((9, 11))
    img[2, 7] = 1.0
    assert np.allclose(gaussian_blur(img, sigma), dense_reflect_blur(img, sigma), atol=1e-6)


def test_blur_checkerboard_matches_dense_oracle():
    img = (np.indices((8, 8)).sum(axis=0) % 2).astype(float)
    assert np.allclose(gaussian_blur(img, 2.0), dense_reflect_blur(img, 2.0), atol=1e-6)


def test_blur_kernel_wider_than_image():
    img = np.random.default_rng(3).random((3, 4))
    assert np.allclose(gaussian_blur(img, 2.0), dense_reflect_blur(img, 2.0), atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 10), st.integers(2, 10)), elements=st.floats(-1, 1)),
       st.floats(0.3, 3.0))
def test_blur_preserves_mean(img, sigma):
    assert gaussian_blur(img, sigma).mean() == pytest.approx(img.mean(), abs=1e-12)


def test_blur_along_image_axes():
    rng = np.random.default_rng(4)
    img = Image(rng.random((6, 7, 3)))
    b = make_blur_baseline(img, 1.5)
    for c in range(3):
        assert np.allclose(b.values[:, :, c], gaussian_blur(img.values[:, :, c], 1.5), atol=1e-15)


def test_baselines():
    img = Image(np.zeros((4, 4, 2)))
    with pytest.raises(ParameterError):
        make_blur_baseline(img, 0.0)
    assert np.all(make_constant_baseline(img, 0.25).values == 0.25)


def test_linear_path_and_density():
    p = linear_path(GridDomain(3, 4), 11)
    assert np.allclose(p.masses, p.times, atol=1e-15)
    assert np.all(p.masks[3] == p.times[3])
    dens = path_density(p)
    assert dens.values.shape == (10, 3, 4)
    assert np.allclose(dens.time_integral(), 1.0, atol=1e-12)
    assert np.allclose(dens.slab_means, 1.0, atol=1e-12)
    with pytest.raises(ParameterError):
        linear_path(GridDomain(3, 3), 2)


def test_saliency_map_orientation_required():
    with pytest.raises(ValueError):
        SaliencyMap(np.zeros((2, 2)), orientation="")
    assert SaliencyMap(np.zeros((2, 2))).orientation == "high = salient/retained"
