import numpy as np
import pytest
from scipy import ndimage

from dfdnet.degradation import (
    GAUSSIAN_SIGMA_GRID, JPEG_GRID, NOISE_GRID, NUM_MOTION_KERNELS, SCALE_GRID,
    BlurKernel, DegradationParams, apply_degradation, blur, gaussian_kernel,
    generate_motion_bank, motion_bank_kernel, motion_kernel, parse_kernel_spec,
    resize, sample_degradation,
)
from dfdnet.errors import ParameterError


def delta_kernel():
    return gaussian_kernel(1.0, size=1)


def test_grids_are_the_documented_ranges():
    assert GAUSSIAN_SIGMA_GRID[0] == 1.0 and GAUSSIAN_SIGMA_GRID[-1] == 5.0 and len(GAUSSIAN_SIGMA_GRID) == 41
    assert SCALE_GRID[0] == 1.0 and SCALE_GRID[-1] == 8.0 and len(SCALE_GRID) == 71
    assert list(NOISE_GRID) == list(range(16))
    assert list(JPEG_GRID) == list(range(40, 81))


def test_gaussian_kernel_matches_closed_form():
    k = gaussian_kernel(1.5)
    assert k.taps.shape == (11, 11)
    ax = np.arange(-5, 6)
    g = np.exp(-ax ** 2 / (2 * 1.5 ** 2))
    expected = np.outer(g, g) / np.outer(g, g).sum()
    np.testing.assert_allclose(k.taps, expected, rtol=1e-12)
    assert k.spec == "gaussian:1.5"


def test_kernel_validation():
    with pytest.raises(ParameterError):
        BlurKernel("gaussian", np.ones((2, 2)) / 4)
    with pytest.raises(ParameterError):
        BlurKernel("gaussian", np.ones((3, 3)))
    with pytest.raises(ParameterError):
        BlurKernel("box", np.ones((3, 3)) / 9)
    with pytest.raises(ParameterError):
        gaussian_kernel(0.0)


def test_motion_bank_matches_generator_and_is_normalized():
    regenerated = generate_motion_bank()
    for i in range(NUM_MOTION_KERNELS):
        k = motion_bank_kernel(i)
        np.testing.assert_array_equal(k.taps, regenerated[i])
        assert k.taps.shape[0] % 2 == 1 and (k.taps >= 0).all()
        assert abs(k.taps.sum() - 1) < 1e-9
    with pytest.raises(ParameterError):
        motion_bank_kernel(NUM_MOTION_KERNELS)


def test_motion_length_one_is_delta():
    assert motion_kernel(3, length=1).is_delta


def test_parse_kernel_spec_round_trip():
    for spec in ("gaussian:2.3", "motion:17"):
        assert parse_kernel_spec(spec).spec == spec
    with pytest.raises(ParameterError):
        parse_kernel_spec("box:3")


def test_blur_matches_direct_convolution(rng):
    img = rng.random((40, 33, 3))
    for k in (gaussian_kernel(1.0), gaussian_kernel(4.0), motion_bank_kernel(5), motion_bank_kernel(31)):
        ref = np.stack([ndimage.convolve(img[..., c], k.taps, mode="reflect") for c in range(3)], -1)
        np.testing.assert_allclose(blur(img, k), ref, atol=1e-12)


def test_blur_preserves_constants():
    img = np.full((20, 20, 3), 0.37)
    np.testing.assert_allclose(blur(img, gaussian_kernel(5.0)), img, atol=1e-12)


def test_output_size_rounds(rng):
    img = rng.random((64, 50, 3))
    p = DegradationParams(delta_kernel(), downsample_factor=3.3, noise_sigma=0.0, jpeg_quality=None)
    out = apply_degradation(img, p)
    assert out.shape == (round(64 / 3.3), round(50 / 3.3), 3)


def test_resize_identity_copies(rng):
    img = rng.random((8, 8, 3))
    out = resize(img, (8, 8))
    np.testing.assert_array_equal(out, img)
    assert out is not img


def test_identity_pipeline_is_bitwise(rng):
    img = rng.random((32, 32, 3))
    p = DegradationParams(delta_kernel(), 1.0, 0.0, None)
    np.testing.assert_array_equal(apply_degradation(img, p, noise_seed=5), img)


def test_noise_variance_monte_carlo():
    img = np.full((128, 128, 3), 0.5)
    for sigma in (3.0, 15.0):
        p = DegradationParams(delta_kernel(), 1.0, sigma, None)
        resid = apply_degradation(img, p, noise_seed=11) - img
        assert abs(resid.var() / (sigma / 255) ** 2 - 1) < 0.1


def test_noise_is_seeded(rng):
    img = rng.random((16, 16, 3))
    p = DegradationParams(delta_kernel(), 2.0, 7.0, 60)
    np.testing.assert_array_equal(apply_degradation(img, p, 3), apply_degradation(img, p, 3))
    assert not np.array_equal(apply_degradation(img, p, 3), apply_degradation(img, p, 4))


def test_jpeg_output_is_quantized(rng):
    img = rng.random((16, 16, 3))
    out = apply_degradation(img, DegradationParams(delta_kernel(), 1.0, 0.0, 50))
    np.testing.assert_allclose(out * 255, np.round(out * 255), atol=1e-9)


def test_sampled_params_on_grid():
    rng = np.random.default_rng(0)
    kinds = set()
    for _ in range(500):
        p = sample_degradation(rng)
        kinds.add(p.kernel.kind)
        assert p.downsample_factor in SCALE_GRID
        assert p.noise_sigma in NOISE_GRID
        assert p.jpeg_quality in JPEG_GRID
        if p.kernel.kind == "gaussian":
            assert p.kernel.gaussian_sigma in GAUSSIAN_SIGMA_GRID
    assert kinds == {"gaussian", "motion"}


def test_pinned_factor():
    p = sample_degradation(np.random.default_rng(0), downsample_factor=4.0)
    assert p.downsample_factor == 4.0


def test_param_validation():
    with pytest.raises(ParameterError):
        DegradationParams(delta_kernel(), 9.0)
    with pytest.raises(ParameterError):
        DegradationParams(delta_kernel(), 2.0, 16.0)
    with pytest.raises(ParameterError):
        DegradationParams(delta_kernel(), 2.0, 1.0, 90)
    with pytest.raises(ParameterError):
        apply_degradation(np.zeros((4, 4)), DegradationParams(delta_kernel()))


def test_manifest_round_trip():
    p = DegradationParams(motion_bank_kernel(9), 3.7, 12.0, 41)
    q = DegradationParams.from_manifest(p.to_manifest())
    assert q.kernel.spec == p.kernel.spec and q.downsample_factor == 3.7
    assert q.noise_sigma == 12.0 and q.jpeg_quality == 41
    np.testing.assert_array_equal(q.kernel.taps, p.kernel.taps)
