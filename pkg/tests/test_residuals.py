import numpy as np
import pytest

from modelprints.residuals import cosine, median3, prnu_fingerprint, residual

from oracles import median3_loop


def test_median3_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for shape in [(5, 5), (8, 8), (7, 11), (16, 9)]:
        img = rng.uniform(size=shape)
        assert np.allclose(median3(img), median3_loop(img))


def test_median3_batched_equals_per_image():
    rng = np.random.default_rng(1)
    stack = rng.uniform(size=(4, 2, 6, 6))
    got = median3(stack)
    for n in range(4):
        for c in range(2):
            assert np.allclose(got[n, c], median3_loop(stack[n, c]))


def test_median3_shape_validation():
    with pytest.raises(ValueError, match="H, W"):
        median3(np.zeros(5))


def test_single_spike_passes_through():
    # 5x5 zeros, center 1: every 3x3 window is majority zeros
    img = np.zeros((5, 5))
    img[2, 2] = 1.0
    assert np.allclose(median3(img), 0.0)
    # residual is the spike itself, shifted to zero mean
    assert np.allclose(residual(img), img - 1.0 / 25)


def test_smooth_content_dies_in_residual():
    # a monotone ramp passes through the median untouched away from borders
    y, x = np.mgrid[0:16, 0:16]
    ramp = 0.3 + 0.02 * x + 0.01 * y
    diff = ramp - median3(ramp)
    assert np.max(np.abs(diff[1:-1, 1:-1])) < 1e-12


def test_residual_translation_invariance():
    rng = np.random.default_rng(2)
    img = rng.uniform(size=(12, 12))
    assert np.allclose(residual(img + 0.25), residual(img), atol=1e-12)


def test_residual_is_zero_mean_per_raster():
    rng = np.random.default_rng(3)
    stack = rng.uniform(size=(6, 10, 10))
    r = residual(stack)
    assert np.allclose(r.mean(axis=(-2, -1)), 0.0, atol=1e-14)


def test_prnu_fingerprint_is_mean_residual():
    rng = np.random.default_rng(4)
    stack = rng.uniform(size=(8, 9, 9))
    assert np.allclose(prnu_fingerprint(stack), residual(stack).mean(axis=0))
    with pytest.raises(ValueError, match="stack"):
        prnu_fingerprint(np.zeros((5, 5)))


def test_prnu_fingerprint_recovers_planted_spike_pattern():
    # sparse spikes survive the median; averaging kills iid noise
    rng = np.random.default_rng(5)
    stamp = np.zeros((16, 16))
    stamp[rng.uniform(size=(16, 16)) > 0.9] = 0.2
    stamp -= stamp.mean()
    imgs = 0.5 + stamp + 0.02 * rng.standard_normal((256, 16, 16))
    fp = prnu_fingerprint(imgs)
    assert cosine(fp, stamp) > 0.95


def test_cosine():
    assert cosine([1.0, 0.0], [2.0, 0.0]) == pytest.approx(1.0)
    assert cosine([1.0, 0.0], [0.0, 3.0]) == pytest.approx(0.0)
    assert cosine([1.0, 1.0], [-1.0, -1.0]) == pytest.approx(-1.0)
    with pytest.raises(ValueError, match="zero vector"):
        cosine([0.0, 0.0], [1.0, 2.0])
