import math

import numpy as np
import pytest
import scipy.special

from metrics.niqe import (
    FEATURES_PER_SCALE,
    NiqeModel,
    aggd_fit,
    image_patch_features,
    mirror_features,
    niqe_fit,
    niqe_score,
)
from tests.conftest import make_scene, streaked
from utils.errors import ConfigurationError, ContractError, ScoringError
from utils.image_io import as_image
from utils.transforms import gaussian_blur


PATCH = 32


def sample_aggd(rng, alpha, sigma_left, sigma_right, size):
    scale = math.sqrt(scipy.special.gamma(1.0 / alpha) / scipy.special.gamma(3.0 / alpha))
    beta_left, beta_right = scale * sigma_left, scale * sigma_right
    left = rng.uniform(size=size) < beta_left / (beta_left + beta_right)
    magnitude = rng.gamma(1.0 / alpha, 1.0, size=size) ** (1.0 / alpha)
    return np.where(left, -beta_left * magnitude, beta_right * magnitude)


@pytest.fixture(scope="module")
def pristine():
    rng = np.random.default_rng(7)
    return [make_scene(rng, 128) for _ in range(20)]


@pytest.fixture(scope="module")
def model(pristine):
    return niqe_fit(pristine, patch_size=PATCH)


def test_aggd_fit_recovers_parameters():
    x = sample_aggd(np.random.default_rng(0), 1.0, 0.5, 1.0, 400000)
    alpha, _, _, _, sigma_left, sigma_right = aggd_fit(x)
    assert alpha == pytest.approx(1.0, rel=0.05)
    assert sigma_left == pytest.approx(0.5, rel=0.05)
    assert sigma_right == pytest.approx(1.0, rel=0.05)


def test_aggd_fit_one_sided_is_nan():
    assert all(math.isnan(v) for v in aggd_fit(np.array([0.1, 0.5, 2.0])))


def test_patch_features_shape(pristine):
    features, sharpness = image_patch_features(pristine[0], PATCH)
    assert features.shape == (16, 2 * FEATURES_PER_SCALE)
    assert sharpness.shape == (16,)


def test_odd_patch_size():
    with pytest.raises(ConfigurationError, match="even"):
        image_patch_features(np.zeros((64, 64, 3)), 33)


def test_fit_is_deterministic(pristine, model):
    again = niqe_fit(pristine, patch_size=PATCH)
    assert np.array_equal(again.mean, model.mean)
    assert np.array_equal(again.cov, model.cov)


def test_model_covariance_is_psd(model):
    assert np.allclose(model.cov, model.cov.T)
    assert np.linalg.eigvalsh(model.cov).min() >= -1e-8 * np.abs(model.cov).max()


def test_noise_raises_score(model):
    rng = np.random.default_rng(99)
    worse = 0
    for _ in range(20):
        clean = make_scene(rng, 96)
        noisy = as_image(clean + rng.normal(0.0, 0.15, size=clean.shape))
        worse += niqe_score(noisy, model) > niqe_score(clean, model)
    assert worse >= 18


def test_blur_raises_score(model):
    rng = np.random.default_rng(5)
    worse = 0
    for _ in range(20):
        clean = make_scene(rng, 96)
        blurry = gaussian_blur(gaussian_blur(clean, 3.0, 9), 3.0, 9)
        worse += niqe_score(blurry, model) > niqe_score(clean, model)
    assert worse >= 18


def test_mirrored_features_swap_diagonals(pristine):
    img = streaked(pristine[0], 0)
    features, _ = image_patch_features(img, PATCH)
    flipped, _ = image_patch_features(np.ascontiguousarray(img[:, ::-1]), PATCH)
    per_row = features.shape[0] // 4
    # patch (row, col) of the flipped image mirrors patch (row, per_row - 1 - col)
    order = [row * per_row + (per_row - 1 - col) for row in range(4) for col in range(per_row)]
    assert np.allclose(flipped, mirror_features(features[order]), rtol=1e-2, atol=1e-2, equal_nan=True)
    assert np.array_equal(mirror_features(mirror_features(features)), features, equal_nan=True)


def test_horizontal_flip_keeps_score(model):
    rng = np.random.default_rng(3)
    for _ in range(10):
        img = make_scene(rng, 128)
        score = niqe_score(img, model)
        assert niqe_score(np.ascontiguousarray(img[:, ::-1]), model) == pytest.approx(score, rel=0.1)


def test_scores_are_nonnegative(model, pristine):
    assert all(niqe_score(img, model) >= 0.0 for img in pristine[:3])


def test_small_corpus(pristine):
    with pytest.raises(ConfigurationError, match="at least 10"):
        niqe_fit(pristine[:9], patch_size=PATCH)


def test_corpus_images_too_small(rng):
    corpus = [make_scene(rng, 48) for _ in range(10)]
    with pytest.raises(ConfigurationError, match="64x64"):
        niqe_fit(corpus, patch_size=PATCH)


def test_too_few_patches(model, rng):
    with pytest.raises(ScoringError):
        niqe_score(make_scene(rng, 48), model)


def test_model_validation():
    with pytest.raises(ContractError):
        NiqeModel(mean=np.zeros(3), cov=np.zeros((2, 2)), patch_size=PATCH)
    with pytest.raises(ContractError):
        NiqeModel(mean=np.zeros(2), cov=np.array([[1.0, 0.5], [0.0, 1.0]]), patch_size=PATCH)
