"""
Natural image quality evaluator (NIQE).

A multivariate Gaussian is fitted to natural-scene-statistics features of sharp
patches from a pristine corpus. An image is scored by the distance between
that pristine model and a Gaussian fitted to its own patches. Scores are
relative to the pristine corpus the model was fitted on; higher means more
degraded.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.special
from PIL import Image as PILImage
from scipy import ndimage

from utils.errors import ConfigurationError, ContractError, ScoringError
from utils.transforms import grayscale


DEFAULT_PATCH_SIZE = 96
FEATURES_PER_SCALE = 18
SCALES = 2
MIN_CORPUS = 10
MIN_SCORE_PATCHES = 4
MSCN_C = 1.0
# First column of the diagonal-product block within one scale.
DIAGONAL_COLUMN = 10

# Shape lookup table for the moment-matching AGGD fit.
gamma_range = np.arange(0.2, 10, 0.001)
_a = scipy.special.gamma(2.0 / gamma_range)
prec_gammas = (_a * _a) / (scipy.special.gamma(1.0 / gamma_range) * scipy.special.gamma(3.0 / gamma_range))


@dataclass(frozen=True)
class NiqeModel:
    mean: np.ndarray
    cov: np.ndarray
    patch_size: int

    def __post_init__(self):
        dim = self.mean.shape[0]
        if self.cov.shape != (dim, dim):
            raise ContractError(f"Covariance shape {self.cov.shape} does not match feature dimension {dim}.")
        if not np.allclose(self.cov, self.cov.T, atol=1e-9, rtol=0):
            raise ContractError("NIQE covariance must be symmetric.")


def gauss_window(lw=3, sigma=7.0 / 6.0):
    offsets = np.arange(-lw, lw + 1, dtype=np.float64)
    weights = np.exp(-0.5 * offsets ** 2 / sigma ** 2)
    return weights / weights.sum()


def mscn(image, c=MSCN_C):
    """
    Mean-subtracted contrast-normalized coefficients of a 2-D image on the
    0-255 scale. Returns (coefficients, local sigma).
    """
    image = np.asarray(image, dtype=np.float64)
    window = gauss_window()
    mu = ndimage.correlate1d(ndimage.correlate1d(image, window, 0, mode="constant"), window, 1, mode="constant")
    sq = ndimage.correlate1d(ndimage.correlate1d(image ** 2, window, 0, mode="constant"), window, 1, mode="constant")
    sigma = np.sqrt(np.abs(sq - mu ** 2))
    return (image - mu) / (sigma + c), sigma


def aggd_fit(samples):
    """
    Moment-matching fit of an asymmetric generalized Gaussian.

    Returns:
        tuple: (alpha, mean, beta_left, beta_right, sigma_left, sigma_right).
        NaNs when one side of the distribution is empty or flat.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    left = x[x < 0]
    right = x[x >= 0]
    nan = (math.nan,) * 6
    if left.size == 0 or right.size == 0:
        return nan

    sigma_left = math.sqrt(np.mean(left * left))
    sigma_right = math.sqrt(np.mean(right * right))
    mean_sq = np.mean(x * x)
    if sigma_left == 0 or sigma_right == 0 or mean_sq == 0:
        return nan

    gamma_hat = sigma_left / sigma_right
    r_hat = np.mean(np.abs(x)) ** 2 / mean_sq
    rhat_norm = r_hat * ((gamma_hat ** 3 + 1) * (gamma_hat + 1)) / (gamma_hat ** 2 + 1) ** 2
    alpha = float(gamma_range[np.argmin((prec_gammas - rhat_norm) ** 2)])

    gam1 = scipy.special.gamma(1.0 / alpha)
    gam2 = scipy.special.gamma(2.0 / alpha)
    gam3 = scipy.special.gamma(3.0 / alpha)
    ratio = math.sqrt(gam1 / gam3)
    beta_left = ratio * sigma_left
    beta_right = ratio * sigma_right
    mean = (beta_right - beta_left) * (gam2 / gam1)
    return alpha, mean, beta_left, beta_right, sigma_left, sigma_right


def paired_products(coefs):
    """Products of neighbouring coefficients: horizontal, vertical and both diagonals."""
    horizontal = np.roll(coefs, 1, axis=1) * coefs
    vertical = np.roll(coefs, 1, axis=0) * coefs
    diagonal = np.roll(np.roll(coefs, 1, axis=0), 1, axis=1) * coefs
    anti_diagonal = np.roll(np.roll(coefs, 1, axis=0), -1, axis=1) * coefs
    return horizontal, vertical, diagonal, anti_diagonal


def patch_features(coefs):
    """18 features of one MSCN patch: AGGD shape/scale plus 4 x (shape, mean, left, right)."""
    alpha, _, beta_left, beta_right, _, _ = aggd_fit(coefs)
    features = [alpha, (beta_left + beta_right) / 2.0]
    for product in paired_products(coefs):
        p_alpha, p_mean, p_left, p_right, _, _ = aggd_fit(product)
        features.extend([p_alpha, p_mean, p_left, p_right])
    return np.array(features, dtype=np.float64)


def _patch_grid(height, width, patch_size):
    return [
        (top, left)
        for top in range(0, height - patch_size + 1, patch_size)
        for left in range(0, width - patch_size + 1, patch_size)
    ]


def _downscale(gray):
    height, width = gray.shape
    small = PILImage.fromarray(gray.astype(np.float32)).resize((width // 2, height // 2), PILImage.BICUBIC)
    return np.asarray(small, dtype=np.float64)


def image_patch_features(img, patch_size):
    """
    Features of every patch of an image at two scales.

    Returns:
        (features, sharpness): (num_patches, 36) array and the mean local
        sigma of each patch at full scale.
    """
    if patch_size % 2:
        raise ConfigurationError(f"NIQE patch size must be even, got {patch_size}.")
    gray = grayscale(img) * 255.0
    height = gray.shape[0] - gray.shape[0] % patch_size
    width = gray.shape[1] - gray.shape[1] % patch_size
    gray = gray[:height, :width]

    coefs, sigma = mscn(gray)
    small_coefs, _ = mscn(_downscale(gray))
    half = patch_size // 2

    rows, sharpness = [], []
    for top, left in _patch_grid(height, width, patch_size):
        full = patch_features(coefs[top:top + patch_size, left:left + patch_size])
        reduced = patch_features(small_coefs[top // 2:top // 2 + half, left // 2:left // 2 + half])
        rows.append(np.concatenate([full, reduced]))
        sharpness.append(float(np.mean(sigma[top:top + patch_size, left:left + patch_size])))
    if not rows:
        return np.zeros((0, FEATURES_PER_SCALE * SCALES)), np.zeros(0)
    return np.stack(rows), np.array(sharpness)


def mirror_features(features):
    """
    Patch features of the horizontally flipped image. Flipping maps the
    diagonal products onto the anti-diagonal ones and leaves every other
    feature unchanged, so the two 4-column blocks swap at each scale.
    """
    order = np.arange(FEATURES_PER_SCALE * SCALES)
    for offset in range(0, FEATURES_PER_SCALE * SCALES, FEATURES_PER_SCALE):
        diagonal, anti_diagonal = offset + DIAGONAL_COLUMN, offset + DIAGONAL_COLUMN + 4
        order[diagonal:diagonal + 4] = np.arange(anti_diagonal, anti_diagonal + 4)
        order[anti_diagonal:anti_diagonal + 4] = np.arange(diagonal, diagonal + 4)
    return np.asarray(features)[..., order]


def _gaussian(features):
    mean = features.mean(axis=0)
    cov = np.cov(features, rowvar=False)
    return mean, (cov + cov.T) / 2.0


def niqe_fit(corpus, patch_size=DEFAULT_PATCH_SIZE):
    """
    Fit the pristine model on a corpus of clear images.

    Only sharp patches enter the fit: those whose mean local sigma is at least
    the median over all patches of the corpus.

    Raises:
        ConfigurationError: fewer than 10 images, an image smaller than twice
            the patch size, or no usable patch.
    """
    corpus = list(corpus)
    if len(corpus) < MIN_CORPUS:
        raise ConfigurationError(f"NIQE needs at least {MIN_CORPUS} pristine images, got {len(corpus)}.")

    all_features, all_sharpness = [], []
    for i, img in enumerate(corpus):
        if min(img.shape[0], img.shape[1]) < 2 * patch_size:
            raise ConfigurationError(
                f"Pristine image {i} is {img.shape[0]}x{img.shape[1]}; NIQE needs at least "
                f"{2 * patch_size}x{2 * patch_size} for patch size {patch_size}."
            )
        features, sharpness = image_patch_features(img, patch_size)
        all_features.append(features)
        all_sharpness.append(sharpness)

    # Mirrored copies make the model symmetric under horizontal flips.
    features = np.concatenate(all_features + [mirror_features(f) for f in all_features])
    sharpness = np.concatenate(all_sharpness * 2)
    keep = (sharpness >= np.median(sharpness)) & np.all(np.isfinite(features), axis=1)
    if keep.sum() < 2:
        raise ConfigurationError("The pristine corpus yields fewer than two usable sharp patches.")

    mean, cov = _gaussian(features[keep])
    logging.info("NIQE model fitted on %d of %d patches from %d images.", int(keep.sum()), len(keep), len(corpus))
    return NiqeModel(mean=mean, cov=cov, patch_size=patch_size)


def niqe_score(img, model):
    """
    Distance between the pristine model and the Gaussian of the image's patches,
    sqrt(d^T pinvh((cov_model + cov_image) / 2) d).

    Raises:
        ScoringError: too few patches, or too few with finite features.
    """
    features, _ = image_patch_features(img, model.patch_size)
    if features.shape[0] < MIN_SCORE_PATCHES:
        raise ScoringError(
            f"Image of {img.shape[0]}x{img.shape[1]} gives {features.shape[0]} patches of "
            f"{model.patch_size}px; at least {MIN_SCORE_PATCHES} are needed."
        )
    finite = np.all(np.isfinite(features), axis=1)
    if finite.sum() < 2:
        raise ScoringError(
            f"Degenerate patch set: {int((~finite).sum())} of {len(finite)} patches have flat or one-sided "
            "statistics (constant regions?)."
        )

    mean, cov = _gaussian(features[finite])
    diff = mean - model.mean
    pooled = scipy.linalg.pinvh((model.cov + cov) / 2.0)
    quad = float(diff @ pooled @ diff)
    return math.sqrt(max(quad, 0.0))
