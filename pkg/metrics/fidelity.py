"""
Full-reference fidelity metrics on [0, 1] images with peak 1.0. A PSNR of x dB
here equals the usual 8-bit PSNR of the same images (peak 255).
"""
import numpy as np
from scipy import ndimage

from utils.errors import ContractError
from utils.transforms import gaussian_kernel


SSIM_SIGMA = 1.5
SSIM_RADIUS = 5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"Image shapes differ: {a.shape} vs {b.shape}.")
    return a, b


def psnr(a, b):
    """
    10 * log10(1 / MSE(a, b)). Identical images return float("inf").
    """
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def _valid(filtered, radius):
    return filtered[radius:-radius, radius:-radius]


def _ssim_channel(a, b, window, radius):
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2

    def local_mean(x):
        return _valid(ndimage.correlate(x, window, mode="reflect"), radius)

    mu_a = local_mean(a)
    mu_b = local_mean(b)
    var_a = local_mean(a * a) - mu_a * mu_a
    var_b = local_mean(b * b) - mu_b * mu_b
    cov = local_mean(a * b) - mu_a * mu_b

    numerator = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return np.mean(numerator / denominator)


def ssim(a, b):
    """
    Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
    averaged over all fully-covered window positions and then over channels.

    Raises:
        ContractError: shape mismatch, or a side shorter than the window.
    """
    a, b = _pair(a, b)
    size = 2 * SSIM_RADIUS + 1
    if min(a.shape[0], a.shape[1]) < size:
        raise ContractError(f"SSIM needs images of at least {size}x{size}, got {a.shape[0]}x{a.shape[1]}.")

    window = gaussian_kernel(SSIM_SIGMA, SSIM_RADIUS)
    if a.ndim == 2:
        return float(_ssim_channel(a, b, window, SSIM_RADIUS))
    scores = [_ssim_channel(a[..., c], b[..., c], window, SSIM_RADIUS) for c in range(a.shape[-1])]
    return float(np.mean(scores))
