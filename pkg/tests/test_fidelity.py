import numpy as np
import pytest

from metrics.fidelity import SSIM_K1, SSIM_K2, psnr, ssim
from tests.conftest import make_scene
from utils.errors import ContractError
from utils.image_io import as_image


def test_psnr_identical_is_infinite(rng):
    img = make_scene(rng, 16)
    assert psnr(img, img) == float("inf")


def test_psnr_twenty_db():
    a = np.zeros((8, 8, 3))
    b = np.full((8, 8, 3), 0.1)
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)


def test_psnr_matches_eight_bit_definition(rng):
    a = np.round(rng.uniform(size=(10, 10, 3)) * 255)
    b = np.clip(a + rng.integers(-5, 6, size=a.shape), 0, 255)
    mse = np.mean((a - b) ** 2)
    assert psnr(a / 255, b / 255) == pytest.approx(10 * np.log10(255 ** 2 / mse), abs=1e-9)


def test_ssim_identical_is_one(rng):
    img = make_scene(rng, 32)
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_ssim_of_constant_images():
    a = np.full((16, 16, 3), 0.2)
    b = np.full((16, 16, 3), 0.6)
    c1 = SSIM_K1 ** 2
    expected = (2 * 0.2 * 0.6 + c1) / (0.2 ** 2 + 0.6 ** 2 + c1)
    assert ssim(a, b) == pytest.approx(expected, abs=1e-6)
    assert SSIM_K2 == 0.03


def test_ssim_is_symmetric(rng):
    a = make_scene(rng, 24)
    b = as_image(a + rng.normal(0, 0.05, size=a.shape))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)


def test_ssim_decreases_with_noise(rng):
    img = make_scene(rng, 48)
    scores = [ssim(img, as_image(img + rng.normal(0, sigma, size=img.shape))) for sigma in (0.01, 0.05, 0.2)]
    assert scores[0] > scores[1] > scores[2]
    assert all(-1.0 <= s <= 1.0 for s in scores)


def test_grayscale_ssim(rng):
    img = make_scene(rng, 16)[..., 0]
    assert ssim(img, img) == pytest.approx(1.0)


def test_shape_mismatch():
    with pytest.raises(ContractError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
    with pytest.raises(ContractError):
        ssim(np.zeros((16, 16, 3)), np.zeros((16, 17, 3)))


def test_ssim_rejects_small_images():
    with pytest.raises(ContractError, match="11x11"):
        ssim(np.zeros((10, 20, 3)), np.zeros((10, 20, 3)))
