import numpy as np
import torch
from PIL import Image as PILImage
from scipy import ndimage

from utils.errors import ShapeError
from utils.image_io import as_image


DEFAULT_BLUR_SIGMA = 1.5
DEFAULT_BLUR_RADIUS = 5
STREAK_DENSITY = 1.0 / 256


def crop_offset(height, width, size, rng):
    """
    Draw a uniformly distributed top-left offset for a size x size crop.

    Raises:
        ShapeError: size exceeds either image dimension.
    """
    if size < 1 or size > min(height, width):
        raise ShapeError(
            f"Crop size {size} does not fit an image of {height}x{width}; "
            "undersized images are rejected, not padded."
        )
    top = int(rng.integers(0, height - size + 1))
    left = int(rng.integers(0, width - size + 1))
    return top, left


def random_crop(img, size, rng):
    """
    Crop a size x size window at a uniformly chosen valid offset.

    Args:
        img (np.ndarray): (H, W, 3) image.
        size (int): Side of the square crop.
        rng (np.random.Generator): Seeded random source.
    """
    top, left = crop_offset(img.shape[0], img.shape[1], size, rng)
    return as_image(img[top:top + size, left:left + size])


def paired_crop(pair, size, rng):
    """
    Crop input and target of a PairedSample with one shared offset. Draws from
    rng exactly as random_crop does.
    """
    if pair.input.shape[:2] != pair.target.shape[:2]:
        raise ShapeError("Paired images must have identical height and width.")
    top, left = crop_offset(pair.input.shape[0], pair.input.shape[1], size, rng)
    window = (slice(top, top + size), slice(left, left + size))
    return type(pair)(as_image(pair.input[window]), as_image(pair.target[window]))


def gaussian_kernel(sigma, radius):
    """Normalized (2*radius+1)^2 Gaussian kernel."""
    if sigma <= 0:
        raise ValueError(f"Blur sigma must be positive, got {sigma}.")
    if radius < 1:
        raise ValueError(f"Blur radius must be positive, got {radius}.")
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    dy, dx = np.meshgrid(offsets, offsets, indexing="ij")
    kernel = np.exp(-(dx ** 2 + dy ** 2) / (2.0 * sigma ** 2))
    return kernel / kernel.sum()


def gaussian_blur(img, sigma=DEFAULT_BLUR_SIGMA, radius=DEFAULT_BLUR_RADIUS):
    """
    Blur each channel with a normalized 2-D Gaussian, reflective borders.

    A radius of at least ceil(3 * sigma) keeps the truncation negligible.
    """
    kernel = gaussian_kernel(sigma, radius)
    data = np.asarray(img, dtype=np.float64)
    blurred = np.stack(
        [ndimage.convolve(data[..., c], kernel, mode="reflect") for c in range(data.shape[2])],
        axis=-1,
    )
    return as_image(blurred)


def add_toy_streaks(img, rng, count=None, length=20, intensity=0.8, slant=0.35, density=STREAK_DENSITY):
    """
    Overlay bright slanted streaks on an image. Test-only stand-in for rain:
    each streak is a one-pixel line blended towards white.

    Args:
        img (np.ndarray): (H, W, 3) image.
        rng (np.random.Generator): Seeded random source.
        count (int): Number of streaks. Defaults to `density` streaks per
            pixel, so the rain cover does not thin out on larger images.
        length (int): Streak length in pixels.
        intensity (float): Blend weight towards 1.0 along the streak.
        slant (float): Horizontal drift per vertical pixel.
    """
    out = np.array(img, dtype=np.float32)
    height, width = out.shape[:2]
    if count is None:
        count = max(1, round(height * width * density))
    for _ in range(count):
        y0 = int(rng.integers(0, height))
        x0 = int(rng.integers(0, width))
        for t in range(length):
            y = y0 + t
            x = int(round(x0 + slant * t))
            if 0 <= y < height and 0 <= x < width:
                out[y, x] = out[y, x] + intensity * (1.0 - out[y, x])
    return as_image(out)


def to_tensor(img, dtype=torch.float32):
    """(H, W, 3) image -> (1, 3, H, W) tensor."""
    array = np.ascontiguousarray(np.transpose(np.asarray(img), (2, 0, 1)))
    return torch.from_numpy(array.copy()).to(dtype).unsqueeze(0)


def batch_to_tensor(images, dtype=torch.float32):
    return torch.cat([to_tensor(img, dtype) for img in images], dim=0)


def to_image(tensor):
    """(3, H, W) or (1, 3, H, W) tensor -> read-only (H, W, 3) image."""
    if tensor.dim() == 4:
        tensor = tensor[0]
    array = tensor.detach().cpu().permute(1, 2, 0).numpy()
    return as_image(array)


def grayscale(img):
    """ITU-R BT.601 luma of an RGB image, in [0, 1]."""
    data = np.asarray(img, dtype=np.float64)
    return data[..., 0] * 0.299 + data[..., 1] * 0.587 + data[..., 2] * 0.114


def thumbnail_features(img, side=32):
    """Flattened side x side grayscale thumbnail (bicubic), the t-SNE input vector."""
    gray = (np.clip(grayscale(img), 0.0, 1.0) * 255.0).astype(np.float32)
    small = PILImage.fromarray(gray).resize((side, side), PILImage.BICUBIC)
    return np.asarray(small, dtype=np.float64).reshape(-1) / 255.0
