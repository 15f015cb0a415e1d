import logging
import os

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

from utils.errors import ImageFormatError


logger = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


def as_image(data):
    """
    Freeze an (H, W, 3) array in [0, 1] as an immutable float32 image.

    Args:
        data (np.ndarray): Raster with three channels.

    Returns:
        np.ndarray: Read-only float32 copy, clipped to [0, 1].
    """
    img = np.clip(np.asarray(data, dtype=np.float32), 0.0, 1.0)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"Image must have shape (H, W, 3), got {img.shape}.")
    img = np.ascontiguousarray(img)
    img.setflags(write=False)
    return img


def load_image(path):
    """
    Decode a PNG/JPEG file into an RGB image with values v/255.

    Raises:
        FileNotFoundError: path does not exist.
        ImageFormatError: bytes cannot be decoded.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Image file not found: {path}")

    try:
        with PILImage.open(path) as pil:
            rgb = np.asarray(pil.convert("RGB"), dtype=np.float32)
    except (UnidentifiedImageError, OSError) as err:
        raise ImageFormatError(f"Cannot decode image {path}: {err}") from err

    return as_image(rgb / 255.0)


def save_image(img, path):
    """
    Write an image as 8-bit PNG (or JPEG by extension). Values are rounded to
    the nearest 1/255 step.
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    quantized = np.round(np.clip(np.asarray(img), 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(quantized).save(path)
    logger.debug("Saved image %s (%dx%d).", path, quantized.shape[1], quantized.shape[0])


def list_images(directory):
    """Sorted image file names directly inside a directory."""
    return sorted(
        name for name in os.listdir(directory)
        if name.lower().endswith(IMAGE_EXTENSIONS)
        and os.path.isfile(os.path.join(directory, name))
    )
