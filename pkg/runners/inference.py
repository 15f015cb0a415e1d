"""
Deraining inference: student encoder followed by the deraining decoder.
"""
import logging

import numpy as np
import torch

from derain_model.checkpoint import Checkpoint, load_checkpoint
from derain_model.networks import check_divisible, freeze
from utils.errors import ConfigurationError
from utils.image_io import as_image
from utils.transforms import to_image, to_tensor


TILE_SIZE = 256
TILE_OVERLAP = 32


class DerainModel:
    """Frozen encoder/decoder pair; safe to share between callers."""

    def __init__(self, encoder, decoder):
        if decoder.kind != "deraining":
            logging.warning("Running inference with a '%s' decoder.", decoder.kind)
        self.encoder = freeze(encoder)
        self.decoder = freeze(decoder)
        self.downsampling = encoder.arch.downsampling

    @classmethod
    def from_checkpoint(cls, checkpoint):
        if not isinstance(checkpoint, Checkpoint):
            checkpoint = load_checkpoint(checkpoint)
        return cls(checkpoint.build_encoder(), checkpoint.build_decoder())

    def forward(self, batch):
        with torch.no_grad():
            return self.decoder(self.encoder(batch))


def derain(model, img, tiling=False, tile_size=TILE_SIZE, overlap=TILE_OVERLAP):
    """
    Derain one (H, W, 3) image.

    Args:
        model (DerainModel | Checkpoint | str): Model, checkpoint or checkpoint path.
        img (np.ndarray): Input image in [0, 1].
        tiling (bool): Run on overlapping tiles blended by linear ramps; any
            input size is accepted. Without tiling both sides must be
            multiples of the downsampling factor.

    Returns:
        np.ndarray: Derained image of the input's size, values in [0, 1].

    Raises:
        ShapeError: indivisible size without tiling.
    """
    if not isinstance(model, DerainModel):
        model = DerainModel.from_checkpoint(model)
    img = as_image(img)

    if not tiling:
        check_divisible(img.shape[0], img.shape[1], model.downsampling)
        return to_image(model.forward(to_tensor(img)))
    return _derain_tiled(model, img, tile_size, overlap)


def _pad_to_multiple(img, factor):
    pad_h = (-img.shape[0]) % factor
    pad_w = (-img.shape[1]) % factor
    if not pad_h and not pad_w:
        return np.asarray(img)
    return np.pad(img, ((0, pad_h), (0, pad_w), (0, 0)), mode="reflect")


def tile_starts(length, tile, overlap):
    """Start offsets covering [0, length) with tiles overlapping by at least `overlap`."""
    if length <= tile:
        return [0]
    stride = tile - overlap
    starts = list(range(0, length - tile, stride))
    starts.append(length - tile)
    return starts


def _ramp(size, overlap, before, after):
    weights = np.ones(size, dtype=np.float64)
    ramp = np.arange(1, overlap + 1, dtype=np.float64) / (overlap + 1)
    if before:
        weights[:overlap] = ramp
    if after:
        weights[size - overlap:] = ramp[::-1]
    return weights


def _derain_tiled(model, img, tile_size, overlap):
    if tile_size % model.downsampling:
        raise ConfigurationError(f"Tile size {tile_size} must be a multiple of {model.downsampling}.")
    if not 0 <= overlap < tile_size // 2:
        raise ConfigurationError(f"Tile overlap {overlap} must lie in [0, {tile_size // 2}).")

    height, width = img.shape[:2]
    padded = _pad_to_multiple(img, model.downsampling)
    rows = tile_starts(padded.shape[0], tile_size, overlap)
    cols = tile_starts(padded.shape[1], tile_size, overlap)

    if len(rows) == 1 and len(cols) == 1:
        out = to_image(model.forward(to_tensor(padded)))
        return as_image(out[:height, :width])

    acc = np.zeros(padded.shape, dtype=np.float64)
    norm = np.zeros(padded.shape[:2], dtype=np.float64)
    th = min(tile_size, padded.shape[0])
    tw = min(tile_size, padded.shape[1])
    for i, top in enumerate(rows):
        wy = _ramp(th, overlap, i > 0, i < len(rows) - 1)
        for j, left in enumerate(cols):
            wx = _ramp(tw, overlap, j > 0, j < len(cols) - 1)
            tile = padded[top:top + th, left:left + tw]
            out = np.asarray(to_image(model.forward(to_tensor(tile))), dtype=np.float64)
            weight = np.outer(wy, wx)
            acc[top:top + th, left:left + tw] += out * weight[..., None]
            norm[top:top + th, left:left + tw] += weight
    logging.debug("Derained %dx%d image with %d tiles.", height, width, len(rows) * len(cols))
    return as_image((acc / norm[..., None])[:height, :width])
