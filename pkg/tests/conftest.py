import csv
import os

import numpy as np
import pytest
from scipy import ndimage

from derain_model.networks import ArchitectureConfig
from utils.config import StageConfig
from utils.image_io import as_image, save_image
from utils.transforms import add_toy_streaks


TINY_ARCH = ArchitectureConfig(depth=1, base_channels=4, downsampling=4, heads=2, ffn_expansion=2)
SMALL_ARCH = ArchitectureConfig(depth=2, base_channels=16, downsampling=4, heads=4, ffn_expansion=2)


def make_scene(rng, height=64, width=None):
    """
    Synthetic natural-looking image: smooth colour gradient, a few flat
    rectangles with soft edges and a fine texture.
    """
    width = width or height
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    base = np.stack([0.3 + 0.4 * xx, 0.2 + 0.5 * yy, 0.5 - 0.3 * xx * yy], axis=-1)
    for _ in range(4):
        top, left = rng.integers(0, height - 8), rng.integers(0, width - 8)
        h, w = rng.integers(6, max(7, height // 2)), rng.integers(6, max(7, width // 2))
        base[top:top + h, left:left + w] = rng.uniform(0.1, 0.9, size=3)
    texture = ndimage.gaussian_filter(rng.normal(0.0, 1.0, size=(height, width)), 1.0)
    base = ndimage.gaussian_filter(base, sigma=(0.7, 0.7, 0)) + 0.03 * texture[..., None]
    return as_image(np.clip(base, 0.0, 1.0))


def streaked(img, seed):
    return add_toy_streaks(img, np.random.default_rng(seed), length=16)


def stage_config(stage, **overrides):
    values = dict(batch_size=2, crop_size=16, max_steps=5, plateau_interval=2, plateau_patience=2, seed=0)
    if stage == "finetune":
        values.update(encoder_lr=0.00004, decoder_lr=0.0004)
    values.update(overrides)
    return StageConfig(stage=stage, **values)


def write_images(directory, images, prefix="img"):
    os.makedirs(directory, exist_ok=True)
    names = []
    for i, img in enumerate(images):
        name = f"{prefix}_{i:03d}.png"
        save_image(img, os.path.join(directory, name))
        names.append(name)
    return names


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_arch():
    return TINY_ARCH


@pytest.fixture
def scenes(rng):
    return [make_scene(rng, 32) for _ in range(6)]


@pytest.fixture
def data_root(tmp_path, scenes):
    """
    On-disk corpora for every dataset role:
    recognition/{rainy,clear}, clear/, real_rainy/, synthetic/{input,gt}.
    """
    root = tmp_path / "data"
    rainy = [streaked(img, i) for i, img in enumerate(scenes)]
    write_images(str(root / "recognition" / "clear"), scenes)
    write_images(str(root / "recognition" / "rainy"), rainy)
    write_images(str(root / "clear"), scenes)
    write_images(str(root / "real_rainy"), rainy)
    write_images(str(root / "synthetic" / "input"), rainy)
    write_images(str(root / "synthetic" / "gt"), scenes)
    return root


@pytest.fixture
def pipeline_yaml(tmp_path, data_root):
    """Writes a toy pipeline config and returns its path."""
    text = f"""
seed: 0
output_dir: {tmp_path / "runs"}
imagedata:
  recognition: {{source_paths: ["{data_root / "recognition"}"]}}
  reconstruction: {{source_paths: ["{data_root / "clear"}"], blur_sigma: 1.0, blur_radius: 3}}
  distillation: {{source_paths: ["{data_root / "real_rainy"}"]}}
  finetune: {{source_paths: ["{data_root / "synthetic"}"]}}
  evaluation: {{source_paths: ["{data_root / "synthetic"}"]}}
netblocks: {{depth: 1, base_channels: 4, downsampling: 4, heads: 2, ffn_expansion: 2}}
trainflow:
  recog: {{batch_size: 2, crop_size: 16, max_steps: 3, plateau_interval: 2}}
  recon: {{batch_size: 2, crop_size: 16, max_steps: 3, plateau_interval: 2}}
  distill: {{batch_size: 2, crop_size: 16, max_steps: 3, plateau_interval: 2}}
  finetune: {{batch_size: 2, crop_size: 16, max_steps: 3, plateau_interval: 2}}
"""
    path = tmp_path / "pipeline.yaml"
    path.write_text(text, encoding="UTF8")
    return str(path)


def read_rows(path):
    with open(path, encoding="UTF8", newline="") as f:
        return list(csv.DictReader(f))
