"""
Dataset streams for the four training stages.

Directory layout:

* recognition: ``<root>/rainy`` (label 0) and ``<root>/clear`` (label 1), or
  two explicit paths ``[rainy_dir, clear_dir]``.
* reconstruction: one or more directories of clear images; inputs are their
  Gaussian-blurred copies.
* distillation: one or more directories of real rainy images.
* finetune: ``<root>/input`` and ``<root>/gt`` with matching file names, or two
  explicit paths ``[input_dir, gt_dir]``.
"""
import logging
import os
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from utils import transforms
from utils.errors import ConfigurationError
from utils.image_io import list_images, load_image


logger = logging.getLogger(__name__)

ROLES = ("recognition", "reconstruction", "distillation", "finetune")
RAINY_LABEL = 0.0
CLEAR_LABEL = 1.0


class LabeledSample(NamedTuple):
    image: np.ndarray
    label: float


class PairedSample(NamedTuple):
    input: np.ndarray
    target: np.ndarray


@dataclass(frozen=True)
class DatasetSpec:
    role: str
    source_paths: List[str] = field(default_factory=list)
    blur_sigma: Optional[float] = None
    blur_radius: Optional[int] = None
    seed: int = 0
    balance: bool = False

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigurationError(f"Unknown dataset role '{self.role}'. Options: {', '.join(ROLES)}.")
        if not self.source_paths:
            raise ConfigurationError(f"Dataset role '{self.role}' needs at least one source path.")
        if self.role == "reconstruction":
            if self.blur_sigma is None or self.blur_sigma <= 0:
                raise ConfigurationError("Reconstruction datasets require a positive blur_sigma.")
        elif self.blur_sigma is not None:
            raise ConfigurationError(f"blur_sigma is only valid for reconstruction, not '{self.role}'.")
        if self.balance and self.role != "recognition":
            raise ConfigurationError("balance is only valid for recognition datasets.")


class SampleStream(Dataset):
    """
    Seed-ordered, lazily decoded sequence of samples. Entries are plain tuples
    of paths, so the stream can be shared with DataLoader workers.
    """

    def __init__(self, spec, entries):
        self.spec = spec
        self.entries = entries

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, index):
        return self._materialize(self.entries[index])

    def __iter__(self):
        for index in range(len(self)):
            yield self[index]

    def ids(self):
        """Stable identifier (file name) per sample, in stream order."""
        return [os.path.basename(entry[0]) for entry in self.entries]

    def _materialize(self, entry):
        role = self.spec.role
        if role == "recognition":
            path, label = entry
            return LabeledSample(load_image(path), label)
        if role == "reconstruction":
            (path,) = entry
            target = load_image(path)
            radius = self.spec.blur_radius or transforms.DEFAULT_BLUR_RADIUS
            return PairedSample(transforms.gaussian_blur(target, self.spec.blur_sigma, radius), target)
        if role == "distillation":
            (path,) = entry
            return load_image(path)
        input_path, target_path = entry
        return PairedSample(load_image(input_path), load_image(target_path))


def _require_images(directory):
    if not os.path.isdir(directory):
        raise ConfigurationError(f"Dataset directory does not exist: {directory}")
    names = list_images(directory)
    if not names:
        raise ConfigurationError(f"Dataset directory contains no PNG/JPEG images: {directory}")
    return names


def _two_dirs(paths, first, second):
    if len(paths) == 1:
        return os.path.join(paths[0], first), os.path.join(paths[0], second)
    if len(paths) == 2:
        return paths[0], paths[1]
    raise ConfigurationError(f"Expected one root (with {first}/ and {second}/) or two directories, got {len(paths)}.")


def _recognition_entries(spec):
    rainy_dir, clear_dir = _two_dirs(spec.source_paths, "rainy", "clear")
    rainy = [(os.path.join(rainy_dir, n), RAINY_LABEL) for n in _require_images(rainy_dir)]
    clear = [(os.path.join(clear_dir, n), CLEAR_LABEL) for n in _require_images(clear_dir)]

    if spec.balance and len(rainy) != len(clear):
        minority, majority = (rainy, clear) if len(rainy) < len(clear) else (clear, rainy)
        oversampled = [minority[i % len(minority)] for i in range(len(majority))]
        logger.info("Balancing recognition classes: %d -> %d samples.", len(minority), len(majority))
        if minority is rainy:
            rainy = oversampled
        else:
            clear = oversampled

    logger.info("Recognition dataset: %d rainy, %d clear.", len(rainy), len(clear))
    return rainy + clear


def _finetune_entries(spec):
    input_dir, gt_dir = _two_dirs(spec.source_paths, "input", "gt")
    inputs = _require_images(input_dir)
    targets = set(_require_images(gt_dir))

    entries = []
    for name in inputs:
        if name not in targets:
            raise ConfigurationError(f"Finetune input '{name}' has no ground-truth partner in {gt_dir}.")
        entries.append((os.path.join(input_dir, name), os.path.join(gt_dir, name)))

    orphans = targets.difference(inputs)
    if orphans:
        raise ConfigurationError(f"Ground-truth file '{sorted(orphans)[0]}' has no rainy partner in {input_dir}.")
    return entries


def build_dataset(spec):
    """
    Build the sample stream for a DatasetSpec, shuffled by spec.seed.

    Returns:
        SampleStream: LabeledSamples (recognition), PairedSamples
        (reconstruction, finetune) or images (distillation).
    """
    if spec.role == "recognition":
        entries = _recognition_entries(spec)
    elif spec.role == "finetune":
        entries = _finetune_entries(spec)
    else:
        entries = [
            (os.path.join(directory, name),)
            for directory in spec.source_paths
            for name in _require_images(directory)
        ]

    order = np.random.default_rng(spec.seed).permutation(len(entries))
    logger.info("Built %s dataset with %d samples.", spec.role, len(entries))
    return SampleStream(spec, [entries[i] for i in order])


class CropView(Dataset):
    """
    Per-epoch view that crops every sample to a fixed size. The crop of sample
    i in epoch e depends only on (seed, e, i), so the delivered batches do not
    depend on the number of workers.
    """

    def __init__(self, samples, crop_size, seed, epoch=0):
        self.samples = samples
        self.crop_size = crop_size
        self.seed = seed
        self.epoch = epoch

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, index):
        sample = self.samples[index]
        rng = np.random.default_rng([self.seed, self.epoch, index])

        if isinstance(sample, LabeledSample):
            image = self._crop(sample.image, rng)
            return transforms.to_tensor(image)[0], torch.tensor(sample.label, dtype=torch.float32)
        if isinstance(sample, PairedSample):
            if self.crop_size:
                sample = transforms.paired_crop(sample, self.crop_size, rng)
            return transforms.to_tensor(sample.input)[0], transforms.to_tensor(sample.target)[0]
        return transforms.to_tensor(self._crop(sample, rng))[0]

    def _crop(self, image, rng):
        if not self.crop_size:
            return image
        return transforms.random_crop(image, self.crop_size, rng)


def batch_stream(samples, batch_size, crop_size, seed, num_workers=0):
    """
    Endless iterator of training batches. Each epoch visits every sample once
    in an order drawn from (seed, epoch).

    Yields:
        Tensor or tuple of Tensors, collated along the batch dimension.
    """
    if len(samples) == 0:
        raise ConfigurationError("Cannot train on an empty dataset.")

    epoch = 0
    while True:
        view = CropView(samples, crop_size, seed, epoch)
        order = np.random.default_rng([seed, epoch]).permutation(len(samples)).tolist()
        loader = DataLoader(view, batch_size=batch_size, sampler=order, num_workers=num_workers)
        for batch in loader:
            yield batch
        epoch += 1
