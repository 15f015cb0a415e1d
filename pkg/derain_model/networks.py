import logging
import math
from dataclasses import dataclass, replace

import torch
import torch.nn as nn
import torch.nn.functional as F

from derain_model.blocks import SPP, AGLFViTBlock, SpatialAttention, init_weights
from utils.errors import ConfigurationError, ShapeError
from utils.transforms import to_tensor


DECODER_KINDS = ("reconstruction", "deraining", "recognition")


@dataclass(frozen=True)
class ArchitectureConfig:
    """Architecture descriptor shared by every encoder of the pipeline."""

    depth: int = 9
    base_channels: int = 32
    downsampling: int = 4
    heads: int = 4
    ffn_expansion: int = 4

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ConfigurationError("depth and base_channels must be >= 1.")
        if self.downsampling < 1 or self.downsampling & (self.downsampling - 1):
            raise ConfigurationError(f"downsampling must be a power of two, got {self.downsampling}.")
        if self.base_channels % self.heads:
            raise ConfigurationError(
                f"base_channels ({self.base_channels}) must be divisible by heads ({self.heads})."
            )

    @property
    def stride_stages(self):
        return int(math.log2(self.downsampling))


class EncoderModel(nn.Module):
    """
    Shallow convolutional projection (stride-2 convolutions down to 1/downsampling),
    one spatial attention module, then `depth` AGLF-ViT blocks. Every encoder of
    the pipeline (recognition, reconstruction, student) uses this class.
    """

    def __init__(self, arch):
        super(EncoderModel, self).__init__()
        self.arch = arch
        channels = arch.base_channels

        layers = []
        in_channels = 3
        for _ in range(max(arch.stride_stages, 1)):
            stride = 2 if arch.stride_stages else 1
            layers.append(nn.Conv2d(in_channels, channels, 3, stride=stride, padding=1))
            in_channels = channels
        self.projection = nn.ModuleList(layers)
        self.attention = SpatialAttention()
        self.blocks = nn.ModuleList(
            [AGLFViTBlock(channels, arch.heads, arch.ffn_expansion) for _ in range(arch.depth)]
        )

    def forward(self, x):
        check_divisible(x.shape[-2], x.shape[-1], self.arch.downsampling)
        for i, conv in enumerate(self.projection):
            x = conv(x)
            if i < len(self.projection) - 1:
                x = F.gelu(x)
        x = self.attention(x)
        for block in self.blocks:
            x = block(x)
        return x


class ImageDecoder(nn.Module):
    """
    Reconstruction / deraining decoder: pixel-shuffle upsampling back to the
    image resolution, SPP, output convolution and a sigmoid.
    """

    def __init__(self, arch, kind="deraining"):
        super(ImageDecoder, self).__init__()
        if kind not in ("reconstruction", "deraining"):
            raise ConfigurationError(f"ImageDecoder kind must be reconstruction or deraining, got '{kind}'.")
        self.kind = kind
        channels = arch.base_channels
        self.upsample = nn.ModuleList(
            [nn.Conv2d(channels, channels * 4, 3, padding=1) for _ in range(arch.stride_stages)]
        )
        self.spp = SPP(channels)
        self.output = nn.Conv2d(channels, 3, 3, padding=1)

    def forward(self, f):
        for conv in self.upsample:
            f = F.gelu(F.pixel_shuffle(conv(f), 2))
        return torch.sigmoid(self.output(self.spp(f)))


class RecognitionDecoder(nn.Module):
    """SPP, global average pooling, fully connected layer and sigmoid: one score per image."""

    kind = "recognition"

    def __init__(self, arch):
        super(RecognitionDecoder, self).__init__()
        self.spp = SPP(arch.base_channels)
        self.fc = nn.Linear(arch.base_channels, 1)

    def forward(self, f):
        pooled = self.spp(f).mean(dim=(2, 3))
        return torch.sigmoid(self.fc(pooled)).squeeze(-1)


def check_divisible(height, width, factor):
    if height % factor or width % factor:
        raise ShapeError(
            f"Image size {height}x{width} must be a multiple of {factor} "
            "(the encoder's downsampling factor); enable tiling for arbitrary sizes."
        )


def init_encoder(seed, arch=None, depth=None, base_channels=None):
    """
    Build an encoder with deterministic initialization.

    Args:
        seed (int): Seed for the parameter draw.
        arch (ArchitectureConfig): Full descriptor; depth/base_channels override it.
    """
    arch = arch or ArchitectureConfig()
    if depth is not None:
        arch = replace(arch, depth=depth)
    if base_channels is not None:
        arch = replace(arch, base_channels=base_channels)
    torch.manual_seed(seed)
    encoder = EncoderModel(arch)
    init_weights(encoder)
    logging.info(
        "Encoder initialized: depth %d, %d channels, downsampling %d, %d parameters.",
        arch.depth, arch.base_channels, arch.downsampling, parameter_count(encoder),
    )
    return encoder


def make_decoder(arch, kind):
    if kind not in DECODER_KINDS:
        raise ConfigurationError(f"Unknown decoder kind '{kind}'. Options: {', '.join(DECODER_KINDS)}.")
    return RecognitionDecoder(arch) if kind == "recognition" else ImageDecoder(arch, kind)


def init_decoder(seed, arch, kind):
    """Build a decoder of the given kind with deterministic initialization."""
    torch.manual_seed(seed)
    decoder = make_decoder(arch, kind)
    init_weights(decoder)
    logging.info("%s decoder initialized with %d parameters.", kind.capitalize(), parameter_count(decoder))
    return decoder


def encoder_forward(encoder, img):
    """Encode one (H, W, 3) image; returns the (1, C, H/d, W/d) feature map."""
    dtype = next(encoder.parameters()).dtype
    return encoder(to_tensor(img, dtype))


def parameter_count(module):
    return sum(p.numel() for p in module.parameters())


def freeze(module):
    """Stop gradients into a module and switch it to eval mode."""
    for p in module.parameters():
        p.requires_grad_(False)
    return module.eval()
