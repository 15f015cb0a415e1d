"""
Checkpoint container: safetensors file with float32 little-endian tensors
(``encoder.*`` / ``decoder.*``) and a string metadata map holding the format
version, the architecture descriptor, the stage tag and the step counter.
"""
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional

import torch
from safetensors import safe_open
from safetensors.torch import save_file

from derain_model.networks import ArchitectureConfig, EncoderModel, make_decoder
from utils.errors import ConfigurationError, MissingArtifactError


FORMAT_VERSION = 1
ARCH_KEYS = ("depth", "base_channels", "downsampling", "heads", "ffn_expansion")


@dataclass
class Checkpoint:
    arch: ArchitectureConfig
    stage: str
    step: int
    encoder_state: Dict[str, torch.Tensor]
    decoder_state: Dict[str, torch.Tensor] = field(default_factory=dict)
    decoder_kind: Optional[str] = None

    def build_encoder(self, dtype=torch.float32):
        encoder = EncoderModel(self.arch)
        encoder.load_state_dict(self.encoder_state)
        return encoder.to(dtype)

    def build_decoder(self, dtype=torch.float32):
        if not self.decoder_kind:
            raise ConfigurationError(f"Checkpoint of stage '{self.stage}' holds no decoder.")
        decoder = make_decoder(self.arch, self.decoder_kind)
        decoder.load_state_dict(self.decoder_state)
        return decoder.to(dtype)


def _state(module):
    return {
        name: tensor.detach().to(torch.float32).contiguous().clone()
        for name, tensor in module.state_dict().items()
    }


def snapshot(encoder, decoder=None, stage="", step=0):
    """In-memory Checkpoint with copies of the current weights."""
    return Checkpoint(
        arch=encoder.arch,
        stage=stage,
        step=step,
        encoder_state=_state(encoder),
        decoder_state=_state(decoder) if decoder is not None else {},
        decoder_kind=decoder.kind if decoder is not None else None,
    )


def save_checkpoint(checkpoint, path):
    """Write a Checkpoint as a safetensors file."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    tensors = {f"encoder.{k}": v for k, v in checkpoint.encoder_state.items()}
    tensors.update({f"decoder.{k}": v for k, v in checkpoint.decoder_state.items()})
    metadata = {key: str(value) for key, value in asdict(checkpoint.arch).items()}
    metadata.update(
        format_version=str(FORMAT_VERSION),
        stage=checkpoint.stage,
        step=str(checkpoint.step),
        decoder_kind=checkpoint.decoder_kind or "",
    )
    save_file(tensors, path, metadata=metadata)
    logging.info("Checkpoint saved: %s (stage %s, step %d).", path, checkpoint.stage, checkpoint.step)
    return path


def read_metadata(path):
    if not os.path.isfile(path):
        raise MissingArtifactError(f"Checkpoint not found: {path}", [path])
    with safe_open(path, framework="pt") as f:
        return f.metadata() or {}


def load_checkpoint(path, expected_arch=None):
    """
    Load a checkpoint, validating the architecture descriptor before any
    weight is accepted.

    Raises:
        MissingArtifactError: file absent.
        ConfigurationError: unknown format or architecture mismatch.
    """
    metadata = read_metadata(path)
    if metadata.get("format_version") != str(FORMAT_VERSION):
        raise ConfigurationError(
            f"Unsupported checkpoint format '{metadata.get('format_version')}' in {path}."
        )
    try:
        arch = ArchitectureConfig(**{key: int(metadata[key]) for key in ARCH_KEYS})
    except (KeyError, ValueError) as err:
        raise ConfigurationError(f"Checkpoint {path} has an invalid architecture descriptor: {err}") from err

    if expected_arch is not None and arch != expected_arch:
        raise ConfigurationError(
            f"Architecture mismatch for {path}: checkpoint has {asdict(arch)}, expected {asdict(expected_arch)}."
        )

    encoder_state, decoder_state = {}, {}
    with safe_open(path, framework="pt") as f:
        for key in f.keys():
            prefix, name = key.split(".", 1)
            target = encoder_state if prefix == "encoder" else decoder_state
            target[name] = f.get_tensor(key)

    return Checkpoint(
        arch=arch,
        stage=metadata.get("stage", ""),
        step=int(metadata.get("step", 0)),
        encoder_state=encoder_state,
        decoder_state=decoder_state,
        decoder_kind=metadata.get("decoder_kind") or None,
    )
