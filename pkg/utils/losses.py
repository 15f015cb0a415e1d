"""
Training objectives for the four stages.

Every squared norm is a per-sample mean squared error, summed over the samples
of the batch.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
import torch
import torch.nn.functional as F

from utils.errors import ContractError, StateError


@dataclass
class LossValue:
    """
    Scalar loss tensor plus its named components. `total` keeps the autograd
    graph; `terms` hold the same components so that total == sum(terms).
    """

    total: torch.Tensor
    terms: Dict[str, torch.Tensor] = field(default_factory=dict)

    @property
    def value(self):
        return float(self.total.detach())

    def breakdown(self):
        return {name: float(term.detach()) for name, term in self.terms.items()}

    def backward(self):
        """Back-propagate into every parameter that took part in the forward pass."""
        if not self.total.requires_grad or self.total.grad_fn is None:
            raise StateError("No recorded forward pass: the loss does not depend on any trainable tensor.")
        self.total.backward()


def _combine(terms, weights=None):
    weights = weights or {}
    weighted = {name: term * weights.get(name, 1.0) for name, term in terms.items()}
    total = sum(weighted.values())
    return LossValue(total=total, terms=weighted)


def _per_sample_mse(a, b):
    """Mean squared error of each sample along dim 0, summed over samples."""
    if a.shape != b.shape:
        raise ContractError(f"Shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}.")
    diff = (a - b).reshape(a.shape[0], -1) if a.dim() > 1 else (a - b).reshape(-1, 1)
    return diff.pow(2).mean(dim=1).sum()


def _stack(items):
    if isinstance(items, torch.Tensor):
        return items
    items = list(items)
    if items and all(isinstance(item, torch.Tensor) for item in items):
        return torch.stack(items)
    return torch.as_tensor(np.asarray(items, dtype=np.float64))


def image_gradients(img):
    """
    Forward differences along width (gx) and height (gy) of a (..., H, W)
    tensor; the last column of gx and the last row of gy are zero.
    """
    gx = F.pad(img[..., :, 1:] - img[..., :, :-1], (0, 1, 0, 0))
    gy = F.pad(img[..., 1:, :] - img[..., :-1, :], (0, 0, 0, 1))
    return gx, gy


def recog_loss(outputs, labels):
    """Sum of squared errors between recognition scores and 0/1 labels."""
    outputs = _stack(outputs).reshape(-1)
    labels = torch.as_tensor(labels, dtype=outputs.dtype).reshape(-1)
    if outputs.numel() != labels.numel():
        raise ContractError(f"{outputs.numel()} outputs for {labels.numel()} labels.")
    if outputs.numel() == 0:
        raise ContractError("Recognition loss needs at least one sample.")
    return _combine({"recog": (outputs - labels).pow(2).sum()})


def recon_loss(outputs, targets, weights=None):
    """
    Pixel MSE plus MSE of horizontal/vertical image gradients, per sample,
    summed over the batch.

    Args:
        outputs: (N, 3, H, W) tensor or sequence of (3, H, W) tensors.
        targets: same shape as outputs.
        weights (dict): optional multipliers for "pixel" and "gradient".
    """
    outputs, targets = _stack(outputs), _stack(targets)
    if outputs.shape != targets.shape:
        raise ContractError(f"Output shape {tuple(outputs.shape)} does not match target {tuple(targets.shape)}.")

    out_gx, out_gy = image_gradients(outputs)
    tgt_gx, tgt_gy = image_gradients(targets)
    pixel = _per_sample_mse(outputs, targets)
    gradient = _per_sample_mse(torch.stack([out_gx, out_gy], dim=1), torch.stack([tgt_gx, tgt_gy], dim=1))
    return _combine({"pixel": pixel, "gradient": gradient}, weights)


def finetune_loss(outputs, targets, weights=None):
    """Fine-tuning objective: the reconstruction loss on synthetic rainy pairs."""
    return recon_loss(outputs, targets, weights)


def kd_direct_loss(student_feats, teacher_recog_feats=None, teacher_recon_feats=None):
    """
    Direct representation matching: MSE from the student features to each
    teacher's features. A missing teacher (single-teacher ablation) drops its term.
    """
    student = _stack(student_feats)
    terms = {}
    if teacher_recog_feats is not None:
        terms["to_recog"] = _per_sample_mse(student, _stack(teacher_recog_feats).detach())
    if teacher_recon_feats is not None:
        terms["to_recon"] = _per_sample_mse(student, _stack(teacher_recon_feats).detach())
    if not terms:
        raise ContractError("Direct distillation needs at least one teacher.")
    return _combine(terms)


def _require_frozen(decoder, name):
    if decoder is None:
        return
    if any(p.requires_grad for p in decoder.parameters()):
        raise ContractError(f"The {name} decoder must be frozen for indirect distillation.")


def kd_indirect_loss(student_feats, teacher_recog_feats=None, teacher_recon_feats=None,
                     frozen_recog_decoder=None, frozen_recon_decoder=None):
    """
    Indirect representation matching: each frozen teacher decoder sees both
    the student's and its own teacher's features; the outputs are matched by
    MSE. Gradients flow through the decoders into the student features only.
    """
    _require_frozen(frozen_recog_decoder, "recognition")
    _require_frozen(frozen_recon_decoder, "reconstruction")
    if teacher_recog_feats is not None and frozen_recog_decoder is None:
        raise ContractError("Recognition teacher features given without its frozen decoder.")
    if teacher_recon_feats is not None and frozen_recon_decoder is None:
        raise ContractError("Reconstruction teacher features given without its frozen decoder.")
    student = _stack(student_feats)

    terms = {}
    if teacher_recog_feats is not None:
        with torch.no_grad():
            target = frozen_recog_decoder(_stack(teacher_recog_feats))
        terms["via_recog"] = _per_sample_mse(frozen_recog_decoder(student), target)
    if teacher_recon_feats is not None:
        with torch.no_grad():
            target = frozen_recon_decoder(_stack(teacher_recon_feats))
        terms["via_recon"] = _per_sample_mse(frozen_recon_decoder(student), target)
    if not terms:
        raise ContractError("Indirect distillation needs at least one teacher.")
    return _combine(terms)


def kd_total_loss(student_feats, teacher_recog_feats=None, teacher_recon_feats=None,
                  frozen_recog_decoder=None, frozen_recon_decoder=None, weights=None):
    """Overall distillation loss: direct plus indirect matching, unweighted by default."""
    direct = kd_direct_loss(student_feats, teacher_recog_feats, teacher_recon_feats)
    indirect = kd_indirect_loss(
        student_feats, teacher_recog_feats, teacher_recon_feats,
        frozen_recog_decoder, frozen_recon_decoder,
    )
    logging.debug("kdd terms %s, kdi terms %s", direct.breakdown(), indirect.breakdown())
    return _combine({"kdd": direct.total, "kdi": indirect.total}, weights)
