import logging
from dataclasses import asdict

import torch

from derain_model.checkpoint import Checkpoint, load_checkpoint, snapshot
from derain_model.networks import freeze, init_encoder
from runners.stage_runner import StageRunner
from utils.errors import ConfigurationError
from utils.losses import kd_total_loss


def _load_teacher(checkpoint, arch, name):
    if checkpoint is None:
        return None, None
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    if checkpoint.arch != arch:
        raise ConfigurationError(
            f"The {name} teacher has architecture {asdict(checkpoint.arch)}, the student {asdict(arch)}."
        )
    return freeze(checkpoint.build_encoder()), freeze(checkpoint.build_decoder())


class DistillRunner(StageRunner):
    """
    Trains a freshly initialized student encoder to match the frozen teachers,
    directly on features and indirectly through the teachers' decoders.
    """

    stage = "distill"

    def __init__(self, config, samples, arch, teacher_recog=None, teacher_recon=None, **kwargs):
        super(DistillRunner, self).__init__(config, samples, arch, **kwargs)
        use_recog = config.teachers in ("both", "recog")
        use_recon = config.teachers in ("both", "recon")
        self.recog_encoder, self.recog_decoder = _load_teacher(teacher_recog if use_recog else None, arch, "recognition")
        self.recon_encoder, self.recon_decoder = _load_teacher(teacher_recon if use_recon else None, arch, "reconstruction")
        if use_recog and self.recog_encoder is None or use_recon and self.recon_encoder is None:
            raise ConfigurationError(f"Distillation with teachers '{config.teachers}' is missing a teacher checkpoint.")
        logging.info("Distilling from teachers: %s", config.teachers)

    def _initialize_model(self):
        self.student = init_encoder(self.config.seed, self.arch)
        return {"encoder": (self.student.parameters(), self.config.encoder_lr)}

    def _compute_loss(self, batch):
        with torch.no_grad():
            recog_feats = self.recog_encoder(batch) if self.recog_encoder is not None else None
            recon_feats = self.recon_encoder(batch) if self.recon_encoder is not None else None
        weights = self.loss_weights.kd() if self.loss_weights else None
        return kd_total_loss(
            self.student(batch), recog_feats, recon_feats,
            self.recog_decoder, self.recon_decoder, weights,
        )

    def _snapshot(self, step):
        return snapshot(self.student, None, self.stage, step)


def distill(teacher_recog, teacher_recon, dataset, config, arch, output_dir=None, num_workers=0, loss_weights=None):
    """
    Distill the teachers into a new student encoder on real rainy images.

    Args:
        teacher_recog, teacher_recon: Checkpoints or paths; the one not named
            by config.teachers may be None.
        dataset: indexable rainy images.
        config (StageConfig): stage "distill".

    Returns:
        Checkpoint: student encoder only.

    Raises:
        ConfigurationError: a teacher's architecture differs from `arch`.
    """
    runner = DistillRunner(
        config, dataset, arch, teacher_recog, teacher_recon,
        output_dir=output_dir, num_workers=num_workers, loss_weights=loss_weights,
    )
    return runner.run_training()
