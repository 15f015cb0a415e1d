from derain_model.checkpoint import Checkpoint, load_checkpoint, snapshot
from derain_model.networks import init_decoder, init_encoder
from runners.stage_runner import StageRunner
from utils.errors import ConfigurationError
from utils.losses import finetune_loss


class FinetuneRunner(StageRunner):
    """
    Attaches a fresh deraining decoder to the student encoder. The encoder
    adapts at the small encoder lr, the decoder learns at the larger one.
    """

    stage = "finetune"

    def __init__(self, config, samples, arch, student=None, **kwargs):
        super(FinetuneRunner, self).__init__(config, samples, arch, **kwargs)
        if not config.encoder_lr < config.decoder_lr:
            raise ConfigurationError(
                f"Fine-tuning needs encoder_lr < decoder_lr, got {config.encoder_lr} >= {config.decoder_lr}."
            )
        if student is not None and not isinstance(student, Checkpoint):
            student = load_checkpoint(student, expected_arch=arch)
        if student is not None and student.arch != arch:
            raise ConfigurationError("Student checkpoint architecture does not match the configured one.")
        self.student = student

    def _initialize_model(self):
        if self.student is None:
            # From-scratch variant: no distilled encoder.
            self.encoder = init_encoder(self.config.seed, self.arch)
        else:
            self.encoder = self.student.build_encoder()
        self.decoder = init_decoder(self.config.seed + 1, self.arch, "deraining")
        return {
            "encoder": (self.encoder.parameters(), self.config.encoder_lr),
            "decoder": (self.decoder.parameters(), self.config.decoder_lr),
        }

    def _compute_loss(self, batch):
        inputs, targets = batch
        weights = self.loss_weights.recon() if self.loss_weights else None
        return finetune_loss(self.decoder(self.encoder(inputs)), targets, weights)

    def _snapshot(self, step):
        return snapshot(self.encoder, self.decoder, self.stage, step)


def finetune(student, dataset, config, arch, output_dir=None, num_workers=0, loss_weights=None):
    """
    Fine-tune the distilled student with synthetic rainy/clean pairs.

    Args:
        student: Checkpoint or path of the distilled encoder; None trains
            from a fresh encoder.

    Returns:
        Checkpoint: encoder + deraining decoder.
    """
    runner = FinetuneRunner(
        config, dataset, arch, student,
        output_dir=output_dir, num_workers=num_workers, loss_weights=loss_weights,
    )
    return runner.run_training()
