"""
Teacher training: recognition (rainy vs rain-free) and reconstruction
(blurry -> clear). Each trains its own encoder and decoder from scratch; the
two stages share no state.
"""
import numpy as np
import torch

from derain_model.checkpoint import Checkpoint, load_checkpoint, snapshot
from derain_model.networks import init_decoder, init_encoder
from runners.stage_runner import StageRunner
from utils.losses import recog_loss, recon_loss
from utils.transforms import batch_to_tensor


class RecognitionRunner(StageRunner):
    stage = "recog"

    def _initialize_model(self):
        self.encoder = init_encoder(self.config.seed, self.arch)
        self.decoder = init_decoder(self.config.seed + 1, self.arch, "recognition")
        return {
            "encoder": (self.encoder.parameters(), self.config.encoder_lr),
            "decoder": (self.decoder.parameters(), self.config.decoder_lr),
        }

    def _compute_loss(self, batch):
        images, labels = batch
        return recog_loss(self.decoder(self.encoder(images)), labels)

    def _snapshot(self, step):
        return snapshot(self.encoder, self.decoder, self.stage, step)


class ReconstructionRunner(StageRunner):
    stage = "recon"

    def _initialize_model(self):
        self.encoder = init_encoder(self.config.seed, self.arch)
        self.decoder = init_decoder(self.config.seed + 1, self.arch, "reconstruction")
        return {
            "encoder": (self.encoder.parameters(), self.config.encoder_lr),
            "decoder": (self.decoder.parameters(), self.config.decoder_lr),
        }

    def _compute_loss(self, batch):
        inputs, targets = batch
        weights = self.loss_weights.recon() if self.loss_weights else None
        return recon_loss(self.decoder(self.encoder(inputs)), targets, weights)

    def _snapshot(self, step):
        return snapshot(self.encoder, self.decoder, self.stage, step)


def train_recognition(config, dataset, arch, output_dir=None, num_workers=0):
    """
    Train the recognition teacher (encoder + recognition decoder).

    Args:
        config (StageConfig): stage "recog".
        dataset: indexable LabeledSamples.
        arch (ArchitectureConfig): network shape.

    Returns:
        Checkpoint: best-loss weights.
    """
    return RecognitionRunner(config, dataset, arch, output_dir, num_workers).run_training()


def train_reconstruction(config, dataset, arch, output_dir=None, num_workers=0, loss_weights=None):
    """Train the reconstruction teacher on PairedSamples (blurry input, clear target)."""
    return ReconstructionRunner(config, dataset, arch, output_dir, num_workers, loss_weights).run_training()


def recognition_scores(checkpoint, images):
    """Recognition scores (near 1 = rain-free) of full images."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    encoder = checkpoint.build_encoder().eval()
    decoder = checkpoint.build_decoder().eval()
    with torch.no_grad():
        return np.array([float(decoder(encoder(batch_to_tensor([img])))[0]) for img in images])


def recognition_accuracy(checkpoint, samples, threshold=0.5):
    """Fraction of LabeledSamples whose thresholded score matches the label."""
    scores = recognition_scores(checkpoint, [s.image for s in samples])
    labels = np.array([s.label for s in samples])
    return float(np.mean((scores > threshold).astype(np.float64) == labels))
