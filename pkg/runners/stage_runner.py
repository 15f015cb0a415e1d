import logging
import os
import time

import numpy as np

from derain_model.checkpoint import save_checkpoint
from utils import csv_writer, plot_functions
from utils.optim import adam_step, apply_plateau, build_adam, current_lrs
from utils.datasets import batch_stream
from utils.utils import set_seed


class StageRunner:
    """
    Training loop shared by the four stages.

    Subclasses build their networks in `_initialize_model`, compute the stage
    loss in `_compute_loss` and say what a checkpoint holds in `_snapshot`.
    Every `plateau_interval` steps (and at the last step) the running mean of
    the step losses is evaluated: it drives the plateau decay and the
    best-loss checkpoint.
    """

    stage = None

    def __init__(self, config, samples, arch, output_dir=None, num_workers=0, loss_weights=None):
        if config.stage != self.stage:
            raise ValueError(f"{type(self).__name__} runs stage '{self.stage}', got config for '{config.stage}'.")
        self.config = config
        self.samples = samples
        self.arch = arch
        self.output_dir = output_dir
        self.num_workers = num_workers
        self.loss_weights = loss_weights

        self.loss_trace = []
        self.eval_history = []
        self.optimizer = None

    def __print_values(self):
        logging.info(f"STAGE: {self.stage}")
        logging.info(f"ENCODER_LR: {self.config.encoder_lr}")
        logging.info(f"DECODER_LR: {self.config.decoder_lr}")
        logging.info(f"BATCH_SIZE: {self.config.batch_size}")
        logging.info(f"CROP_SIZE: {self.config.crop_size}")
        logging.info(f"MAX_STEPS: {self.config.max_steps}")
        logging.info(f"PLATEAU: every {self.config.plateau_interval} steps, patience {self.config.plateau_patience}, "
                     f"factor {self.config.decay_factor}")

    def _initialize_model(self):
        """Build the networks; returns {group name: (parameters, lr)}."""
        raise NotImplementedError

    def _compute_loss(self, batch):
        raise NotImplementedError

    def _snapshot(self, step):
        raise NotImplementedError

    def _path(self, *parts):
        return os.path.join(self.output_dir, *parts)

    def run_training(self):
        """
        Train for config.max_steps steps.

        Returns:
            Checkpoint: weights at the best evaluated running-mean loss; the
            initialization when max_steps is 0.
        """
        max_steps = self.config.require_steps()
        self.__print_values()
        set_seed(self.config.seed)

        param_groups = self._initialize_model()
        self.optimizer = build_adam(param_groups)
        best = self._snapshot(0)
        best_loss = float("inf")
        latest = best

        if max_steps > 0:
            stream = batch_stream(
                self.samples, self.config.batch_size, self.config.crop_size, self.config.seed, self.num_workers
            )
            window = []
            log_rows = []
            for step in range(1, max_steps + 1):
                loss = self._compute_loss(next(stream))
                lrs = current_lrs(self.optimizer)
                loss.backward()
                adam_step(self.optimizer)

                value = loss.value
                self.loss_trace.append((step, value))
                window.append(value)
                wall = time.time()
                log_rows.append([wall, self.stage, step, "total", value, csv_writer.format_lrs(lrs)])
                for term, term_value in loss.breakdown().items():
                    log_rows.append([wall, self.stage, step, term, term_value, csv_writer.format_lrs(lrs)])

                if step % self.config.plateau_interval == 0 or step == max_steps:
                    mean = float(np.mean(window))
                    window = []
                    self.eval_history.append((step, mean))
                    logging.info(f"{self.stage} step {step} - running loss: {mean:.6f} - {loss.breakdown()}")
                    if mean < best_loss:
                        best_loss = mean
                        best = self._snapshot(step)
                        logging.debug(f"New best {self.stage} loss {mean:.6f} at step {step}")
                    apply_plateau(
                        self.optimizer,
                        [v for _, v in self.eval_history],
                        self.config.plateau_patience,
                        self.config.decay_factor,
                    )
                    if self.output_dir:
                        csv_writer.append_training_log(log_rows, self._path("logs", "training_log.csv"))
                    log_rows = []
            latest = self._snapshot(max_steps)

        logging.info(f"Best {self.stage} loss {best_loss} at step {best.step}")
        if self.output_dir:
            save_checkpoint(best, self._path("checkpoints", f"{self.stage}_best.safetensors"))
            save_checkpoint(latest, self._path("checkpoints", f"{self.stage}_final.safetensors"))
            if self.loss_trace:
                steps, values = zip(*self.loss_trace)
                plot_functions.plot_loss(steps, values, self._path("plots", f"{self.stage}_loss.png"), self.stage)
        return best
