import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from tqdm import tqdm

from metrics.fidelity import psnr, ssim
from runners.inference import DerainModel, derain
from utils.errors import DerainError


logger = logging.getLogger(__name__)


@dataclass
class MetricReport:
    """
    Per-image metric rows plus row-level failures. Aggregates are computed
    from the rows; infinite PSNRs (identical images) are left out of the
    PSNR aggregate and counted under "psnr_inf".
    """

    rows: List[Tuple[str, str, float]] = field(default_factory=list)
    failures: List[Tuple[str, str]] = field(default_factory=list)

    def add(self, image_id, metric, value):
        self.rows.append((image_id, metric, float(value)))

    def values(self, metric):
        return [value for _, name, value in self.rows if name == metric]

    def aggregates(self):
        """{metric: (mean, std, count)} over finite values, population std."""
        result = {}
        for metric in dict.fromkeys(name for _, name, _ in self.rows):
            values = np.array(self.values(metric), dtype=np.float64)
            finite = values[np.isfinite(values)]
            if finite.size:
                result[metric] = (float(np.mean(finite)), float(np.std(finite)), int(finite.size))
            if finite.size < values.size:
                result[f"{metric}_inf"] = (float("inf"), 0.0, int(values.size - finite.size))
        return result

    def mean(self, metric):
        return self.aggregates()[metric][0]


def evaluate_dataset(model, samples, ids=None, tiling=False):
    """
    Derain every input and score it against its target with PSNR and SSIM.

    Args:
        model: DerainModel, Checkpoint, checkpoint path, or any callable
            mapping an image to an image.
        samples: indexable PairedSamples, scored in their order.
        ids (list of str): row ids; defaults to sample indices.

    Returns:
        MetricReport: failed images are recorded in `failures` and do not
        stop the run.
    """
    if callable(model):
        apply = model
    else:
        if not isinstance(model, DerainModel):
            model = DerainModel.from_checkpoint(model)

        def apply(img):
            return derain(model, img, tiling=tiling)

    if ids is None:
        ids = samples.ids() if hasattr(samples, "ids") else [str(i) for i in range(len(samples))]

    report = MetricReport()
    for image_id, index in tqdm(list(zip(ids, range(len(samples)))), desc="evaluate", leave=False):
        try:
            sample = samples[index]
            output = apply(sample.input)
            scores = {"psnr": psnr(output, sample.target), "ssim": ssim(output, sample.target)}
            for metric, value in scores.items():
                report.add(image_id, metric, value)
        except (DerainError, OSError, ValueError) as err:
            logger.warning("Evaluation failed for %s: %s", image_id, err)
            report.failures.append((image_id, str(err)))

    for metric, (mean, std, count) in report.aggregates().items():
        logger.info("%s: mean %.4f, std %.4f over %d images", metric, mean, std, count)
    return report
