"""
Ablation variants of the transfer pipeline, each fine-tuned and evaluated on
the same paired set:

* recog   - distilled from the recognition teacher only
* recon   - distilled from the reconstruction teacher only
* both    - distilled from both teachers
* scratch - no distillation, fine-tuning starts from a fresh encoder
"""
import logging
import os
from dataclasses import replace

from derain_model.checkpoint import load_checkpoint
from metrics.evaluation import evaluate_dataset
from runners.distill_runner import distill
from runners.finetune_runner import finetune
from utils import csv_writer
from utils.datasets import build_dataset
from utils.errors import ConfigurationError, MissingArtifactError


VARIANTS = ("recog", "recon", "both", "scratch")


def _teacher(config, stage):
    path = config.checkpoint_path(stage)
    if not os.path.isfile(path):
        raise MissingArtifactError(f"Ablation needs the {stage} teacher checkpoint: {path}", [path])
    return load_checkpoint(path, expected_arch=config.arch)


def run_ablation(config, variants=VARIANTS, datasets=None):
    """
    Run the selected variants on a PipelineConfig whose teachers are trained.

    Args:
        config (PipelineConfig): needs the distillation, finetune and
            evaluation datasets and the recog/recon best checkpoints.
        datasets (dict): optional prebuilt {name: samples}; built from the
            config otherwise.

    Returns:
        dict: {variant: MetricReport}.
    """
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise ConfigurationError(f"Unknown ablation variants {unknown}. Options: {', '.join(VARIANTS)}.")

    datasets = dict(datasets or {})
    for name in ("distillation", "finetune", "evaluation"):
        if name not in datasets:
            datasets[name] = build_dataset(config.dataset(name))

    needs = {t for v in variants for t in (("recog", "recon") if v == "both" else (v,)) if t != "scratch"}
    teachers = {stage: _teacher(config, stage) for stage in sorted(needs)}

    reports = {}
    for variant in variants:
        out_dir = os.path.join(config.output_dir, "ablation", variant)
        logging.info("Ablation variant '%s' -> %s", variant, out_dir)
        student = None
        if variant != "scratch":
            distill_config = replace(config.stage("distill"), teachers=variant)
            student = distill(
                teachers.get("recog"), teachers.get("recon"), datasets["distillation"], distill_config,
                config.arch, out_dir, config.num_workers, config.loss_weights,
            )
        model = finetune(
            student, datasets["finetune"], config.stage("finetune"), config.arch,
            out_dir, config.num_workers, config.loss_weights,
        )
        report = evaluate_dataset(model, datasets["evaluation"], tiling=config.tiling)
        csv_writer.write_report(report, os.path.join(out_dir, "metrics_report.csv"))
        reports[variant] = report

    summary = [
        [variant, metric, repr(mean)]
        for variant, report in reports.items()
        for metric, (mean, _, _) in report.aggregates().items()
    ]
    csv_writer.write_summary(summary, os.path.join(config.output_dir, "ablation", "summary.csv"))
    return reports
