import argparse
import logging
import os
import sys
import time
from dataclasses import asdict, replace

from derain_model.checkpoint import load_checkpoint, read_metadata
from derain_model.networks import parameter_count
from metrics.evaluation import evaluate_dataset
from metrics.niqe import niqe_fit, niqe_score
from metrics.tsne import MIN_PERPLEXITY, tsne_embed
from runners.ablation import VARIANTS, run_ablation
from runners.distill_runner import distill
from runners.finetune_runner import finetune
from runners.inference import DerainModel, derain
from runners.teacher_runners import train_recognition, train_reconstruction
from utils import csv_writer, plot_functions
from utils.config import STAGES, TEACHER_CHOICES, dump_config, load_config, parse_config, with_stage_overrides
from utils.datasets import DatasetSpec, PairedSample, build_dataset
from utils.errors import ConfigurationError, DerainError, MissingArtifactError
from utils.image_io import list_images, load_image, save_image
from utils.transforms import thumbnail_features
from utils.utils import write_provenance


EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MISSING = 2
EXIT_RUNTIME = 3

STAGE_DATASETS = {
    "recog": "recognition",
    "recon": "reconstruction",
    "distill": "distillation",
    "finetune": "finetune",
}


class CliParser(argparse.ArgumentParser):
    """Usage errors exit with the configuration status."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def parse_args(argv=None):
    """Parse command-line arguments."""
    parser = CliParser(description="Task-transfer deraining pipeline.")
    parser.add_argument("-d", "--debug", action="store_true", help="Enable debug logging.")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="Train one pipeline stage.")
    train.add_argument("stage", choices=STAGES)
    train.add_argument("-c", "--config", type=str, default=None, help="YAML pipeline config.")
    train.add_argument("--max-steps", type=int, default=None, help="Override trainflow.<stage>.max_steps.")
    train.add_argument("--seed", type=int, default=None, help="Override trainflow.<stage>.seed.")
    train.add_argument("--teachers", choices=TEACHER_CHOICES, default=None, help="Teachers used by distill.")
    train.add_argument("--from-scratch", action="store_true", help="finetune a fresh encoder (no distillation).")
    train.add_argument("-o", "--output-dir", type=str, default=None, help="Override output_dir.")
    train.set_defaults(func=cmd_train)

    run = sub.add_parser("derain", help="Derain an image or a directory of images.")
    run.add_argument("checkpoint", type=str)
    run.add_argument("input", type=str, help="Image file or directory.")
    run.add_argument("output", type=str, help="Output directory.")
    run.add_argument("--tiling", action="store_true", help="Overlapping 256x256 tiles; any image size.")
    run.set_defaults(func=cmd_derain)

    evaluate = sub.add_parser("evaluate", help="PSNR/SSIM of a deraining checkpoint on a paired dataset.")
    evaluate.add_argument("checkpoint", type=str)
    source = evaluate.add_mutually_exclusive_group()
    source.add_argument("--data", type=str, default=None, help="Root with input/ and gt/ subdirectories.")
    source.add_argument("--identity", type=str, default=None, help="Clear images used as both input and target.")
    evaluate.add_argument("-c", "--config", type=str, default=None, help="Uses imagedata.evaluation without --data.")
    evaluate.add_argument("--report", type=str, default="logs/metrics_report.csv")
    evaluate.add_argument("--tiling", action="store_true")
    evaluate.set_defaults(func=cmd_evaluate)

    analyze = sub.add_parser("analyze", help="NIQE or t-SNE analysis of image corpora.")
    analyze.add_argument("kind", choices=("niqe", "tsne"))
    analyze.add_argument("--corpus", action="append", default=[], metavar="NAME=DIR", help="Repeatable.")
    analyze.add_argument("--pristine", type=str, default=None, help="Clear corpus for the NIQE model.")
    analyze.add_argument("--patch-size", type=int, default=None)
    analyze.add_argument("--perplexity", type=float, default=None)
    analyze.add_argument("--iterations", type=int, default=None)
    analyze.add_argument("--seed", type=int, default=None)
    analyze.add_argument("-c", "--config", type=str, default=None)
    analyze.add_argument("-o", "--output", type=str, default="analysis")
    analyze.set_defaults(func=cmd_analyze)

    inspect = sub.add_parser("inspect-checkpoint", help="Print a checkpoint's architecture and stage.")
    inspect.add_argument("checkpoint", type=str)
    inspect.set_defaults(func=cmd_inspect)

    ablate = sub.add_parser("ablate", help="Teacher ablation: distill, finetune and evaluate each variant.")
    ablate.add_argument("-c", "--config", type=str, required=True)
    ablate.add_argument("--variants", nargs="+", choices=VARIANTS, default=list(VARIANTS))
    ablate.set_defaults(func=cmd_ablate)

    return parser.parse_args(argv)


def configure_logging(debug: bool):
    """Configure the logging settings."""
    log_level = logging.DEBUG if debug else logging.INFO
    logging.basicConfig(
        format="%(asctime)s %(levelname)-8s %(message)s",
        level=log_level,
        datefmt="%Y-%m-%d %H:%M:%S",
    )


def _config(path):
    return load_config(path) if path else parse_config("")


def _require(paths, stage):
    missing = [p for p in paths if not os.path.isfile(p)]
    if missing:
        raise MissingArtifactError(
            f"Stage '{stage}' needs checkpoint(s) that do not exist: {', '.join(missing)}", missing
        )


def cmd_train(args):
    config = _config(args.config)
    if args.output_dir:
        config = replace(config, output_dir=args.output_dir)
    config = with_stage_overrides(config, args.stage, max_steps=args.max_steps, seed=args.seed, teachers=args.teachers)
    stage = config.stage(args.stage)
    stage.require_steps()

    if args.stage == "distill":
        teachers = {"recog": config.checkpoint_path("recog"), "recon": config.checkpoint_path("recon")}
        needed = [teachers[t] for t in ("recog", "recon") if stage.teachers in ("both", t)]
        _require(needed, "distill")
    if args.stage == "finetune" and not args.from_scratch:
        _require([config.checkpoint_path("distill")], "finetune")

    samples = build_dataset(config.dataset(STAGE_DATASETS[args.stage]))
    write_provenance(
        config.output_dir, f"train {args.stage}", dump_config(config),
        seeds={"global": config.seed, args.stage: stage.seed}, filename=f"provenance_{args.stage}.json",
    )
    common = dict(output_dir=config.output_dir, num_workers=config.num_workers)

    if args.stage == "recog":
        result = train_recognition(stage, samples, config.arch, **common)
    elif args.stage == "recon":
        result = train_reconstruction(stage, samples, config.arch, loss_weights=config.loss_weights, **common)
    elif args.stage == "distill":
        use = stage.teachers
        result = distill(
            teachers["recog"] if use in ("both", "recog") else None,
            teachers["recon"] if use in ("both", "recon") else None,
            samples, stage, config.arch, loss_weights=config.loss_weights, **common,
        )
    else:
        student = None if args.from_scratch else config.checkpoint_path("distill")
        result = finetune(student, samples, stage, config.arch, loss_weights=config.loss_weights, **common)

    logging.info("Stage %s finished; best checkpoint from step %d.", args.stage, result.step)
    return EXIT_OK


def _inputs(path):
    if os.path.isdir(path):
        return [os.path.join(path, name) for name in list_images(path)]
    if os.path.isfile(path):
        return [path]
    raise ConfigurationError(f"Input does not exist: {path}")


def cmd_derain(args):
    model = DerainModel.from_checkpoint(args.checkpoint)
    inputs = _inputs(args.input)
    write_provenance(args.output, "derain", extra={"checkpoint": args.checkpoint, "tiling": args.tiling})

    failed = []
    for path in inputs:
        name = os.path.splitext(os.path.basename(path))[0] + ".png"
        start = time.time()
        try:
            out = derain(model, load_image(path), tiling=args.tiling)
            save_image(out, os.path.join(args.output, name))
        except (DerainError, OSError, ValueError) as err:
            logging.error("Failed to derain %s: %s", path, err)
            failed.append(path)
            continue
        logging.info("%s derained in %.3f s", os.path.basename(path), time.time() - start)

    if failed:
        logging.error("%d of %d images failed: %s", len(failed), len(inputs), ", ".join(failed))
        return EXIT_RUNTIME
    return EXIT_OK


def identity_samples(directory):
    """Clear images paired with themselves, sorted by file name."""
    if not os.path.isdir(directory):
        raise ConfigurationError(f"Identity directory does not exist: {directory}")
    names = list_images(directory)
    samples = []
    for name in names:
        img = load_image(os.path.join(directory, name))
        samples.append(PairedSample(img, img))
    return samples, names


def cmd_evaluate(args):
    if args.identity:
        samples, ids = identity_samples(args.identity)
    else:
        if args.data:
            spec = DatasetSpec(role="finetune", source_paths=[args.data])
        else:
            spec = _config(args.config).dataset("evaluation")
        samples = build_dataset(spec)
        ids = samples.ids()

    report = evaluate_dataset(args.checkpoint, samples, ids=ids, tiling=args.tiling)
    csv_writer.write_report(report, args.report)
    write_provenance(
        os.path.dirname(args.report) or ".", "evaluate",
        extra={"checkpoint": args.checkpoint, "report": args.report},
    )
    logging.info("Report written to %s (%d rows, %d failures).", args.report, len(report.rows), len(report.failures))
    return EXIT_RUNTIME if report.failures else EXIT_OK


def _corpora(specs):
    if not specs:
        raise ConfigurationError("At least one --corpus NAME=DIR is required.")
    corpora = {}
    for spec in specs:
        name, sep, directory = spec.partition("=")
        if not sep or not name:
            raise ConfigurationError(f"Corpus must be given as NAME=DIR, got '{spec}'.")
        if not os.path.isdir(directory):
            raise ConfigurationError(f"Corpus directory does not exist: {directory}")
        names = list_images(directory)
        if not names:
            raise ConfigurationError(f"Corpus '{name}' has no images: {directory}")
        corpora[name] = [(n, os.path.join(directory, n)) for n in names]
    return corpora


def cmd_analyze(args):
    settings = _config(args.config).metrics
    corpora = _corpora(args.corpus)
    write_provenance(args.output, f"analyze {args.kind}", extra={"corpora": args.corpus})

    if args.kind == "niqe":
        if not args.pristine:
            raise ConfigurationError("NIQE analysis needs --pristine DIR to fit the model.")
        patch_size = args.patch_size or settings.niqe_patch_size
        if not os.path.isdir(args.pristine):
            raise ConfigurationError(f"Pristine corpus directory does not exist: {args.pristine}")
        pristine = [load_image(os.path.join(args.pristine, n)) for n in list_images(args.pristine)]
        model = niqe_fit(pristine, patch_size)

        rows, failed = [], 0
        for group, entries in corpora.items():
            scores = []
            for name, path in entries:
                try:
                    score = niqe_score(load_image(path), model)
                except DerainError as err:
                    logging.error("NIQE failed for %s: %s", path, err)
                    failed += 1
                    continue
                scores.append(score)
                rows.append([name, group, repr(score)])
            plot_functions.plot_niqe_histogram({group: scores}, os.path.join(args.output, f"niqe_{group}.png"))
        csv_writer.write_scores(rows, os.path.join(args.output, "niqe_scores.csv"))
        return EXIT_RUNTIME if failed else EXIT_OK

    ids, groups, features = [], [], []
    for group, entries in corpora.items():
        for name, path in entries:
            ids.append(name)
            groups.append(group)
            features.append(thumbnail_features(load_image(path), settings.thumbnail_side))

    count = len(features)
    if args.perplexity is not None:
        perplexity, check = args.perplexity, True
    else:
        # Small corpora get the largest perplexity they support.
        perplexity = min(settings.tsne_perplexity, (count - 1) / 3.0)
        check = perplexity >= MIN_PERPLEXITY
    result = tsne_embed(
        features, perplexity,
        args.iterations or settings.tsne_iterations,
        settings.seed if args.seed is None else args.seed,
        check=check,
    )
    csv_writer.write_embeddings(ids, result.embedding, groups, os.path.join(args.output, "tsne_embedding.csv"))
    plot_functions.plot_tsne(result.embedding, groups, os.path.join(args.output, "tsne_plot.png"))
    return EXIT_OK


def cmd_inspect(args):
    metadata = read_metadata(args.checkpoint)
    checkpoint = load_checkpoint(args.checkpoint)
    print(f"checkpoint: {args.checkpoint}")
    print(f"format_version: {metadata.get('format_version')}")
    print(f"stage: {checkpoint.stage}")
    print(f"step: {checkpoint.step}")
    for key, value in asdict(checkpoint.arch).items():
        print(f"{key}: {value}")
    print(f"encoder_parameters: {parameter_count(checkpoint.build_encoder())}")
    if checkpoint.decoder_kind:
        print(f"decoder: {checkpoint.decoder_kind}")
        print(f"decoder_parameters: {parameter_count(checkpoint.build_decoder())}")
    return EXIT_OK


def cmd_ablate(args):
    config = load_config(args.config)
    write_provenance(config.output_dir, "ablate", dump_config(config), seeds={"global": config.seed})
    reports = run_ablation(config, args.variants)
    for variant, report in reports.items():
        logging.info("%s: %s", variant, report.aggregates())
    return EXIT_OK


def main(argv=None):
    args = parse_args(argv)
    configure_logging(args.debug)

    try:
        return args.func(args)
    except ConfigurationError as err:
        logging.error("Configuration error: %s", err)
        return EXIT_CONFIG
    except MissingArtifactError as err:
        logging.error("Missing artifact: %s", err)
        return EXIT_MISSING
    except (DerainError, OSError, ValueError, RuntimeError) as err:
        logging.error("Runtime failure: %s", err)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
