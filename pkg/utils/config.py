"""
Pipeline configuration: a YAML file with one section per module.

    seed: 0
    output_dir: runs
    imagedata:
      num_workers: 0
      recognition: {source_paths: [data/recog], balance: false}
      reconstruction: {source_paths: [data/clear], blur_sigma: 1.5, blur_radius: 5}
      distillation: {source_paths: [data/real_rainy]}
      finetune: {source_paths: [data/synthetic]}
      evaluation: {source_paths: [data/test]}
    netblocks: {depth: 9, base_channels: 32, downsampling: 4, heads: 4, ffn_expansion: 4}
    losses: {pixel: 1.0, gradient: 1.0, kdd: 1.0, kdi: 1.0}
    trainflow:
      tiling: false
      recog: {encoder_lr: 0.0004, decoder_lr: 0.0004, batch_size: 8, crop_size: 256, max_steps: 20000}
      finetune: {encoder_lr: 0.00004, decoder_lr: 0.0004}
    metrics: {niqe_patch_size: 96, tsne_perplexity: 30.0, tsne_iterations: 1000, thumbnail_side: 32}

Precedence: command-line overrides > file values > defaults.
"""
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, Optional, Union, get_args, get_origin

import yaml

from derain_model.networks import ArchitectureConfig
from utils.datasets import DatasetSpec
from utils.errors import ConfigurationError
from utils.transforms import DEFAULT_BLUR_RADIUS, DEFAULT_BLUR_SIGMA


OUTPUT_ROOT_ENV = "DERAIN_OUTPUT_ROOT"
STAGES = ("recog", "recon", "distill", "finetune")
TEACHER_CHOICES = ("both", "recog", "recon")

# Training defaults for every stage: 256x256 crops, Adam at 4e-4 halved on
# plateaus; fine-tuning runs the encoder ten times slower than the decoder.
DEFAULT_LR = 0.0004
FINETUNE_ENCODER_LR = 0.00004
DATASET_SECTIONS = {
    "recognition": "recognition",
    "reconstruction": "reconstruction",
    "distillation": "distillation",
    "finetune": "finetune",
    "evaluation": "finetune",
}


@dataclass(frozen=True)
class StageConfig:
    stage: str
    encoder_lr: float = DEFAULT_LR
    decoder_lr: float = DEFAULT_LR
    batch_size: int = 8
    crop_size: int = 256
    max_steps: Optional[int] = None
    plateau_patience: int = 5
    plateau_interval: int = 100
    decay_factor: float = 0.5
    seed: int = 0
    teachers: str = "both"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigurationError(f"Unknown stage '{self.stage}'. Options: {', '.join(STAGES)}.")
        if self.stage == "finetune":
            if self.encoder_lr < 0:
                raise ConfigurationError("encoder_lr must be non-negative.")
            if self.encoder_lr >= self.decoder_lr:
                raise ConfigurationError(
                    f"Fine-tuning needs encoder_lr < decoder_lr (encoder adapts slowly, decoder learns "
                    f"fast); got {self.encoder_lr} >= {self.decoder_lr}."
                )
        elif self.encoder_lr <= 0 or self.decoder_lr <= 0:
            raise ConfigurationError("Learning rates must be positive.")
        for name in ("batch_size", "crop_size", "plateau_patience", "plateau_interval"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1.")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigurationError("max_steps must be >= 0.")
        if not 0.0 < self.decay_factor < 1.0:
            raise ConfigurationError("decay_factor must lie in (0, 1).")
        if self.teachers not in TEACHER_CHOICES:
            raise ConfigurationError(f"teachers must be one of {', '.join(TEACHER_CHOICES)}.")

    def require_steps(self):
        if self.max_steps is None:
            raise ConfigurationError(f"trainflow.{self.stage}.max_steps is required to train.")
        return self.max_steps


@dataclass(frozen=True)
class LossWeights:
    pixel: float = 1.0
    gradient: float = 1.0
    kdd: float = 1.0
    kdi: float = 1.0

    def recon(self):
        return {"pixel": self.pixel, "gradient": self.gradient}

    def kd(self):
        return {"kdd": self.kdd, "kdi": self.kdi}


@dataclass(frozen=True)
class MetricsConfig:
    niqe_patch_size: int = 96
    tsne_perplexity: float = 30.0
    tsne_iterations: int = 1000
    thumbnail_side: int = 32
    seed: int = 0


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    output_dir: str = "runs"
    num_workers: int = 0
    datasets: Dict[str, DatasetSpec] = field(default_factory=dict)
    arch: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    stages: Dict[str, StageConfig] = field(default_factory=dict)
    tiling: bool = False
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def stage(self, name):
        return self.stages[name]

    def dataset(self, name):
        if name not in self.datasets:
            raise ConfigurationError(f"imagedata.{name} is not configured.")
        return self.datasets[name]

    def checkpoint_path(self, stage, suffix="best"):
        return os.path.join(self.output_dir, "checkpoints", f"{stage}_{suffix}.safetensors")


class _Reader:
    """Typed access to a parsed mapping with key paths and YAML line numbers."""

    def __init__(self, lines):
        self.lines = lines

    def error(self, path, message):
        line = self.lines.get(path)
        where = f" (line {line})" if line else ""
        return ConfigurationError(f"{'.'.join(path)}{where}: {message}")

    def section(self, data, path, allowed):
        if data is None:
            return {}
        if not isinstance(data, dict):
            raise self.error(path, "expected a mapping.")
        for key in data:
            if key not in allowed:
                raise self.error(path + (str(key),), f"unknown key. Allowed: {', '.join(sorted(allowed))}.")
        return data

    def typed(self, data, path, key, kind, default):
        if key not in data:
            return default
        value = data[key]
        full = path + (key,)
        if value is None and default is None:
            return None
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise self.error(full, f"expected a number, got {value!r}.")
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise self.error(full, f"expected an integer, got {value!r}.")
            return value
        if kind is bool:
            if not isinstance(value, bool):
                raise self.error(full, f"expected true/false, got {value!r}.")
            return value
        if kind is list:
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise self.error(full, "expected a list of paths.")
            return list(value)
        if value is not None and not isinstance(value, str):
            raise self.error(full, f"expected a string, got {value!r}.")
        return value

    def build(self, path, factory, **kwargs):
        try:
            return factory(**kwargs)
        except ConfigurationError as err:
            raise self.error(path, str(err)) from err


def _line_index(node, prefix=(), lines=None):
    lines = {} if lines is None else lines
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = prefix + (str(key_node.value),)
            lines[path] = key_node.start_mark.line + 1
            _line_index(value_node, path, lines)
    return lines


def _field_types(cls, exclude=()):
    types = {}
    for f in fields(cls):
        if f.name in exclude:
            continue
        kind = f.type
        if get_origin(kind) is Union:
            kind = next(arg for arg in get_args(kind) if arg is not type(None))
        types[f.name] = kind
    return types


def _parse_datasets(reader, raw, global_seed):
    section = reader.section(raw, ("imagedata",), set(DATASET_SECTIONS) | {"num_workers"})
    num_workers = reader.typed(section, ("imagedata",), "num_workers", int, 0)
    datasets = {}
    for name, role in DATASET_SECTIONS.items():
        if name not in section:
            continue
        path = ("imagedata", name)
        allowed = {"source_paths", "seed", "balance", "blur_sigma", "blur_radius"}
        entry = reader.section(section[name], path, allowed)
        sigma = reader.typed(entry, path, "blur_sigma", float, None)
        radius = reader.typed(entry, path, "blur_radius", int, None)
        if role == "reconstruction":
            sigma = DEFAULT_BLUR_SIGMA if sigma is None else sigma
            radius = DEFAULT_BLUR_RADIUS if radius is None else radius
        sources = reader.typed(entry, path, "source_paths", list, [])
        for i, source in enumerate(sources):
            if not os.path.isdir(source):
                raise reader.error(path + ("source_paths",), f"directory does not exist: {source}")
        datasets[name] = reader.build(
            path, DatasetSpec,
            role=role,
            source_paths=sources,
            blur_sigma=sigma,
            blur_radius=radius,
            seed=reader.typed(entry, path, "seed", int, global_seed),
            balance=reader.typed(entry, path, "balance", bool, False),
        )
    return datasets, num_workers


def _parse_stages(reader, raw, global_seed):
    section = reader.section(raw, ("trainflow",), set(STAGES) | {"tiling"})
    tiling = reader.typed(section, ("trainflow",), "tiling", bool, False)
    types = _field_types(StageConfig, exclude=("stage",))
    stages = {}
    for stage in STAGES:
        path = ("trainflow", stage)
        entry = reader.section(section.get(stage), path, set(types))
        defaults = StageConfig(stage=stage, encoder_lr=FINETUNE_ENCODER_LR if stage == "finetune" else DEFAULT_LR)
        values = {
            name: reader.typed(entry, path, name, kind, getattr(defaults, name))
            for name, kind in types.items()
        }
        if "seed" not in entry:
            values["seed"] = global_seed
        stages[stage] = reader.build(path, StageConfig, stage=stage, **values)
    return stages, tiling


def _parse_flat(reader, raw, path, cls):
    types = _field_types(cls)
    entry = reader.section(raw, path, set(types))
    defaults = cls()
    values = {name: reader.typed(entry, path, name, kind, getattr(defaults, name)) for name, kind in types.items()}
    return reader.build(path, cls, **values)


def parse_config(text, environ=None):
    """Parse YAML text into a validated PipelineConfig."""
    environ = os.environ if environ is None else environ
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigurationError(f"Invalid YAML: {err}") from err

    reader = _Reader(_line_index(node) if node is not None else {})
    top = reader.section(raw, (), {"seed", "output_dir", "imagedata", "netblocks", "losses", "trainflow", "metrics"})

    seed = reader.typed(top, (), "seed", int, 0)
    output_dir = reader.typed(top, (), "output_dir", str, "runs")
    if environ.get(OUTPUT_ROOT_ENV):
        output_dir = environ[OUTPUT_ROOT_ENV]

    datasets, num_workers = _parse_datasets(reader, top.get("imagedata"), seed)
    stages, tiling = _parse_stages(reader, top.get("trainflow"), seed)

    return PipelineConfig(
        seed=seed,
        output_dir=output_dir,
        num_workers=num_workers,
        datasets=datasets,
        arch=_parse_flat(reader, top.get("netblocks"), ("netblocks",), ArchitectureConfig),
        loss_weights=_parse_flat(reader, top.get("losses"), ("losses",), LossWeights),
        stages=stages,
        tiling=tiling,
        metrics=_parse_flat(reader, top.get("metrics"), ("metrics",), MetricsConfig),
    )


def load_config(path, environ=None):
    """
    Load, default and validate a pipeline config file, then echo the resolved
    configuration to the log.
    """
    if not os.path.isfile(path):
        raise ConfigurationError(f"Config file not found: {path}")
    with open(path, encoding="UTF8") as f:
        config = parse_config(f.read(), environ)
    logging.info("Resolved configuration:\n%s", dump_config(config))
    return config


def config_to_dict(config):
    datasets = {}
    for name, spec in config.datasets.items():
        entry = {"source_paths": list(spec.source_paths), "seed": spec.seed}
        if spec.role == "recognition":
            entry["balance"] = spec.balance
        if spec.role == "reconstruction":
            entry["blur_sigma"] = spec.blur_sigma
            entry["blur_radius"] = spec.blur_radius
        datasets[name] = entry

    stages = {}
    for name, stage in config.stages.items():
        values = asdict(stage)
        values.pop("stage")
        stages[name] = values

    return {
        "seed": config.seed,
        "output_dir": config.output_dir,
        "imagedata": {"num_workers": config.num_workers, **datasets},
        "netblocks": asdict(config.arch),
        "losses": asdict(config.loss_weights),
        "trainflow": {"tiling": config.tiling, **stages},
        "metrics": asdict(config.metrics),
    }


def dump_config(config):
    """Resolved config as YAML; parse_config(dump_config(c)) == c."""
    return yaml.safe_dump(config_to_dict(config), sort_keys=False)


def with_stage_overrides(config, stage, **overrides):
    """Copy of config with some StageConfig fields replaced (None values ignored)."""
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if not overrides:
        return config
    stages = dict(config.stages)
    stages[stage] = replace(stages[stage], **overrides)
    return replace(config, stages=stages)
