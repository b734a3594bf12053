"""Declarative run configuration: one YAML file describes one run.

Schema (version 1)::

    config_version: 1          # required, must equal 1
    seed: 0                    # master seed; model/training/synthetic
                               # seeds default to it
    output_dir: runs/demo      # required; artifacts land here
    data:                      # required
      source: synthetic       # "csv" or "synthetic"
      csv_path: data.csv      # required iff source == "csv"
      missing_policy: strict  # "strict" or "forward_fill" (csv only)
      synthetic:              # required iff source == "synthetic"
        kind: trend_seasonal  # one of data.SYNTHETIC_KINDS
        length: 4000
        channels: 7
        seed: 0               # defaults to the master seed
        params: {}            # generator-specific knobs
      split:                  # chronological ratios (weights)
        train: 7
        val: 1
        test: 2
    model:                    # optional; every key has a default
      input_len: 96
      pred_len: 24
      channels: null          # null -> inferred from the dataset
      d_model: 512
      n_heads: 8
      encoder_layers: 2
      decoder_layers: 1
      ffn_width: null         # null -> 4 * d_model
      projector_hidden: 128
      mode: both              # one of model.MODEL_MODES
      factor_pairing: main    # "main" or "appendix"
      denorm_mode: inverse    # "inverse" or "literal"
      epsilon: 1.0e-5
      dropout: 0.05
      seed: 0                 # defaults to the master seed
    training:                 # optional; every key has a default
      learning_rate: 1.0e-4
      batch_size: 32
      max_epochs: 10
      patience: 3
      loss_space: original    # "original" or "normalized"
      lr_decay: false
      seed: 0                 # defaults to the master seed

Unknown keys are rejected, and every validation message names the
offending field by its dotted path. YAML syntax errors cite the source
line and column.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import yaml

from .data import (
    MISSING_POLICIES,
    SYNTHETIC_KINDS,
    Dataset,
    SplitSpec,
    SyntheticSpec,
    generate_synthetic,
    load_csv,
)
from .errors import ConfigurationError
from .model import ModelConfig
from .training import TrainConfig

CONFIG_VERSION = 1

DATA_SOURCES = ("csv", "synthetic")

_MODEL_KEYS = (
    "input_len", "pred_len", "channels", "d_model", "n_heads",
    "encoder_layers", "decoder_layers", "ffn_width", "projector_hidden",
    "mode", "factor_pairing", "denorm_mode", "epsilon", "dropout", "seed",
)
_TRAINING_KEYS = (
    "learning_rate", "batch_size", "max_epochs", "patience", "loss_space",
    "lr_decay", "seed",
)


@dataclass
class DataConfig:
    """Where one run's series comes from and how it is split."""

    source: str
    csv_path: str | None = None
    missing_policy: str = "strict"
    synthetic: SyntheticSpec | None = None
    split: SplitSpec = field(default_factory=SplitSpec)


@dataclass
class RunConfig:
    """Fully validated description of one run.

    `model_fields` keeps `channels`/`ffn_width` possibly unresolved
    (None); `model_config` resolves them once the dataset is known.
    """

    config_version: int
    seed: int
    output_dir: str
    data: DataConfig
    model_fields: dict
    training: TrainConfig

    def model_config(self, channels, mode=None):
        """Build the ModelConfig for a dataset with `channels` variables."""
        fields = dict(self.model_fields)
        if fields.get("channels") is None:
            fields["channels"] = channels
        elif fields["channels"] != channels:
            raise ConfigurationError(
                f"model.channels: config says {fields['channels']} but the "
                f"dataset has {channels} variables"
            )
        if mode is not None:
            fields["mode"] = mode
        try:
            return ModelConfig(**fields)
        except ConfigurationError as exc:
            raise ConfigurationError(f"model: {exc}") from None


# ---- primitive field checks -------------------------------------------------------


def _as_mapping(value, path):
    if not isinstance(value, dict):
        raise ConfigurationError(
            f"{path}: expected a mapping, got {type(value).__name__}"
        )
    for key in value:
        if not isinstance(key, str):
            raise ConfigurationError(f"{path}: keys must be strings, got {key!r}")
    return value


def _reject_unknown(mapping, allowed, path):
    unknown = [k for k in mapping if k not in allowed]
    if unknown:
        raise ConfigurationError(
            f"{path}: unknown key {unknown[0]!r} (allowed: {', '.join(allowed)})"
        )


def _as_int(value, path):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError(
            f"{path}: expected an integer, got {value!r}"
        )
    return value


def _as_float(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _as_bool(value, path):
    if not isinstance(value, bool):
        raise ConfigurationError(f"{path}: expected true/false, got {value!r}")
    return value


def _as_str(value, path, choices=None):
    if not isinstance(value, str):
        raise ConfigurationError(f"{path}: expected a string, got {value!r}")
    if choices is not None and value not in choices:
        raise ConfigurationError(
            f"{path}: must be one of {', '.join(choices)}; got {value!r}"
        )
    return value


# ---- section parsers --------------------------------------------------------------


def _parse_split(mapping):
    mapping = _as_mapping(mapping, "data.split")
    _reject_unknown(mapping, ("train", "val", "test"), "data.split")
    ratios = {
        key: _as_float(mapping[key], f"data.split.{key}")
        for key in ("train", "val", "test") if key in mapping
    }
    try:
        return SplitSpec(**ratios)
    except ConfigurationError as exc:
        raise ConfigurationError(f"data.split: {exc}") from None


def _parse_synthetic(mapping, default_seed):
    mapping = _as_mapping(mapping, "data.synthetic")
    _reject_unknown(
        mapping, ("kind", "length", "channels", "seed", "params"), "data.synthetic"
    )
    for key in ("kind", "length"):
        if key not in mapping:
            raise ConfigurationError(f"data.synthetic.{key}: required")
    params = _as_mapping(mapping.get("params", {}), "data.synthetic.params")
    try:
        return SyntheticSpec(
            kind=_as_str(mapping["kind"], "data.synthetic.kind",
                         choices=SYNTHETIC_KINDS),
            length=_as_int(mapping["length"], "data.synthetic.length"),
            channels=_as_int(mapping.get("channels", 1),
                             "data.synthetic.channels"),
            seed=_as_int(mapping.get("seed", default_seed),
                         "data.synthetic.seed"),
            params=dict(params),
        )
    except ConfigurationError as exc:
        message = str(exc)
        if message.startswith("data.synthetic"):
            raise
        raise ConfigurationError(f"data.synthetic: {message}") from None


def _parse_data(mapping, default_seed):
    mapping = _as_mapping(mapping, "data")
    _reject_unknown(
        mapping,
        ("source", "csv_path", "missing_policy", "synthetic", "split"),
        "data",
    )
    if "source" not in mapping:
        raise ConfigurationError("data.source: required")
    source = _as_str(mapping["source"], "data.source", choices=DATA_SOURCES)

    csv_path = None
    synthetic = None
    if source == "csv":
        if "csv_path" not in mapping:
            raise ConfigurationError(
                "data.csv_path: required when data.source is 'csv'"
            )
        csv_path = _as_str(mapping["csv_path"], "data.csv_path")
        if "synthetic" in mapping:
            raise ConfigurationError(
                "data.synthetic: not allowed when data.source is 'csv'"
            )
    else:
        if "synthetic" not in mapping:
            raise ConfigurationError(
                "data.synthetic: required when data.source is 'synthetic'"
            )
        if "csv_path" in mapping:
            raise ConfigurationError(
                "data.csv_path: not allowed when data.source is 'synthetic'"
            )
        synthetic = _parse_synthetic(mapping["synthetic"], default_seed)

    policy = _as_str(
        mapping.get("missing_policy", "strict"), "data.missing_policy",
        choices=MISSING_POLICIES,
    )
    split = _parse_split(mapping.get("split", {"train": 7, "val": 1, "test": 2}))
    return DataConfig(
        source=source,
        csv_path=csv_path,
        missing_policy=policy,
        synthetic=synthetic,
        split=split,
    )


def _parse_model(mapping, default_seed):
    mapping = _as_mapping(mapping, "model")
    _reject_unknown(mapping, _MODEL_KEYS, "model")
    fields = {}
    for key in ("input_len", "pred_len", "d_model", "n_heads",
                "encoder_layers", "decoder_layers", "projector_hidden"):
        if key in mapping:
            fields[key] = _as_int(mapping[key], f"model.{key}")
    for key in ("channels", "ffn_width"):
        if key in mapping and mapping[key] is not None:
            fields[key] = _as_int(mapping[key], f"model.{key}")
        else:
            fields[key] = None
    for key, choices in (("mode", None), ("factor_pairing", None),
                         ("denorm_mode", None)):
        if key in mapping:
            fields[key] = _as_str(mapping[key], f"model.{key}", choices=choices)
    for key in ("epsilon", "dropout"):
        if key in mapping:
            fields[key] = _as_float(mapping[key], f"model.{key}")
    fields["seed"] = _as_int(mapping.get("seed", default_seed), "model.seed")

    # Probe-validate every field except the deferred channel count.
    probe = dict(fields)
    if probe["channels"] is None:
        probe["channels"] = 1
    try:
        ModelConfig(**probe)
    except ConfigurationError as exc:
        raise ConfigurationError(f"model: {exc}") from None
    return fields


def _parse_training(mapping, default_seed):
    mapping = _as_mapping(mapping, "training")
    _reject_unknown(mapping, _TRAINING_KEYS, "training")
    kwargs = {}
    if "learning_rate" in mapping:
        kwargs["learning_rate"] = _as_float(
            mapping["learning_rate"], "training.learning_rate")
    for key in ("batch_size", "max_epochs", "patience"):
        if key in mapping:
            kwargs[key] = _as_int(mapping[key], f"training.{key}")
    if "loss_space" in mapping:
        kwargs["loss_space"] = _as_str(mapping["loss_space"],
                                       "training.loss_space")
    if "lr_decay" in mapping:
        kwargs["lr_decay"] = _as_bool(mapping["lr_decay"], "training.lr_decay")
    kwargs["seed"] = _as_int(mapping.get("seed", default_seed), "training.seed")
    try:
        return TrainConfig(**kwargs)
    except ConfigurationError as exc:
        raise ConfigurationError(f"training: {exc}") from None


# ---- whole-file parsing -----------------------------------------------------------


def parse_run_config(mapping, source="<config>"):
    """Validate a raw mapping into a RunConfig; errors name dotted fields."""
    mapping = _as_mapping(mapping, source)
    _reject_unknown(
        mapping,
        ("config_version", "seed", "output_dir", "data", "model", "training"),
        source,
    )
    if "config_version" not in mapping:
        raise ConfigurationError("config_version: required")
    version = _as_int(mapping["config_version"], "config_version")
    if version != CONFIG_VERSION:
        raise ConfigurationError(
            f"config_version: expected {CONFIG_VERSION}, got {version}"
        )
    seed = _as_int(mapping.get("seed", 0), "seed")
    if "output_dir" not in mapping:
        raise ConfigurationError("output_dir: required")
    output_dir = _as_str(mapping["output_dir"], "output_dir")
    if "data" not in mapping:
        raise ConfigurationError("data: required")
    return RunConfig(
        config_version=version,
        seed=seed,
        output_dir=output_dir,
        data=_parse_data(mapping["data"], seed),
        model_fields=_parse_model(mapping.get("model", {}), seed),
        training=_parse_training(mapping.get("training", {}), seed),
    )


def load_yaml_mapping(path):
    """Read a YAML file into a mapping; syntax errors cite line/column."""
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    try:
        loaded = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigurationError(f"{where}: {problem}") from None
    if loaded is None:
        loaded = {}
    return _as_mapping(loaded, str(path))


def apply_override(mapping, assignment):
    """Apply one `dotted.path=value` override to a raw config mapping."""
    if "=" not in assignment:
        raise ConfigurationError(
            f"override {assignment!r} must look like key.path=value"
        )
    dotted, _, raw_value = assignment.partition("=")
    keys = [k for k in dotted.strip().split(".") if k]
    if not keys:
        raise ConfigurationError(f"override {assignment!r} has an empty key path")
    try:
        value = yaml.safe_load(raw_value)
    except yaml.YAMLError:
        raise ConfigurationError(
            f"override {assignment!r} has an unparseable value"
        ) from None
    node = mapping
    for key in keys[:-1]:
        child = node.get(key)
        if child is None:
            child = node[key] = {}
        elif not isinstance(child, dict):
            raise ConfigurationError(
                f"override {dotted!r}: {key!r} is not a mapping"
            )
        node = child
    node[keys[-1]] = value
    return mapping


def load_run_config(path, overrides=()):
    """Load + validate a YAML run config, applying --set style overrides."""
    mapping = load_yaml_mapping(path)
    for assignment in overrides:
        apply_override(mapping, assignment)
    return parse_run_config(mapping, source=os.fspath(path))


# ---- resolution and serialization -------------------------------------------------


def load_dataset(data_config):
    """Materialize the dataset a DataConfig describes."""
    if data_config.source == "csv":
        path = data_config.csv_path
        if not os.path.isfile(path):
            raise ConfigurationError(f"data.csv_path: file not found: {path}")
        return load_csv(path, missing_policy=data_config.missing_policy)
    return generate_synthetic(data_config.synthetic)


def config_mapping(run, model):
    """Serializable mapping of a run with every value resolved.

    `model` is the resolved ModelConfig (channels and ffn_width known);
    the emitted mapping reloads to an identical run.
    """
    data = {"source": run.data.source}
    if run.data.source == "csv":
        data["csv_path"] = run.data.csv_path
        data["missing_policy"] = run.data.missing_policy
    else:
        spec = run.data.synthetic
        data["synthetic"] = {
            "kind": spec.kind,
            "length": spec.length,
            "channels": spec.channels,
            "seed": spec.seed,
            "params": dict(spec.params),
        }
    data["split"] = {
        "train": run.data.split.train,
        "val": run.data.split.val,
        "test": run.data.split.test,
    }
    return {
        "config_version": run.config_version,
        "seed": run.seed,
        "output_dir": run.output_dir,
        "data": data,
        "model": {
            "input_len": model.input_len,
            "pred_len": model.pred_len,
            "channels": model.channels,
            "d_model": model.d_model,
            "n_heads": model.n_heads,
            "encoder_layers": model.encoder_layers,
            "decoder_layers": model.decoder_layers,
            "ffn_width": model.ffn_width,
            "projector_hidden": model.projector_hidden,
            "mode": model.mode,
            "factor_pairing": model.factor_pairing,
            "denorm_mode": model.denorm_mode,
            "epsilon": model.epsilon,
            "dropout": model.dropout,
            "seed": model.seed,
        },
        "training": {
            "learning_rate": run.training.learning_rate,
            "batch_size": run.training.batch_size,
            "max_epochs": run.training.max_epochs,
            "patience": run.training.patience,
            "loss_space": run.training.loss_space,
            "lr_decay": run.training.lr_decay,
            "seed": run.training.seed,
        },
    }


def dump_config(mapping, path):
    """Write a resolved config mapping as YAML."""
    with open(path, "w") as fh:
        yaml.safe_dump(mapping, fh, sort_keys=False)
