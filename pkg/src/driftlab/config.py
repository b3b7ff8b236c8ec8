"""Experiment configuration: INI files with three section kinds.

::

    [experiment]
    output_dir = results
    seeds = 0 1 2

    [dataset]
    source = synthetic          ; synthetic | digits | idx | csv
    n_classes = 10
    per_class = 100
    dim = 16
    spread = 0.15
    n_tasks = 5
    test_fraction = 0.2

    [method E-FT+SDC]
    method = E-FT               ; defaults to the section label
    sdc = true

Every unknown section or key is an error that names the offender.
``DRIFTLAB_SEED_OVERRIDE`` in the environment replaces the seeds list;
it exists for CI and is the only environment hook.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset, gen_gaussian_clusters, read_csv_dataset, read_idx
from .harness import MethodConfig, TaskSequence, split_tasks

SEED_ENV = "DRIFTLAB_SEED_OVERRIDE"

EXPERIMENT_KEYS = {"output_dir", "seeds"}
DATASET_KEYS = {
    "source", "n_classes", "per_class", "dim", "spread",
    "n_tasks", "first_task_fraction", "test_fraction", "pretrain_classes",
    "images", "labels", "test_images", "test_labels", "path",
}
SOURCES = ("synthetic", "digits", "idx", "csv")
METHOD_KEYS = {
    "method", "sdc", "gamma", "sigma", "margin", "lr", "epochs", "batch_size",
    "embedding_dim", "hidden", "mining", "renormalize_prototypes",
    "importance_mode", "fisher_variant", "weight_floor",
}
_REQUIRED_BY_SOURCE = {"idx": ("images", "labels"), "csv": ("path",)}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    output_dir: str
    seeds: list
    dataset: dict
    methods: list = field(default_factory=list)  # [(label, kwargs), ...]


def _parse_value(section, key, raw, kind):
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(
            f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}"
        ) from None


def _parse_int_list(section, key, raw):
    parts = raw.replace(",", " ").split()
    if not parts:
        raise ConfigError(f"[{section}] {key} must list at least one integer")
    return [_parse_value(section, key, p, int) for p in parts]


_METHOD_TYPES = {
    "sdc": bool, "gamma": float, "sigma": float, "margin": float, "lr": float,
    "epochs": int, "batch_size": int, "embedding_dim": int,
    "renormalize_prototypes": bool, "weight_floor": float,
    "method": str, "mining": str, "importance_mode": str, "fisher_variant": str,
}

_DATASET_TYPES = {
    "source": str, "n_classes": int, "per_class": int, "dim": int,
    "spread": float, "n_tasks": int, "first_task_fraction": float,
    "test_fraction": float, "pretrain_classes": int,
    "images": str, "labels": str, "test_images": str, "test_labels": str,
    "path": str,
}


def load_config(path: str) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # keep key case as written
    try:
        parser.read(path)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {path}: {e}") from None

    for required in ("experiment", "dataset"):
        if required not in parser:
            raise ConfigError(f"missing [{required}] section")

    exp = parser["experiment"]
    for key in exp:
        if key not in EXPERIMENT_KEYS:
            raise ConfigError(f"unknown key {key!r} in [experiment]")
    if "seeds" not in exp:
        raise ConfigError("[experiment] needs a seeds list")
    seeds = _parse_int_list("experiment", "seeds", exp["seeds"])
    if SEED_ENV in os.environ:
        seeds = _parse_int_list("environment", SEED_ENV, os.environ[SEED_ENV])
    output_dir = exp.get("output_dir", "results")

    ds = parser["dataset"]
    dataset = {}
    for key in ds:
        if key not in DATASET_KEYS:
            raise ConfigError(f"unknown key {key!r} in [dataset]")
        dataset[key] = _parse_value("dataset", key, ds[key], _DATASET_TYPES[key])
    source = dataset.setdefault("source", "synthetic")
    if source not in SOURCES:
        raise ConfigError(f"[dataset] source must be one of {SOURCES}, "
                          f"got {source!r}")
    for key in _REQUIRED_BY_SOURCE.get(source, ()):
        if key not in dataset:
            raise ConfigError(f"[dataset] source = {source} needs the {key!r} key")
    dataset.setdefault("n_tasks", 2)

    methods = []
    for name in parser.sections():
        if name in ("experiment", "dataset"):
            continue
        if not name.startswith("method "):
            raise ConfigError(f"unknown section [{name}]")
        label = name[len("method "):].strip()
        if not label:
            raise ConfigError("method section needs a label: [method NAME]")
        kwargs = {}
        for key in parser[name]:
            if key not in METHOD_KEYS:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            if key == "hidden":
                kwargs["hidden"] = tuple(
                    _parse_int_list(name, "hidden", parser[name][key]))
            else:
                kwargs[key] = _parse_value(name, key, parser[name][key],
                                           _METHOD_TYPES[key])
        kwargs.setdefault("method", label)
        try:  # surface bad method names/values as config errors, not at run time
            MethodConfig(**kwargs)
        except ValueError as e:
            raise ConfigError(f"[{name}]: {e}") from None
        if any(lab == label for lab, _ in methods):
            raise ConfigError(f"duplicate method label {label!r}")
        methods.append((label, kwargs))

    if not methods:
        raise ConfigError("config defines no [method ...] sections")
    return ExperimentConfig(output_dir=output_dir, seeds=seeds,
                            dataset=dataset, methods=methods)


def _load_source(dataset: dict, seed: int) -> tuple:
    """Returns (train, test-or-None) before any task splitting."""
    source = dataset["source"]
    if source == "synthetic":
        train = gen_gaussian_clusters(
            dataset.get("n_classes", 10), dataset.get("per_class", 100),
            dataset.get("dim", 16), dataset.get("spread", 0.15), seed=seed,
        )
        return train, None
    if source == "digits":
        try:
            from sklearn.datasets import load_digits
        except ImportError:
            raise ConfigError(
                "source = digits needs scikit-learn (pip install driftlab[digits])"
            ) from None
        bunch = load_digits()
        feats = bunch.data.astype(np.float64) / 16.0  # pixel range 0..16
        return LabeledDataset(feats, bunch.target.astype(np.int64)), None
    if source == "idx":
        train = read_idx(dataset["images"], dataset["labels"])
        test = None
        if "test_images" in dataset:
            if "test_labels" not in dataset:
                raise ConfigError("test_images given without test_labels")
            test = read_idx(dataset["test_images"], dataset["test_labels"])
        return train, test
    train = read_csv_dataset(dataset["path"])
    return train, None


def build_sequence(dataset: dict, seed: int):
    """Realize a dataset section into (TaskSequence, pretrain data or None).

    ``pretrain_classes`` reserves the highest class ids for pretraining,
    independent of the seed, so every replicate pretrains on the same
    held-out classes and splits the rest.
    """
    train, test = _load_source(dataset, seed)
    pretrain = None
    n_pre = dataset.get("pretrain_classes", 0)
    if n_pre:
        classes = np.unique(train.labels)
        if n_pre >= len(classes):
            raise ConfigError(f"pretrain_classes = {n_pre} leaves no task classes")
        reserved = classes[-n_pre:]
        held = np.isin(train.labels, reserved)
        pretrain = train.subset(held)
        train = train.subset(~held)
        if test is not None:
            test = test.subset(~np.isin(test.labels, reserved))
    try:
        seq = split_tasks(
            train, dataset.get("n_tasks", 2),
            first_task_fraction=dataset.get("first_task_fraction"),
            seed=seed, test=test,
            test_fraction=dataset.get("test_fraction", 0.2),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    return seq, pretrain
