"""Flat ``key = value`` experiment configuration files."""

from __future__ import annotations

import json
from dataclasses import replace

from .errors import ConfigError
from .orchestrator import ExperimentConfig


def _dims_list(text):
    """``"32;64;32,32"`` -> ``((32,), (64,), (32, 32))``."""
    out = []
    for arch in text.split(";"):
        arch = arch.strip()
        out.append(tuple(int(x) for x in arch.split(",") if x.strip()) if arch else ())
    return tuple(out)


def _dims(text):
    text = text.strip()
    return tuple(int(x) for x in text.split(",") if x.strip()) if text else ()


def _fmt_dims_list(v):
    return ";".join(",".join(str(d) for d in arch) for arch in v)


def _fmt_dims(v):
    return ",".join(str(d) for d in v)


def _str(text):
    return text.strip()


# key -> (attribute path, parser, formatter)
KEYS = {
    "method": (("method",), _str, str),
    "mode": (("mode",), _str, str),
    "schedule": (("schedule",), _str, str),
    "rounds": (("rounds",), int, str),
    "seed": (("seed",), int, str),
    "num_clients": (("partition", "num_clients"), int, str),
    "dataset": (("dataset", "kind"), _str, str),
    "dataset.num_classes": (("dataset", "num_classes"), int, str),
    "dataset.dim": (("dataset", "dim"), int, str),
    "dataset.n_per_class": (("dataset", "n_per_class"), int, str),
    "dataset.n_test_per_class": (("dataset", "n_test_per_class"), int, str),
    "dataset.separation": (("dataset", "separation"), float, repr),
    "dataset.noise": (("dataset", "noise"), float, repr),
    "dataset.train_images": (("dataset", "train_images"), _str, str),
    "dataset.train_labels": (("dataset", "train_labels"), _str, str),
    "dataset.test_images": (("dataset", "test_images"), _str, str),
    "dataset.test_labels": (("dataset", "test_labels"), _str, str),
    "dataset.idx_per_class": (("dataset", "idx_per_class"), int, str),
    "partition.mode": (("partition", "mode"), _str, str),
    "partition.beta": (("partition", "beta"), float, repr),
    "partition.proxy_fraction": (("partition", "proxy_fraction_per_class"), float, repr),
    "partition.validation_fraction": (("partition", "validation_fraction"), float, repr),
    "client_strategy": (("selector", "client_strategy"), _str, str),
    "tau_client": (("selector", "tau_client"), float, repr),
    "tau_server": (("selector", "tau_server"), float, repr),
    "confidence_cutoff": (("selector", "confidence_cutoff"), float, repr),
    "lr": (("train", "learning_rate"), float, repr),
    "pretrain_steps": (("train", "pretrain_steps"), int, str),
    "s_local": (("train", "local_steps"), int, str),
    "s_distill": (("train", "distill_steps"), int, str),
    "local_batch": (("train", "local_batch"), int, str),
    "distill_batch": (("train", "distill_batch"), int, str),
    "alpha": (("train", "alpha"), float, repr),
    "kulsif.beta": (("kulsif", "beta"), float, repr),
    "kulsif.margin": (("kulsif", "margin"), float, repr),
    "kulsif.background_ratio": (("kulsif", "background_ratio"), float, repr),
    "kulsif.sigma": (("kulsif", "sigma"), float, repr),
    "hidden_dims": (("hidden_dims",), _dims_list, _fmt_dims_list),
    "fedavg_hidden": (("fedavg_hidden",), _dims, _fmt_dims),
    "fedavg_weighting": (("fedavg_weighting",), _str, str),
}


def _get(obj, path):
    for name in path:
        obj = getattr(obj, name)
    return obj


def _set(obj, path, value):
    if len(path) == 1:
        return replace(obj, **{path[0]: value})
    return replace(obj, **{path[0]: _set(getattr(obj, path[0]), path[1:], value)})


def set_key(config, key, text, line=None):
    """Return ``config`` with ``key`` parsed from ``text``."""
    if key not in KEYS:
        raise ConfigError(f"unknown key {key!r}", line)
    path, parse, _ = KEYS[key]
    try:
        value = parse(text)
    except ValueError:
        raise ConfigError(f"bad value {text.strip()!r} for {key}", line) from None
    return _set(config, path, value)


def to_flat(config):
    """Every configurable key with its string value, in a stable order."""
    return {key: fmt(_get(config, path)) for key, (path, _, fmt) in KEYS.items()}


def parse_config_text(text):
    """Parse config text; returns ``(config, explicitly_set_keys)``."""
    config = ExperimentConfig()
    explicit = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key in explicit:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        config = set_key(config, key, value, lineno)
        explicit.append(key)
    return config, explicit


def load_config(path):
    """Read a key=value file or a ``manifest.json`` written by a prior run."""
    with open(path, encoding="utf-8") as f:
        text = f.read()
    if str(path).endswith(".json"):
        try:
            flat = json.loads(text)["config"]
        except (ValueError, KeyError, TypeError):
            raise ConfigError(f"{path}: not a run manifest") from None
        config = ExperimentConfig()
        for key, value in flat.items():
            config = set_key(config, key, str(value))
        return config, list(flat)
    return parse_config_text(text)


def parse_config(path):
    return load_config(path)[0]
