"""Cross-modality person re-identification (DF2 fusion + affinity modeling) at desk scale."""

import json

from . import _core
from ._core import (
    ConfigError,
    Error,
    IoError,
    NumericalError,
    affinity_matrix,
    batch_hard_triplet,
    cmc,
    ground_truth_affinity,
    gradient_suite,
    l1_affinity_loss,
    margin_affinity_loss,
    mean_ap,
)


def _text(config):
    if config is None:
        return ""
    return config if isinstance(config, str) else json.dumps(config)


def default_config():
    return json.loads(_core.default_config())


def lr_at(epoch, config=None):
    return _core.lr_at(epoch, _text(config))


def generate_dataset(path, config=None):
    return _core.generate_dataset(_text(config), str(path))


def train(config=None):
    return _core.train(_text(config))


def evaluate(checkpoint, config=None):
    return _core.evaluate(_text(config), str(checkpoint))


__all__ = [
    "ConfigError", "Error", "IoError", "NumericalError", "affinity_matrix", "batch_hard_triplet", "cmc",
    "default_config", "evaluate", "generate_dataset", "ground_truth_affinity", "gradient_suite",
    "l1_affinity_loss", "lr_at", "margin_affinity_loss", "mean_ap", "train",
]
