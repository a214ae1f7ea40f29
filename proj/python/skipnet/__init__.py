"""Fully convolutional CTC speech recognition with skip connections."""

import json as _json

from ._skipnet import (  # noqa: F401
    AcousticModel,
    Alphabet,
    ConfigError,
    ContractError,
    DecoderConfig,
    DimensionError,
    Error,
    FormatError,
    InfeasibleError,
    LanguageModel,
    NonFiniteError,
    ctc_brute_force,
    ctc_collapse,
    ctc_loss,
    edit_distance,
    error_rates,
    exhaustive_decode,
    gradient_suites,
    greedy_decode,
    prefix_beam_search,
    read_wav,
)
from . import _skipnet


def load_config(path="", overrides=()):
    """Resolved run configuration as a dict."""
    return _json.loads(_skipnet.resolve_config(str(path), list(overrides)))


def _dump(config):
    return config if isinstance(config, str) else _json.dumps(config)


def model(config=None):
    return AcousticModel(_json.dumps(config or {}))


def compute_features(samples, sample_rate=16000, params=None):
    return _skipnet.compute_features(samples, sample_rate, _json.dumps(params or {}))


def lr_at(epoch, **train):
    return _skipnet.lr_at(_json.dumps(train), epoch)


def synth_data(config, out_dir):
    _skipnet.run_synth(_dump(config), str(out_dir))


def train_lm(config, corpus, out_dir):
    return _skipnet.run_lm_train(_dump(config), str(corpus), str(out_dir))


def train(config, out_dir):
    return _skipnet.run_train(_dump(config), str(out_dir))


def decode(config, manifest, out_dir, greedy=False):
    return _skipnet.run_decode(_dump(config), str(manifest), str(out_dir), greedy)


def compare_variants(config, out_dir):
    return _skipnet.run_all_variants(_dump(config), str(out_dir))
