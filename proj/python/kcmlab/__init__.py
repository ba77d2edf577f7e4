"""Kinetically constrained models, contact processes and bootstrap percolation."""

import json as _json
import os as _os

from . import _kcmlab
from ._kcmlab import bp_closure, classify, experiment_kinds, lpp_passage_times, version, wilson_interval

__all__ = [
    "bp_closure",
    "classify",
    "config_hash",
    "experiment_kinds",
    "family",
    "load_config",
    "lpp_passage_times",
    "run",
    "summary",
    "validate_config",
    "verify",
    "version",
    "wilson_interval",
]


def family(spec):
    """Family as a dict {"dim": d, "rules": [...]} from "fa:j:d", "u0:d", a path or inline JSON."""
    return _json.loads(_kcmlab.family_json(spec))


def validate_config(config):
    """Validated config with defaults filled in. Raises ValueError naming the field path."""
    return _json.loads(_kcmlab.validate_config_json(_json.dumps(config)))


def load_config(path):
    return _json.loads(_kcmlab.load_config_json(_os.fspath(path)))


def config_hash(config):
    return _kcmlab.config_hash(_json.dumps(config))


def run(config, out_dir):
    """Runs an experiment into out_dir and returns its run record as a dict."""
    return _json.loads(_kcmlab.run_experiment_json(_json.dumps(config), _os.fspath(out_dir)))


def verify(manifest):
    """Re-checks a run from its manifest.json; returns a list of verdict dicts."""
    return _json.loads(_kcmlab.verify_manifest_json(_os.fspath(manifest)))


def summary(records):
    """Summary table (CSV text) over run records."""
    return _kcmlab.summary_csv([_json.dumps(r) for r in records])
