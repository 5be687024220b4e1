"""Run configuration: a YAML document merged over documented defaults.

Sections and keys (defaults in parentheses):

``sim``   population (50), periods (100), sample_size (5), target (0),
          belief_rule (per-period-reset), mean_pref (1.0), pref_sd (1.0),
          lam (1.0), f (1.0), phi (1.0), delta (0.0)
``grid``  mean_min (0), mean_max (4), mean_step (0.1), f_min (-2), f_max (2),
          f_step (0.1), phis ([1, 5, 20]), deltas ([0, 0.5, 1]), population (50),
          periods (50), replications (50), sample_size (5), pref_sd (1),
          minority_every (5), minority_pref (-4)
``fit``   model (pbsi), chains (4), warmup (500), draws (500), target_accept (0.8),
          integration_time (2.0), max_leapfrog (512), init_radius (1.0)
``gen``   individuals (120), decisions_per_task (10), lambda/f/phi/delta
          (per-task means [quest, paint]), sigma ([0.5, 0.5, 0.3, 0.5]),
          treatment ([0, 0] reward/punish offsets on f)
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from socialpref.dynamics import ConfigError
from socialpref.synthetic import REFERENCE_MEANS

DEFAULTS = {
    "sim": {
        "population": 50, "periods": 100, "sample_size": 5, "target": 0,
        "belief_rule": "per-period-reset", "mean_pref": 1.0, "pref_sd": 1.0,
        "lam": 1.0, "f": 1.0, "phi": 1.0, "delta": 0.0,
    },
    "grid": {
        "mean_min": 0.0, "mean_max": 4.0, "mean_step": 0.1,
        "f_min": -2.0, "f_max": 2.0, "f_step": 0.1,
        "phis": [1.0, 5.0, 20.0], "deltas": [0.0, 0.5, 1.0],
        "population": 50, "periods": 50, "replications": 50, "sample_size": 5,
        "pref_sd": 1.0, "minority_every": 5, "minority_pref": -4.0,
    },
    "fit": {
        "model": "pbsi", "chains": 4, "warmup": 500, "draws": 500, "target_accept": 0.8,
        "integration_time": 2.0, "max_leapfrog": 512, "init_radius": 1.0,
    },
    "gen": {
        "individuals": 120, "decisions_per_task": 10,
        **{k: list(v) for k, v in REFERENCE_MEANS.items()},
        "sigma": [0.5, 0.5, 0.3, 0.5], "treatment": [0.0, 0.0],
    },
}


def merge(overrides: dict | None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    for section, values in (overrides or {}).items():
        if section not in cfg:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        for key, v in values.items():
            if key not in cfg[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            cfg[section][key] = v
    return cfg


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return merge(None)
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return merge(doc)
