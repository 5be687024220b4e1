"""Parameter recovery: simulate from known values, refit, compare."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from socialpref.inference.fit import Posterior, hmc_fit
from socialpref.inference.hmc import HMCSettings
from socialpref.inference.model import ChoiceData, ModelSpec, Variant
from socialpref.io import frame_to_observations
from socialpref.synthetic import Design, PopulationSpec, SyntheticDataset, generate_synthetic


@dataclass
class RecoveryReport:
    table: pd.DataFrame
    posterior: Posterior
    dataset: SyntheticDataset

    def coverage(self, names=None) -> float:
        t = self.table if names is None else self.table[self.table.parameter.isin(names)]
        return float(t.covered.mean())


def coverage_table(posterior: Posterior, truth: dict[str, float], level: float = 0.9) -> pd.DataFrame:
    lo_q, hi_q = 50 * (1 - level), 50 * (1 + level)
    rows = []
    for name in posterior.population_names:
        if name not in truth:
            continue
        x = posterior.column(name)
        lo, hi = np.percentile(x, [lo_q, hi_q])
        rows.append((name, truth[name], x.mean(), lo, hi, x.mean() - truth[name], bool(lo <= truth[name] <= hi)))
    return pd.DataFrame(rows, columns=["parameter", "true", "mean", "lower", "upper", "bias", "covered"])


def recover(
    true_population: PopulationSpec, design: Design, seed: int, *,
    spec: ModelSpec | None = None, chains: int = 4, warmup: int = 500, draws: int = 500,
    workers: int = 1, settings: HMCSettings = HMCSettings(), level: float = 0.9,
) -> RecoveryReport:
    """Generate one dataset, fit it, and report bias and interval coverage.

    The data use stream ``seed``; the chains use ``seed + 1``.
    """
    spec = spec or ModelSpec.of(Variant.PBSI)
    ds = generate_synthetic(true_population, design, seed)
    data = ChoiceData.from_observations(frame_to_observations(ds.choices))
    post = hmc_fit(spec, data, chains=chains, warmup=warmup, draws=draws, seed=seed + 1,
                   workers=workers, settings=settings)
    table = coverage_table(post, true_population.fixed_effects(), level)
    return RecoveryReport(table=table, posterior=post, dataset=ds)
