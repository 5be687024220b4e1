"""Synthetic choice data that mimics the social-information experiment.

Each decision shows the focal individual how many of 5 uninfluenced peers
chose its intrinsically preferred alternative. Peers choose from intrinsic
preferences only (``f = 0``); the focal choice follows the full model.

Random streams (children of the master seed): ``0`` individual effects,
``1`` decisions (measured preferences, peers and focal choices).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit

from socialpref.choice import binary_logit
from socialpref.inference.model import PARAM_NAMES, TASKS, TREATMENTS
from socialpref.io import CHOICES_COLUMNS, PEER_SAMPLE

# population means (control treatment for f) reported for the two tasks
REFERENCE_MEANS = {
    "lambda": (2.89, 5.09),
    "f": (2.61, 1.22),
    "phi": (3.29, 1.98),
    "delta": (2.89, 2.36),
}


@dataclass(frozen=True)
class PopulationSpec:
    """Generating values of the hierarchical model.

    ``means[p][t]`` is the task-level fixed effect on the natural scale
    (for ``phi`` the median ``exp(Phi_t)``). ``treatment`` holds the
    additive reward and punishment offsets on ``f``.
    """

    means: dict = field(default_factory=lambda: {k: tuple(v) for k, v in REFERENCE_MEANS.items()})
    sigma: tuple[float, float, float, float] = (0.5, 0.5, 0.3, 0.5)
    corr: np.ndarray | None = None
    treatment: tuple[float, float] = (0.0, 0.0)

    def fixed_effects(self) -> dict[str, float]:
        """Generating values keyed like posterior parameter names."""
        out = {f"{p}[{t}]": float(self.means[p][k]) for p in PARAM_NAMES for k, t in enumerate(TASKS)}
        out["T[reward]"], out["T[punish]"] = map(float, self.treatment)
        for p, s in zip(PARAM_NAMES, self.sigma):
            out[f"sigma[{p}]"] = float(s)
        return out


@dataclass(frozen=True)
class Design:
    individuals: int = 120
    decisions_per_task: int = 10
    treatments: tuple[str, ...] = TREATMENTS


@dataclass(frozen=True)
class SyntheticDataset:
    choices: pd.DataFrame
    individual_params: pd.DataFrame


def generate_synthetic(population: PopulationSpec, design: Design, seed: int) -> SyntheticDataset:
    """Simulate a choices table; identical output for identical arguments.

    Individuals are assigned to treatments round-robin, so allocation is
    balanced. Measured preferences are Uniform[0, 1]; which raw alternative is
    preferred is a fair coin.
    """
    pop_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    dec_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    I = design.individuals
    sigma = np.asarray(population.sigma, dtype=float)
    omega = np.eye(4) if population.corr is None else np.asarray(population.corr, dtype=float)
    L = np.linalg.cholesky(omega)
    U = (pop_rng.standard_normal((I, 4)) @ L.T) * sigma
    treat = np.array([design.treatments[i % len(design.treatments)] for i in range(I)])
    t_off = {"control": 0.0, "reward": population.treatment[0], "punish": population.treatment[1]}

    rows, truth = [], []
    for k, task in enumerate(TASKS):
        lam_t, f_t, phi_t, delta_t = (population.means[p][k] for p in PARAM_NAMES)
        lam = lam_t + U[:, 0]
        f = f_t + np.array([t_off[c] for c in treat]) + U[:, 1]
        phi = phi_t * np.exp(U[:, 2])
        delta = delta_t + U[:, 3]
        for i in range(I):
            truth.append((f"s{i:03d}", task, treat[i], lam[i], f[i], phi[i], delta[i]))
        D = design.decisions_per_task
        gap = dec_rng.uniform(0.0, 1.0, (I, D))
        preferred = dec_rng.integers(0, 2, (I, D))
        # peers: own sensitivity, own signed preference for the focal's preferred option
        peer_lam = lam_t + sigma[0] * dec_rng.standard_normal((I, D, PEER_SAMPLE))
        peer_pref = dec_rng.uniform(-1.0, 1.0, (I, D, PEER_SAMPLE))
        peer_choice = dec_rng.random((I, D, PEER_SAMPLE)) < expit(peer_lam * peer_pref)
        n_pref = peer_choice.sum(axis=2)
        logit = binary_logit(lam[:, None], f[:, None], phi[:, None], delta[:, None], gap, n_pref, PEER_SAMPLE)
        chose = dec_rng.random((I, D)) < expit(logit)
        for i in range(I):
            for d in range(D):
                rows.append((f"s{i:03d}", task, treat[i], f"{task}-{d:02d}", float(gap[i, d]),
                             int(preferred[i, d]), int(n_pref[i, d]), int(chose[i, d])))
    choices = pd.DataFrame(rows, columns=list(CHOICES_COLUMNS))
    params = pd.DataFrame(truth, columns=["individual_id", "task", "treatment", "lambda", "f", "phi", "delta"])
    return SyntheticDataset(choices=choices, individual_params=params)
