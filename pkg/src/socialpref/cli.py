"""Command-line interface.

Every stochastic command requires ``--seed``; all randomness is derived from
it. Outputs are CSV files with headers.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from socialpref import io
from socialpref.choice import AgentParams, ModelDomainError
from socialpref.config import ConfigError, load_config
from socialpref.dynamics import (
    BeliefRule, GridConfig, PopulationMember, SimConfig, _steps, fixed_points, grid_run,
    response_curve, simulate,
)
from socialpref.inference.fit import (
    aggregate_fit, hmc_fit, individual_fit, posterior_frame, read_posterior, summarize,
    summary_from_frame, table1, waic, waic_frame,
)
from socialpref.inference.hmc import HMCSettings
from socialpref.inference.model import ChoiceData, ModelSpec, NonFiniteDensity
from socialpref.inference.recover import recover
from socialpref.measurement import SchemaError, make_schedule, subject_deltas, validate_schedule
from socialpref.synthetic import Design, PopulationSpec, generate_synthetic

log = logging.getLogger("socialpref")


def _settings(cfg) -> HMCSettings:
    f = cfg["fit"]
    return HMCSettings(
        target_accept=float(f["target_accept"]), integration_time=float(f["integration_time"]),
        max_leapfrog=int(f["max_leapfrog"]), init_radius=float(f["init_radius"]),
    )


def _population_spec(cfg, treatment=None) -> PopulationSpec:
    g = cfg["gen"]
    means = {p: tuple(float(v) for v in g[p]) for p in ("lambda", "f", "phi", "delta")}
    return PopulationSpec(
        means=means, sigma=tuple(float(s) for s in g["sigma"]),
        treatment=tuple(float(t) for t in (treatment if treatment is not None else g["treatment"])),
    )


def _design(cfg, args) -> Design:
    g = cfg["gen"]
    return Design(
        individuals=args.individuals if args.individuals is not None else int(g["individuals"]),
        decisions_per_task=args.decisions if args.decisions is not None else int(g["decisions_per_task"]),
    )


def _fit_args(cfg, args):
    f = cfg["fit"]
    return dict(
        chains=args.chains if args.chains is not None else int(f["chains"]),
        warmup=args.warmup if args.warmup is not None else int(f["warmup"]),
        draws=args.draws if args.draws is not None else int(f["draws"]),
    )


def _write_fit_outputs(post, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    io.write_table(posterior_frame(post), out / "posterior.csv")
    summ = summarize(post)
    io.write_table(summ, out / "summary.csv")
    t1 = table1(summ)
    t1.columns = [f"{p}[{t}]" for p, t in t1.columns]
    io.write_table(t1.reset_index(names="statistic"), out / "table1.csv")
    io.write_table(waic_frame(waic(post.loglik), post.spec.variant.value, post.n_draws), out / "waic.csv")
    io.write_table(individual_fit(post), out / "fit_individual.csv")
    io.write_table(aggregate_fit(post), out / "fit_aggregate.csv")


# ------------------------------------------------------------- commands


def cmd_gen(args, cfg):
    ds = generate_synthetic(_population_spec(cfg, args.treatment_effects), _design(cfg, args), args.seed)
    io.write_choices(ds.choices, args.out)
    if args.truth_out:
        io.write_table(ds.individual_params, args.truth_out)


def cmd_fit(args, cfg):
    model = args.model or cfg["fit"]["model"]
    spec = ModelSpec.of(model)
    data = ChoiceData.from_observations(io.parse_choices(args.data))
    post = hmc_fit(spec, data, seed=args.seed, workers=args.workers, settings=_settings(cfg), **_fit_args(cfg, args))
    _write_fit_outputs(post, Path(args.out))
    if not post.reliable:
        log.error("fit flagged unreliable: %d divergent transitions", post.divergences)
        return 1
    return 0


def cmd_waic(args, cfg):
    spec = ModelSpec.of(args.model)
    data = ChoiceData.from_observations(io.parse_choices(args.data))
    post = read_posterior(args.posterior, spec, data)
    io.write_table(waic_frame(waic(post.loglik), spec.variant.value, post.n_draws), args.out)


def cmd_summarize(args, cfg):
    df = io.read_table(args.posterior, ("draw", "chain", "parameter", "value"))
    summ = summary_from_frame(df, percentiles=tuple(args.percentiles))
    io.write_table(summ, args.out)


def cmd_recover(args, cfg):
    spec = ModelSpec.of(args.model or cfg["fit"]["model"])
    rep = recover(
        _population_spec(cfg, args.treatment_effects), _design(cfg, args), args.seed, spec=spec,
        workers=args.workers, settings=_settings(cfg), **_fit_args(cfg, args),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_table(rep.table, out / "recovery.csv")
    io.write_choices(rep.dataset.choices, out / "choices.csv")
    _write_fit_outputs(rep.posterior, out)


def cmd_schedule(args, cfg):
    sched = make_schedule(args.seed)
    if not validate_schedule(sched, range(1, 7)):
        raise RuntimeError("generated schedule failed validation")
    io.write_table(io.schedule_frame(sched), args.out)


def cmd_deltas(args, cfg):
    records = io.read_sliders(args.sliders)
    groups: dict[tuple[str, str], list] = {}
    for r in records:
        groups.setdefault((r.group_id, r.subject_id), []).append(r)
    est = []
    for (g, s), recs in groups.items():
        est += [(g, s, e) for e in subject_deltas(recs)]
    io.write_table(io.deltas_frame(est), args.out)


def cmd_curve(args, cfg):
    params = AgentParams(lam=args.lam, f=args.f, phi=1.0, delta=0.0)
    nu = (args.gap / 2.0, -args.gap / 2.0)
    s = np.linspace(0.0, 1.0, args.points + 2)[1:-1]
    p = response_curve(params, nu, s)
    io.write_table(pd.DataFrame({"share": s, "prob": p}), args.out)
    if args.fixed_out:
        fps = fixed_points(params, nu, tol=args.tol)
        io.write_table(
            pd.DataFrame([(fp.location, fp.slope, fp.stability) for fp in fps],
                         columns=["location", "slope", "stability"]),
            args.fixed_out,
        )


def cmd_simulate(args, cfg):
    sc = cfg["sim"]
    periods = args.periods if args.periods is not None else int(sc["periods"])
    rule = BeliefRule(sc["belief_rule"])
    if args.population:
        pop_df = io.read_table(args.population, ("lambda", "f", "phi", "delta", "pref"))
        members = [
            PopulationMember(AgentParams(r["lambda"], r["f"], r["phi"], r["delta"]), (r["pref"] / 2, -r["pref"] / 2))
            for _, r in pop_df.iterrows()
        ]
    else:
        rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(1,)))
        prefs = rng.normal(float(sc["mean_pref"]), float(sc["pref_sd"]), int(sc["population"]))
        params = AgentParams(float(sc["lam"]), float(sc["f"]), float(sc["phi"]), float(sc["delta"]))
        members = [PopulationMember(params, (p / 2, -p / 2)) for p in prefs]
    conf = SimConfig(periods=periods, seed=args.seed, sample_size=int(sc["sample_size"]),
                     target=int(sc["target"]), belief_rule=rule)
    traj = simulate(members, conf)
    io.write_table(pd.DataFrame({"period": np.arange(periods), "share": traj.shares}), args.out)


def cmd_grid(args, cfg):
    g = cfg["grid"]
    grid = GridConfig(
        mean_prefs=_steps(float(g["mean_min"]), float(g["mean_max"]), float(g["mean_step"])),
        fs=_steps(float(g["f_min"]), float(g["f_max"]), float(g["f_step"])),
        phis=tuple(float(x) for x in g["phis"]), deltas=tuple(float(x) for x in g["deltas"]),
        population=int(g["population"]), periods=int(g["periods"]),
        replications=args.replications if args.replications is not None else int(g["replications"]),
        sample_size=int(g["sample_size"]), pref_sd=float(g["pref_sd"]),
        minority=args.minority, minority_every=int(g["minority_every"]),
        minority_pref=float(g["minority_pref"]), seed=args.seed,
    )
    res = grid_run(grid, workers=args.workers)
    io.write_table(res.table, args.out)


# --------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="socialpref", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="YAML run configuration merged over defaults")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def seeded(sp):
        sp.add_argument("--seed", type=int, required=True)

    def gen_flags(sp):
        sp.add_argument("--individuals", type=int)
        sp.add_argument("--decisions", type=int, help="decisions per task")
        sp.add_argument("--treatment-effects", type=float, nargs=2, metavar=("REWARD", "PUNISH"))

    def fit_flags(sp):
        sp.add_argument("--model", choices=["pbsi", "psi", "p", "si"])
        sp.add_argument("--chains", type=int)
        sp.add_argument("--warmup", type=int)
        sp.add_argument("--draws", type=int)
        sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("gen", help="generate a synthetic choices.csv")
    seeded(sp)
    gen_flags(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--truth-out", help="also write generating individual parameters")
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("fit", help="fit a hierarchical model with HMC")
    seeded(sp)
    fit_flags(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("waic", help="WAIC of a stored posterior")
    sp.add_argument("--model", required=True, choices=["pbsi", "psi", "p", "si"])
    sp.add_argument("--posterior", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_waic)

    sp = sub.add_parser("summarize", help="posterior means and percentiles")
    sp.add_argument("--posterior", required=True)
    sp.add_argument("--percentiles", type=float, nargs="+", default=[5, 95])
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_summarize)

    sp = sub.add_parser("recover", help="simulate, refit and report coverage")
    seeded(sp)
    gen_flags(sp)
    fit_flags(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_recover)

    sp = sub.add_parser("schedule", help="random valid six-subject schedule")
    seeded(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_schedule)

    sp = sub.add_parser("deltas", help="preference estimates from slider ratings")
    sp.add_argument("--sliders", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_deltas)

    sp = sub.add_parser("curve", help="response curve and its fixed points")
    sp.add_argument("--lam", type=float, required=True)
    sp.add_argument("--f", type=float, required=True)
    sp.add_argument("--gap", type=float, default=0.0, help="intrinsic utility gap nu_1 - nu_2")
    sp.add_argument("--points", type=int, default=99)
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.add_argument("--out", required=True)
    sp.add_argument("--fixed-out")
    sp.set_defaults(func=cmd_curve)

    sp = sub.add_parser("simulate", help="population choice dynamics")
    seeded(sp)
    sp.add_argument("--population", help="CSV with lambda,f,phi,delta,pref per member")
    sp.add_argument("--periods", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("grid", help="conformity simulation grid over preferences and f")
    seeded(sp)
    sp.add_argument("--minority", action="store_true")
    sp.add_argument("--replications", type=int)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_grid)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        status = args.func(args, cfg)
    except (ConfigError, SchemaError, ModelDomainError, NonFiniteDensity, ValueError, RuntimeError, OSError) as exc:
        log.error("%s", exc)
        return 1
    return int(status or 0)


if __name__ == "__main__":
    sys.exit(main())
