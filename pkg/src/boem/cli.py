"""Command-line entry point: ``boem fit|predict|validate|diagnose``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 MCMC failure,
5 diagnostic failure (some monitored hyperparameter has R-hat > 1.1).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from .datasets import EXAMPLE_REFERENCE_RATE
from .diagnostics import chain_rhat, ess, field_diagnostics, parameter_summary
from .forecast import annual_aggregate, ppd_from_samples, rates, summarize
from .io import (
    DIAGNOSTICS_HEADER,
    EXCESS_ANNUAL_HEADER,
    EXCESS_HEADER,
    EXCESS_TOTAL_HEADER,
    GEN_TRUTH_HEADER,
    METRICS_HEADER,
    SCALAR_PARAMS,
    SUMMARY_HEADER,
    ConfigError,
    DataError,
    DrawsFile,
    RunConfig,
    load_config,
    read_adjacency,
    read_counts,
    read_draws,
    read_population,
    write_draws,
    write_table,
    write_traces,
)
from .mcmc import McmcConfig, McmcError, run_chains
from .model import HyperPriors, ObservationPanel, Offsets, compute_offsets, month_years
from .simulate import GenConfig, metrics_rows, run_validation

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_MCMC, EXIT_DIAGNOSTIC = 0, 2, 3, 4, 5
RHAT_LIMIT = 1.1
AREA_CHUNK = 16

log = logging.getLogger("boem")


class DiagnosticFailure(RuntimeError):
    pass


def _require(cfg: RunConfig, *names):
    for name in names:
        p = cfg.path(name)
        if p is None:
            raise ConfigError(f"missing setting: {name}")
        if not p.is_file():
            raise ConfigError(f"{name} file not found: {p}")


def load_inputs(cfg: RunConfig):
    """Population (which fixes area order), adjacency graph and training panel."""
    _require(cfg, "population", "adjacency", "counts")
    ids, pop = read_population(cfg.path("population"), cfg.anchor_year, cfg.anchor_month, cfg.n_months_total)
    graph = read_adjacency(cfg.path("adjacency"), ids)
    deaths = read_counts(cfg.path("counts"), ids, 1, cfg.n_months_train)
    panel = ObservationPanel(
        area_ids=ids,
        deaths=deaths.astype(np.int64),
        population=pop,
        n_months_train=cfg.n_months_train,
        n_months_total=cfg.n_months_total,
        anchor_year=cfg.anchor_year,
        anchor_month=cfg.anchor_month,
    )
    return panel, graph


def mcmc_config(cfg: RunConfig) -> McmcConfig:
    return McmcConfig(
        n_chains=cfg.n_chains,
        n_iterations=cfg.n_iterations,
        n_burnin=cfg.n_burnin,
        thin=cfg.thin,
        seed=cfg.seed,
        adapt_target=cfg.adapt_target,
        adapt_window=cfg.adapt_window,
        n_jobs=cfg.n_jobs,
    )


def priors(cfg: RunConfig) -> HyperPriors:
    return HyperPriors(cfg.scale_alpha, cfg.scale_v, cfg.scale_u, cfg.scale_kappa, cfg.scale_omega)


def summary_rows(draws: DrawsFile) -> list[dict]:
    return [{"parameter": name, **parameter_summary(draws.column(name))} for name in SCALAR_PARAMS]


def diagnostics_rows(draws: DrawsFile) -> list[dict]:
    acc = draws.meta.get("acceptance", [])

    def mean_acc(key):
        vals = [a[key] for a in acc if key in a and a[key] is not None and not math.isnan(a[key])]
        return float(np.mean(vals)) if vals else math.nan

    rows = []
    for name in SCALAR_PARAMS:
        x = draws.by_chain(name)
        rows.append({"parameter": name, "rhat": chain_rhat(x), "ess": ess(x),
                     "acceptance": math.nan if name == "rho" else mean_acc(name)})
    if not draws.meta.get("compact"):
        s = draws.samples()
        for name in ("u", "v", "kappa", "omega"):
            r, e = field_diagnostics(getattr(s, name))
            rows.append({"parameter": f"{name} (worst element)", "rhat": r, "ess": e, "acceptance": mean_acc(name)})
    return rows


def failing_rhat(rows) -> list[str]:
    monitored = set(SCALAR_PARAMS)
    return [r["parameter"] for r in rows if r["parameter"] in monitored and r["rhat"] > RHAT_LIMIT]


def print_summary(rows, stream=None):
    stream = stream or sys.stdout
    stream.write(f"{'':12s}{'Mean':>10s}{'SD':>10s}{'95% lower':>11s}{'Median':>10s}{'95% upper':>11s}\n")
    for r in rows:
        vals = [r[k] for k in SUMMARY_HEADER[1:]]
        if all(math.isnan(v) for v in vals):
            stream.write(f"{r['parameter']:12s}{'n/a':>10s}\n")
            continue
        stream.write(f"{r['parameter']:12s}" + "".join(f"{v:>10.3f} " for v in vals).rstrip() + "\n")


# --- commands ---


def cmd_fit(cfg: RunConfig) -> int:
    panel, graph = load_inputs(cfg)
    offsets = compute_offsets(panel)
    mc = mcmc_config(cfg)
    log.info("fitting %d areas x %d months: %d chains x %d iterations", panel.n_areas, panel.n_months_train,
             mc.n_chains, mc.n_iterations)
    t0 = time.time()
    samples = run_chains(panel, offsets, graph, priors(cfg), mc)
    log.info("sampling took %.1f s, %d draws saved", time.time() - t0, samples.n_chains * samples.n_draws)
    out = Path(cfg.path("out_dir"))
    draws_path = cfg.path("draws") or out / "draws.npz"
    write_draws(draws_path, samples, offsets.reference_rate, compact=cfg.compact)
    draws = read_draws(draws_path)
    rows = summary_rows(draws)
    write_table(out / "summary.csv", rows, SUMMARY_HEADER)
    diag = diagnostics_rows(draws)
    write_table(out / "diagnostics.csv", diag, DIAGNOSTICS_HEADER)
    print_summary(rows)
    bad = failing_rhat(diag)
    if bad:
        raise DiagnosticFailure(f"R-hat above {RHAT_LIMIT} for: {', '.join(bad)}")
    return EXIT_OK


def observed_panel(cfg: RunConfig, ids, include_crisis: bool) -> np.ndarray:
    """Observed counts over the whole horizon, NaN where no data were supplied."""
    obs = np.full((len(ids), cfg.n_months_total), np.nan)
    obs[:, : cfg.n_months_train] = read_counts(cfg.path("counts"), ids, 1, cfg.n_months_train)
    if include_crisis:
        obs[:, cfg.n_months_train:] = read_counts(
            cfg.path("crisis_counts"), ids, cfg.n_months_train + 1, cfg.n_months_total, require_complete=False
        )
    return obs


def excess_tables(counts, observed, pop, month_yrs, with_excess: bool):
    """Monthly, annual and all-area tables from PPD counts ``(S, n, T)``."""
    S, n, T = counts.shape
    excess_obs = observed if with_excess else np.full_like(observed, np.nan)
    monthly = {k: np.full((n, T), np.nan) for k in EXCESS_HEADER[4:10]}
    years = np.unique(month_yrs)
    annual = {k: np.full((n, years.size), np.nan) for k in EXCESS_HEADER[4:10]}
    partial = np.zeros((n, years.size), bool)
    for a in range(0, n, AREA_CHUNK):
        sl = slice(a, min(a + AREA_CHUNK, n))
        c = counts[:, sl, :].astype(float)
        lo, med, hi = summarize(c)
        monthly["pred_lo"][sl], monthly["pred_med"][sl], monthly["pred_hi"][sl] = lo, med, hi
        ex = excess_obs[None, sl, :] - c
        lo, med, hi = summarize(ex)
        monthly["excess_lo"][sl], monthly["excess_med"][sl], monthly["excess_hi"][sl] = lo, med, hi
        agg = annual_aggregate(c, month_yrs)
        lo, med, hi = summarize(agg.draws)
        annual["pred_lo"][sl], annual["pred_med"][sl], annual["pred_hi"][sl] = lo, med, hi
        miss = np.isnan(excess_obs[sl])
        agg_x = annual_aggregate(np.where(miss[None], np.nan, ex), month_yrs, missing=miss)
        lo, med, hi = summarize(agg_x.draws)
        part = agg_x.partial
        # a partial year's excess sum is not meaningful
        for key, val in (("excess_lo", lo), ("excess_med", med), ("excess_hi", hi)):
            annual[key][sl] = np.where(part, np.nan, val)
        partial[sl] = part

    obs_year = np.stack([observed[:, month_yrs == y].sum(axis=1) for y in years], axis=1)
    pop_year = np.stack([pop[:, month_yrs == y][:, 0] for y in years], axis=1)

    tot_counts = counts.sum(axis=1, dtype=np.int64).astype(float)
    tot_obs = excess_obs.sum(axis=0)
    t_lo, t_med, t_hi = summarize(tot_counts)
    x_lo, x_med, x_hi = summarize(tot_obs[None, :] - tot_counts)
    total = {
        "observed": observed.sum(axis=0), "pop": pop.sum(axis=0),
        "pred_med": t_med, "pred_lo": t_lo, "pred_hi": t_hi,
        "excess_med": x_med, "excess_lo": x_lo, "excess_hi": x_hi,
    }
    return monthly, annual, partial, obs_year, pop_year, years, total


def cmd_predict(cfg: RunConfig) -> int:
    _require(cfg, "population", "adjacency", "counts")
    draws_path = cfg.path("draws") or Path(cfg.path("out_dir")) / "draws.npz"
    draws = read_draws(draws_path)
    samples = draws.samples()
    ids = samples.area_ids
    if samples.n_months_train != cfg.n_months_train:
        raise ConfigError(
            f"draws were fitted on {samples.n_months_train} months but n_months_train is {cfg.n_months_train}"
        )
    _, pop = read_population(cfg.path("population"), cfg.anchor_year, cfg.anchor_month, cfg.n_months_total, ids)
    graph = read_adjacency(cfg.path("adjacency"), ids)
    R = draws.meta["reference_rate"]
    offsets = Offsets(reference_rate=R, expected=R * pop.astype(float), degenerate=R == 0.0)
    with_excess = cfg.crisis_counts is not None
    if with_excess:
        _require(cfg, "crisis_counts")
    observed = observed_panel(cfg, ids, with_excess)

    t0 = time.time()
    ppd = ppd_from_samples(samples, offsets, graph, cfg.n_months_total, seed=cfg.seed, max_draws=cfg.ppd_samples)
    log.info("simulated %d predictive draws in %.1f s", ppd.n_samples, time.time() - t0)
    my = month_years(cfg.n_months_total, cfg.anchor_year, cfg.anchor_month)
    monthly, annual, partial, obs_year, pop_year, years, total = excess_tables(
        ppd.counts, observed, pop, my, with_excess
    )

    out = Path(cfg.path("out_dir"))
    n, T = observed.shape
    rows = []
    for i in range(n):
        for m in range(T):
            p = pop[i, m]
            r = {"area_id": ids[i], "month_index": m + 1, "observed": observed[i, m], "pop": int(p)}
            r.update({k: monthly[k][i, m] for k in monthly})
            r["rate_obs"] = rates(observed[i, m], p)
            r["rate_pred_med"] = rates(r["pred_med"], p)
            r["emr_med"], r["emr_lo"], r["emr_hi"] = (rates(r[k], p) for k in ("excess_med", "excess_lo", "excess_hi"))
            rows.append(r)
    write_table(out / "excess.csv", rows, EXCESS_HEADER)

    rows = []
    for i in range(n):
        for k, yr in enumerate(years):
            p = pop_year[i, k]
            r = {"area_id": ids[i], "year": int(yr), "observed": obs_year[i, k], "pop": int(p)}
            r.update({key: annual[key][i, k] for key in annual})
            r["rate_obs"] = rates(obs_year[i, k], p)
            r["rate_pred_med"] = rates(r["pred_med"], p)
            r["emr_med"], r["emr_lo"], r["emr_hi"] = (rates(r[x], p) for x in ("excess_med", "excess_lo", "excess_hi"))
            r["partial"] = bool(partial[i, k])
            rows.append(r)
    write_table(out / "excess_annual.csv", rows, EXCESS_ANNUAL_HEADER)

    rows = [{"month_index": m + 1, **{k: total[k][m] for k in EXCESS_TOTAL_HEADER[1:]}} for m in range(T)]
    write_table(out / "excess_total.csv", rows, EXCESS_TOTAL_HEADER)
    log.info("wrote excess.csv, excess_annual.csv and excess_total.csv to %s", out)
    return EXIT_OK


def cmd_validate(cfg: RunConfig) -> int:
    _require(cfg, "population", "adjacency")
    ids, pop = read_population(cfg.path("population"), cfg.anchor_year, cfg.anchor_month, cfg.n_months_total)
    graph = read_adjacency(cfg.path("adjacency"), ids)
    R = cfg.reference_rate if cfg.reference_rate is not None else EXAMPLE_REFERENCE_RATE
    gen = GenConfig(
        alpha_true=cfg.alpha_true, tau_true=cfg.tau_true, sd_v_true=cfg.sd_v_true,
        sd_omega_true=cfg.sd_omega_true, rho_true=cfg.rho_true, sd_kappa_true=cfg.sd_kappa_true, seed=cfg.seed,
    )

    def progress(res):
        log.info("replication %d: coverage %.3f, alpha CI %s, rho CI %s", res.replication, res.covered.mean(),
                 np.round(res.alpha_ci, 3), np.round(res.rho_ci, 3))

    results = run_validation(
        graph, pop, R, gen, mcmc_config(cfg), cfg.n_months_train, cfg.n_replications,
        priors=priors(cfg), ppd_samples=cfg.ppd_samples, oracle=cfg.oracle, n_jobs=cfg.n_jobs, progress=progress,
    )
    out = Path(cfg.path("out_dir"))
    rows = metrics_rows(results)
    write_table(out / "metrics.csv", rows, METRICS_HEADER)
    truth_rows = []
    for res in results:
        t = res.truth
        for i, a in enumerate(ids):
            for m in range(cfg.n_months_total):
                truth_rows.append((res.replication, a, m + 1, float(t.theta[i, m]), int(t.pi[i, m]), int(t.y[i, m])))
    write_table(out / "gen_truth.csv", truth_rows, GEN_TRUTH_HEADER)
    s = rows[-1]
    print(f"N left-out {s['n_leftout']}  ME {s['me']:.3f}  MDE {s['mde']:.3f}  MAE {s['mae']:.3f}  "
          f"MSE {s['mse']:.3f}  coverage {s['coverage95']:.3f}")
    return EXIT_OK


def cmd_diagnose(cfg: RunConfig) -> int:
    draws_path = cfg.path("draws") or Path(cfg.path("out_dir")) / "draws.npz"
    draws = read_draws(draws_path)
    out = Path(cfg.path("out_dir"))
    write_traces(out / "traces", draws)
    rows = summary_rows(draws)
    write_table(out / "summary.csv", rows, SUMMARY_HEADER)
    write_table(out / "diagnostics.csv", diagnostics_rows(draws), DIAGNOSTICS_HEADER)
    print_summary(rows)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "validate": cmd_validate, "diagnose": cmd_diagnose}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file of flat key: value settings")
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--chains", dest="n_chains", type=int)
    common.add_argument("--iters", dest="n_iterations", type=int)
    common.add_argument("--burnin", dest="n_burnin", type=int)
    common.add_argument("--thin", type=int)
    common.add_argument("--jobs", dest="n_jobs", type=int, help="worker processes for chains or replications")
    common.add_argument("--draws", help="draws file (default <out-dir>/draws.npz)")
    common.add_argument("--counts")
    common.add_argument("--population")
    common.add_argument("--adjacency")
    common.add_argument("--train-months", dest="n_months_train", type=int)
    common.add_argument("--total-months", dest="n_months_total", type=int)
    common.add_argument("--ppd-samples", dest="ppd_samples", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="boem", description="Bayesian excess mortality for small areas")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="sample the posterior from training counts")
    p = sub.add_parser("predict", parents=[common], help="forecast, simulate counts and estimate excess")
    p.add_argument("--crisis-counts", dest="crisis_counts")
    p.add_argument("--no-crisis", action="store_true", help="ignore crisis_counts from the config")
    p = sub.add_parser("validate", parents=[common], help="simulation study on synthetic panels")
    p.add_argument("--replications", dest="n_replications", type=int)
    p.add_argument("--oracle", action="store_true", default=None, help="skip fitting, predict the truth")
    sub.add_parser("diagnose", parents=[common], help="traces and summary table from a draws file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config", "verbose", "no_crisis")}
    try:
        cfg = load_config(args.config, overrides)
        if getattr(args, "no_crisis", False):
            cfg.crisis_counts = None
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except McmcError as exc:
        print(f"MCMC failure: {exc}", file=sys.stderr)
        return EXIT_MCMC
    except DiagnosticFailure as exc:
        print(f"diagnostic failure: {exc}", file=sys.stderr)
        return EXIT_DIAGNOSTIC
