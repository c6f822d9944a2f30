"""Command-line pipeline: ingestion -> features -> PCA -> training -> reports.

Commands
--------
synth     write synthetic prices.csv / fundamentals.csv per company
features  technical + daily-fundamental feature CSVs and alignment summary
pca       explained-variance report and projected coordinates
train     train one model; emit model file, training curve, predictions
grid      the full algorithm x feature-set x neurons x delay study

Configuration comes from an INI-style file (sections of key = value)
plus command-line flag overrides; flags win.  Every setting has a
default, so with no config at all the commands run on two synthetic
demo companies.  The master seed resolves as: --seed flag, then the
config file, then the AEROFORECAST_SEED environment variable, then 0.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import fundamentals as fund
from . import indicators as ind
from .experiments import (CompanyBundle, ExperimentSpec, cell_name,
                          run_grid, run_repeat, write_grid_results,
                          write_marginals, write_predictions)
from .market_data import (MarketDataError, SyntheticSpec, clean_and_align,
                          generate_synthetic, load_prices, write_prices)
from .pca import fit_pca, transform, write_pca_report, write_pca_scatter
from .rnn import save_model
from .seeding import derive_seed
from .trainers import TrainConfig

DEFAULT_COMPANIES = ("SYN_A", "SYN_B")


@dataclass
class CompanyEntry:
    label: str
    prices: str | None = None  # None -> synthetic
    fundamentals: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    seed_from_config: bool = False
    out: str = "aeroforecast_out"
    jobs: int = 1
    companies: list = field(default_factory=lambda: [
        CompanyEntry(label) for label in DEFAULT_COMPANIES])
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    indicators: ind.IndicatorConfig = field(default_factory=ind.IndicatorConfig)
    pca_k: int | None = 3
    pca_scale_mode: str = "center-only"
    pca_scope: str = "full"
    train: TrainConfig = field(default_factory=TrainConfig)
    feature_set: str = "technical"
    neurons: int = 10
    delay: int = 5
    repeats: int = 10
    standardize_inputs: bool = True
    split_mode: str = "random"


def _section(parser, name):
    return parser[name] if parser.has_section(name) else {}


def _get(section, key, cast, default):
    if key not in section:
        return default
    raw = str(section[key]).strip()
    if cast is bool:
        return raw.lower() in ("1", "true", "yes", "on")
    return cast(raw)


def load_config(path: str | None) -> RunConfig:
    """Parse the INI config; omitted keys keep their defaults."""
    rc = RunConfig()
    if path is None:
        return rc
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise MarketDataError(f"config file not found: {path}")

    run = _section(parser, "run")
    if "seed" in run:
        rc.seed = int(run["seed"])
        rc.seed_from_config = True
    rc.out = _get(run, "out", str, rc.out)
    rc.jobs = _get(run, "jobs", int, rc.jobs)

    syn = _section(parser, "synthetic")
    rc.synthetic = SyntheticSpec(
        seed=rc.seed,
        n_days=_get(syn, "n_days", int, rc.synthetic.n_days),
        drift=_get(syn, "drift", float, rc.synthetic.drift),
        volatility=_get(syn, "volatility", float, rc.synthetic.volatility),
        quarterly_pattern=_get(syn, "quarterly_pattern", str,
                               rc.synthetic.quarterly_pattern),
    )

    sec = _section(parser, "indicators")
    kwargs = {}
    for f in dataclasses.fields(ind.IndicatorConfig):
        if f.name in sec:
            cast = str if f.name == "cci_mode" else (
                float if f.type == "float" else int)
            kwargs[f.name] = _get(sec, f.name, cast, None)
    rc.indicators = ind.IndicatorConfig(**kwargs)

    sec = _section(parser, "pca")
    k_raw = str(sec.get("k", "" if rc.pca_k is None else str(rc.pca_k))).strip().lower()
    rc.pca_k = None if k_raw in ("", "none", "0") else int(k_raw)
    rc.pca_scale_mode = _get(sec, "scale_mode", str, rc.pca_scale_mode)
    rc.pca_scope = _get(sec, "scope", str, rc.pca_scope)

    sec = _section(parser, "train")
    rc.train = TrainConfig(
        algorithm=_get(sec, "algorithm", str, rc.train.algorithm).lower(),
        max_epochs=_get(sec, "max_epochs", int, rc.train.max_epochs),
        grad_tol=_get(sec, "grad_tol", float, rc.train.grad_tol),
        mu0=_get(sec, "mu0", float, rc.train.mu0),
        mu_inc=_get(sec, "mu_inc", float, rc.train.mu_inc),
        mu_dec=_get(sec, "mu_dec", float, rc.train.mu_dec),
        mu_max=_get(sec, "mu_max", float, rc.train.mu_max),
        scg_sigma=_get(sec, "scg_sigma", float, rc.train.scg_sigma),
        scg_lambda0=_get(sec, "scg_lambda0", float, rc.train.scg_lambda0),
        val_patience=_get(sec, "val_patience", int, rc.train.val_patience),
        br_val_stop=_get(sec, "br_val_stop", bool, rc.train.br_val_stop),
        learning_rate=_get(sec, "learning_rate", float, rc.train.learning_rate),
    )
    rc.feature_set = _get(sec, "feature_set", str, rc.feature_set)
    rc.neurons = _get(sec, "neurons", int, rc.neurons)
    rc.delay = _get(sec, "delay", int, rc.delay)

    sec = _section(parser, "experiment")
    rc.repeats = _get(sec, "repeats", int, rc.repeats)
    rc.standardize_inputs = _get(sec, "standardize_inputs", bool, rc.standardize_inputs)
    rc.split_mode = _get(sec, "split_mode", str, rc.split_mode)

    companies = []
    for name in parser.sections():
        if name.startswith("company:"):
            label = name.split(":", 1)[1].strip()
            companies.append(CompanyEntry(
                label=label,
                prices=parser[name].get("prices") or None,
                fundamentals=parser[name].get("fundamentals") or None,
            ))
    if companies:
        rc.companies = companies
    return rc


def apply_overrides(rc: RunConfig, args) -> RunConfig:
    # Seed precedence: flag, config file, AEROFORECAST_SEED, default.
    if args.seed is not None:
        rc.seed = args.seed
    elif not rc.seed_from_config:
        env = os.environ.get("AEROFORECAST_SEED")
        if env:
            rc.seed = int(env)
    rc.synthetic = dataclasses.replace(rc.synthetic, seed=rc.seed)
    if args.out is not None:
        rc.out = args.out
    if args.jobs is not None:
        rc.jobs = args.jobs
    if args.company is not None:
        matching = [c for c in rc.companies if c.label == args.company]
        rc.companies = matching or [CompanyEntry(args.company)]
    if getattr(args, "feature_set", None) is not None:
        rc.feature_set = args.feature_set
    if getattr(args, "algo", None) is not None:
        rc.train = dataclasses.replace(rc.train, algorithm=args.algo)
    if getattr(args, "neurons", None) is not None:
        rc.neurons = args.neurons
    if getattr(args, "delay", None) is not None:
        rc.delay = args.delay
    return rc


# ---------------------------------------------------------------------------
# Pipeline steps shared by the commands
# ---------------------------------------------------------------------------


def company_raw_data(rc: RunConfig, entry: CompanyEntry):
    """(bars, quarterly reports) from files or the synthetic generator."""
    if entry.prices is not None:
        bars = load_prices(entry.prices)
        if entry.fundamentals is None:
            raise MarketDataError(f"{entry.label}: prices given without fundamentals")
        reports = fund.load_fundamentals(entry.fundamentals)
        return bars, reports
    spec = dataclasses.replace(rc.synthetic,
                               seed=derive_seed(rc.seed, "synth", entry.label))
    return generate_synthetic(spec)


def build_bundle(rc: RunConfig, entry: CompanyEntry):
    """Full feature pipeline for one company.

    Returns (bundle, technical matrix, fundamental daily matrix, bars)
    with the matrices still containing their pre-cleaning NaN rows.
    """
    bars, reports = company_raw_data(rc, entry)
    technical = ind.compute_technical_matrix(bars, rc.indicators)
    fund_daily, ratio_names = fund.daily_ratio_matrix(reports, bars)
    aligned = clean_and_align(bars, technical, ind.TECHNICAL_COLUMNS,
                              fund_daily, ratio_names)
    return CompanyBundle(label=entry.label, aligned=aligned), technical, fund_daily, bars


def _outdir(rc: RunConfig, *parts) -> str:
    path = os.path.join(rc.out, *parts)
    os.makedirs(path, exist_ok=True)
    return path


def _experiment_spec(rc: RunConfig, label: str, repeats: int,
                     base_seed: int) -> ExperimentSpec:
    return ExperimentSpec(
        company_label=label,
        feature_set=rc.feature_set,
        algorithm=rc.train.algorithm,
        n_hidden=rc.neurons,
        delay=rc.delay,
        pca_k=rc.pca_k,
        repeats=repeats,
        base_seed=base_seed,
        pca_scale_mode=rc.pca_scale_mode,
        pca_scope=rc.pca_scope,
        standardize_inputs=rc.standardize_inputs,
        split_mode=rc.split_mode,
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(rc: RunConfig) -> int:
    for entry in rc.companies:
        spec = dataclasses.replace(rc.synthetic,
                                   seed=derive_seed(rc.seed, "synth", entry.label))
        bars, reports = generate_synthetic(spec)
        out = _outdir(rc, entry.label)
        write_prices(os.path.join(out, "prices.csv"), bars)
        fund.write_fundamentals(os.path.join(out, "fundamentals.csv"), reports)
        print(f"{entry.label}: wrote {len(bars)} bars, {len(reports)} quarters -> {out}")
    return 0


def cmd_features(rc: RunConfig) -> int:
    for entry in rc.companies:
        bundle, technical, fund_daily, bars = build_bundle(rc, entry)
        out = _outdir(rc, entry.label)
        ind.write_technical_csv(os.path.join(out, "technical.csv"),
                                [b.date for b in bars], technical)
        _write_daily_fundamentals(os.path.join(out, "fundamentals_daily.csv"),
                                  [b.date for b in bars], fund_daily)
        aligned_dates = set(bundle.aligned.dates)
        deleted = [b.date for b in bars if b.date not in aligned_dates]
        with open(os.path.join(out, "deleted_rows.csv"), "w", encoding="utf-8") as fh:
            fh.write("date\n")
            for d in deleted:
                fh.write(d.isoformat() + "\n")
        with open(os.path.join(out, "alignment_summary.csv"), "w", encoding="utf-8") as fh:
            fh.write("company,input_days,aligned_rows,feature_columns,deleted_rows\n")
            fh.write(f"{entry.label},{len(bars)},{len(bundle.aligned.dates)},"
                     f"{len(bundle.aligned.feature_names)},{len(deleted)}\n")
        print(f"{entry.label}: {len(bars)} days -> {len(bundle.aligned.dates)} aligned rows "
              f"({len(deleted)} deleted), {len(bundle.aligned.feature_names)} features")
    return 0


def _write_daily_fundamentals(path, dates, matrix):
    import csv as _csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(("date",) + fund.RATIO_NAMES)
        for i, date in enumerate(dates):
            row = [date.isoformat()]
            row += ["" if math.isnan(v) else repr(float(v)) for v in matrix[i]]
            writer.writerow(row)


def cmd_pca(rc: RunConfig) -> int:
    k = rc.pca_k if rc.pca_k is not None else 3
    for entry in rc.companies:
        bundle, _, _, _ = build_bundle(rc, entry)
        features = bundle.features_for(rc.feature_set)
        model = fit_pca(features, k, scale_mode=rc.pca_scale_mode)
        projected = transform(model, features)
        out = _outdir(rc, entry.label)
        write_pca_report(os.path.join(out, "pca_report.csv"), model)
        write_pca_scatter(os.path.join(out, "pca_scatter.csv"), projected)
        top = 100.0 * float(model.explained_ratio[:k].sum())
        print(f"{entry.label}: PCA({rc.feature_set}) keeps {top:.2f}% variance "
              f"in {k} components")
    return 0


def cmd_train(rc: RunConfig) -> int:
    for entry in rc.companies:
        bundle, _, _, _ = build_bundle(rc, entry)
        spec = _experiment_spec(rc, entry.label, repeats=1,
                                base_seed=derive_seed(rc.seed, "train", entry.label))
        artifacts = run_repeat(spec, bundle, spec.base_seed, rc.train)
        out = _outdir(rc, entry.label)
        save_model(os.path.join(out, "model.json"), artifacts.model)
        rec = artifacts.record
        with open(os.path.join(out, "training_curve.csv"), "w", encoding="utf-8") as fh:
            fh.write("epoch,train_mse,val_mse\n")
            for e, (tm, vm) in enumerate(zip(rec.train_mse, rec.val_mse), start=1):
                fh.write(f"{e},{tm!r},{vm!r}\n")
        rows = [(d, t, p, p - t) for d, t, p in artifacts.prediction_rows]
        write_predictions(os.path.join(out, f"predictions_{entry.label}.csv"), rows)
        print(f"{entry.label}: {rc.train.algorithm.upper()} stopped after "
              f"{rec.total_epochs} epochs ({rec.stop_reason}), best epoch "
              f"{rec.best_epoch}, test MSE {artifacts.test_mse:.6f}")
    return 0


def cmd_grid(rc: RunConfig) -> int:
    bundles = []
    for entry in rc.companies:
        bundle, _, _, _ = build_bundle(rc, entry)
        bundles.append(bundle)
    k = rc.pca_k if rc.pca_k is not None else 3
    report = run_grid(bundles, rc.seed, cfg=rc.train, pca_k=k, jobs=rc.jobs)
    out = _outdir(rc)
    write_grid_results(os.path.join(out, "grid_results.csv"), report)
    write_marginals(out, report)
    for res in report.results:
        write_predictions(os.path.join(out, f"predictions_{cell_name(res.spec)}.csv"),
                          res.best_predictions)
    failures = {
        cell_name(res.spec): [r.error for r in res.repeats if r.error is not None]
        for res in report.failed_cells
    }
    print(f"grid: {report.n_cells} cells, {report.n_runs} runs, "
          f"{len(failures)} cells with failures -> {out}")
    if failures:
        manifest = os.path.join(out, "failures.json")
        with open(manifest, "w", encoding="utf-8") as fh:
            json.dump(failures, fh, indent=1, sort_keys=True)
            fh.write("\n")
        print(f"failure manifest: {manifest}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aeroforecast",
        description="Share-price prediction pipeline: features, PCA, "
                    "target-delayed RNN, and the full experiment grid.",
    )
    parser.add_argument("command", choices=["synth", "features", "pca", "train", "grid"])
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--seed", type=int, help="master seed (overrides config "
                        "and AEROFORECAST_SEED)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--company", help="restrict to one company label")
    parser.add_argument("--feature-set", dest="feature_set",
                        choices=["fundamental", "technical", "mixed"])
    parser.add_argument("--algo", choices=["lm", "br", "scg"])
    parser.add_argument("--neurons", type=int)
    parser.add_argument("--delay", type=int)
    parser.add_argument("--jobs", type=int, help="parallel workers for the grid")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "features": cmd_features,
    "pca": cmd_pca,
    "train": cmd_train,
    "grid": cmd_grid,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = apply_overrides(load_config(args.config), args)
        return COMMANDS[args.command](rc)
    except (MarketDataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
