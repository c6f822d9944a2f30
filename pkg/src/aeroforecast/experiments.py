"""Seeded experiment harness: one cell = {algorithm, feature set, hidden
neurons, delay} for one company, averaged over 10 random 70/15/15
splits; the full grid enumerates 108 cells per company (216 for two).

Every random choice flows from the cell's base seed: repeat r uses
``base_seed + r``, from which split and weight-init sub-seeds are
derived with stable labels, so any repeat can be reproduced alone.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .fundamentals import RATIO_NAMES
from .indicators import TECHNICAL_COLUMNS
from .market_data import AlignedDataset
from .pca import fit_pca, transform
from .rnn import (SequenceDataset, build_supervised, forward, init_rnn,
                  loss_mse, rescale_output)
from .seeding import derive_seed
from .trainers import TrainConfig, train

FEATURE_SETS = ("fundamental", "technical", "mixed")
GRID_ALGORITHMS = ("lm", "br", "scg")
GRID_NEURONS = (5, 10, 15, 20)
GRID_DELAYS = (5, 10, 15)
GRID_REPEATS = 10


@dataclass(frozen=True)
class CompanyBundle:
    """One company's cleaned, aligned features and close-price target."""

    label: str
    aligned: AlignedDataset

    def features_for(self, feature_set: str) -> np.ndarray:
        if feature_set == "technical":
            return self.aligned.columns(TECHNICAL_COLUMNS)
        if feature_set == "fundamental":
            return self.aligned.columns(RATIO_NAMES)
        if feature_set == "mixed":
            return self.aligned.features
        raise ValueError(f"unknown feature set {feature_set!r}")


@dataclass(frozen=True)
class ExperimentSpec:
    """One grid cell (or an ad-hoc run with free parameter values)."""

    company_label: str
    feature_set: str
    algorithm: str
    n_hidden: int
    delay: int
    pca_k: int | None = 3  # None disables PCA
    repeats: int = GRID_REPEATS
    base_seed: int = 0
    pca_scale_mode: str = "center-only"
    pca_scope: str = "full"  # "full" (paper default) or "train"
    standardize_inputs: bool = True
    standardize_target: bool = True  # internal only; metrics stay natural-scale
    split_mode: str = "random"  # or "blocked" contiguous time blocks
    grid_mode: bool = False

    def __post_init__(self):
        if self.feature_set not in FEATURE_SETS:
            raise ValueError(f"unknown feature set {self.feature_set!r}")
        if self.algorithm not in GRID_ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.delay < 1 or self.n_hidden < 1 or self.repeats < 1:
            raise ValueError("delay, n_hidden, and repeats must be positive")
        if self.pca_scope not in ("full", "train"):
            raise ValueError(f"unknown pca_scope {self.pca_scope!r}")
        if self.split_mode not in ("random", "blocked"):
            raise ValueError(f"unknown split_mode {self.split_mode!r}")
        if self.grid_mode:
            if self.n_hidden not in GRID_NEURONS:
                raise ValueError(f"grid n_hidden must be one of {GRID_NEURONS}")
            if self.delay not in GRID_DELAYS:
                raise ValueError(f"grid delay must be one of {GRID_DELAYS}")
            if self.repeats != GRID_REPEATS:
                raise ValueError(f"grid repeats must be {GRID_REPEATS}")
            if self.pca_k not in (2, 3):
                raise ValueError("grid pca_k must be 2 or 3")


@dataclass(frozen=True)
class RepeatResult:
    seed: int
    total_epochs: int = 0
    best_epoch: int = 0
    test_mse: float = float("nan")
    seconds: float = float("nan")
    stop_reason: str = ""
    error: str | None = None


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    repeats: list = field(default_factory=list)  # RepeatResult per repeat
    avg_total_epochs: float = float("nan")
    avg_best_epochs: float = float("nan")
    avg_test_mse: float = float("nan")
    avg_runtime_seconds: float = float("nan")
    # Test-set rows of the lowest-MSE repeat: (date, target, prediction).
    best_predictions: list = field(default_factory=list)

    @property
    def n_failed(self) -> int:
        return sum(1 for r in self.repeats if r.error is not None)

    @property
    def partial(self) -> bool:
        return self.n_failed > 0


def split_70_15_15(n_samples: int, seed: int):
    """Disjoint (train, validation, test) index arrays covering 0..n-1.

    Validation and test each get round(0.15 n) samples (Python rounding,
    half to even); training gets the rest.  Assignment is a seeded
    uniform shuffle.
    """
    if n_samples < 20:
        raise ValueError(f"need at least 20 samples to split, got {n_samples}")
    n_val = round(0.15 * n_samples)
    n_train = n_samples - 2 * n_val
    perm = np.random.default_rng(seed).permutation(n_samples)
    return (perm[:n_train],
            perm[n_train:n_train + n_val],
            perm[n_train + n_val:])


def split_blocked(n_samples: int):
    """Contiguous-in-time 70/15/15 split for leakage-aware studies."""
    if n_samples < 20:
        raise ValueError(f"need at least 20 samples to split, got {n_samples}")
    n_val = round(0.15 * n_samples)
    n_train = n_samples - 2 * n_val
    idx = np.arange(n_samples)
    return idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:]


def prepare_inputs(spec: ExperimentSpec, features: np.ndarray, fit_rows=None):
    """PCA-project and standardize the feature matrix for one repeat.

    ``fit_rows`` restricts the rows used to fit the PCA map and the
    standardization statistics (train-scope mode); all rows are always
    transformed.
    """
    fit_data = features if fit_rows is None else features[fit_rows]
    if spec.pca_k is not None:
        model = fit_pca(fit_data, spec.pca_k, scale_mode=spec.pca_scale_mode)
        projected = transform(model, features)
        fit_proj = projected if fit_rows is None else projected[fit_rows]
    else:
        projected = features
        fit_proj = fit_data
    if not spec.standardize_inputs:
        return projected
    mean = fit_proj.mean(axis=0)
    std = fit_proj.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return (projected - mean) / std


@dataclass
class RepeatArtifacts:
    """Everything one repeat produces; the grid keeps only the summary."""

    result: RepeatResult
    prediction_rows: list  # (date, target, prediction) over test indices
    model: object  # trained RnnModel
    record: object  # TrainRecord
    test_mse: float


def run_repeat(spec: ExperimentSpec, bundle: CompanyBundle, seed: int,
               cfg: TrainConfig) -> RepeatArtifacts:
    """One seeded split/fit/train/evaluate pass.

    The network is trained against internally standardized targets (the
    optimizer conditioning depends on output weights staying O(1)); all
    reported quantities, including the training curves, are mapped back
    to natural price units.
    """
    features = bundle.features_for(spec.feature_set)
    target = bundle.aligned.target
    n_pairs = len(target) - spec.delay
    if spec.split_mode == "random":
        train_idx, val_idx, test_idx = split_70_15_15(
            n_pairs, derive_seed(seed, "split"))
    else:
        train_idx, val_idx, test_idx = split_blocked(n_pairs)

    fit_rows = np.sort(train_idx) if spec.pca_scope == "train" else None
    inputs = prepare_inputs(spec, features, fit_rows)
    labels = target[spec.delay:]
    if spec.standardize_target:
        stats = labels if fit_rows is None else labels[fit_rows]
        y_mean = float(stats.mean())
        y_scale = float(stats.std()) or 1.0
    else:
        y_mean, y_scale = 0.0, 1.0
    data = build_supervised(inputs, (target - y_mean) / y_scale, tau=spec.delay)

    model0 = init_rnn(inputs.shape[1], spec.n_hidden, spec.delay,
                      seed=derive_seed(seed, "init"))
    cfg = replace(cfg, algorithm=spec.algorithm, seed=seed)
    trained, record = train(model0, data, train_idx, val_idx, cfg)
    if spec.standardize_target:
        trained = rescale_output(trained, y_scale, y_mean)
        record.train_mse = [v * y_scale * y_scale for v in record.train_mse]
        record.val_mse = [v * y_scale * y_scale for v in record.val_mse]

    natural = SequenceDataset(inputs=data.inputs, targets=labels.copy())
    preds = forward(trained, natural)
    test_mse = loss_mse(preds[test_idx], natural.targets[test_idx])
    result = RepeatResult(
        seed=seed,
        total_epochs=record.total_epochs,
        best_epoch=record.best_epoch,
        test_mse=test_mse,
        seconds=record.seconds,
        stop_reason=record.stop_reason,
    )
    rows = [(bundle.aligned.dates[t + spec.delay], float(natural.targets[t]), float(preds[t]))
            for t in sorted(int(i) for i in test_idx)]
    return RepeatArtifacts(result=result, prediction_rows=rows, model=trained,
                           record=record, test_mse=test_mse)


def run_experiment(spec: ExperimentSpec, bundle: CompanyBundle,
                   cfg: TrainConfig | None = None) -> ExperimentResult:
    """Run all repeats of one cell and aggregate by arithmetic mean.

    A repeat that raises is recorded as failed and excluded from the
    averages; the cell is marked partial rather than aborting.
    """
    if cfg is None:
        cfg = TrainConfig(algorithm=spec.algorithm)
    n_pairs = len(bundle.aligned.target) - spec.delay
    if n_pairs < 20:
        raise ValueError(
            f"{bundle.label}: {n_pairs} usable pairs after delay {spec.delay}; need >= 20"
        )
    result = ExperimentResult(spec=spec)
    best_mse = np.inf
    for r in range(spec.repeats):
        seed = spec.base_seed + r
        try:
            artifacts = run_repeat(spec, bundle, seed, cfg)
        except Exception as exc:  # noqa: BLE001 - cell stays usable
            result.repeats.append(RepeatResult(seed=seed, error=f"{type(exc).__name__}: {exc}"))
            continue
        result.repeats.append(artifacts.result)
        if artifacts.test_mse < best_mse:
            best_mse = artifacts.test_mse
            result.best_predictions = [
                (date, target, pred, pred - target)
                for date, target, pred in artifacts.prediction_rows
            ]
    ok = [r for r in result.repeats if r.error is None]
    if ok:
        result.avg_total_epochs = float(np.mean([r.total_epochs for r in ok]))
        result.avg_best_epochs = float(np.mean([r.best_epoch for r in ok]))
        result.avg_test_mse = float(np.mean([r.test_mse for r in ok]))
        result.avg_runtime_seconds = float(np.mean([r.seconds for r in ok]))
    return result


def grid_specs(company_labels, master_seed: int, pca_k: int = 3):
    """The documented cell enumeration: company, then algorithm, feature
    set, hidden neurons, delay (innermost)."""
    specs = []
    for label in company_labels:
        for algorithm in GRID_ALGORITHMS:
            for feature_set in FEATURE_SETS:
                for n_hidden in GRID_NEURONS:
                    for delay in GRID_DELAYS:
                        specs.append(ExperimentSpec(
                            company_label=label,
                            feature_set=feature_set,
                            algorithm=algorithm,
                            n_hidden=n_hidden,
                            delay=delay,
                            pca_k=pca_k,
                            base_seed=derive_seed(master_seed, "grid", label,
                                                  algorithm, feature_set,
                                                  n_hidden, delay),
                            grid_mode=True,
                        ))
    return specs


@dataclass
class GridReport:
    results: list  # ExperimentResult, in enumeration order

    @property
    def n_cells(self) -> int:
        return len(self.results)

    @property
    def n_runs(self) -> int:
        return sum(len(r.repeats) for r in self.results)

    @property
    def failed_cells(self):
        return [r for r in self.results if r.partial]

    def marginal(self, dimension: str):
        """Mean of cell averages grouped by (company, dimension value).

        Rows appear in enumeration order of the grid; failed repeats are
        already excluded from the cell averages, and fully-failed cells
        are skipped.
        """
        key_fn = {
            "algorithm": lambda s: s.algorithm,
            "feature_set": lambda s: s.feature_set,
            "neurons": lambda s: s.n_hidden,
            "delay": lambda s: s.delay,
        }[dimension]
        groups: dict = {}
        order = []
        for res in self.results:
            if not np.isfinite(res.avg_test_mse):
                continue
            key = (res.spec.company_label, key_fn(res.spec))
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(res)
        rows = []
        for key in order:
            cells = groups[key]
            rows.append((
                key[0], key[1],
                float(np.mean([c.avg_total_epochs for c in cells])),
                float(np.mean([c.avg_best_epochs for c in cells])),
                float(np.mean([c.avg_test_mse for c in cells])),
                float(np.mean([c.avg_runtime_seconds for c in cells])),
            ))
        return rows


def _run_cell(args):
    spec, bundle, cfg = args
    return run_experiment(spec, bundle, cfg)


def run_grid(bundles, master_seed: int, cfg: TrainConfig | None = None,
             pca_k: int = 3, jobs: int = 1) -> GridReport:
    """Run the full cell enumeration over all companies.

    Cells are independent; with ``jobs > 1`` they run in a process pool,
    and results keep enumeration order either way.
    """
    if not bundles:
        raise ValueError("need at least one company bundle")
    by_label = {b.label: b for b in bundles}
    if len(by_label) != len(bundles):
        raise ValueError("duplicate company labels")
    specs = grid_specs([b.label for b in bundles], master_seed, pca_k=pca_k)
    tasks = [(spec, by_label[spec.company_label], cfg) for spec in specs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, tasks, chunksize=4))
    else:
        results = [_run_cell(t) for t in tasks]
    return GridReport(results=results)


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

GRID_RESULT_COLUMNS = (
    "company", "algorithm", "feature_set", "n_hidden", "delay", "pca_k",
    "repeats", "base_seed",
    "avg_total_epochs", "avg_best_epochs", "avg_test_mse", "avg_runtime_seconds",
)

MARGINAL_DIMENSIONS = ("algorithm", "feature_set", "neurons", "delay")


def cell_name(spec: ExperimentSpec) -> str:
    return (f"{spec.company_label}_{spec.algorithm}_{spec.feature_set}"
            f"_h{spec.n_hidden}_d{spec.delay}")


def write_grid_results(path, report: GridReport) -> None:
    """``grid_results.csv``: one row per cell, spec fields then averages."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GRID_RESULT_COLUMNS)
        for res in report.results:
            s = res.spec
            writer.writerow([
                s.company_label, s.algorithm, s.feature_set, s.n_hidden,
                s.delay, s.pca_k, s.repeats, s.base_seed,
                repr(res.avg_total_epochs), repr(res.avg_best_epochs),
                repr(res.avg_test_mse), repr(res.avg_runtime_seconds),
            ])


def write_marginals(out_dir, report: GridReport) -> list:
    """``marginals_<dimension>.csv`` per grouping dimension."""
    paths = []
    for dim in MARGINAL_DIMENSIONS:
        path = f"{out_dir}/marginals_{dim}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["company", dim, "avg_total_epochs",
                             "avg_best_epochs", "avg_test_mse",
                             "avg_runtime_seconds"])
            for row in report.marginal(dim):
                writer.writerow([row[0], row[1], repr(row[2]), repr(row[3]),
                                 repr(row[4]), repr(row[5])])
        paths.append(path)
    return paths


def write_predictions(path, rows) -> None:
    """``predictions_<cell>.csv``: date,target,prediction,error rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "target", "prediction", "error"])
        for date, target, pred, err in rows:
            writer.writerow([date.isoformat(), repr(float(target)),
                             repr(float(pred)), repr(float(err))])
