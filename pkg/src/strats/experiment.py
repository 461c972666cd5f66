"""Repeated-runs experiment harness: labeled-fraction sweeps and the
with/without-pretraining ablation, aggregated as mean +/- std over runs.

Pretraining is shared across labeled fractions within one (model, run) cell:
the forecast windows come from the full train/validation splits regardless of
how many labels the fine-tuning stage is allowed to see.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import (Dataset, ForecastSample, NormalizationStats, WindowSpec,
                   build_forecast_windows, fit_normalizer, normalize_dataset,
                   sample_labeled_fraction, split_patients)
from .errors import ValidationError
from .model import ModelConfig, init_parameters
from .training import (TrainConfig, derive_seed, evaluate_model, extract_trunk,
                       finetune, pretrain)

METRIC_NAMES = ("roc_auc", "pr_auc", "min_re_pr")
SS_WITH = "ss+"
SS_WITHOUT = "ss-"
MODEL_KINDS = ("standard", "interpretable")


@dataclass(frozen=True)
class ExperimentConfig:
    labeled_fractions: tuple[float, ...] = (1.0,)
    ss_modes: tuple[str, ...] = (SS_WITHOUT,)
    model_kinds: tuple[str, ...] = ("standard",)
    n_runs: int = 1
    base_seed: int = 0

    def __post_init__(self):
        if self.n_runs < 1:
            raise ValidationError("n_runs must be >= 1")
        for f in self.labeled_fractions:
            if not 0.0 < f <= 1.0:
                raise ValidationError(f"labeled fraction {f} out of (0, 1]")
        for m in self.ss_modes:
            if m not in (SS_WITH, SS_WITHOUT):
                raise ValidationError(f"unknown ss mode {m!r}")
        for k in self.model_kinds:
            if k not in MODEL_KINDS:
                raise ValidationError(f"unknown model kind {k!r}")


@dataclass
class PreparedData:
    """Split, normalized, and windowed data, ready for training runs."""
    train: Dataset            # normalized, labels intact
    val: Dataset
    test: Dataset
    stats: NormalizationStats
    train_windows: list[ForecastSample]
    val_windows: list[ForecastSample]
    window_spec: WindowSpec


def prepare_data(dataset: Dataset, window_spec: WindowSpec,
                 ratios: tuple[float, float, float] = (0.64, 0.16, 0.20),
                 split_seed: int = 0) -> PreparedData:
    """Patient-level split, statistics from the training split only, forecast
    windows from the raw train/val splits (test stays untouched)."""
    train_raw, val_raw, test_raw = split_patients(dataset, ratios, split_seed)
    if not train_raw.samples or not val_raw.samples or not test_raw.samples:
        raise ValidationError("every split must be non-empty")
    stats = fit_normalizer(train_raw)
    return PreparedData(
        train=normalize_dataset(train_raw, stats),
        val=normalize_dataset(val_raw, stats),
        test=normalize_dataset(test_raw, stats),
        stats=stats,
        train_windows=build_forecast_windows(train_raw, window_spec, stats),
        val_windows=build_forecast_windows(val_raw, window_spec, stats),
        window_spec=window_spec)


@dataclass
class ReportRow:
    """Aggregate of one (model, ss mode, labeled fraction) cell."""
    model: str
    ss_mode: str
    labeled_fraction: float
    n_runs: int
    per_run: dict[str, list[float]]
    mean: dict[str, float]
    std: dict[str, float] | None  # absent for single runs

    def to_dict(self) -> dict:
        return {"model": self.model, "ss_mode": self.ss_mode,
                "labeled_fraction": self.labeled_fraction,
                "n_runs": self.n_runs, "per_run": self.per_run,
                "mean": self.mean, "std": self.std}


@dataclass
class RunReport:
    rows: list[ReportRow]
    config_fingerprint: str

    def row(self, model: str, ss_mode: str, fraction: float) -> ReportRow:
        for r in self.rows:
            if (r.model, r.ss_mode) == (model, ss_mode) and \
                    abs(r.labeled_fraction - fraction) < 1e-12:
                return r
        raise KeyError((model, ss_mode, fraction))

    def to_dict(self) -> dict:
        return {"config_fingerprint": self.config_fingerprint,
                "rows": [r.to_dict() for r in self.rows]}


def _fingerprint(model_config: ModelConfig, train_config: TrainConfig,
                 experiment: ExperimentConfig) -> str:
    blob = json.dumps({"model": model_config.to_dict(),
                       "train": train_config.__dict__,
                       "experiment": {
                           "labeled_fractions": experiment.labeled_fractions,
                           "ss_modes": experiment.ss_modes,
                           "model_kinds": experiment.model_kinds,
                           "n_runs": experiment.n_runs,
                           "base_seed": experiment.base_seed}},
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _single_run(data: PreparedData, model_config: ModelConfig,
                train_config: TrainConfig, experiment: ExperimentConfig,
                kind: str, run: int) -> list[tuple[tuple, dict[str, float]]]:
    """All (fraction, ss_mode) cells for one model kind and run seed."""
    config = replace(model_config, interpretable=(kind == "interpretable"))
    test_labeled = data.test.labeled()
    run_seed = derive_seed(experiment.base_seed, run)

    trunk = None
    if SS_WITH in experiment.ss_modes:
        store = init_parameters(config, derive_seed(run_seed, 10))
        pretrain(data.train_windows, data.val_windows, store, config,
                 replace(train_config, seed=derive_seed(run_seed, 11)))
        trunk = extract_trunk(store.snapshot())

    results = []
    for fraction in experiment.labeled_fractions:
        train_sub = sample_labeled_fraction(data.train, fraction,
                                            derive_seed(run_seed, 20))
        val_sub = sample_labeled_fraction(data.val, fraction,
                                          derive_seed(run_seed, 21))
        for ss_mode in experiment.ss_modes:
            store, _ = finetune(
                train_sub.labeled(), val_sub.labeled(), config,
                replace(train_config, seed=derive_seed(run_seed, 30)),
                pretrained_trunk=trunk if ss_mode == SS_WITH else None,
                init_seed=derive_seed(run_seed, 31))
            metrics = evaluate_model(store, config, test_labeled)
            results.append(((kind, ss_mode, fraction), metrics))
    return results


def run_experiment(data: PreparedData, model_config: ModelConfig,
                   train_config: TrainConfig, experiment: ExperimentConfig,
                   workers: int = 1) -> RunReport:
    """Grid of (model kind, ss mode, labeled fraction) x run seeds.

    Deterministic given the configs: every cell's seeds derive from
    (base_seed, run index) regardless of execution order or worker count.
    """
    if not data.test.labeled():
        raise ValidationError("test split has no labeled samples")
    tasks = [(kind, run) for kind in experiment.model_kinds
             for run in range(experiment.n_runs)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(
                lambda kr: _single_run(data, model_config, train_config,
                                       experiment, *kr), tasks))
    else:
        outcomes = [_single_run(data, model_config, train_config, experiment,
                                kind, run) for kind, run in tasks]

    cells: dict[tuple, dict[str, list[float]]] = {}
    for outcome in outcomes:
        for key, metrics in outcome:
            per_run = cells.setdefault(key, {m: [] for m in METRIC_NAMES})
            for m in METRIC_NAMES:
                per_run[m].append(metrics[m])

    rows = []
    for kind in experiment.model_kinds:
        for ss_mode in experiment.ss_modes:
            for fraction in experiment.labeled_fractions:
                per_run = cells[(kind, ss_mode, fraction)]
                mean = {m: float(np.mean(v)) for m, v in per_run.items()}
                std = None
                if experiment.n_runs >= 2:
                    std = {m: float(np.std(v, ddof=1))
                           for m, v in per_run.items()}
                rows.append(ReportRow(kind, ss_mode, fraction,
                                      experiment.n_runs, per_run, mean, std))
    return RunReport(rows, _fingerprint(model_config, train_config, experiment))
