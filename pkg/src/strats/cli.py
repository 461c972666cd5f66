"""Command-line interface.

Subcommands: synth, pretrain, train, evaluate, explain, experiment. Every
command reads a flat `key = value` config file (unknown keys are errors, so
hyperparameter typos fail loudly), takes explicit input/output paths, never
mutates its inputs, and drops a manifest.json recording the config hash,
seeds, paths, versions, and wall-clock time next to its outputs.

Exit codes: 0 success, 2 validation/configuration error, 3 runtime or data
error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import config_hash, load_checkpoint, save_checkpoint
from .data import (Dataset, WindowSpec, build_forecast_windows, export_csv,
                   fit_normalizer, load_dataset_dir, normalize,
                   normalize_dataset, observation_count_percentile,
                   split_patients, truncate_observations)
from .errors import (CheckpointError, DataError, StratsError, ValidationError)
from .experiment import ExperimentConfig, prepare_data, run_experiment
from .model import (ModelConfig, contribution_scores, init_parameters)
from .synthetic import SyntheticConfig, generate_synthetic
from .training import (TrainConfig, evaluate_model, extract_trunk, finetune,
                       predict_probabilities, pretrain)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

# every key any command understands; a key outside this set is a typo and a
# hard error, while valid keys a command does not need are simply unused, so
# one config file can drive the whole pipeline
KNOWN_KEYS = frozenset({
    "synth.n_patients", "synth.n_variables", "synth.target_missing_rate",
    "synth.mean_observations_per_stay", "synth.span_hours",
    "synth.label_noise", "synth.seed",
    "split.ratios", "split.seed",
    "window.first", "window.last", "window.step", "window.lookback",
    "window.horizon",
    "model.embed_dim", "model.n_blocks", "model.n_heads",
    "model.dropout_rate", "model.attention_dropout_rate",
    "model.attention_hidden_dim", "model.max_observations",
    "model.time_scale", "model.interpretable",
    "train.batch_size", "train.learning_rate", "train.finetune_patience",
    "train.pretrain_patience", "train.pretrain_epoch_size",
    "train.max_epochs", "train.seed",
    "experiment.fractions", "experiment.ss_modes", "experiment.models",
    "experiment.n_runs", "experiment.base_seed",
})


class ConfigFile:
    """Flat `key = value` file; keys are validated against KNOWN_KEYS."""

    def __init__(self, path: str | Path | None):
        self.path = str(path) if path else "<defaults>"
        self._values: dict[str, str] = {}
        self.sha256 = None
        if path is None:
            return
        text = Path(path).read_text(encoding="utf-8")
        self.sha256 = hashlib.sha256(text.encode()).hexdigest()[:16]
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{self.path}:{lineno}: expected "
                                      f"'key = value'")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key in self._values:
                raise ValidationError(f"{self.path}:{lineno}: duplicate key "
                                      f"{key!r}")
            self._values[key] = value
        unknown = sorted(set(self._values) - KNOWN_KEYS)
        if unknown:
            raise ValidationError(f"{self.path}: unknown config keys: "
                                  f"{', '.join(unknown)}")

    def _convert(self, key: str, text: str, kind):
        try:
            if kind is bool:
                if text.lower() in ("true", "1", "yes"):
                    return True
                if text.lower() in ("false", "0", "no"):
                    return False
                raise ValueError(text)
            if kind is float and text.lower() in ("inf", "infinity"):
                return math.inf
            return kind(text)
        except ValueError:
            raise ValidationError(f"{self.path}: key {key!r}: cannot parse "
                                  f"{text!r} as {kind.__name__}") from None

    def get(self, key: str, kind, default):
        if key not in self._values:
            return default
        text = self._values[key]
        if kind is list:
            return [t.strip() for t in text.split(",") if t.strip()]
        if kind == "floats":
            return tuple(self._convert(key, t.strip(), float)
                         for t in text.split(",") if t.strip())
        return self._convert(key, text, kind)


def _read_synth_config(cfg: ConfigFile, seed_override: int | None) -> SyntheticConfig:
    defaults = SyntheticConfig()
    out = SyntheticConfig(
        n_patients=cfg.get("synth.n_patients", int, defaults.n_patients),
        n_variables=cfg.get("synth.n_variables", int, defaults.n_variables),
        target_missing_rate=cfg.get("synth.target_missing_rate", float,
                                    defaults.target_missing_rate),
        mean_observations_per_stay=cfg.get(
            "synth.mean_observations_per_stay", float,
            defaults.mean_observations_per_stay),
        span_hours=cfg.get("synth.span_hours", float, defaults.span_hours),
        label_noise=cfg.get("synth.label_noise", float, defaults.label_noise),
        seed=seed_override if seed_override is not None
        else cfg.get("synth.seed", int, defaults.seed))
    return out


def _read_split(cfg: ConfigFile) -> tuple[tuple[float, ...], int]:
    ratios = cfg.get("split.ratios", "floats", (0.64, 0.16, 0.20))
    if len(ratios) != 3:
        raise ValidationError("split.ratios must have three entries "
                              "(train, validation, test)")
    return ratios, cfg.get("split.seed", int, 0)


def _read_window(cfg: ConfigFile) -> WindowSpec:
    first = cfg.get("window.first", float, 20.0)
    last = cfg.get("window.last", float, 124.0)
    step = cfg.get("window.step", float, 4.0)
    lookback = cfg.get("window.lookback", float, 24.0)
    horizon = cfg.get("window.horizon", float, 2.0)
    return WindowSpec.regular(first, last, step, lookback, horizon)


def _read_model(cfg: ConfigFile, dataset: Dataset, train_split: Dataset,
                interpretable_flag: bool) -> ModelConfig:
    """Model config with data-dependent fields resolved.

    max_observations = 0 means "99th percentile of training counts";
    time_scale = 0 means "largest observed training time".
    """
    max_obs = cfg.get("model.max_observations", int, 0)
    if max_obs == 0:
        max_obs = observation_count_percentile(train_split, 99.0)
    time_scale = cfg.get("model.time_scale", float, 0.0)
    if time_scale == 0.0:
        time_scale = max(1.0, max(float(s.times.max())
                                  for s in train_split.samples))
    attention_hidden = cfg.get("model.attention_hidden_dim", int, 0)
    return ModelConfig(
        n_variables=len(dataset.vocabulary),
        n_demographics=dataset.demographics_dim,
        embed_dim=cfg.get("model.embed_dim", int, 50),
        n_blocks=cfg.get("model.n_blocks", int, 2),
        n_heads=cfg.get("model.n_heads", int, 4),
        dropout_rate=cfg.get("model.dropout_rate", float, 0.2),
        attention_dropout_rate=cfg.get("model.attention_dropout_rate",
                                       float, 0.2),
        attention_hidden_dim=attention_hidden or None,
        max_observations=max_obs,
        time_scale=time_scale,
        interpretable=interpretable_flag
        or cfg.get("model.interpretable", bool, False))


def _read_train(cfg: ConfigFile, seed_override: int | None) -> TrainConfig:
    d = TrainConfig()
    return TrainConfig(
        batch_size=cfg.get("train.batch_size", int, d.batch_size),
        learning_rate=cfg.get("train.learning_rate", float, d.learning_rate),
        finetune_patience=cfg.get("train.finetune_patience", int,
                                  d.finetune_patience),
        pretrain_patience=cfg.get("train.pretrain_patience", int,
                                  d.pretrain_patience),
        pretrain_epoch_size=cfg.get("train.pretrain_epoch_size", int,
                                    d.pretrain_epoch_size),
        max_epochs=cfg.get("train.max_epochs", int, d.max_epochs),
        seed=seed_override if seed_override is not None
        else cfg.get("train.seed", int, d.seed))


def _read_experiment(cfg: ConfigFile, seed_override: int | None) -> ExperimentConfig:
    return ExperimentConfig(
        labeled_fractions=cfg.get("experiment.fractions", "floats", (1.0,)),
        ss_modes=tuple(cfg.get("experiment.ss_modes", list, ["ss-"])),
        model_kinds=tuple(cfg.get("experiment.models", list, ["standard"])),
        n_runs=cfg.get("experiment.n_runs", int, 1),
        base_seed=seed_override if seed_override is not None
        else cfg.get("experiment.base_seed", int, 0))


# ---------------------------------------------------------------------------
# manifests and small helpers
# ---------------------------------------------------------------------------

def _file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _write_manifest(out_dir: Path, command: str, cfg: ConfigFile,
                    seeds: dict, inputs: list, outputs: list,
                    started: float, extra: dict | None = None) -> None:
    manifest = {"command": command,
                "config_path": cfg.path,
                "config_sha256": cfg.sha256,
                "seeds": seeds,
                "inputs": [str(p) for p in inputs],
                "outputs": [str(p) for p in outputs],
                "wall_clock_seconds": round(time.time() - started, 3),
                "created_utc": datetime.now(timezone.utc).isoformat(),
                "versions": {"strats": __version__,
                             "python": sys.version.split()[0],
                             "numpy": np.__version__}}
    if extra:
        manifest.update(extra)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2)
                                           + "\n", encoding="utf-8")


def _write_history(path: Path, history: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(record) + "\n")


def _prepare_from_dir(data_dir, cfg: ConfigFile, interpretable: bool):
    """Shared ingest -> split -> stats -> model-config pipeline."""
    dataset = load_dataset_dir(data_dir)
    ratios, split_seed = _read_split(cfg)
    train_raw, val_raw, test_raw = split_patients(dataset, ratios, split_seed)
    stats = fit_normalizer(train_raw)
    model_config = _read_model(cfg, dataset, train_raw, interpretable)
    return dataset, (train_raw, val_raw, test_raw), stats, model_config, split_seed


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    started = time.time()
    cfg = ConfigFile(args.config)
    synth_config = _read_synth_config(cfg, args.seed)
    out_dir = Path(args.out)
    dataset = generate_synthetic(synth_config).dataset
    paths = export_csv(dataset, out_dir)
    _write_manifest(out_dir, "synth", cfg, {"synth.seed": synth_config.seed},
                    [], sorted(paths.values()), started,
                    {"n_samples": len(dataset)})
    print(f"wrote {len(dataset)} stays to {out_dir}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    started = time.time()
    cfg = ConfigFile(args.config)
    _, (train_raw, val_raw, _), stats, model_config, split_seed = \
        _prepare_from_dir(args.data, cfg, args.interpretable)
    window_spec = _read_window(cfg)
    train_config = _read_train(cfg, args.seed)

    train_windows = build_forecast_windows(train_raw, window_spec, stats)
    val_windows = build_forecast_windows(val_raw, window_spec, stats)
    store = init_parameters(model_config, train_config.seed)
    history = pretrain(train_windows, val_windows, store, model_config,
                       train_config)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_path, store, model_config, stats)
    history_path = out_path.parent / "history.jsonl"
    _write_history(history_path, history)
    _write_manifest(out_path.parent, "pretrain", cfg,
                    {"split.seed": split_seed, "train.seed": train_config.seed},
                    [args.data], [out_path, history_path], started,
                    {"config_hash": config_hash(model_config),
                     "n_forecast_windows": len(train_windows),
                     "epochs": len(history)})
    print(f"pretrained on {len(train_windows)} windows for "
          f"{len(history)} epochs -> {out_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.time()
    cfg = ConfigFile(args.config)
    _, (train_raw, val_raw, _), stats, model_config, split_seed = \
        _prepare_from_dir(args.data, cfg, args.interpretable)
    train_config = _read_train(cfg, args.seed)

    trunk = None
    lineage: dict = {}
    if args.init:
        ckpt = load_checkpoint(args.init, expected_config=model_config)
        trunk = extract_trunk(ckpt.values)
        lineage = {"init_checkpoint": str(args.init),
                   "init_checkpoint_sha256": _file_hash(args.init)}

    train_labeled = normalize_dataset(train_raw, stats).labeled()
    val_labeled = normalize_dataset(val_raw, stats).labeled()
    if not train_labeled or not val_labeled:
        raise DataError("training and validation splits need labeled samples")
    store, history = finetune(train_labeled, val_labeled, model_config,
                              train_config, pretrained_trunk=trunk)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_path, store, model_config, stats)
    history_path = out_path.parent / "history.jsonl"
    _write_history(history_path, history)
    _write_manifest(out_path.parent, "train", cfg,
                    {"split.seed": split_seed, "train.seed": train_config.seed},
                    [args.data] + ([args.init] if args.init else []),
                    [out_path, history_path], started,
                    {"config_hash": config_hash(model_config),
                     "epochs": len(history), **lineage})
    print(f"trained on {len(train_labeled)} labeled stays for "
          f"{len(history)} epochs -> {out_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    started = time.time()
    cfg = ConfigFile(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.normalization is None:
        raise CheckpointError(f"{args.checkpoint}: checkpoint carries no "
                              f"normalization statistics")
    dataset = load_dataset_dir(args.data)
    ratios, split_seed = _read_split(cfg)
    splits = dict(zip(("train", "val", "test"),
                      split_patients(dataset, ratios, split_seed)))
    chosen = splits[args.split]
    samples = normalize_dataset(chosen, ckpt.normalization).labeled()
    if not samples:
        raise DataError(f"{args.split} split has no labeled samples")

    store = ckpt.to_store()
    metrics = evaluate_model(store, ckpt.model_config, samples)
    probs = predict_probabilities(store, ckpt.model_config, samples)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    report = {"metrics": metrics, "n_test": len(samples),
              "split": args.split,
              "config_hash": ckpt.config_hash,
              "checkpoint_hash": _file_hash(args.checkpoint)}
    out_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    scores_path = out_path.parent / "scores.csv"
    with open(scores_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["stay_id", "score", "label"])
        for sample, p in zip(samples, probs):
            writer.writerow([sample.stay_id, repr(float(p)), sample.label])
    _write_manifest(out_path.parent, "evaluate", cfg,
                    {"split.seed": split_seed},
                    [args.data, args.checkpoint], [out_path, scores_path],
                    started, {"metrics": metrics})
    print(json.dumps(report["metrics"]))
    return EXIT_OK


def cmd_explain(args) -> int:
    started = time.time()
    cfg = ConfigFile(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    if not ckpt.model_config.interpretable:
        raise ValidationError(f"{args.checkpoint}: contribution scores need "
                              f"an interpretable checkpoint")
    if ckpt.normalization is None:
        raise CheckpointError(f"{args.checkpoint}: checkpoint carries no "
                              f"normalization statistics")
    dataset = load_dataset_dir(args.data)
    matches = [s for s in dataset.samples if s.stay_id == args.stay_id]
    if not matches:
        raise DataError(f"stay {args.stay_id!r} not found in {args.data}")
    raw = truncate_observations(matches[0],
                                ckpt.model_config.max_observations)
    normalized = truncate_observations(
        normalize(matches[0], ckpt.normalization),
        ckpt.model_config.max_observations)

    store = ckpt.to_store()
    report = contribution_scores(store, ckpt.model_config, normalized)
    names = dataset.vocabulary.names
    demo_names = dataset.demographic_names

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    # (a) one row per demographic entry and per observation
    contrib_path = out_dir / "contributions.csv"
    with open(contrib_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "time", "variable", "value", "score"])
        for j, score in enumerate(report.demographic_scores):
            writer.writerow(["demographic", "", demo_names[j],
                             repr(float(raw.demographics[j])),
                             repr(float(score))])
        for i, score in enumerate(report.observation_scores):
            writer.writerow(["observation", repr(float(raw.times[i])),
                             names[int(raw.variables[i])],
                             repr(float(raw.values[i])), repr(float(score))])

    # (b) per-variable cumulative scores with the observed value range
    by_variable: dict[str, dict] = {}
    for i, score in enumerate(report.observation_scores):
        name = names[int(raw.variables[i])]
        entry = by_variable.setdefault(
            name, {"count": 0, "vmin": math.inf, "vmax": -math.inf,
                   "score": 0.0})
        entry["count"] += 1
        entry["vmin"] = min(entry["vmin"], float(raw.values[i]))
        entry["vmax"] = max(entry["vmax"], float(raw.values[i]))
        entry["score"] += float(score)
    for j, score in enumerate(report.demographic_scores):
        by_variable[demo_names[j]] = {
            "count": 1, "vmin": float(raw.demographics[j]),
            "vmax": float(raw.demographics[j]), "score": float(score)}
    variables_path = out_dir / "variables.csv"
    with open(variables_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["variable", "n_observations", "value_min",
                         "value_max", "cumulative_score"])
        ranked = sorted(by_variable.items(), key=lambda kv: -kv[1]["score"])
        for name, entry in ranked:
            writer.writerow([name, entry["count"], repr(entry["vmin"]),
                             repr(entry["vmax"]), repr(entry["score"])])

    # (c) plot-ready per-variable (time, value, score) series
    series_path = out_dir / "series.csv"
    with open(series_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["variable", "time", "value", "score"])
        order = np.argsort(raw.variables, kind="stable")
        for i in order:
            writer.writerow([names[int(raw.variables[i])],
                             repr(float(raw.times[i])),
                             repr(float(raw.values[i])),
                             repr(float(report.observation_scores[i]))])

    summary = {"stay_id": args.stay_id,
               "logit": report.logit,
               "probability": report.probability,
               "bias": report.bias,
               "n_observations": int(raw.n_observations),
               "reconstruction_error": report.reconstruction_error}
    (out_dir / "explanation.json").write_text(json.dumps(summary, indent=2)
                                              + "\n", encoding="utf-8")
    _write_manifest(out_dir, "explain", cfg, {},
                    [args.data, args.checkpoint],
                    [contrib_path, variables_path, series_path,
                     out_dir / "explanation.json"], started, summary)
    print(f"stay {args.stay_id}: probability {report.probability:.4f} "
          f"({raw.n_observations} observations) -> {out_dir}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    started = time.time()
    cfg = ConfigFile(args.config)
    dataset = load_dataset_dir(args.data)
    ratios, split_seed = _read_split(cfg)
    window_spec = _read_window(cfg)
    train_raw, _, _ = split_patients(dataset, ratios, split_seed)
    model_config = _read_model(cfg, dataset, train_raw, False)
    train_config = _read_train(cfg, None)
    experiment_config = _read_experiment(cfg, args.seed)

    data = prepare_data(dataset, window_spec, ratios, split_seed)
    report = run_experiment(data, model_config, train_config,
                            experiment_config, workers=args.threads)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n",
                         encoding="utf-8")
    csv_path = out_dir / "report.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "ss_mode", "labeled_fraction", "n_runs",
                         "roc_auc_mean", "roc_auc_std", "pr_auc_mean",
                         "pr_auc_std", "min_re_pr_mean", "min_re_pr_std"])
        for row in report.rows:
            def fmt_std(metric, std=row.std):
                return repr(std[metric]) if std else ""
            writer.writerow([
                row.model, row.ss_mode, row.labeled_fraction, row.n_runs,
                repr(row.mean["roc_auc"]), fmt_std("roc_auc"),
                repr(row.mean["pr_auc"]), fmt_std("pr_auc"),
                repr(row.mean["min_re_pr"]), fmt_std("min_re_pr")])
    _write_manifest(out_dir, "experiment", cfg,
                    {"split.seed": split_seed,
                     "experiment.base_seed": experiment_config.base_seed},
                    [args.data], [json_path, csv_path], started,
                    {"config_fingerprint": report.config_fingerprint,
                     "n_rows": len(report.rows)})
    print(f"wrote {len(report.rows)} aggregate rows -> {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="strats",
        description="Triplet transformer for sparse clinical-style "
                    "time-series: synthesize data, pretrain on forecasting, "
                    "fine-tune, evaluate, and explain.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required, default=None,
                       help="flat key = value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the command's primary seed")

    p = sub.add_parser("synth", help="generate a synthetic cohort as CSVs")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain",
                       help="pretrain the trunk on forecast windows")
    common(p)
    p.add_argument("--data", required=True, help="data directory (CSV layout)")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--interpretable", action="store_true",
                   help="use the interpretable variant")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="fine-tune on the binary target task")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--init", default=None,
                   help="pretrained checkpoint to transfer the trunk from")
    p.add_argument("--interpretable", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="compute metrics for a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--split", choices=("train", "val", "test"),
                   default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain",
                       help="per-observation contribution scores for a stay")
    common(p)
    p.add_argument("--checkpoint", required=True,
                   help="interpretable-model checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--stay-id", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("experiment",
                       help="labeled-fraction x self-supervision grid")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1,
                   help="worker pool size for independent runs")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(limits=1)  # small-matrix workload
    except ImportError:
        pass
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (StratsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
