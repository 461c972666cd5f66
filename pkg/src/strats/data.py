"""Data model for sparse multivariate time-series built from observation triplets.

A sample is a set of (time, variable, value) observations plus a demographics
vector; internally the observations are held as parallel numpy arrays in
canonical (time, variable) order. This module covers CSV ingestion/export,
normalization statistics, forecast-window construction for the
self-supervision task, patient-level splitting, labeled-fraction subsampling,
and observation-count truncation.

All randomized operations are pure functions of (inputs, seed). Every type is
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError


@dataclass(frozen=True)
class ObservationTriplet:
    """One measurement: hours since stay start, variable index, raw value."""
    time: float
    variable: int
    value: float

    def __post_init__(self):
        if not (math.isfinite(self.time) and self.time >= 0):
            raise ValidationError(f"observation time must be finite and >= 0, "
                                  f"got {self.time}")
        if self.variable < 0:
            raise ValidationError("variable index must be non-negative")
        if not math.isfinite(self.value):
            raise ValidationError("observation value must be finite")


@dataclass(frozen=True)
class VariableVocabulary:
    """Ordered variable names; position defines the variable index.

    After `fit_normalizer`, carries per-variable mean and standard deviation
    (population std; degenerate variables get std = 1).
    """
    names: tuple[str, ...]
    means: np.ndarray | None = None
    stds: np.ndarray | None = None

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValidationError("variable names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown variable {name!r}") from None

    @property
    def has_statistics(self) -> bool:
        return self.means is not None and self.stds is not None

    @classmethod
    def from_file(cls, path) -> "VariableVocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        names = tuple(line.strip() for line in lines if line.strip())
        if not names:
            raise DataError(f"vocabulary file {path} is empty")
        return cls(names)

    def to_file(self, path) -> None:
        Path(path).write_text("\n".join(self.names) + "\n", encoding="utf-8")


def _canonical_order(times: np.ndarray, variables: np.ndarray) -> np.ndarray:
    # primary key time, secondary key variable index
    return np.lexsort((variables, times))


@dataclass(frozen=True, eq=False)
class TimeSeriesSample:
    """One stay: observation arrays in canonical order plus demographics.

    `times`, `variables`, `values` are parallel arrays sorted by
    (time, variable). `label` is None for unlabeled stays (usable by the
    forecast task only).
    """
    stay_id: str
    patient_id: str
    times: np.ndarray
    variables: np.ndarray
    values: np.ndarray
    demographics: np.ndarray
    label: int | None = None

    @classmethod
    def create(cls, stay_id: str, patient_id: str, times, variables, values,
               demographics, label: int | None = None) -> "TimeSeriesSample":
        """Validate, canonically sort, and freeze a sample."""
        times = np.asarray(times, dtype=np.float64)
        variables = np.asarray(variables, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        demographics = np.asarray(demographics, dtype=np.float64)
        if not (times.shape == variables.shape == values.shape):
            raise ValidationError("times/variables/values must be parallel arrays")
        if times.size and (not np.all(np.isfinite(times)) or times.min() < 0):
            raise ValidationError("observation times must be finite and >= 0")
        if times.size and not np.all(np.isfinite(values)):
            raise ValidationError("observation values must be finite")
        if variables.size and variables.min() < 0:
            raise ValidationError("variable indices must be non-negative")
        if label is not None and label not in (0, 1):
            raise ValidationError(f"label must be 0 or 1, got {label}")
        order = _canonical_order(times, variables)
        sample = cls(stay_id, patient_id, times[order], variables[order],
                     values[order], demographics.copy(), label)
        for arr in (sample.times, sample.variables, sample.values,
                    sample.demographics):
            arr.flags.writeable = False
        return sample

    @classmethod
    def from_triplets(cls, stay_id: str, patient_id: str,
                      triplets: list[ObservationTriplet], demographics,
                      label: int | None = None) -> "TimeSeriesSample":
        return cls.create(stay_id, patient_id,
                          [t.time for t in triplets],
                          [t.variable for t in triplets],
                          [t.value for t in triplets],
                          demographics, label)

    @property
    def n_observations(self) -> int:
        return int(self.times.size)

    @property
    def triplets(self) -> tuple[ObservationTriplet, ...]:
        return tuple(ObservationTriplet(float(t), int(f), float(v))
                     for t, f, v in zip(self.times, self.variables, self.values))

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeriesSample):
            return NotImplemented
        return (self.stay_id == other.stay_id
                and self.patient_id == other.patient_id
                and self.label == other.label
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.variables, other.variables)
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.demographics, other.demographics))


@dataclass
class Dataset:
    """A list of samples sharing one vocabulary and demographics layout."""
    samples: list[TimeSeriesSample]
    vocabulary: VariableVocabulary
    demographic_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.samples:
            dim = self.samples[0].demographics.size
            for s in self.samples:
                if s.demographics.size != dim:
                    raise ValidationError(
                        "demographics dimension must be constant across a dataset")
                if s.variables.size and s.variables.max() >= len(self.vocabulary):
                    raise DataError(
                        f"stay {s.stay_id}: variable index {int(s.variables.max())} "
                        f"out of range for vocabulary of size {len(self.vocabulary)}")
            if not self.demographic_names:
                self.demographic_names = tuple(f"dim_{i}" for i in range(dim))
            elif len(self.demographic_names) != dim:
                raise ValidationError("demographic_names length must match dimension")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def demographics_dim(self) -> int:
        return self.samples[0].demographics.size if self.samples else 0

    def labeled(self) -> list[TimeSeriesSample]:
        return [s for s in self.samples if s.label is not None]

    def patient_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for s in self.samples:
            seen.setdefault(s.patient_id, None)
        return list(seen)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.samples == other.samples
                and self.vocabulary.names == other.vocabulary.names)


@dataclass(frozen=True)
class NormalizationStats:
    """Per-variable and per-demographic-dimension z-scoring statistics.

    Fitted on the training split only. `time_scale` divides observation
    times; it defaults to 1 because the model applies its own configured
    time scale (kept in the model config so checkpoints are self-contained).
    """
    vocabulary: VariableVocabulary
    demographic_mean: np.ndarray
    demographic_std: np.ndarray
    time_scale: float = 1.0

    @property
    def variable_means(self) -> np.ndarray:
        return self.vocabulary.means

    @property
    def variable_stds(self) -> np.ndarray:
        return self.vocabulary.stds

    @classmethod
    def identity(cls, vocabulary: VariableVocabulary,
                 demographics_dim: int) -> "NormalizationStats":
        n = len(vocabulary)
        return cls(replace(vocabulary, means=np.zeros(n), stds=np.ones(n)),
                   np.zeros(demographics_dim), np.ones(demographics_dim), 1.0)


@dataclass(frozen=True)
class ForecastSample:
    """A windowed sample for the forecasting pretext task.

    `base` holds the observation-window triplets with times re-origined to the
    window start and values/demographics normalized. `forecast_values[f]` is
    the normalized value of the last observation of variable f inside the
    prediction window where `forecast_mask[f]` is 1, and 0 elsewhere.
    """
    base: TimeSeriesSample
    forecast_mask: np.ndarray
    forecast_values: np.ndarray
    endpoint: float
    window_start: float


@dataclass(frozen=True)
class WindowSpec:
    """Observation/prediction window layout for forecast-sample construction.

    For each endpoint x, the observation window is [max(0, x - lookback), x)
    and the prediction window is [x, x + horizon). Use an infinite lookback
    for full-history observation windows.
    """
    window_endpoints: tuple[float, ...]
    lookback: float
    horizon: float = 2.0

    def __post_init__(self):
        if not self.window_endpoints:
            raise ValidationError("window spec needs at least one endpoint")
        ends = np.asarray(self.window_endpoints)
        if ends.size > 1 and not np.all(np.diff(ends) > 0):
            raise ValidationError("window endpoints must be strictly increasing")
        if self.horizon <= 0:
            raise ValidationError("horizon must be positive")
        if self.lookback <= 0:
            raise ValidationError("lookback must be positive")

    @classmethod
    def regular(cls, first: float, last: float, step: float = 4.0,
                lookback: float = 24.0, horizon: float = 2.0) -> "WindowSpec":
        """Endpoints first, first+step, ..., last (inclusive)."""
        n = int(round((last - first) / step))
        endpoints = tuple(first + i * step for i in range(n + 1))
        return cls(endpoints, lookback, horizon)


# ---------------------------------------------------------------------------
# CSV ingestion / export
# ---------------------------------------------------------------------------

TRIPLETS_HEADER = ["stay_id", "time", "variable", "value"]
LABELS_HEADER = ["stay_id", "label"]
PATIENTS_HEADER = ["stay_id", "patient_id"]


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        yield from enumerate(csv.reader(fh), start=1)


def _parse_float(text: str, what: str, path, line: int) -> float:
    try:
        x = float(text)
    except ValueError:
        raise DataError(f"{path}:{line}: non-numeric {what} {text!r}") from None
    if not math.isfinite(x):
        raise DataError(f"{path}:{line}: non-finite {what} {text!r}")
    return x


def ingest_csv(triplets_path, demographics_path, labels_path,
               vocabulary: VariableVocabulary,
               patients_path=None) -> Dataset:
    """Load a dataset from the documented CSV layout.

    One TimeSeriesSample per stay_id in the triplets file, observations in
    canonical (time, variable) order. Stays absent from the labels file get
    label = None. The optional patients file maps stay_id -> patient_id for
    patient-level splits; stays not listed default to patient_id = stay_id.

    Raises DataError, with the offending file and line number, for malformed
    rows, unknown variables, negative times, duplicate observations, and
    missing or duplicated demographics/label rows.
    """
    index_of = {name: i for i, name in enumerate(vocabulary.names)}

    stays: dict[str, list[tuple[float, int, float]]] = {}
    seen_obs: set[tuple[str, float, int]] = set()
    rows = _read_rows(triplets_path)
    _, header = next(rows, (0, None))
    if header != TRIPLETS_HEADER:
        raise DataError(f"{triplets_path}:1: expected header "
                        f"{','.join(TRIPLETS_HEADER)!r}")
    for line, row in rows:
        if not row:
            continue
        if len(row) != 4:
            raise DataError(f"{triplets_path}:{line}: expected 4 fields, "
                            f"got {len(row)}")
        stay_id, time_text, var_name, value_text = row
        t = _parse_float(time_text, "time", triplets_path, line)
        if t < 0:
            raise DataError(f"{triplets_path}:{line}: negative time {t}")
        if var_name not in index_of:
            raise DataError(f"{triplets_path}:{line}: unknown variable "
                            f"{var_name!r}")
        v = _parse_float(value_text, "value", triplets_path, line)
        key = (stay_id, t, index_of[var_name])
        if key in seen_obs:
            raise DataError(f"{triplets_path}:{line}: duplicate observation "
                            f"(stay {stay_id!r}, time {t}, "
                            f"variable {var_name!r})")
        seen_obs.add(key)
        stays.setdefault(stay_id, []).append((t, index_of[var_name], v))

    demographics: dict[str, np.ndarray] = {}
    rows = _read_rows(demographics_path)
    _, header = next(rows, (0, None))
    if header is None or header[0] != "stay_id" or len(header) < 2:
        raise DataError(f"{demographics_path}:1: expected header "
                        f"'stay_id,<dim_0>,...'")
    demo_names = tuple(header[1:])
    for line, row in rows:
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{demographics_path}:{line}: expected "
                            f"{len(header)} fields, got {len(row)}")
        stay_id = row[0]
        if stay_id in demographics:
            raise DataError(f"{demographics_path}:{line}: duplicate "
                            f"demographics for stay {stay_id!r}")
        demographics[stay_id] = np.array(
            [_parse_float(x, "demographic", demographics_path, line)
             for x in row[1:]])

    labels: dict[str, int] = {}
    rows = _read_rows(labels_path)
    _, header = next(rows, (0, None))
    if header != LABELS_HEADER:
        raise DataError(f"{labels_path}:1: expected header "
                        f"{','.join(LABELS_HEADER)!r}")
    for line, row in rows:
        if not row:
            continue
        if len(row) != 2:
            raise DataError(f"{labels_path}:{line}: expected 2 fields, "
                            f"got {len(row)}")
        stay_id, label_text = row
        if label_text not in ("0", "1"):
            raise DataError(f"{labels_path}:{line}: label must be 0 or 1, "
                            f"got {label_text!r}")
        if stay_id in labels:
            raise DataError(f"{labels_path}:{line}: duplicate label for stay "
                            f"{stay_id!r}")
        if stay_id not in stays:
            raise DataError(f"{labels_path}:{line}: label for unknown stay "
                            f"{stay_id!r}")
        labels[stay_id] = int(label_text)

    patients: dict[str, str] = {}
    if patients_path is not None:
        rows = _read_rows(patients_path)
        _, header = next(rows, (0, None))
        if header != PATIENTS_HEADER:
            raise DataError(f"{patients_path}:1: expected header "
                            f"{','.join(PATIENTS_HEADER)!r}")
        for line, row in rows:
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{patients_path}:{line}: expected 2 fields, "
                                f"got {len(row)}")
            if row[0] not in stays:
                raise DataError(f"{patients_path}:{line}: patient mapping for "
                                f"unknown stay {row[0]!r}")
            patients[row[0]] = row[1]

    samples = []
    for stay_id, triples in stays.items():
        if stay_id not in demographics:
            raise DataError(f"stay {stay_id!r} has observations but no "
                            f"demographics row")
        times, variables, values = zip(*triples)
        samples.append(TimeSeriesSample.create(
            stay_id, patients.get(stay_id, stay_id), times, variables, values,
            demographics[stay_id], labels.get(stay_id)))
    return Dataset(samples, vocabulary, demo_names)


def export_csv(dataset: Dataset, out_dir) -> dict[str, Path]:
    """Write a dataset back to the documented CSV layout.

    Emits triplets.csv, demographics.csv, labels.csv, patients.csv, and
    vocabulary.txt into `out_dir`; returns the written paths. Floats are
    written with repr so ingest(export(dataset)) == dataset.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: out_dir / f"{name}.csv"
             for name in ("triplets", "demographics", "labels", "patients")}
    paths["vocabulary"] = out_dir / "vocabulary.txt"

    with open(paths["triplets"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIPLETS_HEADER)
        for s in dataset.samples:
            for t, f, v in zip(s.times, s.variables, s.values):
                w.writerow([s.stay_id, repr(float(t)),
                            dataset.vocabulary.names[int(f)], repr(float(v))])

    with open(paths["demographics"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stay_id", *dataset.demographic_names])
        for s in dataset.samples:
            w.writerow([s.stay_id, *(repr(float(x)) for x in s.demographics)])

    with open(paths["labels"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABELS_HEADER)
        for s in dataset.samples:
            if s.label is not None:
                w.writerow([s.stay_id, s.label])

    with open(paths["patients"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATIENTS_HEADER)
        for s in dataset.samples:
            w.writerow([s.stay_id, s.patient_id])

    dataset.vocabulary.to_file(paths["vocabulary"])
    return paths


def load_dataset_dir(data_dir) -> Dataset:
    """Ingest the export_csv layout from a directory."""
    data_dir = Path(data_dir)
    patients = data_dir / "patients.csv"
    return ingest_csv(data_dir / "triplets.csv", data_dir / "demographics.csv",
                      data_dir / "labels.csv",
                      VariableVocabulary.from_file(data_dir / "vocabulary.txt"),
                      patients if patients.exists() else None)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def fit_normalizer(dataset: Dataset, time_scale: float = 1.0) -> NormalizationStats:
    """Per-variable and per-demographic mean/std over a (training) dataset.

    Population standard deviation; variables or dimensions with zero observed
    variance (including never-observed variables) get std = 1 so
    normalization never divides by zero.
    """
    if not dataset.samples:
        raise ValidationError("cannot fit normalization statistics on an "
                              "empty dataset")
    n_vars = len(dataset.vocabulary)
    total = np.zeros(n_vars)
    count = np.zeros(n_vars)
    for s in dataset.samples:
        np.add.at(total, s.variables, s.values)
        np.add.at(count, s.variables, 1)
    observed = count > 0
    means = np.where(observed, total / np.maximum(count, 1), 0.0)
    # second pass over centered values avoids cancellation for large offsets
    total_sq = np.zeros(n_vars)
    for s in dataset.samples:
        np.add.at(total_sq, s.variables,
                  (s.values - means[s.variables]) ** 2)
    variances = np.where(observed, total_sq / np.maximum(count, 1), 0.0)
    stds = np.sqrt(np.maximum(variances, 0.0))
    stds = np.where(stds > 0, stds, 1.0)

    demo = np.stack([s.demographics for s in dataset.samples])
    demo_mean = demo.mean(axis=0)
    demo_std = demo.std(axis=0)
    demo_std = np.where(demo_std > 0, demo_std, 1.0)

    vocab = replace(dataset.vocabulary, means=means, stds=stds)
    return NormalizationStats(vocab, demo_mean, demo_std, time_scale)


def normalize(sample: TimeSeriesSample,
              stats: NormalizationStats) -> TimeSeriesSample:
    """Z-score values and demographics; divide times by stats.time_scale."""
    if not stats.vocabulary.has_statistics:
        raise ValidationError("normalization statistics have not been fitted")
    if sample.variables.size and sample.variables.max() >= len(stats.vocabulary):
        raise DataError(f"stay {sample.stay_id}: variable index "
                        f"{int(sample.variables.max())} missing from statistics")
    values = ((sample.values - stats.variable_means[sample.variables])
              / stats.variable_stds[sample.variables])
    demo = (sample.demographics - stats.demographic_mean) / stats.demographic_std
    return TimeSeriesSample.create(sample.stay_id, sample.patient_id,
                                   sample.times / stats.time_scale,
                                   sample.variables, values, demo, sample.label)


def normalize_dataset(dataset: Dataset, stats: NormalizationStats) -> Dataset:
    return Dataset([normalize(s, stats) for s in dataset.samples],
                   stats.vocabulary, dataset.demographic_names)


# ---------------------------------------------------------------------------
# forecast windows
# ---------------------------------------------------------------------------

def build_forecast_windows(dataset: Dataset, window_spec: WindowSpec,
                           stats: NormalizationStats) -> list[ForecastSample]:
    """Slice every stay (labeled or not) into forecast training samples.

    For each endpoint x: observations in [max(0, x - lookback), x) form the
    input (times re-origined to the window start); the target for variable f
    is its last observation in [x, x + horizon), normalized with `stats`.
    Windows with no input observation or no observed target are dropped.

    `dataset` must hold raw (unnormalized) values; the emitted samples are
    normalized and ready for the model.
    """
    n_vars = len(stats.vocabulary)
    out: list[ForecastSample] = []
    for s in dataset.samples:
        demo = (s.demographics - stats.demographic_mean) / stats.demographic_std
        norm_values = ((s.values - stats.variable_means[s.variables])
                       / stats.variable_stds[s.variables])
        for x in window_spec.window_endpoints:
            start = 0.0 if math.isinf(window_spec.lookback) \
                else max(0.0, x - window_spec.lookback)
            lo = np.searchsorted(s.times, start, side="left")
            mid = np.searchsorted(s.times, x, side="left")
            hi = np.searchsorted(s.times, x + window_spec.horizon, side="left")
            if mid == lo or hi == mid:
                continue
            mask = np.zeros(n_vars, dtype=np.int8)
            targets = np.zeros(n_vars, dtype=np.float64)
            # last observation per variable in the prediction window: first
            # occurrence in the reversed (time-descending) slice
            rev_vars = s.variables[mid:hi][::-1]
            rev_vals = norm_values[mid:hi][::-1]
            uniq, first_idx = np.unique(rev_vars, return_index=True)
            mask[uniq] = 1
            targets[uniq] = rev_vals[first_idx]
            base = TimeSeriesSample.create(
                s.stay_id, s.patient_id, s.times[lo:mid] - start,
                s.variables[lo:mid], norm_values[lo:mid], demo, None)
            out.append(ForecastSample(base, mask, targets, float(x), start))
    return out


# ---------------------------------------------------------------------------
# splits and subsampling
# ---------------------------------------------------------------------------

def split_patients(dataset: Dataset, ratios: tuple[float, ...],
                   seed: int) -> tuple[Dataset, ...]:
    """Partition stays at patient level into len(ratios) datasets.

    All stays of a patient land in exactly one split; patient counts per
    split are within one of the exact ratio. Deterministic given the seed.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValidationError(f"split ratios must sum to 1, got {sum(ratios)}")
    patients = sorted(dataset.patient_ids())
    if len(patients) < len(ratios):
        raise ValidationError(f"cannot split {len(patients)} patients into "
                              f"{len(ratios)} groups")
    rng = np.random.default_rng(seed)
    perm = [patients[i] for i in rng.permutation(len(patients))]
    bounds = [0] + [int(round(sum(ratios[:i + 1]) * len(patients)))
                    for i in range(len(ratios))]
    bounds[-1] = len(patients)
    assignment: dict[str, int] = {}
    for i in range(len(ratios)):
        for p in perm[bounds[i]:bounds[i + 1]]:
            assignment[p] = i
    groups: list[list[TimeSeriesSample]] = [[] for _ in ratios]
    for s in dataset.samples:
        groups[assignment[s.patient_id]].append(s)
    return tuple(Dataset(g, dataset.vocabulary, dataset.demographic_names)
                 for g in groups)


def sample_labeled_fraction(dataset: Dataset, fraction: float,
                            seed: int) -> Dataset:
    """Keep labels on a uniform random `fraction` of the labeled samples.

    The remaining samples stay in the dataset with their labels stripped, so
    they remain available to forecast-window construction. Unlabeled samples
    pass through untouched. Deterministic given the seed.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValidationError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return dataset
    labeled_idx = [i for i, s in enumerate(dataset.samples)
                   if s.label is not None]
    k = int(round(fraction * len(labeled_idx)))
    rng = np.random.default_rng(seed)
    keep = set(rng.choice(len(labeled_idx), size=k, replace=False).tolist())
    kept_idx = {labeled_idx[j] for j in keep}
    samples = [s if (s.label is None or i in kept_idx) else replace(s, label=None)
               for i, s in enumerate(dataset.samples)]
    return Dataset(samples, dataset.vocabulary, dataset.demographic_names)


def truncate_observations(sample: TimeSeriesSample,
                          max_n: int) -> TimeSeriesSample:
    """Keep the max_n most recent observations (ties resolved by the
    canonical (time, variable) order); identity when already short enough."""
    if max_n < 1:
        raise ValidationError("max_n must be >= 1")
    if sample.n_observations <= max_n:
        return sample
    return replace(sample, times=sample.times[-max_n:],
                   variables=sample.variables[-max_n:],
                   values=sample.values[-max_n:])


def observation_count_percentile(dataset: Dataset, q: float = 99.0) -> int:
    """The q-th percentile of per-stay observation counts (for truncation)."""
    counts = np.array([s.n_observations for s in dataset.samples])
    return max(1, int(np.percentile(counts, q)))
