"""Synthetic sparse time-series cohorts for desk-scale verification.

Each patient gets per-variable observation streams from Poisson processes
whose rates follow a long-tailed profile, calibrated so the expected fraction
of never-observed (variable, stay) pairs matches the configured missing rate
and the expected total observation count per stay matches the configured
mean. Values are noisy readings of slowly varying latent random walks, and
the binary label thresholds a fixed sparse linear function of the
late-window latent averages of a few designated signal variables plus the
demographics - so the task is learnable from the triplets, and forecasting
the near future of the signal variables transfers to the target task.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, TimeSeriesSample, VariableVocabulary
from .errors import ValidationError

N_SIGNAL_VARIABLES = 5
_SIGNAL_WEIGHTS = np.array([1.0, -1.0, 0.8, -0.8, 0.6])
_DEMOGRAPHIC_WEIGHTS = np.array([0.25, -0.25])
_LATE_WINDOW_FRACTION = 0.25     # label depends on the last quarter of the stay
_POSITIVE_QUANTILE = 0.65        # label threshold -> ~35% positive class
_GRID_POINTS = 17                # latent random-walk resolution per stay
_WALK_STD = 0.8                  # latent drift over the full span
_OBSERVATION_NOISE = 0.15


@dataclass(frozen=True)
class SyntheticConfig:
    """Cohort shape knobs. Defaults mirror a large ICU extraction: 129
    variables, 89.7% average variable missing rate, 401 observations/stay."""
    n_patients: int = 100
    n_variables: int = 129
    target_missing_rate: float = 0.897
    mean_observations_per_stay: float = 401.0
    span_hours: float = 48.0
    label_noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n_patients <= 0 or self.n_variables <= 0:
            raise ValidationError("n_patients and n_variables must be positive")
        if not 0.0 <= self.target_missing_rate < 1.0:
            raise ValidationError("target_missing_rate must be in [0, 1)")
        if self.mean_observations_per_stay <= 0:
            raise ValidationError("mean_observations_per_stay must be positive")
        if self.span_hours <= 0:
            raise ValidationError("span_hours must be positive")
        if not 0.0 <= self.label_noise <= 0.5:
            raise ValidationError("label_noise must be in [0, 0.5]")
        if self.n_variables < N_SIGNAL_VARIABLES:
            raise ValidationError(
                f"need at least {N_SIGNAL_VARIABLES} variables for the label "
                f"function")

    @classmethod
    def benchmark(cls, seed: int = 0) -> "SyntheticConfig":
        """The default desk-scale benchmark: 3000 patients so a
        (2/3, 1/6, 1/6) patient split yields 2000/500/500 stays."""
        return cls(n_patients=3000, n_variables=20, target_missing_rate=0.5,
                   mean_observations_per_stay=40.0, span_hours=48.0,
                   label_noise=0.05, seed=seed)


BENCHMARK_SPLIT_RATIOS = (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0)


def benchmark_window_spec():
    """Forecast windows for the 48-hour benchmark stays: endpoints every 4h
    in [12, 44], 24h lookback, 2h prediction horizon."""
    from .data import WindowSpec
    return WindowSpec.regular(12.0, 44.0, 4.0, lookback=24.0, horizon=2.0)


def benchmark_model_config(interpretable: bool = False):
    """Compact model for the benchmark cohort (embed_dim 32, 2 blocks,
    4 heads, truncation at 64 observations, times scaled by the 48h span)."""
    from .model import ModelConfig
    return ModelConfig(n_variables=20, n_demographics=2, embed_dim=32,
                       n_blocks=2, n_heads=4, max_observations=64,
                       time_scale=48.0, interpretable=interpretable)


@dataclass(frozen=True)
class SyntheticDataset:
    """Generated cohort plus the latent scores behind the labels (the scores
    are exposed for oracle tests; they are not part of the observable data)."""
    dataset: Dataset
    latent_scores: np.ndarray
    threshold: float


def expected_observation_rates(config: SyntheticConfig) -> np.ndarray:
    """Per-variable expected observation counts per stay.

    Rates follow a geometric profile lam_v proportional to rho**(v / (F-1)).
    The total is pinned to mean_observations_per_stay exactly, and the tail
    steepness rho is solved by bisection so the expected never-observed
    fraction mean_v(exp(-lam_v)) matches target_missing_rate.
    """
    n = config.n_variables
    mean_total = config.mean_observations_per_stay

    def profile(log_rho: float) -> np.ndarray:
        exponents = np.arange(n) / max(n - 1, 1)
        g = np.exp(log_rho * exponents)
        return g * (mean_total / g.sum())

    def missing(log_rho: float) -> float:
        return float(np.mean(np.exp(-profile(log_rho))))

    lo, hi = -60.0, 0.0  # rho in [e^-60, 1]; missing() decreases in log_rho
    if missing(hi) >= config.target_missing_rate:
        return profile(hi)
    if missing(lo) <= config.target_missing_rate:
        return profile(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if missing(mid) > config.target_missing_rate:
            lo = mid
        else:
            hi = mid
    return profile(0.5 * (lo + hi))


def generate_synthetic(config: SyntheticConfig) -> SyntheticDataset:
    """Deterministic cohort of `n_patients` single-stay patients."""
    rng = np.random.default_rng(config.seed)
    n, span = config.n_variables, config.span_hours
    rates = expected_observation_rates(config)
    # signal variables are the most frequently observed ones
    signal = np.argsort(rates)[::-1][:N_SIGNAL_VARIABLES]

    # distinct raw scales per variable so normalization matters
    raw_offset = rng.normal(0.0, 3.0, size=n)
    raw_scale = rng.uniform(0.5, 5.0, size=n)

    grid = np.linspace(0.0, span, _GRID_POINTS)
    late = grid >= (1.0 - _LATE_WINDOW_FRACTION) * span

    samples: list[TimeSeriesSample] = []
    scores = np.zeros(config.n_patients)
    demo_all = rng.standard_normal((config.n_patients, 2))
    for p in range(config.n_patients):
        base = rng.standard_normal(n)
        steps = rng.normal(0.0, _WALK_STD / np.sqrt(_GRID_POINTS - 1),
                           size=(n, _GRID_POINTS - 1))
        walk = np.concatenate([np.zeros((n, 1)), np.cumsum(steps, axis=1)],
                              axis=1)
        latent = base[:, None] + walk  # (n_variables, grid)

        counts = rng.poisson(rates)
        if counts.sum() == 0:
            counts[signal[0]] = 1  # training needs at least one observation
        var_idx = np.repeat(np.arange(n), counts)
        times = rng.uniform(0.0, span, size=var_idx.size)
        latent_at_t = np.empty(var_idx.size)
        for v in np.unique(var_idx):
            sel = var_idx == v
            latent_at_t[sel] = np.interp(times[sel], grid, latent[v])
        noisy = latent_at_t + rng.normal(0.0, _OBSERVATION_NOISE,
                                         size=var_idx.size)
        values = raw_offset[var_idx] + raw_scale[var_idx] * noisy

        scores[p] = (float(_SIGNAL_WEIGHTS @ latent[signal][:, late].mean(axis=1))
                     + float(_DEMOGRAPHIC_WEIGHTS @ demo_all[p]))
        samples.append(TimeSeriesSample.create(
            f"s{p:05d}", f"p{p:05d}", times, var_idx, values, demo_all[p]))

    threshold = float(np.quantile(scores, _POSITIVE_QUANTILE))
    flips = rng.random(config.n_patients) < config.label_noise
    labels = (scores > threshold) ^ flips
    samples = [TimeSeriesSample.create(s.stay_id, s.patient_id, s.times,
                                       s.variables, s.values, s.demographics,
                                       int(labels[p]))
               for p, s in enumerate(samples)]

    vocab = VariableVocabulary(tuple(f"var{v:03d}" for v in range(n)))
    dataset = Dataset(samples, vocab, ("demo_0", "demo_1"))
    return SyntheticDataset(dataset, scores, threshold)
