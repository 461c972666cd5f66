"""Forward computation of the triplet transformer.

Pipeline: each (time, variable, value) observation is embedded as the sum of
a variable-table row and two learned scalar embeddings (one for the value,
one for the time); a stack of post-norm transformer blocks contextualizes the
observation set (no positional encoding - the input is a set, and time enters
only through its embedding); a fusion self-attention layer collapses the set
to a single time-series embedding; separate linear heads produce the binary
target probability and the per-variable forecast.

The interpretable variant computes fusion weights from the contextual
embeddings but applies them to the *initial* embeddings and feeds the raw
(normalized) demographics vector straight to the head, which makes the logit
an exact sum of per-observation and per-demographic contribution scores.

Batches pad observation sequences to the batch maximum; padded positions are
excluded from every softmax, so they never influence real positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import ForecastSample, TimeSeriesSample, truncate_observations
from .errors import ValidationError
from .optim import ParameterStore

ATTENTION_MASK_VALUE = -1e9


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults follow the reference setup
    (embed_dim 50, 2 blocks, 4 heads, dropout 0.2)."""
    n_variables: int
    n_demographics: int
    embed_dim: int = 50
    n_blocks: int = 2
    n_heads: int = 4
    dropout_rate: float = 0.2
    attention_dropout_rate: float = 0.2
    attention_hidden_dim: int | None = None  # defaults to embed_dim
    max_observations: int = 512
    time_scale: float = 1.0
    interpretable: bool = False

    def __post_init__(self):
        if self.n_variables <= 0 or self.n_demographics <= 0:
            raise ValidationError("variable and demographics counts must be "
                                  "positive")
        if self.embed_dim <= 0 or self.n_blocks < 0 or self.n_heads <= 0:
            raise ValidationError("embed_dim and n_heads must be positive")
        if self.embed_dim % self.n_heads != 0:
            raise ValidationError(
                f"embed_dim {self.embed_dim} must be divisible by n_heads "
                f"{self.n_heads}")
        for rate in (self.dropout_rate, self.attention_dropout_rate):
            if not 0.0 <= rate < 1.0:
                raise ValidationError("dropout rates must be in [0, 1)")
        if self.max_observations < 1:
            raise ValidationError("max_observations must be >= 1")
        if self.time_scale <= 0:
            raise ValidationError("time_scale must be positive")

    @property
    def cve_hidden_dim(self) -> int:
        return math.isqrt(self.embed_dim)

    @property
    def fusion_hidden_dim(self) -> int:
        return self.attention_hidden_dim or self.embed_dim

    @property
    def head_input_dim(self) -> int:
        """Width of [demographics embedding, time-series embedding]."""
        if self.interpretable:
            return self.n_demographics + self.embed_dim
        return 2 * self.embed_dim

    @property
    def variant(self) -> str:
        return "interpretable" if self.interpretable else "standard"

    def to_dict(self) -> dict:
        return {"n_variables": self.n_variables,
                "n_demographics": self.n_demographics,
                "embed_dim": self.embed_dim, "n_blocks": self.n_blocks,
                "n_heads": self.n_heads, "dropout_rate": self.dropout_rate,
                "attention_dropout_rate": self.attention_dropout_rate,
                "attention_hidden_dim": self.attention_hidden_dim,
                "max_observations": self.max_observations,
                "time_scale": self.time_scale,
                "interpretable": self.interpretable}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def init_parameters(config: ModelConfig, seed: int,
                    dtype=np.float32) -> ParameterStore:
    """Fresh parameter store for `config`.

    Glorot-uniform matrices, zero biases, 0.02-scaled normal rows for the
    variable embedding table, unit gains for layer norms.
    """
    rng = np.random.default_rng(seed)
    store = ParameterStore(dtype)
    d, s = config.embed_dim, config.cve_hidden_dim
    for prefix in ("cve_time", "cve_value"):
        store.create(f"{prefix}.w", (1, s), "glorot", rng)
        store.create(f"{prefix}.b", (s,), "zeros", rng)
        store.create(f"{prefix}.u", (s, d), "glorot", rng)
    store.create("features.table", (config.n_variables, d), "embedding", rng)
    for i in range(config.n_blocks):
        for proj in ("wq", "wk", "wv", "wc"):
            store.create(f"block{i}.attn.{proj}", (d, d), "glorot", rng)
        store.create(f"block{i}.attn_norm.gain", (d,), "ones", rng)
        store.create(f"block{i}.attn_norm.bias", (d,), "zeros", rng)
        store.create(f"block{i}.ffn.w1", (d, 2 * d), "glorot", rng)
        store.create(f"block{i}.ffn.b1", (2 * d,), "zeros", rng)
        store.create(f"block{i}.ffn.w2", (2 * d, d), "glorot", rng)
        store.create(f"block{i}.ffn.b2", (d,), "zeros", rng)
        store.create(f"block{i}.ffn_norm.gain", (d,), "ones", rng)
        store.create(f"block{i}.ffn_norm.bias", (d,), "zeros", rng)
    da = config.fusion_hidden_dim
    store.create("fusion.w", (d, da), "glorot", rng)
    store.create("fusion.b", (da,), "zeros", rng)
    store.create("fusion.u", (da, 1), "glorot", rng)
    if not config.interpretable:
        D = config.n_demographics
        store.create("demographics.w1", (D, 2 * d), "glorot", rng)
        store.create("demographics.b1", (2 * d,), "zeros", rng)
        store.create("demographics.w2", (2 * d, d), "glorot", rng)
        store.create("demographics.b2", (d,), "zeros", rng)
    hd = config.head_input_dim
    store.create(f"head.{config.variant}.target.w", (hd, 1), "glorot", rng)
    store.create(f"head.{config.variant}.target.b", (1,), "zeros", rng)
    store.create(f"head.{config.variant}.forecast.w",
                 (hd, config.n_variables), "glorot", rng)
    store.create(f"head.{config.variant}.forecast.b",
                 (config.n_variables,), "zeros", rng)
    return store


def trunk_parameter_names(store: ParameterStore) -> list[str]:
    """Everything shared between the forecast and target tasks (no heads)."""
    return [n for n in store.names() if not n.startswith("head.")]


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    """Padded arrays for a list of samples; `present` is 1 for real
    observations and 0 for padding."""
    times: np.ndarray        # (B, n)
    values: np.ndarray       # (B, n)
    variables: np.ndarray    # (B, n) int
    present: np.ndarray      # (B, n) 1.0 / 0.0
    demographics: np.ndarray  # (B, D)
    stay_ids: list[str]
    labels: np.ndarray | None = None          # (B,)
    forecast_values: np.ndarray | None = None  # (B, F)
    forecast_mask: np.ndarray | None = None    # (B, F)

    @property
    def size(self) -> int:
        return self.times.shape[0]


def make_batch(samples, config: ModelConfig) -> Batch:
    """Pad a list of TimeSeriesSample or ForecastSample to the batch max
    length, truncating each to config.max_observations first."""
    if not samples:
        raise ValidationError("cannot build an empty batch")
    forecast = isinstance(samples[0], ForecastSample)
    base = [s.base if forecast else s for s in samples]
    base = [truncate_observations(s, config.max_observations) for s in base]
    if any(s.n_observations == 0 for s in base):
        empty = next(s for s in base if s.n_observations == 0)
        raise ValidationError(f"stay {empty.stay_id} has no observations")
    n = max(s.n_observations for s in base)
    b = len(base)
    times = np.zeros((b, n), dtype=np.float32)
    values = np.zeros((b, n), dtype=np.float32)
    variables = np.zeros((b, n), dtype=np.int64)
    present = np.zeros((b, n), dtype=np.float32)
    demo = np.zeros((b, base[0].demographics.size), dtype=np.float32)
    for i, s in enumerate(base):
        k = s.n_observations
        times[i, :k] = s.times
        values[i, :k] = s.values
        variables[i, :k] = s.variables
        present[i, :k] = 1.0
        demo[i] = s.demographics
    labels = None
    if not forecast and all(s.label is not None for s in base):
        labels = np.array([s.label for s in base], dtype=np.float32)
    fvals = fmask = None
    if forecast:
        fvals = np.stack([s.forecast_values for s in samples]).astype(np.float32)
        fmask = np.stack([s.forecast_mask for s in samples]).astype(np.float32)
    return Batch(times, values, variables, present, demo,
                 [s.stay_id for s in base], labels, fvals, fmask)


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def cve_forward(x: Tensor, w: Tensor, b: Tensor, u: Tensor) -> Tensor:
    """Scalar-to-vector embedding u' tanh(w x + b); x has shape (..., 1)."""
    return ad.matmul(ad.tanh(ad.add(ad.matmul(x, w), b)), u)


def initial_triplet_embed(store: ParameterStore, config: ModelConfig,
                          times: np.ndarray, variables: np.ndarray,
                          values: np.ndarray) -> Tensor:
    """Sum of variable, value, and time embeddings; shape (B, n, d)."""
    t_in = Tensor((times / config.time_scale)[..., None])
    v_in = Tensor(values[..., None])
    e_t = cve_forward(t_in, store["cve_time.w"], store["cve_time.b"],
                      store["cve_time.u"])
    e_v = cve_forward(v_in, store["cve_value.w"], store["cve_value.b"],
                      store["cve_value.u"])
    e_f = ad.gather_rows(store["features.table"], variables)
    return ad.add(ad.add(e_f, e_v), e_t)


def _attention_dropout_mask(pad_keys: np.ndarray, shape: tuple[int, ...],
                            rate: float, rng: np.random.Generator) -> np.ndarray:
    """Random logit mask at `rate`, re-sampled for any row it would fully
    mask (combined with the key-padding mask) so softmax stays valid."""
    drop = rng.random(shape, dtype=np.float32) < rate
    for _ in range(10):
        dead = np.all(drop | pad_keys, axis=-1, keepdims=True)
        if not dead.any():
            return drop
        redraw = rng.random(shape, dtype=np.float32) < rate
        drop = np.where(dead, redraw, drop)
    dead = np.all(drop | pad_keys, axis=-1, keepdims=True)
    return np.where(dead, False, drop)


def mha_forward(e: Tensor, store: ParameterStore, prefix: str,
                config: ModelConfig, pad_keys: np.ndarray,
                training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
    """Multi-head scaled dot-product self-attention, (B, n, d) -> (B, n, d).

    `pad_keys` is (B, 1, 1, n) boolean, True where the key position is
    padding; masked logits are set to a large negative before the softmax,
    and attention dropout (training only) masks additional logit positions
    the same way.
    """
    bsz, n, d = e.data.shape
    h, dh = config.n_heads, d // config.n_heads

    def heads(name):
        proj = ad.matmul(e, store[f"{prefix}.{name}"])
        return ad.transpose(ad.reshape(proj, (bsz, n, h, dh)), (0, 2, 1, 3))

    q, k, v = heads("wq"), heads("wk"), heads("wv")
    logits = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))),
                      1.0 / math.sqrt(dh))
    mask = pad_keys  # broadcasts over heads and query positions
    if training and config.attention_dropout_rate > 0:
        drop = _attention_dropout_mask(pad_keys, logits.data.shape,
                                       config.attention_dropout_rate, rng)
        mask = pad_keys | drop
    attn = ad.softmax(ad.masked_fill(logits, mask, ATTENTION_MASK_VALUE))
    mixed = ad.matmul(attn, v)
    merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (bsz, n, d))
    return ad.matmul(merged, store[f"{prefix}.wc"])


def transformer_block(e: Tensor, store: ParameterStore, index: int,
                      config: ModelConfig, pad_keys: np.ndarray,
                      training: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
    """Post-norm block: layer_norm(x + dropout(sublayer(x))) twice."""
    p = f"block{index}"
    attended = mha_forward(e, store, f"{p}.attn", config, pad_keys, training, rng)
    attended = ad.dropout(attended, config.dropout_rate, training, rng)
    x = ad.layer_norm(ad.add(e, attended), store[f"{p}.attn_norm.gain"],
                      store[f"{p}.attn_norm.bias"])
    hidden = ad.relu(ad.add(ad.matmul(x, store[f"{p}.ffn.w1"]),
                            store[f"{p}.ffn.b1"]))
    ffn = ad.add(ad.matmul(hidden, store[f"{p}.ffn.w2"]), store[f"{p}.ffn.b2"])
    ffn = ad.dropout(ffn, config.dropout_rate, training, rng)
    return ad.layer_norm(ad.add(x, ffn), store[f"{p}.ffn_norm.gain"],
                         store[f"{p}.ffn_norm.bias"])


def encode_contextual(e: Tensor, store: ParameterStore, config: ModelConfig,
                      pad_keys: np.ndarray, training: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
    """Apply the configured number of transformer blocks in sequence."""
    for i in range(config.n_blocks):
        e = transformer_block(e, store, i, config, pad_keys, training, rng)
    return e


def fusion_attention(contextual: Tensor, store: ParameterStore,
                     pad: np.ndarray,
                     apply_to: Tensor | None = None) -> tuple[Tensor, Tensor]:
    """Collapse (B, n, d) to (B, d) with softmax weights from a one-hidden-
    layer scorer; returns (embedding, weights). Weights are computed from
    `contextual` and applied to `apply_to` (defaults to `contextual`)."""
    bsz, n, _ = contextual.data.shape
    hidden = ad.tanh(ad.add(ad.matmul(contextual, store["fusion.w"]),
                            store["fusion.b"]))
    scores = ad.reshape(ad.matmul(hidden, store["fusion.u"]), (bsz, n))
    scores = ad.masked_fill(scores, pad, ATTENTION_MASK_VALUE)
    alpha = ad.softmax(scores)
    source = contextual if apply_to is None else apply_to
    weighted = ad.multiply(ad.reshape(alpha, (bsz, n, 1)), source)
    return ad.reduce_sum(weighted, axis=1), alpha


def demographics_embed(demo: Tensor, store: ParameterStore) -> Tensor:
    """Two stacked tanh layers, (B, D) -> (B, d)."""
    hidden = ad.tanh(ad.add(ad.matmul(demo, store["demographics.w1"]),
                            store["demographics.b1"]))
    return ad.tanh(ad.add(ad.matmul(hidden, store["demographics.w2"]),
                          store["demographics.b2"]))


def target_head(combined: Tensor, store: ParameterStore,
                variant: str) -> tuple[Tensor, Tensor]:
    """Linear layer + sigmoid on [demographics, time-series] embedding;
    returns (logit, probability), each of shape (B,)."""
    w = store[f"head.{variant}.target.w"]
    b = store[f"head.{variant}.target.b"]
    logit = ad.reshape(ad.add(ad.matmul(combined, w), b),
                       (combined.data.shape[0],))
    return logit, ad.sigmoid(logit)


def forecast_head(combined: Tensor, store: ParameterStore,
                  variant: str) -> Tensor:
    """Linear map to one predicted value per variable, shape (B, F)."""
    return ad.add(ad.matmul(combined, store[f"head.{variant}.forecast.w"]),
                  store[f"head.{variant}.forecast.b"])


@dataclass
class ModelOutput:
    """Forward results; tensors so losses can be built on top."""
    time_series_embedding: Tensor
    demographics_embedding: Tensor
    attention_weights: Tensor             # (B, n), zeros at padding
    logit: Tensor | None = None           # (B,)
    target_probability: Tensor | None = None
    forecast: Tensor | None = None        # (B, F)
    initial_embeddings: Tensor | None = None


def forward(store: ParameterStore, config: ModelConfig, batch: Batch,
            mode: str = "target", training: bool = False,
            rng: np.random.Generator | None = None) -> ModelOutput:
    """Run the model on a padded batch.

    mode selects which heads to evaluate: "target", "forecast", or "both".
    Training mode enables dropout and requires an rng.
    """
    if mode not in ("target", "forecast", "both"):
        raise ValidationError(f"unknown forward mode {mode!r}")
    if training and rng is None:
        raise ValidationError("training mode requires an rng for dropout")
    bsz, n = batch.times.shape
    pad = batch.present == 0.0                 # (B, n)
    pad_keys = pad[:, None, None, :]           # (B, 1, 1, n)

    initial = initial_triplet_embed(store, config, batch.times,
                                    batch.variables, batch.values)
    contextual = encode_contextual(initial, store, config, pad_keys,
                                   training, rng)
    source = initial if config.interpretable else None
    ts_embed, alpha = fusion_attention(contextual, store, pad, apply_to=source)

    if config.interpretable:
        demo_embed = Tensor(batch.demographics)
    else:
        demo_embed = demographics_embed(Tensor(batch.demographics), store)
    combined = ad.concat([demo_embed, ts_embed])

    out = ModelOutput(ts_embed, demo_embed, alpha,
                      initial_embeddings=initial)
    if mode in ("target", "both"):
        out.logit, out.target_probability = target_head(combined, store,
                                                        config.variant)
    if mode in ("forecast", "both"):
        out.forecast = forecast_head(combined, store, config.variant)
    return out


# ---------------------------------------------------------------------------
# interpretability
# ---------------------------------------------------------------------------

@dataclass
class ContributionReport:
    """Exact additive decomposition of an interpretable-model logit:
    sum(demographic_scores) + sum(observation_scores) + bias == logit."""
    demographic_scores: np.ndarray  # (D,)
    observation_scores: np.ndarray  # (n,)
    attention_weights: np.ndarray   # (n,)
    bias: float
    logit: float
    probability: float

    @property
    def reconstruction_error(self) -> float:
        total = (self.demographic_scores.sum() + self.observation_scores.sum()
                 + self.bias)
        return abs(total - self.logit)


def contribution_scores(store: ParameterStore, config: ModelConfig,
                        sample: TimeSeriesSample) -> ContributionReport:
    """Per-demographic and per-observation shares of the logit.

    Demographic j contributes w[j] * demographics[j]; observation i
    contributes alpha_i * (w[D:] . initial_embedding_i). Only defined for
    the interpretable variant.
    """
    if not config.interpretable:
        raise ValidationError("contribution scores require an interpretable "
                              "model configuration")
    batch = make_batch([sample], config)
    out = forward(store, config, batch, mode="target", training=False)
    n = batch.times.shape[1]
    w = store[f"head.{config.variant}.target.w"].data[:, 0]
    bias = float(store[f"head.{config.variant}.target.b"].data[0])
    D = config.n_demographics
    demo_scores = w[:D] * batch.demographics[0]
    alpha = out.attention_weights.data[0]
    initial = out.initial_embeddings.data[0]          # (n, d)
    obs_scores = alpha * (initial @ w[D:])
    return ContributionReport(demo_scores.astype(np.float64),
                              obs_scores.astype(np.float64)[:n],
                              alpha.astype(np.float64),
                              bias, float(out.logit.data[0]),
                              float(out.target_probability.data[0]))
