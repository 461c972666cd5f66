"""Losses, training loops, and early stopping.

Pretraining minimizes a masked MSE on forecast windows (each epoch draws a
fixed number of windows with replacement); fine-tuning minimizes binary
cross-entropy with early stopping on the validation ROC-AUC + PR-AUC sum.
Both loops restore the best-validation parameters before returning. Batches
group samples of similar length to limit padding waste; every randomized
choice is a pure function of (config.seed, epoch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, as_tensor
from .data import ForecastSample, TimeSeriesSample
from .errors import ValidationError
from .metrics import evaluate_scores, pr_auc, roc_auc
from .model import ModelConfig, forward, init_parameters, make_batch
from .optim import OptimizerConfig, ParameterStore, adam_step


@dataclass(frozen=True)
class TrainConfig:
    """Optimization defaults: Adam, batch 32, lr 5e-4; fine-tuning patience
    10 epochs on ROC-AUC + PR-AUC, pretraining patience 5 epochs on masked
    MSE with 256k samples drawn per epoch."""
    batch_size: int = 32
    learning_rate: float = 5e-4
    finetune_patience: int = 10
    pretrain_patience: int = 5
    pretrain_epoch_size: int = 256_000
    max_epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.pretrain_epoch_size < 1:
            raise ValidationError("batch and epoch sizes must be positive")
        if self.finetune_patience < 1 or self.pretrain_patience < 1:
            raise ValidationError("patience must be >= 1")
        if self.max_epochs < 1:
            raise ValidationError("max_epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning rate must be positive")

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(learning_rate=self.learning_rate)


def derive_seed(*parts: int) -> int:
    """Stable child seed from integer parts (for nested deterministic rngs)."""
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def cross_entropy_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy, computed from logits for stability."""
    y = np.asarray(labels, dtype=logits.data.dtype)
    pos = ad.multiply(as_tensor(y), ad.log_sigmoid(logits))
    neg = ad.multiply(as_tensor(1.0 - y),
                      ad.log_sigmoid(ad.scale(logits, -1.0)))
    return ad.scale(ad.reduce_mean(ad.add(pos, neg)), -1.0)


def masked_mse_loss(predicted: Tensor, target: np.ndarray,
                    mask: np.ndarray) -> Tensor:
    """Per-sample sum over variables of masked squared error, averaged over
    the batch; no division by the per-sample mask count."""
    target = np.asarray(target)
    mask = np.asarray(mask)
    if predicted.data.shape != target.shape or target.shape != mask.shape:
        raise ValidationError(
            f"masked MSE shapes differ: {predicted.data.shape}, "
            f"{target.shape}, {mask.shape}")
    diff = ad.subtract(predicted, as_tensor(target))
    squared = ad.multiply(diff, diff)
    per_sample = ad.reduce_sum(ad.multiply(squared, as_tensor(mask)), axis=-1)
    return ad.reduce_mean(per_sample)


# ---------------------------------------------------------------------------
# loop plumbing
# ---------------------------------------------------------------------------

class EarlyStopping:
    """Track the best validation metric; stop after `patience` epochs
    without strict improvement and restore the best snapshot."""

    def __init__(self, patience: int, mode: str = "max"):
        assert mode in ("max", "min")
        self.patience = patience
        self.mode = mode
        self.best: float | None = None
        self.best_epoch: int | None = None
        self.epochs_since_best = 0
        self._snapshot: dict[str, np.ndarray] | None = None

    def update(self, value: float, epoch: int, store: ParameterStore) -> bool:
        improved = (self.best is None
                    or (value > self.best if self.mode == "max"
                        else value < self.best))
        if improved:
            self.best = value
            self.best_epoch = epoch
            self.epochs_since_best = 0
            self._snapshot = store.snapshot()
        else:
            self.epochs_since_best += 1
        return improved

    @property
    def should_stop(self) -> bool:
        return self.epochs_since_best >= self.patience

    def restore(self, store: ParameterStore) -> None:
        if self._snapshot is not None:
            store.load_values(self._snapshot)


def _batches_by_length(indices: np.ndarray, lengths: np.ndarray,
                       batch_size: int,
                       rng: np.random.Generator) -> list[np.ndarray]:
    """Chunk `indices` into batches of similar sequence length, then shuffle
    the batch order."""
    by_len = indices[np.argsort(lengths[indices], kind="stable")]
    batches = [by_len[i:i + batch_size]
               for i in range(0, len(by_len), batch_size)]
    return [batches[p] for p in rng.permutation(len(batches))]


def predict_probabilities(store: ParameterStore, config: ModelConfig,
                          samples: list[TimeSeriesSample],
                          batch_size: int = 64) -> np.ndarray:
    """Eval-mode target probabilities, in the order of `samples`."""
    lengths = np.array([s.n_observations for s in samples])
    order = np.argsort(lengths, kind="stable")
    probs = np.empty(len(samples))
    for i in range(0, len(order), batch_size):
        chunk = order[i:i + batch_size]
        batch = make_batch([samples[j] for j in chunk], config)
        out = forward(store, config, batch, mode="target")
        probs[chunk] = out.target_probability.data
    return probs


def forecast_validation_loss(store: ParameterStore, config: ModelConfig,
                             windows: list[ForecastSample],
                             batch_size: int = 64) -> float:
    """Mean over windows of the per-window masked squared-error sum."""
    lengths = np.array([w.base.n_observations for w in windows])
    order = np.argsort(lengths, kind="stable")
    total = 0.0
    for i in range(0, len(order), batch_size):
        chunk = order[i:i + batch_size]
        batch = make_batch([windows[j] for j in chunk], config)
        out = forward(store, config, batch, mode="forecast")
        err = (out.forecast.data - batch.forecast_values) ** 2
        total += float((err * batch.forecast_mask).sum())
    return total / len(windows)


def evaluate_model(store: ParameterStore, config: ModelConfig,
                   samples: list[TimeSeriesSample]) -> dict[str, float]:
    """ROC-AUC, PR-AUC, and min(Re, Pr) of the model on labeled samples."""
    labels = np.array([s.label for s in samples])
    probs = predict_probabilities(store, config, samples)
    return evaluate_scores(probs, labels)


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def pretrain(train_windows: list[ForecastSample],
             val_windows: list[ForecastSample], store: ParameterStore,
             model_config: ModelConfig,
             train_config: TrainConfig) -> list[dict]:
    """Minimize masked forecast MSE; early-stop on validation masked MSE.

    Each epoch draws `pretrain_epoch_size` windows with replacement from the
    training windows. Mutates `store` in place, restoring the best-validation
    weights before returning the per-epoch history.
    """
    if not train_windows or not val_windows:
        raise ValidationError("pretraining requires non-empty forecast "
                              "train/validation sets")
    optimizer = train_config.optimizer()
    stopper = EarlyStopping(train_config.pretrain_patience, mode="min")
    lengths = np.array([min(w.base.n_observations,
                            model_config.max_observations)
                        for w in train_windows])
    history: list[dict] = []
    for epoch in range(train_config.max_epochs):
        rng = np.random.default_rng(derive_seed(train_config.seed, 1, epoch))
        drawn = rng.integers(0, len(train_windows),
                             size=train_config.pretrain_epoch_size)
        epoch_loss = 0.0
        batches = _batches_by_length(drawn, lengths, train_config.batch_size,
                                     rng)
        for batch_idx in batches:
            batch = make_batch([train_windows[j] for j in batch_idx],
                               model_config)
            with Tape() as tape:
                out = forward(store, model_config, batch, mode="forecast",
                              training=True, rng=rng)
                loss = masked_mse_loss(out.forecast, batch.forecast_values,
                                       batch.forecast_mask)
            adam_step(store, store.gradients(tape.backward(loss)), optimizer)
            epoch_loss += float(loss.data)
        val = forecast_validation_loss(store, model_config, val_windows)
        improved = stopper.update(val, epoch, store)
        history.append({"epoch": epoch, "train_loss": epoch_loss / len(batches),
                        "val_metric": val, "best_so_far": improved})
        if stopper.should_stop:
            break
    stopper.restore(store)
    return history


def extract_trunk(values: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Parameters shared between tasks: everything except the heads."""
    return {n: v for n, v in values.items() if not n.startswith("head.")}


def _require_both_classes(samples: list[TimeSeriesSample], split: str) -> None:
    labels = {s.label for s in samples}
    if labels != {0, 1}:
        raise ValidationError(f"{split} labels contain a single class; "
                              f"ROC-AUC is undefined")


def finetune(train_samples: list[TimeSeriesSample],
             val_samples: list[TimeSeriesSample], model_config: ModelConfig,
             train_config: TrainConfig,
             pretrained_trunk: dict[str, np.ndarray] | None = None,
             init_seed: int | None = None) -> tuple[ParameterStore, list[dict]]:
    """Train the target task, returning (parameters, per-epoch history).

    Starts from a fresh initialization; when `pretrained_trunk` is given, the
    shared trunk is overwritten with the pretrained values while the target
    head stays freshly initialized and the optimizer state starts cold.
    Early stopping: validation ROC-AUC + PR-AUC, strict improvement,
    `finetune_patience` epochs; the best-validation weights are restored.
    """
    _require_both_classes(train_samples, "training")
    _require_both_classes(val_samples, "validation")
    init_seed = train_config.seed if init_seed is None else init_seed
    store = init_parameters(model_config, init_seed)
    if pretrained_trunk is not None:
        store.load_values(extract_trunk(pretrained_trunk), subset=True)

    optimizer = train_config.optimizer()
    stopper = EarlyStopping(train_config.finetune_patience, mode="max")
    # batch composition is fixed (grouped by length); only the batch order is
    # reshuffled each epoch
    lengths = np.array([min(s.n_observations, model_config.max_observations)
                        for s in train_samples])
    order = np.argsort(lengths, kind="stable")
    batches = [make_batch([train_samples[j]
                           for j in order[i:i + train_config.batch_size]],
                          model_config)
               for i in range(0, len(order), train_config.batch_size)]
    val_labels = np.array([s.label for s in val_samples])
    history: list[dict] = []
    for epoch in range(train_config.max_epochs):
        rng = np.random.default_rng(derive_seed(train_config.seed, 2, epoch))
        epoch_loss = 0.0
        for bi in rng.permutation(len(batches)):
            batch = batches[bi]
            with Tape() as tape:
                out = forward(store, model_config, batch, mode="target",
                              training=True, rng=rng)
                loss = cross_entropy_loss(out.logit, batch.labels)
            adam_step(store, store.gradients(tape.backward(loss)), optimizer)
            epoch_loss += float(loss.data)
        probs = predict_probabilities(store, model_config, val_samples)
        val = roc_auc(probs, val_labels) + pr_auc(probs, val_labels)
        improved = stopper.update(val, epoch, store)
        history.append({"epoch": epoch, "train_loss": epoch_loss / len(batches),
                        "val_metric": val, "best_so_far": improved})
        if stopper.should_stop:
            break
    stopper.restore(store)
    return store, history
