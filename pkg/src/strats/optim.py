"""Named parameter store, Adam updates, and finite-difference gradient checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor
from .errors import ShapeError, ValidationError


@dataclass
class OptimizerConfig:
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValidationError("Adam betas must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValidationError("Adam epsilon must be positive")


@dataclass
class _AdamSlot:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def _glorot(shape, rng: np.random.Generator) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape)


_INITS = {
    "glorot": _glorot,
    "zeros": lambda shape, rng: np.zeros(shape),
    "ones": lambda shape, rng: np.ones(shape),
    "embedding": lambda shape, rng: rng.standard_normal(shape) * 0.02,
}


class ParameterStore:
    """Map name -> trainable Tensor, plus per-parameter Adam state.

    Names are unique and shapes immutable after creation. Mutation happens
    only through `adam_step` / `load_values` between forward passes.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}
        self._adam: dict[str, _AdamSlot] = {}

    def create(self, name: str, shape: tuple[int, ...], init: str,
               rng: np.random.Generator) -> Tensor:
        if name in self._params:
            raise ValidationError(f"duplicate parameter name {name!r}")
        data = _INITS[init](tuple(shape), rng).astype(self.dtype)
        t = Tensor(data, requires_grad=True, name=name, dtype=self.dtype)
        self._params[name] = t
        self._adam[name] = _AdamSlot(np.zeros(shape, dtype=np.float64),
                                     np.zeros(shape, dtype=np.float64))
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def gradients(self, grad_map: dict[Tensor, np.ndarray]) -> dict[str, np.ndarray]:
        """Per-name gradients from a Tape.backward result.

        Parameters that did not participate in the loss get exact zeros.
        """
        out = {}
        for name, t in self._params.items():
            g = grad_map.get(t)
            out[name] = np.zeros_like(t.data) if g is None else g
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray],
                    subset: bool = False) -> None:
        """Overwrite parameter data in place.

        With subset=True, names absent from `values` keep their current data
        (used when transferring a pretrained trunk under a fresh head).
        """
        for name, t in self._params.items():
            if name not in values:
                if subset:
                    continue
                raise ValidationError(f"missing value for parameter {name!r}")
            arr = np.asarray(values[name])
            if arr.shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name!r}: cannot load shape {arr.shape} "
                    f"into {t.data.shape}")
            t.data[...] = arr.astype(self.dtype)

    def reset_optimizer_state(self) -> None:
        for name, t in self._params.items():
            self._adam[name] = _AdamSlot(np.zeros(t.data.shape, dtype=np.float64),
                                         np.zeros(t.data.shape, dtype=np.float64))

    def astype(self, dtype) -> "ParameterStore":
        """Copy of this store with parameters cast to `dtype` (fresh Adam state)."""
        clone = ParameterStore(dtype)
        rng = np.random.default_rng(0)
        for name, t in self._params.items():
            clone.create(name, t.data.shape, "zeros", rng)
            clone._params[name].data[...] = t.data.astype(dtype)
        return clone

    def adam_slot(self, name: str) -> _AdamSlot:
        return self._adam[name]


def adam_step(store: ParameterStore, grads: dict[str, np.ndarray],
              config: OptimizerConfig) -> None:
    """One bias-corrected Adam update, in place, for every parameter."""
    for name in store.names():
        if name not in grads:
            raise ValidationError(f"missing gradient for parameter {name!r}")
    b1, b2, eps, lr = config.beta1, config.beta2, config.epsilon, config.learning_rate
    for name, tensor in store.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != tensor.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape "
                             f"{tensor.data.shape} for {name!r}")
        slot = store.adam_slot(name)
        slot.step += 1
        slot.m = b1 * slot.m + (1.0 - b1) * g
        slot.v = b2 * slot.v + (1.0 - b2) * (g * g)
        m_hat = slot.m / (1.0 - b1 ** slot.step)
        v_hat = slot.v / (1.0 - b2 ** slot.step)
        update = lr * m_hat / (np.sqrt(v_hat) + eps)
        tensor.data[...] = (tensor.data.astype(np.float64) - update).astype(store.dtype)


@dataclass
class GradCheckReport:
    """Max relative error between reverse-mode and central-difference gradients."""
    per_parameter: dict[str, float]
    tolerance: float
    coords_per_tensor: int

    @property
    def max_relative_error(self) -> float:
        return max(self.per_parameter.values())

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance

    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.per_parameter.items() if v >= self.tolerance}


def grad_check(loss_fn, store: ParameterStore, tolerance: float = 1e-4,
               h: float = 1e-5, n_coords: int = 20,
               seed: int = 0) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    `loss_fn(store)` must build a scalar loss deterministically (dropout
    disabled), and `store` must be float64 so the h=1e-5 stencil is meaningful.
    Checks `n_coords` randomly sampled coordinates per parameter tensor (all
    coordinates for smaller tensors).
    """
    if store.dtype != np.float64:
        raise ValidationError("grad_check requires a float64 parameter store")
    rng = np.random.default_rng(seed)

    with Tape() as tape:
        loss = loss_fn(store)
    analytic = store.gradients(tape.backward(loss))

    report: dict[str, float] = {}
    for name, tensor in store.items():
        flat = tensor.data.reshape(-1)
        size = flat.size
        if size <= n_coords:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=n_coords, replace=False)
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for c in coords:
            original = flat[c]
            flat[c] = original + h
            up = float(loss_fn(store).data)
            flat[c] = original - h
            down = float(loss_fn(store).data)
            flat[c] = original
            fd = (up - down) / (2.0 * h)
            a = float(a_flat[c])
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            worst = max(worst, rel)
        report[name] = worst
    return GradCheckReport(report, tolerance, n_coords)
