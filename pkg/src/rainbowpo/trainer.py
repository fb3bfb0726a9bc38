"""Seeded first-order training loop with linear warm-up."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .core import ConfigurationError, NumericalError, PreferenceDataset, RngStream, substream
from .dispersion import DispersionConfig, dispersion_values
from .losses import RainbowConfig, rainbow_loss, reference_logliks
from .policy import PolicyModel, check_same_shape


class Optimizer(str, enum.Enum):
    SGD = "sgd"
    ADAM = "adam"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-6
    epochs: int = 3
    batch_size: int = 8
    # ratio of total steps when in (0, 1), step count when >= 1
    warmup: float = 150
    optimizer: Optimizer = Optimizer.ADAM
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_grad_norm: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        if not self.lr >= 0 or not math.isfinite(self.lr):
            raise ConfigurationError("lr must be a finite non-negative number")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.warmup < 0:
            raise ConfigurationError("warmup must be >= 0")
        if self.max_grad_norm is not None and not self.max_grad_norm > 0:
            raise ConfigurationError("max_grad_norm must be > 0 when set")


class TrainingError(RuntimeError):
    def __init__(self, step: int, message: str, config: dict):
        self.step = step
        self.config = config
        super().__init__(f"step {step}: {message}; config={json.dumps(config, sort_keys=True, default=str)}")


def warmup_steps(cfg: TrainConfig, total_steps: int) -> int:
    if cfg.warmup >= 1:
        return int(cfg.warmup)
    return int(math.ceil(cfg.warmup * total_steps))


def lr_at_step(cfg: TrainConfig, step: int, total_steps: int) -> float:
    """Linear ramp from 0 to ``lr`` over the warm-up steps, constant afterwards."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    W = warmup_steps(cfg, total_steps)
    if W >= total_steps:
        raise ConfigurationError(f"warm-up of {W} steps does not fit in {total_steps} total steps")
    if W == 0 or step >= W:
        return cfg.lr
    return cfg.lr * step / W


def steps_per_epoch(n_pairs: int, batch_size: int) -> int:
    return -(-n_pairs // batch_size)


@dataclass
class TrainState:
    """Mutable optimiser state; owned by a single training loop."""

    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    trace: list[float] = field(default_factory=list)


def _update(state: TrainState, grad: np.ndarray, lr: float, cfg: TrainConfig) -> None:
    if cfg.max_grad_norm is not None:
        norm = float(np.linalg.norm(grad))
        if norm > cfg.max_grad_norm:
            grad = grad * (cfg.max_grad_norm / norm)
    state.t += 1
    if cfg.optimizer is Optimizer.SGD:
        state.params -= lr * grad
        return
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    state.m = b1 * state.m + (1 - b1) * grad
    state.v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = state.m / (1 - b1 ** state.t)
    v_hat = state.v / (1 - b2 ** state.t)
    state.params -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


EpochCallback = Callable[[int, PolicyModel, list[float]], None]


def train(theta_init: PolicyModel, ref: PolicyModel, data: PreferenceDataset, loss_cfg: RainbowConfig,
          train_cfg: TrainConfig, dispersion_cfg: DispersionConfig | None = None,
          on_epoch_end: EpochCallback | None = None) -> tuple[PolicyModel, list[float]]:
    """Minibatch training on the unified loss.

    Pairs are reshuffled each epoch from substream ``epoch`` of the training
    seed.  ``on_epoch_end(epoch, policy, trace)`` runs after every epoch
    (epochs numbered from 1).  Returns the final policy and the per-step loss
    trace.
    """
    check_same_shape(theta_init, ref)
    pairs = data.pairs
    B = len(pairs)
    phis = dispersion_values(ref, data, dispersion_cfg or DispersionConfig()) if loss_cfg.use_dispersion else [1.0] * B
    ref_ll = reference_logliks(ref, pairs)
    per_epoch = steps_per_epoch(B, train_cfg.batch_size)
    total = per_epoch * train_cfg.epochs
    if warmup_steps(train_cfg, total) >= total:
        raise ConfigurationError(f"warm-up does not fit in {total} total steps")

    state = TrainState(theta_init.logits.ravel().copy(), np.zeros(theta_init.size), np.zeros(theta_init.size))
    shape = theta_init.logits.shape
    root = RngStream(train_cfg.seed)
    step = 0
    for epoch in range(train_cfg.epochs):
        order = substream(root, epoch).generator().permutation(B)
        for start in range(0, B, train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            theta = PolicyModel(state.params.reshape(shape), theta_init.T_max)
            try:
                rep = rainbow_loss(theta, ref, [pairs[i] for i in idx], loss_cfg,
                                   [phis[i] for i in idx], [ref_ll[i] for i in idx])
            except (NumericalError, ValueError) as exc:
                raise TrainingError(step, str(exc), _dump(loss_cfg, train_cfg)) from exc
            if not math.isfinite(rep.loss) or not np.all(np.isfinite(rep.gradient)):
                raise TrainingError(step, "non-finite loss or gradient", _dump(loss_cfg, train_cfg))
            state.trace.append(rep.loss)
            _update(state, rep.gradient, lr_at_step(train_cfg, step, total), train_cfg)
            step += 1
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, PolicyModel(state.params.reshape(shape).copy(), theta_init.T_max), list(state.trace))
    return PolicyModel(state.params.reshape(shape).copy(), theta_init.T_max), state.trace


def _dump(loss_cfg: RainbowConfig, train_cfg: TrainConfig) -> dict:
    return {"loss": asdict(loss_cfg), "train": asdict(train_cfg)}
