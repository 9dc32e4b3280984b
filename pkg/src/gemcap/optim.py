"""First-order optimizers (Adam, Adagrad, Adadelta, RMSProp) and early stopping.

Each ``*_step`` updates parameters in place from their accumulated gradients,
advances the per-parameter slots in ``OptimizerState`` and zeroes the
gradients afterwards; the optimizer is the single owner of the gradient
lifecycle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from .error_handler import TrainingDiverged
from .nnlayers import Param

ADAM, ADAGRAD, ADADELTA, RMSPROP = "adam", "adagrad", "adadelta", "rmsprop"
OPTIMIZERS = (ADAM, ADAGRAD, ADADELTA, RMSPROP)

DEFAULT_EPSILON = {ADAM: 1e-8, ADAGRAD: 1e-8, ADADELTA: 1e-6, RMSPROP: 1e-6}


@dataclass
class OptimizerConfig:
    kind: str = ADAM
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    rho: float = 0.9
    epsilon: Optional[float] = None

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer '{self.kind}', expected one of {OPTIMIZERS}")
        if self.epsilon is None:
            self.epsilon = DEFAULT_EPSILON[self.kind]
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        for name in ("beta1", "beta2", "rho"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass
class OptimizerState:
    slots: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)
    t: int = 0

    def slot(self, param_name: str, slot_name: str, like: np.ndarray) -> np.ndarray:
        per_param = self.slots.setdefault(param_name, {})
        if slot_name not in per_param:
            per_param[slot_name] = np.zeros_like(like)
        return per_param[slot_name]


NamedParams = Iterable[Tuple[str, Param]]


def _named(params) -> NamedParams:
    return params.items() if hasattr(params, "items") else params


def adam_step(params, state: OptimizerState, cfg: OptimizerConfig):
    state.t += 1
    correction1 = 1.0 - cfg.beta1**state.t
    correction2 = 1.0 - cfg.beta2**state.t
    for name, param in _named(params):
        g = param.grad
        m = state.slot(name, "m", g)
        v = state.slot(name, "v", g)
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        param.value -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        g.fill(0.0)
    return params


def adagrad_step(params, state: OptimizerState, cfg: OptimizerConfig):
    state.t += 1
    for name, param in _named(params):
        g = param.grad
        acc = state.slot(name, "sum_sq", g)
        acc += g * g
        param.value -= cfg.learning_rate * g / (np.sqrt(acc) + cfg.epsilon)
        g.fill(0.0)
    return params


def adadelta_step(params, state: OptimizerState, cfg: OptimizerConfig):
    # the rule is unit-corrected; learning_rate is not used
    state.t += 1
    for name, param in _named(params):
        g = param.grad
        eg2 = state.slot(name, "avg_sq_grad", g)
        edx2 = state.slot(name, "avg_sq_delta", g)
        eg2 *= cfg.rho
        eg2 += (1.0 - cfg.rho) * g * g
        delta = -np.sqrt(edx2 + cfg.epsilon) / np.sqrt(eg2 + cfg.epsilon) * g
        edx2 *= cfg.rho
        edx2 += (1.0 - cfg.rho) * delta * delta
        param.value += delta
        g.fill(0.0)
    return params


def rmsprop_step(params, state: OptimizerState, cfg: OptimizerConfig):
    state.t += 1
    for name, param in _named(params):
        g = param.grad
        eg2 = state.slot(name, "avg_sq_grad", g)
        eg2 *= cfg.rho
        eg2 += (1.0 - cfg.rho) * g * g
        param.value -= cfg.learning_rate * g / (np.sqrt(eg2) + cfg.epsilon)
        g.fill(0.0)
    return params


STEP_FUNCTIONS = {
    ADAM: adam_step,
    ADAGRAD: adagrad_step,
    ADADELTA: adadelta_step,
    RMSPROP: rmsprop_step,
}


class Optimizer:
    """Binds a config to its state; one instance per trained model."""

    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.state = OptimizerState()
        self._step = STEP_FUNCTIONS[cfg.kind]

    def step(self, params) -> None:
        self._step(params, self.state, self.cfg)


# -- early stopping -------------------------------------------------------------------


class Decision(str, Enum):
    CONTINUE = "continue"
    STOP = "stop"


@dataclass
class EarlyStop:
    patience: int = 10
    min_delta: float = 0.0
    best_val_loss: float = math.inf
    epochs_since_improve: int = 0
    best_epoch: int = 0
    epoch: int = 0
    improved: bool = False

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.min_delta < 0:
            raise ValueError(f"min_delta must be >= 0, got {self.min_delta}")

    def update(self, val_loss: float) -> Decision:
        if not math.isfinite(val_loss):
            raise TrainingDiverged(detail=f"validation loss {val_loss} at epoch {self.epoch + 1}")
        self.epoch += 1
        self.improved = val_loss < self.best_val_loss - self.min_delta
        if self.improved:
            self.best_val_loss = float(val_loss)
            self.best_epoch = self.epoch
            self.epochs_since_improve = 0
        else:
            self.epochs_since_improve += 1
        if self.epochs_since_improve >= self.patience:
            return Decision.STOP
        return Decision.CONTINUE


def early_stop_update(es: EarlyStop, val_loss: float) -> Decision:
    return es.update(val_loss)
