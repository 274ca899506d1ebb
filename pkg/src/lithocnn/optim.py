"""Parameter update rules and learning-rate schedules.

Adam, plain/momentum SGD and RMSprop operate on flat ``{name: array}``
parameter/gradient dicts so the trainer can hand over tensor storage
directly; updates are applied in place and the state returned for chaining.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from .errors import ParameterError, ShapeError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
RMSPROP_DECAY = 0.9
RMSPROP_EPS = 1e-8

Params = Dict[str, np.ndarray]


@dataclass
class OptimizerState:
    """Per-parameter slot arrays plus hyperparameters for one update rule."""

    kind: str
    t: int = 0
    slots: dict = field(default_factory=dict)
    hyper: dict = field(default_factory=dict)

    @classmethod
    def create(cls, kind: str, **hyper) -> "OptimizerState":
        defaults = {
            "adam": {"beta1": ADAM_BETA1, "beta2": ADAM_BETA2, "eps": ADAM_EPS},
            "sgd": {"momentum": 0.0},
            "rmsprop": {"decay": RMSPROP_DECAY, "eps": RMSPROP_EPS},
        }
        if kind not in defaults:
            raise ParameterError(f"unknown optimizer '{kind}' (have {sorted(defaults)})")
        merged = {**defaults[kind], **hyper}
        return cls(kind=kind, hyper=merged)

    def _slot(self, name: str, like: np.ndarray, keys: Sequence[str]) -> dict:
        entry = self.slots.get(name)
        if entry is None:
            entry = {k: np.zeros_like(like, dtype=np.float64 if like.dtype == np.float64 else np.float32) for k in keys}
            self.slots[name] = entry
        if entry[keys[0]].shape != like.shape:
            raise ShapeError(f"optimizer slot '{name}': shape {entry[keys[0]].shape} != parameter {like.shape}")
        return entry


def _check_pair(name, p, g):
    if p.shape != g.shape:
        raise ShapeError(f"parameter '{name}': gradient shape {g.shape} != parameter shape {p.shape}")


def adam_step(params: Params, grads: Params, state: OptimizerState, lr: float):
    """Bias-corrected Adam update; increments the step counter."""
    state.t += 1
    b1, b2, eps = state.hyper["beta1"], state.hyper["beta2"], state.hyper["eps"]
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        _check_pair(name, p, g)
        slot = state._slot(name, p, ("m", "v"))
        m, v = slot["m"], slot["v"]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def sgd_step(params: Params, grads: Params, state: OptimizerState, lr: float):
    state.t += 1
    mu = state.hyper["momentum"]
    for name, p in params.items():
        g = grads[name]
        _check_pair(name, p, g)
        if mu:
            slot = state._slot(name, p, ("momentum",))
            buf = slot["momentum"]
            buf *= mu
            buf += g
            p -= lr * buf
        else:
            p -= lr * g
    return params, state


def rmsprop_step(params: Params, grads: Params, state: OptimizerState, lr: float):
    state.t += 1
    decay, eps = state.hyper["decay"], state.hyper["eps"]
    for name, p in params.items():
        g = grads[name]
        _check_pair(name, p, g)
        slot = state._slot(name, p, ("acc",))
        acc = slot["acc"]
        acc *= decay
        acc += (1.0 - decay) * np.square(g)
        p -= lr * g / (np.sqrt(acc) + eps)
    return params, state


STEP_FUNCTIONS = {"adam": adam_step, "sgd": sgd_step, "rmsprop": rmsprop_step}


def optimizer_step(params: Params, grads: Params, state: OptimizerState, lr: float):
    return STEP_FUNCTIONS[state.kind](params, grads, state, lr)


# ---------------------------------------------------------------------------
# Learning-rate schedules
# ---------------------------------------------------------------------------

def poly_decay(alpha0: float, ep: int, ep_max: int, power: float = 1.0) -> float:
    """Polynomial decay from alpha0 at epoch 0 to exactly 0 at ep_max."""
    if alpha0 <= 0:
        raise ParameterError(f"alpha0 must be positive, got {alpha0}")
    if ep_max < 1:
        raise ParameterError(f"ep_max must be >= 1, got {ep_max}")
    if not 0 <= ep <= ep_max:
        raise ParameterError(f"epoch {ep} outside [0, {ep_max}]")
    return alpha0 * (1.0 - ep / ep_max) ** power


def step_decay(alpha0: float, ep: int, boundaries: Sequence[int], factor: float = 0.1) -> float:
    """Multiply by ``factor`` once for every boundary epoch reached."""
    if alpha0 <= 0:
        raise ParameterError(f"alpha0 must be positive, got {alpha0}")
    bs = list(boundaries)
    if bs != sorted(set(bs)):
        raise ParameterError(f"boundaries must be strictly increasing, got {boundaries}")
    return alpha0 * factor ** sum(1 for b in bs if b <= ep)


@dataclass(frozen=True)
class LRSchedule:
    """Declarative schedule: one of polynomial / step / constant."""

    kind: str = "step"
    alpha0: float = 1e-3
    power: float = 1.0
    ep_max: int = 20
    boundaries: tuple = (10, 15)
    factor: float = 0.1

    def __post_init__(self):
        if self.kind not in ("polynomial", "step", "constant"):
            raise ParameterError(f"unknown schedule kind '{self.kind}'")
        if self.alpha0 <= 0:
            raise ParameterError("alpha0 must be positive")

    def at(self, ep: int) -> float:
        if self.kind == "polynomial":
            return poly_decay(self.alpha0, min(ep, self.ep_max), self.ep_max, self.power)
        if self.kind == "step":
            return step_decay(self.alpha0, ep, self.boundaries, self.factor)
        return self.alpha0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "alpha0": self.alpha0,
            "power": self.power,
            "ep_max": self.ep_max,
            "boundaries": list(self.boundaries),
            "factor": self.factor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LRSchedule":
        known = {k: d[k] for k in ("kind", "alpha0", "power", "ep_max", "factor") if k in d}
        if "boundaries" in d:
            known["boundaries"] = tuple(d["boundaries"])
        return cls(**known)
