"""Adam (default) and plain SGD, updating parameter arrays in place."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError, NumericError


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict, **kwargs) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **kwargs,
        )


def _check_grads(params: dict, grads: dict) -> None:
    for name, p in params.items():
        g = grads.get(name)
        if g is None or g.shape != p.shape:
            raise ArgumentError(f"gradient for {name} missing or misshapen")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 0.001) -> dict:
    """One bias-corrected Adam update. ``params`` arrays are modified in place and returned."""
    _check_grads(params, grads)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


class Adam:
    def __init__(self, params: dict, lr: float = 0.001, **kwargs):
        self.params = params
        self.lr = lr
        self.state = AdamState.for_params(params, **kwargs)

    def step(self, grads: dict) -> None:
        adam_step(self.params, grads, self.state, self.lr)


class SGD:
    def __init__(self, params: dict, lr: float = 0.01):
        self.params = params
        self.lr = lr

    def step(self, grads: dict) -> None:
        _check_grads(self.params, grads)
        for name, p in self.params.items():
            p -= self.lr * grads[name]


def make_optimizer(name: str, params: dict, lr: float):
    if name == "adam":
        return Adam(params, lr)
    if name == "sgd":
        return SGD(params, lr)
    raise ArgumentError(f"unknown optimizer {name!r}")
