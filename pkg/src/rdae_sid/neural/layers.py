"""Layers with explicit forward/backward passes.

Each ``forward`` returns the output and a cache; ``backward`` consumes the
upstream gradient and the cache and returns (input gradient, parameter grads).
Weight matrices are stored ``(out, in)`` and applied as ``x @ W.T``.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..errors import ArgumentError, NumericError


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


sigmoid = expit


def _check_finite(params: dict, owner: str) -> None:
    for name, p in params.items():
        if not np.all(np.isfinite(p)):
            raise NumericError(f"{owner}: non-finite values in parameter {name}")


class Layer:
    """Parameter container. ``params`` maps names to arrays updated in place."""

    params: "OrderedDict[str, np.ndarray]"

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        return self.params


class GruLayer(Layer):
    NAMES = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")

    def __init__(self, input_dim: int, hidden_dim: int, params: dict | None = None):
        if input_dim <= 0 or hidden_dim <= 0:
            raise ArgumentError("GRU dimensions must be positive")
        self.input_dim = int(input_dim)
        self.hidden_dim = int(hidden_dim)
        if params is None:
            params = {n: np.zeros(self._shape(n)) for n in self.NAMES}
        self.params = OrderedDict()
        for n in self.NAMES:
            p = np.asarray(params[n], dtype=np.float64)
            if p.shape != self._shape(n):
                raise ArgumentError(f"GRU parameter {n} has shape {p.shape}, expected {self._shape(n)}")
            self.params[n] = p.copy()

    def _shape(self, name: str) -> tuple[int, ...]:
        if name[0] == "W":
            return (self.hidden_dim, self.input_dim)
        if name[0] == "U":
            return (self.hidden_dim, self.hidden_dim)
        return (self.hidden_dim,)

    @classmethod
    def initialized(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "GruLayer":
        layer = cls(input_dim, hidden_dim)
        for n in cls.NAMES:
            if n[0] == "W":
                layer.params[n][...] = glorot(rng, hidden_dim, input_dim)
            elif n[0] == "U":
                layer.params[n][...] = glorot(rng, hidden_dim, hidden_dim)
        return layer

    def forward(self, x: np.ndarray, h0: np.ndarray | None = None):
        """Run the recurrence over ``x`` of shape (batch, time, in) or (time, in).

        Returns the full hidden sequence with the same leading layout and a cache.
        """
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.ndim != 3 or x.shape[2] != self.input_dim:
            raise ArgumentError(f"GRU expects (..., T, {self.input_dim}) input, got {x.shape}")
        _check_finite(self.params, "GruLayer")
        p = self.params
        B, T, _ = x.shape
        H = self.hidden_dim
        h_prev = np.zeros((B, H)) if h0 is None else np.broadcast_to(np.asarray(h0, dtype=np.float64), (B, H)).copy()
        if h_prev.shape != (B, H):
            raise ArgumentError(f"h0 must have {H} entries")
        xz = x @ p["W_z"].T + p["b_z"]
        xr = x @ p["W_r"].T + p["b_r"]
        xh = x @ p["W_h"].T + p["b_h"]
        U_zr = np.concatenate([p["U_z"], p["U_r"]]).T
        U_h = p["U_h"].T
        hs = np.empty((B, T, H))
        zs = np.empty((B, T, H))
        rs = np.empty((B, T, H))
        cands = np.empty((B, T, H))
        h_prevs = np.empty((B, T, H))
        for t in range(T):
            zr = h_prev @ U_zr
            zr[:, :H] += xz[:, t]
            zr[:, H:] += xr[:, t]
            sigmoid(zr, out=zr)
            z, r = zr[:, :H], zr[:, H:]
            cand = np.tanh(xh[:, t] + (r * h_prev) @ U_h)
            h_prevs[:, t] = h_prev
            zs[:, t], rs[:, t], cands[:, t] = z, r, cand
            h = h_prev + z * (cand - h_prev)
            hs[:, t] = h
            h_prev = h
        cache = (x, h_prevs, zs, rs, cands, squeeze)
        return (hs[0] if squeeze else hs), cache

    def backward(self, d_hs: np.ndarray, cache):
        """Backpropagation through time. Returns (dx, grads, dh0)."""
        x, h_prevs, zs, rs, cands, squeeze = cache
        if squeeze:
            d_hs = d_hs[None]
        p = self.params
        B, T, H = zs.shape
        # gate pre-activation gradients; weight gradients are accumulated after the loop
        da_h = np.empty((B, T, H))
        da_zr = np.empty((B, T, 2 * H))
        U_zr = np.concatenate([p["U_z"], p["U_r"]])
        U_h = p["U_h"]
        dh = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            dh += d_hs[:, t]
            z, r, cand, h_prev = zs[:, t], rs[:, t], cands[:, t], h_prevs[:, t]
            a_h = dh * z * (1.0 - cand * cand)
            d_rh = a_h @ U_h
            a_zr = da_zr[:, t]
            a_zr[:, :H] = dh * (cand - h_prev) * z * (1.0 - z)
            a_zr[:, H:] = d_rh * h_prev * r * (1.0 - r)
            da_h[:, t] = a_h
            dh = dh * (1.0 - z) + d_rh * r + a_zr @ U_zr
        flat_x = x.reshape(B * T, -1)
        flat_hp = h_prevs.reshape(B * T, H)
        flat_zr = da_zr.reshape(B * T, 2 * H)
        flat_h = da_h.reshape(B * T, H)
        grads = OrderedDict()
        W_zr = flat_zr.T @ flat_x
        U_zr_grad = flat_zr.T @ flat_hp
        grads["W_z"], grads["W_r"] = W_zr[:H], W_zr[H:]
        grads["W_h"] = flat_h.T @ flat_x
        grads["U_z"], grads["U_r"] = U_zr_grad[:H], U_zr_grad[H:]
        grads["U_h"] = flat_h.T @ (rs * h_prevs).reshape(B * T, H)
        b_zr = flat_zr.sum(axis=0)
        grads["b_z"], grads["b_r"] = b_zr[:H], b_zr[H:]
        grads["b_h"] = flat_h.sum(axis=0)
        dx = da_zr @ np.concatenate([p["W_z"], p["W_r"]]) + da_h @ p["W_h"]
        grads = OrderedDict((n, np.ascontiguousarray(grads[n])) for n in self.NAMES)
        if squeeze:
            return dx[0], grads, dh[0]
        return dx, grads, dh


def gru_forward(x: np.ndarray, layer: GruLayer, h0: np.ndarray | None = None) -> np.ndarray:
    return layer.forward(x, h0)[0]


class Dense(Layer):
    """Affine map over the last axis, optionally followed by ReLU."""

    def __init__(self, input_dim: int, output_dim: int, activation: str = "linear", params: dict | None = None):
        if activation not in ("linear", "relu"):
            raise ArgumentError(f"unknown activation {activation!r}")
        self.input_dim, self.output_dim, self.activation = int(input_dim), int(output_dim), activation
        params = params or {"W": np.zeros((output_dim, input_dim)), "b": np.zeros(output_dim)}
        W = np.asarray(params["W"], dtype=np.float64)
        b = np.asarray(params["b"], dtype=np.float64)
        if W.shape != (output_dim, input_dim) or b.shape != (output_dim,):
            raise ArgumentError(f"dense parameter shapes {W.shape}, {b.shape} do not match {input_dim}->{output_dim}")
        self.params = OrderedDict(W=W.copy(), b=b.copy())

    @classmethod
    def initialized(cls, input_dim: int, output_dim: int, rng: np.random.Generator, activation: str = "linear") -> "Dense":
        layer = cls(input_dim, output_dim, activation)
        layer.params["W"][...] = glorot(rng, output_dim, input_dim)
        return layer

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.input_dim:
            raise ArgumentError(f"dense layer expects last dim {self.input_dim}, got {x.shape}")
        y = x @ self.params["W"].T + self.params["b"]
        if self.activation == "relu":
            y = np.maximum(y, 0.0)
        return y, (x, y)

    def backward(self, dy: np.ndarray, cache):
        x, y = cache
        if self.activation == "relu":
            dy = dy * (y > 0)
        flat_dy = dy.reshape(-1, self.output_dim)
        flat_x = x.reshape(-1, self.input_dim)
        grads = OrderedDict(W=flat_dy.T @ flat_x, b=flat_dy.sum(axis=0))
        return dy @ self.params["W"], grads


@dataclass
class Dropout:
    """Inverted dropout: survivors are scaled by 1/(1 - rate) during training."""

    rate: float = 0.3

    def forward(self, x: np.ndarray, training: bool, rng: np.random.Generator | None):
        if not training or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ArgumentError("training-mode dropout needs an RNG")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, dy: np.ndarray, mask):
        return dy if mask is None else dy * mask


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    labels = np.asarray(labels)
    n_classes = logits.shape[-1]
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise ArgumentError(f"labels must lie in [0, {n_classes})")
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def mse(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over every entry and its gradient w.r.t. ``pred``."""
    if pred.shape != target.shape:
        raise ArgumentError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size
