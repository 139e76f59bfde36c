"""RDAE, SNN classifier and the training objectives built from them."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..errors import ArgumentError
from ..features import N_FRAMES, N_MELS
from .layers import Dense, Dropout, GruLayer, cross_entropy, mse, softmax

EVAL_CHUNK = 512


def _prefixed(prefix: str, params: dict) -> "OrderedDict[str, np.ndarray]":
    return OrderedDict((f"{prefix}.{k}", v) for k, v in params.items())


class Rdae:
    """GRU encoder stack -> bottleneck sequence -> GRU decoder stack -> per-step linear readout.

    With ``transposed`` the recurrence runs over mel bands and the time axis
    is compressed instead. The embedding is the last encoder layer's output.
    """

    def __init__(self, encoder, decoder, readout: Dense, transposed: bool = False):
        self.encoders = list(encoder) if isinstance(encoder, (list, tuple)) else [encoder]
        self.decoders = list(decoder) if isinstance(decoder, (list, tuple)) else [decoder]
        self.readout = readout
        self.transposed = transposed
        self.seq_len = N_MELS if transposed else N_FRAMES
        self.feat_dim = N_FRAMES if transposed else N_MELS
        chain = self.encoders + self.decoders
        if chain[0].input_dim != self.feat_dim or any(a.hidden_dim != b.input_dim for a, b in zip(chain, chain[1:])):
            raise ArgumentError("encoder/decoder dimensions are inconsistent")
        if chain[-1].hidden_dim != readout.input_dim or readout.output_dim != self.feat_dim:
            raise ArgumentError("decoder/readout dimensions are inconsistent")

    @classmethod
    def initialized(cls, hidden: int, rng: np.random.Generator, transposed: bool = False, layers: int = 1) -> "Rdae":
        if layers < 1:
            raise ArgumentError("an RDAE needs at least one layer per side")
        feat = N_FRAMES if transposed else N_MELS
        enc_dims = [feat] + [hidden] * layers
        dec_dims = [hidden] * layers + [feat]
        encoders = [GruLayer.initialized(a, b, rng) for a, b in zip(enc_dims, enc_dims[1:])]
        decoders = [GruLayer.initialized(a, b, rng) for a, b in zip(dec_dims, dec_dims[1:])]
        return cls(encoders, decoders, Dense.initialized(feat, feat, rng), transposed=transposed)

    @property
    def encoder(self) -> GruLayer:
        return self.encoders[0]

    @property
    def decoder(self) -> GruLayer:
        return self.decoders[0]

    @property
    def layers(self) -> int:
        return len(self.encoders)

    @property
    def hidden(self) -> int:
        return self.encoders[-1].hidden_dim

    @property
    def embedding_dim(self) -> int:
        return self.seq_len * self.hidden

    def architecture(self) -> dict:
        return {"hidden": self.hidden, "transposed": self.transposed, "embedding_dim": self.embedding_dim, "layers": self.layers}

    @staticmethod
    def layer_name(side: str, i: int) -> str:
        return side if i == 0 else f"{side}{i + 1}"

    def _named_layers(self):
        for i, layer in enumerate(self.encoders):
            yield self.layer_name("encoder", i), layer
        for i, layer in enumerate(self.decoders):
            yield self.layer_name("decoder", i), layer
        yield "readout", self.readout

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for name, layer in self._named_layers():
            out.update(_prefixed(name, layer.params))
        return out

    def forward(self, x: np.ndarray):
        """``x``: (batch, 27, 140) or (27, 140). Returns (embedding, reconstruction, cache)."""
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.shape[1:] != (N_FRAMES, N_MELS):
            raise ArgumentError(f"RDAE expects (*, {N_FRAMES}, {N_MELS}) input, got {x.shape}")
        h = x.transpose(0, 2, 1) if self.transposed else x
        enc_caches = []
        for layer in self.encoders:
            h, c = layer.forward(h)
            enc_caches.append(c)
        enc = h
        dec_caches = []
        for layer in self.decoders:
            h, c = layer.forward(h)
            dec_caches.append(c)
        out, out_cache = self.readout.forward(h)
        recon = out.transpose(0, 2, 1) if self.transposed else out
        emb = enc.reshape(enc.shape[0], -1)
        cache = (enc_caches, dec_caches, out_cache, enc.shape)
        if squeeze:
            return emb[0], recon[0], (cache, True)
        return emb, recon, (cache, False)

    def backward(self, d_emb: np.ndarray | None, d_recon: np.ndarray | None, cache):
        (enc_caches, dec_caches, out_cache, enc_shape), squeeze = cache
        B = enc_shape[0]
        g_enc, g_dec = [None] * len(self.encoders), [None] * len(self.decoders)
        d_enc = np.zeros(enc_shape)
        if d_recon is not None:
            d_recon = d_recon[None] if squeeze else d_recon
            d_out = d_recon.transpose(0, 2, 1) if self.transposed else d_recon
            d_h, g_out = self.readout.backward(d_out, out_cache)
            for i in reversed(range(len(self.decoders))):
                d_h, g_dec[i], _ = self.decoders[i].backward(d_h, dec_caches[i])
            d_enc += d_h
        else:
            g_out = OrderedDict((k, np.zeros_like(v)) for k, v in self.readout.params.items())
            g_dec = [OrderedDict((k, np.zeros_like(v)) for k, v in layer.params.items()) for layer in self.decoders]
        if d_emb is not None:
            d_emb = d_emb[None] if squeeze else d_emb
            d_enc += d_emb.reshape(B, *enc_shape[1:])
        d_h = d_enc
        for i in reversed(range(len(self.encoders))):
            d_h, g_enc[i], _ = self.encoders[i].backward(d_h, enc_caches[i])
        grads = OrderedDict()
        for i, g in enumerate(g_enc):
            grads.update(_prefixed(self.layer_name("encoder", i), g))
        for i, g in enumerate(g_dec):
            grads.update(_prefixed(self.layer_name("decoder", i), g))
        grads.update(_prefixed("readout", g_out))
        return grads


def rdae_forward(x: np.ndarray, model: Rdae) -> tuple[np.ndarray, np.ndarray]:
    emb, recon, _ = model.forward(x)
    return emb, recon


def reconstruction_loss(recon: np.ndarray, clean_target: np.ndarray) -> float:
    return mse(recon, clean_target)[0]


class SnnClassifier:
    """Dense(ReLU) -> inverted dropout -> Dense -> softmax, with L2 on the weight matrices."""

    def __init__(self, dense1: Dense, dense2: Dense, dropout_rate: float = 0.3, l2_lambda: float = 0.01):
        if dense1.output_dim != dense2.input_dim:
            raise ArgumentError("classifier layer dimensions are inconsistent")
        self.dense1, self.dense2 = dense1, dense2
        self.dropout = Dropout(dropout_rate)
        self.l2_lambda = float(l2_lambda)

    @classmethod
    def initialized(
        cls,
        input_dim: int,
        n_classes: int,
        rng: np.random.Generator,
        hidden: int = 1000,
        dropout_rate: float = 0.3,
        l2_lambda: float = 0.01,
    ) -> "SnnClassifier":
        return cls(
            Dense.initialized(input_dim, hidden, rng, activation="relu"),
            Dense.initialized(hidden, n_classes, rng),
            dropout_rate,
            l2_lambda,
        )

    @property
    def input_dim(self) -> int:
        return self.dense1.input_dim

    @property
    def n_classes(self) -> int:
        return self.dense2.output_dim

    def architecture(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": self.dense1.output_dim,
            "n_classes": self.n_classes,
            "dropout": self.dropout.rate,
            "l2_lambda": self.l2_lambda,
        }

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        out.update(_prefixed("dense1", self.dense1.params))
        out.update(_prefixed("dense2", self.dense2.params))
        return out

    def forward(self, e: np.ndarray, training: bool = False, rng: np.random.Generator | None = None):
        if e.shape[-1] != self.input_dim:
            raise ArgumentError(f"classifier expects {self.input_dim}-dim input, got {e.shape}")
        h, c1 = self.dense1.forward(e)
        h_drop, mask = self.dropout.forward(h, training, rng)
        logits, c2 = self.dense2.forward(h_drop)
        return logits, (c1, mask, c2)

    def backward(self, d_logits: np.ndarray, cache):
        c1, mask, c2 = cache
        d_h, g2 = self.dense2.backward(d_logits, c2)
        d_e, g1 = self.dense1.backward(self.dropout.backward(d_h, mask), c1)
        grads = OrderedDict()
        grads.update(_prefixed("dense1", g1))
        grads.update(_prefixed("dense2", g2))
        return d_e, grads

    def l2_penalty(self) -> float:
        W1, W2 = self.dense1.params["W"], self.dense2.params["W"]
        return self.l2_lambda * (float(np.sum(W1 * W1)) + float(np.sum(W2 * W2)))

    def add_l2_grads(self, grads: dict) -> None:
        grads["dense1.W"] = grads["dense1.W"] + 2.0 * self.l2_lambda * self.dense1.params["W"]
        grads["dense2.W"] = grads["dense2.W"] + 2.0 * self.l2_lambda * self.dense2.params["W"]

    def predict_proba(self, e: np.ndarray) -> np.ndarray:
        out = []
        for start in range(0, e.shape[0], EVAL_CHUNK):
            logits, _ = self.forward(e[start : start + EVAL_CHUNK], training=False)
            out.append(softmax(logits))
        return np.concatenate(out) if out else np.zeros((0, self.n_classes))


def classify(embedding: np.ndarray, snn: SnnClassifier, training: bool = False, rng=None) -> np.ndarray:
    squeeze = embedding.ndim == 1
    e = embedding[None] if squeeze else embedding
    logits, _ = snn.forward(e, training, rng)
    p = softmax(logits)
    return p[0] if squeeze else p


# ---------------------------------------------------------------- objectives
#
# A training objective exposes parameters(), loss_and_grads(batch, rng) and
# eval_loss(data). Batches are dicts of aligned arrays:
#   x       model input (noisy spectrogram or fixed feature vector)
#   target  clean spectrogram paired with x (reconstruction objectives)
#   y       integer speaker label (classification objectives)


def _chunks(n: int):
    for start in range(0, n, EVAL_CHUNK):
        yield slice(start, min(n, start + EVAL_CHUNK))


class JointObjective:
    """Reconstruction MSE + lambda * cross-entropy + L2, backpropagated through the encoder."""

    name = "joint"

    def __init__(self, rdae: Rdae, snn: SnnClassifier, loss_weight: float = 1.0):
        if snn.input_dim != rdae.embedding_dim:
            raise ArgumentError("classifier input must match the RDAE embedding size")
        self.rdae, self.snn, self.loss_weight = rdae, snn, float(loss_weight)

    def parameters(self):
        out = OrderedDict()
        out.update(_prefixed("rdae", self.rdae.parameters()))
        out.update(_prefixed("snn", self.snn.parameters()))
        return out

    def loss_and_grads(self, batch: dict, rng: np.random.Generator | None = None, training: bool = True):
        emb, recon, rcache = self.rdae.forward(batch["x"])
        rec_loss, d_recon = mse(recon, batch["target"])
        logits, scache = self.snn.forward(emb, training, rng)
        ce, d_logits = cross_entropy(logits, batch["y"])
        loss = rec_loss + self.loss_weight * ce + self.snn.l2_penalty()
        d_emb, g_snn = self.snn.backward(self.loss_weight * d_logits, scache)
        self.snn.add_l2_grads(g_snn)
        g_rdae = self.rdae.backward(d_emb, d_recon, rcache)
        grads = OrderedDict()
        grads.update(_prefixed("rdae", g_rdae))
        grads.update(_prefixed("snn", g_snn))
        return loss, grads

    def eval_loss(self, data: dict) -> float:
        n = data["x"].shape[0]
        rec_sum = ce_sum = 0.0
        for sl in _chunks(n):
            emb, recon, _ = self.rdae.forward(data["x"][sl])
            rec_sum += mse(recon, data["target"][sl])[0] * (sl.stop - sl.start)
            logits, _ = self.snn.forward(emb, training=False)
            ce_sum += cross_entropy(logits, data["y"][sl])[0] * (sl.stop - sl.start)
        return rec_sum / n + self.loss_weight * ce_sum / n + self.snn.l2_penalty()

    def embed(self, x: np.ndarray) -> np.ndarray:
        return embed(self.rdae, x)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.snn.predict_proba(self.embed(x))


def joint_loss(batch: dict, rdae: Rdae, snn: SnnClassifier, loss_weight: float = 1.0) -> float:
    """Joint objective in evaluation mode (no dropout)."""
    return JointObjective(rdae, snn, loss_weight).loss_and_grads(batch, None, training=False)[0]


class ReconstructionObjective:
    """Denoising-only objective (stage 1 of independent training)."""

    name = "reconstruction"

    def __init__(self, rdae: Rdae):
        self.rdae = rdae

    def parameters(self):
        return _prefixed("rdae", self.rdae.parameters())

    def loss_and_grads(self, batch: dict, rng=None, training: bool = True):
        _, recon, cache = self.rdae.forward(batch["x"])
        loss, d_recon = mse(recon, batch["target"])
        return loss, _prefixed("rdae", self.rdae.backward(None, d_recon, cache))

    def eval_loss(self, data: dict) -> float:
        n = data["x"].shape[0]
        total = 0.0
        for sl in _chunks(n):
            _, recon, _ = self.rdae.forward(data["x"][sl])
            total += mse(recon, data["target"][sl])[0] * (sl.stop - sl.start)
        return total / n


class ClassifierObjective:
    """Cross-entropy + L2 on fixed input vectors (embeddings or handcrafted features)."""

    name = "classifier"

    def __init__(self, snn: SnnClassifier):
        self.snn = snn

    def parameters(self):
        return _prefixed("snn", self.snn.parameters())

    def loss_and_grads(self, batch: dict, rng=None, training: bool = True):
        logits, cache = self.snn.forward(batch["x"], training, rng)
        ce, d_logits = cross_entropy(logits, batch["y"])
        _, grads = self.snn.backward(d_logits, cache)
        self.snn.add_l2_grads(grads)
        return ce + self.snn.l2_penalty(), _prefixed("snn", grads)

    def eval_loss(self, data: dict) -> float:
        n = data["x"].shape[0]
        total = 0.0
        for sl in _chunks(n):
            logits, _ = self.snn.forward(data["x"][sl], training=False)
            total += cross_entropy(logits, data["y"][sl])[0] * (sl.stop - sl.start)
        return total / n + self.snn.l2_penalty()

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return self.snn.predict_proba(x)


def embed(rdae: Rdae, x: np.ndarray) -> np.ndarray:
    out = []
    for sl in _chunks(x.shape[0]):
        emb, _, _ = rdae.forward(x[sl])
        out.append(emb)
    return np.concatenate(out) if out else np.zeros((0, rdae.embedding_dim))


def reconstruct(rdae: Rdae, x: np.ndarray) -> np.ndarray:
    out = []
    for sl in _chunks(x.shape[0]):
        _, recon, _ = rdae.forward(x[sl])
        out.append(recon)
    return np.concatenate(out) if out else np.zeros((0, N_FRAMES, N_MELS))
