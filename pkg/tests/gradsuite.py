"""Finite-difference gradient checks shared by the unit tests and the acceptance suite.

Each ``check_*`` builds a small random problem from ``seed`` and returns the
worst relative error between the analytic gradient and a 64-bit central
difference with step 1e-5. Small tensors are checked entry by entry; large
ones on a random sample of entries plus one random direction.
"""

import numpy as np

from rdae_sid.features import N_FRAMES, N_MELS
from rdae_sid.neural.layers import Dense, Dropout, GruLayer, cross_entropy, mse
from rdae_sid.neural.models import JointObjective, Rdae, SnnClassifier

from conftest import central_difference, relative_error

H = 1e-5


def _entries_check(f, params, grads, rng, max_entries=None):
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        if max_entries is None or flat.size <= max_entries:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, max_entries, replace=False)
        g = grads[name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + H
            fp = f()
            flat[i] = orig - H
            fm = f()
            flat[i] = orig
            num = (fp - fm) / (2 * H)
            worst = max(worst, float(relative_error(g[i], num)))
    return worst


def check_gru(seed):
    rng = np.random.default_rng(seed)
    layer = GruLayer.initialized(3, 4, rng)
    for k in ("b_z", "b_r", "b_h"):
        layer.params[k][...] = rng.normal(0, 0.5, 4)
    x = rng.standard_normal((2, 5, 3))
    h0 = rng.normal(0, 0.3, 4)
    proj = rng.standard_normal((2, 5, 4))

    def loss():
        hs, _ = layer.forward(x, h0)
        # ||h_T||^2 plus a projection of the whole sequence so every step gets signal
        return float(np.sum(hs[:, -1] ** 2) + np.sum(proj * hs))

    hs, cache = layer.forward(x, h0)
    d = proj.copy()
    d[:, -1] += 2 * hs[:, -1]
    dx, grads, dh0 = layer.backward(d, cache)
    worst = _entries_check(loss, layer.params, grads, rng)
    worst = max(worst, float(relative_error(dx, central_difference(loss, x)).max()))
    h0_batch = np.broadcast_to(h0, (2, 4)).copy()

    def loss_h0():
        hs, _ = layer.forward(x, h0_batch)
        return float(np.sum(hs[:, -1] ** 2) + np.sum(proj * hs))

    return max(worst, float(relative_error(dh0, central_difference(loss_h0, h0_batch)).max()))


def check_dense(seed, activation="relu"):
    rng = np.random.default_rng(seed)
    layer = Dense.initialized(5, 4, rng, activation)
    layer.params["b"][...] = rng.normal(0, 0.1, 4)
    x = rng.standard_normal((3, 5))
    proj = rng.standard_normal((3, 4))

    def loss():
        return float(np.sum(proj * layer.forward(x)[0]))

    y, cache = layer.forward(x)
    dx, grads = layer.backward(proj, cache)
    worst = _entries_check(loss, layer.params, grads, rng)
    return max(worst, float(relative_error(dx, central_difference(loss, x)).max()))


def check_dropout_off(seed):
    rng = np.random.default_rng(seed)
    drop = Dropout(0.3)
    x = rng.standard_normal((4, 6))
    proj = rng.standard_normal((4, 6))

    def loss():
        return float(np.sum(proj * drop.forward(x, training=False, rng=None)[0]))

    _, mask = drop.forward(x, training=False, rng=None)
    return float(relative_error(drop.backward(proj, mask), central_difference(loss, x)).max())


def check_softmax_ce(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(0, 3, (4, 7))
    labels = rng.integers(0, 7, 4)
    _, grad = cross_entropy(logits, labels)
    num = central_difference(lambda: cross_entropy(logits, labels)[0], logits)
    return float(relative_error(grad, num).max())


def check_mse(seed):
    rng = np.random.default_rng(seed)
    pred, target = rng.standard_normal((3, 4, 5)), rng.standard_normal((3, 4, 5))
    _, grad = mse(pred, target)
    num = central_difference(lambda: mse(pred, target)[0], pred)
    return float(relative_error(grad, num).max())


def _relu_pattern(obj, x):
    emb, _, _ = obj.rdae.forward(x)
    return emb @ obj.snn.dense1.params["W"].T + obj.snn.dense1.params["b"] > 0


def _guarded_difference(f, pattern, p, perturb, rng, tries=20):
    """Central difference along ``perturb(rng)`` that does not straddle a ReLU kink.

    Directions whose +h and -h evaluations switch any ReLU unit are redrawn:
    the loss is not differentiable there and the difference is meaningless.
    """
    orig = p.copy()
    for _ in range(tries):
        d = perturb(rng)
        p[...] = orig + H * d
        fp, pat_p = f(), pattern()
        p[...] = orig - H * d
        fm, pat_m = f(), pattern()
        p[...] = orig
        if np.array_equal(pat_p, pat_m):
            return d, (fp - fm) / (2 * H)
    raise RuntimeError("no kink-free perturbation found")


def check_joint(seed, transposed=False, snn_hidden=1000, max_entries=12, layers=1):
    """Full RDAE + SNN joint objective (with L2) on a 2-sample batch, eval mode.

    Each tensor is spot-checked on ``max_entries`` random entries, scored as
    max |analytic - numeric| over the largest gradient magnitude among them,
    plus one random direction through the whole tensor.
    """
    rng = np.random.default_rng(seed)
    rdae = Rdae.initialized(8 if transposed else 40, rng, transposed=transposed, layers=layers)
    for p in rdae.parameters().values():
        if p.ndim == 1:
            p[...] = rng.normal(0, 0.1, p.shape)
    snn = SnnClassifier.initialized(rdae.embedding_dim, 5, rng, hidden=snn_hidden)
    snn.dense1.params["b"][...] = rng.normal(0, 0.1, snn_hidden)
    obj = JointObjective(rdae, snn, loss_weight=0.7)
    batch = {
        "x": rng.standard_normal((2, N_FRAMES, N_MELS)),
        "target": rng.standard_normal((2, N_FRAMES, N_MELS)),
        "y": rng.integers(0, 5, 2),
    }

    def loss():
        return obj.eval_loss(batch)

    def pattern():
        return _relu_pattern(obj, batch["x"])

    _, grads = obj.loss_and_grads(batch, None, training=False)
    assert abs(loss() - obj.loss_and_grads(batch, None, training=False)[0]) < 1e-12
    worst = 0.0
    for name, p in obj.parameters().items():
        g = grads[name]
        ana, num = [], []
        for _ in range(min(max_entries, p.size)):
            d, n = _guarded_difference(loss, pattern, p, lambda r: _unit(r, p.shape), rng)
            ana.append(float(np.sum(g * d)))
            num.append(n)
        ana, num = np.array(ana), np.array(num)
        scale = max(np.abs(ana).max(), np.abs(num).max(), 1e-12)
        worst = max(worst, float(np.abs(ana - num).max() / scale))
        d, n = _guarded_difference(loss, pattern, p, lambda r: r.standard_normal(p.shape), rng)
        a = float(np.sum(g * d))
        worst = max(worst, abs(a - n) / max(abs(a), abs(n), 1e-12))
    return worst


def _unit(rng, shape):
    e = np.zeros(shape)
    e.reshape(-1)[rng.integers(e.size)] = 1.0
    return e


SUITE = {
    "gru": check_gru,
    "dense_relu": lambda s: check_dense(s, "relu"),
    "dense_linear": lambda s: check_dense(s, "linear"),
    "dropout_off": check_dropout_off,
    "softmax_ce": check_softmax_ce,
    "mse": check_mse,
    "joint": check_joint,
}
