"""Nested cross-validation and the four-system comparison.

Systems:
    jrdae        RDAE and classifier trained jointly on one objective
    irdae        RDAE trained on reconstruction alone, then the classifier on frozen embeddings
    trdae        jrdae on transposed spectrograms (recurrence over mel bands)
    handcrafted  classifier alone on handcrafted feature vectors
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .._seeding import rng_for
from ..cache import FeatureSet
from ..errors import ArgumentError, DataError, NumericError
from ..features import NormStats, fit_norm_stats, keys_fingerprint
from ..neural import checkpoint as ckpt
from ..neural.layers import Dense, GruLayer
from ..neural.models import (
    ClassifierObjective,
    JointObjective,
    Rdae,
    ReconstructionObjective,
    SnnClassifier,
    embed,
    reconstruct,
)
from ..neural.training import History, TrainConfig, train
from .folds import FoldPlan, make_fold_plan
from .grid import GridSpec, select_best
from .metrics import compute_metrics

SYSTEMS = ("jrdae", "irdae", "trdae", "handcrafted")
DISPLAY_NAMES = {"jrdae": "jRDAE", "irdae": "iRDAE", "trdae": "tRDAE", "handcrafted": "handcrafted"}
FINAL_VALIDATION_FOLD = 2


def check_system(system: str, features: FeatureSet) -> None:
    if system not in SYSTEMS:
        raise ArgumentError(f"unknown system {system!r}; expected one of {SYSTEMS}")
    wanted = "handcrafted" if system == "handcrafted" else "mel"
    if features.kind != wanted:
        raise ArgumentError(f"system {system} needs a {wanted} cache, got {features.kind}")


@dataclass
class FittedSystem:
    system: str
    config: TrainConfig
    norm: NormStats
    snn: SnnClassifier
    speakers: list
    rdae: Rdae | None = None
    histories: dict = field(default_factory=dict)
    train_fingerprint: str = ""

    @property
    def validation_loss(self) -> float:
        return self.histories["classifier"].best_val_loss if self.system == "irdae" else self.histories["main"].best_val_loss

    @property
    def embedding_dim(self) -> int:
        return self.snn.input_dim

    def _inputs(self, raw: np.ndarray) -> np.ndarray:
        x = self.norm.apply(raw)
        return x if self.rdae is None else embed(self.rdae, x)

    def predict_proba(self, raw: np.ndarray) -> np.ndarray:
        return self.snn.predict_proba(self._inputs(raw))

    def predict(self, raw: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(raw), axis=1)


def assert_disjoint(features: FeatureSet, train_idx: np.ndarray, eval_idx: np.ndarray, what: str) -> None:
    shared = set(features.group_keys[train_idx]) & set(features.group_keys[eval_idx])
    if shared:
        raise DataError(f"leakage: {len(shared)} groups shared between training and {what}")


def fit_system(
    system: str,
    features: FeatureSet,
    train_idx: np.ndarray,
    val_idx: np.ndarray,
    config: TrainConfig,
    stream: tuple = (),
) -> FittedSystem:
    """Train one system on ``train_idx`` with early stopping on ``val_idx``."""
    check_system(system, features)
    assert_disjoint(features, train_idx, val_idx, "validation")
    train_keys = sorted(set(features.group_keys[train_idx]))
    x_train = features.take(train_idx)
    norm = fit_norm_stats(x_train, per_bin=config.per_bin_norm or system == "handcrafted", source_keys=train_keys)
    x_train = norm.apply(x_train)
    x_val = norm.apply(features.take(val_idx))
    y_train, y_val = features.labels[train_idx], features.labels[val_idx]
    rng = rng_for("init", config.seed, system, *stream)
    n_classes = features.n_classes

    def classifier(input_dim: int) -> SnnClassifier:
        return SnnClassifier.initialized(
            input_dim, n_classes, rng, hidden=config.snn_hidden, dropout_rate=config.dropout, l2_lambda=config.l2_lambda
        )

    fitted = FittedSystem(system, config, norm, None, features.speaker_list, train_fingerprint=keys_fingerprint(train_keys))
    if system == "handcrafted":
        fitted.snn = classifier(x_train.shape[1])
        _, hist = train(ClassifierObjective(fitted.snn), {"x": x_train, "y": y_train}, {"x": x_val, "y": y_val}, config, stream)
        fitted.histories["main"] = hist
        return fitted

    t_train = norm.apply(features.take(train_idx, clean=True))
    t_val = norm.apply(features.take(val_idx, clean=True))
    transposed = system == "trdae"
    hidden = config.time_hidden if transposed else config.encoder_hidden
    fitted.rdae = Rdae.initialized(hidden, rng, transposed=transposed, layers=config.rdae_layers)
    if system in ("jrdae", "trdae"):
        fitted.snn = classifier(fitted.rdae.embedding_dim)
        objective = JointObjective(fitted.rdae, fitted.snn, config.loss_weight_lambda)
        _, hist = train(
            objective,
            {"x": x_train, "target": t_train, "y": y_train},
            {"x": x_val, "target": t_val, "y": y_val},
            config,
            stream,
        )
        fitted.histories["main"] = hist
        return fitted

    # irdae: denoiser first, then the classifier on frozen embeddings
    _, hist1 = train(
        ReconstructionObjective(fitted.rdae),
        {"x": x_train, "target": t_train},
        {"x": x_val, "target": t_val},
        config,
        stream + ("stage1",),
    )
    del t_train, t_val
    e_train, e_val = embed(fitted.rdae, x_train), embed(fitted.rdae, x_val)
    fitted.snn = classifier(fitted.rdae.embedding_dim)
    _, hist2 = train(ClassifierObjective(fitted.snn), {"x": e_train, "y": y_train}, {"x": e_val, "y": y_val}, config, stream + ("stage2",))
    fitted.histories["reconstruction"] = hist1
    fitted.histories["classifier"] = hist2
    return fitted


def denoising_report(fitted: FittedSystem, features: FeatureSet, idx: np.ndarray) -> dict:
    """Per-SNR reconstruction MSE of the model and of the identity map (noisy as its own estimate)."""
    if fitted.rdae is None:
        return {}
    out = {}
    snrs = features.snr_labels[idx]
    for snr in sorted(set(snrs) - {"clean"}, key=lambda s: -int(s)):
        sel = idx[snrs == snr]
        noisy = fitted.norm.apply(features.take(sel))
        clean = fitted.norm.apply(features.take(sel, clean=True))
        recon = reconstruct(fitted.rdae, noisy)
        out[snr] = {
            "model_mse": float(np.mean((recon - clean) ** 2)),
            "identity_mse": float(np.mean((noisy - clean) ** 2)),
            "n": int(sel.size),
        }
    return out


@dataclass
class RunResult:
    system: str
    seed: int
    speakers: list
    accuracy: float
    macro_f1: float
    per_snr: dict
    per_snr_f1: dict
    per_snr_n: dict
    per_noise: dict
    confusion: list
    chosen_hyperparameters: dict
    config: dict
    grid_results: list
    embedding_dim: int
    denoising: dict
    fold_sizes: dict
    test_reads_before_evaluation: int
    wall_time_s: float = 0.0
    fitted: FittedSystem | None = field(default=None, repr=False, compare=False)

    @property
    def display_name(self) -> str:
        return DISPLAY_NAMES[self.system]

    def to_json(self) -> dict:
        d = asdict(replace(self, fitted=None))
        d.pop("fitted")
        return d

    @classmethod
    def from_json(cls, d: dict) -> "RunResult":
        return cls(**{k: v for k, v in d.items() if k != "fitted"})


def nested_cv(
    features: FeatureSet,
    grid: GridSpec,
    system: str,
    seed: int,
    base_config: TrainConfig | None = None,
    plan: FoldPlan | None = None,
) -> RunResult:
    """Grid search on the inner folds, one retrain, one look at the outer test split.

    Every grid point is trained three times (each inner fold validates once)
    and scored by its mean best validation loss. The winner is retrained on
    inner folds 0-1 with fold 2 for early stopping, then evaluated once on
    the outer test groups. Points that diverge are excluded from selection.
    """
    check_system(system, features)
    started = time.perf_counter()
    base = replace(base_config or TrainConfig(), seed=seed)
    plan = plan or make_fold_plan(features.records, seed)
    test_idx = features.indices_for_groups(plan.outer_test)
    fold_idx = [features.indices_for_groups(f) for f in plan.inner_folds]
    features.protect(test_idx)

    grid_results = []
    scores = {}
    for gi, point in enumerate(grid.points()):
        config = grid.apply(base, point)
        fold_losses, provenance, failed = [], [], None
        for k in range(len(fold_idx)):
            train_idx = np.concatenate([f for j, f in enumerate(fold_idx) if j != k])
            try:
                fitted = fit_system(system, features, train_idx, fold_idx[k], config, stream=(gi, k))
            except NumericError as exc:
                failed = str(exc)
                break
            fold_losses.append(fitted.validation_loss)
            provenance.append({"fold": k, "train_fingerprint": fitted.train_fingerprint, "norm_source_id": fitted.norm.source_id})
        mean_loss = None if failed else float(np.mean(fold_losses))
        scores[point] = mean_loss
        grid_results.append(
            {
                "point": grid.as_dict(point),
                "fold_losses": fold_losses,
                "mean_val_loss": mean_loss,
                "failed": failed,
                "provenance": provenance,
            }
        )
    try:
        best = select_best(scores)
    except ArgumentError as exc:
        raise NumericError(f"{system}: every grid point diverged") from exc
    config = grid.apply(base, best)

    final_train = np.concatenate([f for j, f in enumerate(fold_idx) if j != FINAL_VALIDATION_FOLD])
    final_val = fold_idx[FINAL_VALIDATION_FOLD]
    fitted = fit_system(system, features, final_train, final_val, config, stream=("final",))
    denoising = denoising_report(fitted, features, final_val)

    reads_before = features.audit.protected_reads
    if reads_before:
        raise DataError(f"outer test split was read {reads_before} times before evaluation")
    assert_disjoint(features, final_train, test_idx, "test")
    assert_disjoint(features, final_val, test_idx, "test")
    predictions = fitted.predict(features.take(test_idx))
    metrics = compute_metrics(predictions, features.labels[test_idx], features.conditions(test_idx), features.n_classes)

    return RunResult(
        system=system,
        seed=seed,
        speakers=list(features.speaker_list),
        accuracy=metrics.accuracy,
        macro_f1=metrics.macro_f1,
        per_snr=metrics.per_snr,
        per_snr_f1=metrics.per_snr_f1,
        per_snr_n=metrics.per_snr_n,
        per_noise=metrics.per_noise,
        confusion=metrics.confusion.tolist(),
        chosen_hyperparameters=grid.as_dict(best),
        config=config.to_dict(),
        grid_results=grid_results,
        embedding_dim=fitted.embedding_dim,
        denoising=denoising,
        fold_sizes={"outer_test": len(plan.outer_test), "inner": [len(f) for f in plan.inner_folds]},
        test_reads_before_evaluation=reads_before,
        wall_time_s=time.perf_counter() - started,
        fitted=fitted,
    )


def run_system(
    system: str,
    features: FeatureSet,
    grid: GridSpec | None = None,
    seed: int = 0,
    base_config: TrainConfig | None = None,
) -> RunResult:
    if system not in SYSTEMS:
        raise ArgumentError(f"unknown system {system!r}; expected one of {SYSTEMS}")
    return nested_cv(features, grid or GridSpec(), system, seed, base_config)


# ---------------------------------------------------------------- checkpoints


def _history_header(h: History) -> dict:
    return {"epoch": h.best_epoch, "validation_loss": h.best_val_loss, "epochs_run": h.epochs_run}


def checkpoint_payloads(fitted: FittedSystem) -> dict:
    """file name -> (header, params) for every checkpoint the system emits."""
    common = {
        "system": fitted.system,
        "config": fitted.config.to_dict(),
        "norm_stats": fitted.norm.to_json(),
        "speakers": list(fitted.speakers),
        "input": "handcrafted" if fitted.system == "handcrafted" else "mel",
    }
    snn_arch = fitted.snn.architecture()
    if fitted.system == "irdae":
        stage1 = dict(common, architecture={"rdae": fitted.rdae.architecture()}, stage="reconstruction",
                      **_history_header(fitted.histories["reconstruction"]))
        stage2 = dict(common, architecture={"rdae": None, "snn": snn_arch}, stage="classifier",
                      encoder_checkpoint="irdae_stage1_rdae.ckpt", **_history_header(fitted.histories["classifier"]))
        rdae_params = {f"rdae.{k}": v for k, v in fitted.rdae.parameters().items()}
        snn_params = {f"snn.{k}": v for k, v in fitted.snn.parameters().items()}
        return {"irdae_stage1_rdae.ckpt": (stage1, rdae_params), "irdae_stage2_snn.ckpt": (stage2, snn_params)}
    params = {}
    arch = {"rdae": None, "snn": snn_arch}
    if fitted.rdae is not None:
        arch["rdae"] = fitted.rdae.architecture()
        params.update({f"rdae.{k}": v for k, v in fitted.rdae.parameters().items()})
    params.update({f"snn.{k}": v for k, v in fitted.snn.parameters().items()})
    name = "handcrafted_snn.ckpt" if fitted.system == "handcrafted" else f"{fitted.system}.ckpt"
    header = dict(common, architecture=arch, **_history_header(fitted.histories["main"]))
    return {name: (header, params)}


def write_checkpoints(fitted: FittedSystem, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, (header, params) in checkpoint_payloads(fitted).items():
        ckpt.save_checkpoint(out / name, header, params)
        paths.append(out / name)
    return paths


def _rdae_from(arch: dict, params: dict) -> Rdae:
    def gru(prefix):
        names = GruLayer.NAMES
        W = params[f"{prefix}.W_z"]
        return GruLayer(W.shape[1], W.shape[0], {n: params[f"{prefix}.{n}"] for n in names})

    layers = int(arch.get("layers", 1))
    enc = [gru("rdae." + Rdae.layer_name("encoder", i)) for i in range(layers)]
    dec = [gru("rdae." + Rdae.layer_name("decoder", i)) for i in range(layers)]
    W = params["rdae.readout.W"]
    readout = Dense(W.shape[1], W.shape[0], params={"W": W, "b": params["rdae.readout.b"]})
    return Rdae(enc, dec, readout, transposed=bool(arch["transposed"]))


def _snn_from(arch: dict, params: dict) -> SnnClassifier:
    W1, W2 = params["snn.dense1.W"], params["snn.dense2.W"]
    d1 = Dense(W1.shape[1], W1.shape[0], "relu", {"W": W1, "b": params["snn.dense1.b"]})
    d2 = Dense(W2.shape[1], W2.shape[0], params={"W": W2, "b": params["snn.dense2.b"]})
    return SnnClassifier(d1, d2, arch["dropout"], arch["l2_lambda"])


def load_fitted(path: str | Path) -> FittedSystem:
    """Rebuild a predictor from a checkpoint (stage-2 iRDAE files pull in their encoder)."""
    path = Path(path)
    header, params = ckpt.load_checkpoint(path)
    arch = header["architecture"]
    if arch.get("snn") is None:
        raise ArgumentError(f"{path.name} holds no classifier; evaluate the stage-2 checkpoint instead")
    rdae = _rdae_from(arch["rdae"], params) if arch.get("rdae") else None
    if header.get("encoder_checkpoint"):
        enc_header, enc_params = ckpt.load_checkpoint(path.parent / header["encoder_checkpoint"])
        rdae = _rdae_from(enc_header["architecture"]["rdae"], enc_params)
    config = TrainConfig(**header["config"])
    hist = History(best_epoch=header["epoch"], best_val_loss=header["validation_loss"])
    return FittedSystem(
        system=header["system"],
        config=config,
        norm=NormStats.from_json(header["norm_stats"]),
        snn=_snn_from(arch["snn"], params),
        speakers=header["speakers"],
        rdae=rdae,
        histories={"classifier" if header["system"] == "irdae" else "main": hist},
    )
