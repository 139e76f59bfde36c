from .layers import Dense, Dropout, GruLayer, cross_entropy, gru_forward, mse, softmax
from .models import (
    ClassifierObjective,
    JointObjective,
    Rdae,
    ReconstructionObjective,
    SnnClassifier,
    classify,
    joint_loss,
    rdae_forward,
    reconstruction_loss,
)
from .optim import SGD, Adam, AdamState, adam_step
from .training import EarlyStopping, History, TrainConfig, replay_early_stopping, train

__all__ = [
    "Adam",
    "AdamState",
    "ClassifierObjective",
    "Dense",
    "Dropout",
    "EarlyStopping",
    "GruLayer",
    "History",
    "JointObjective",
    "Rdae",
    "ReconstructionObjective",
    "SGD",
    "SnnClassifier",
    "TrainConfig",
    "adam_step",
    "classify",
    "cross_entropy",
    "gru_forward",
    "joint_loss",
    "mse",
    "rdae_forward",
    "reconstruction_loss",
    "replay_early_stopping",
    "softmax",
    "train",
]
