"""Spatial attention network: numpy layers, hand-derived backprop, training."""
from .checkpoint import load, save
from .network import ArchConfig, backward, forward, init_params, loss, predict_proba, spatial_attention
from .training import PatchSet, TrainConfig, build_training_set, classify, train

__all__ = [
    "ArchConfig", "PatchSet", "TrainConfig", "backward", "build_training_set", "classify",
    "forward", "init_params", "load", "loss", "predict_proba", "save", "spatial_attention", "train",
]
