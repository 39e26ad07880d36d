from .data import SynthDataset, SynthSample, SynthWorld, pk_sample, synth_dataset
from .model import Features, ModelShape, ToyModel
from .train import LOG_COLUMNS, TrainConfig, build_model, epoch_means, lr_at, train, train_step

__all__ = [
    "SynthDataset", "SynthSample", "SynthWorld", "pk_sample", "synth_dataset",
    "Features", "ModelShape", "ToyModel",
    "LOG_COLUMNS", "TrainConfig", "build_model", "epoch_means", "lr_at", "train", "train_step",
]
