"""Silence feature and CCC-trained multitask regression for dimensional speech emotion recognition."""

from .audio_io import AudioBuffer, load_wav, resample, write_wav
from .hsf import FeatureVector, MeanStdFunctionals, UtteranceFeaturizer, aggregate_mean_std, append_silence, assemble_matrix
from .lld import LldExtractor, LldMatrix, extract_lld, import_lld_csv
from .metrics import CccReport, TaskWeights, ccc, evaluate, multitask_loss
from .model import ModelConfig, MultitaskRegressor, Standardizer, TrainConfig
from .silence import FrameConfig, SilenceConfig, SilenceFeaturizer, SilenceResult, silence_fraction

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer", "load_wav", "resample", "write_wav",
    "FeatureVector", "MeanStdFunctionals", "UtteranceFeaturizer",
    "aggregate_mean_std", "append_silence", "assemble_matrix",
    "LldExtractor", "LldMatrix", "extract_lld", "import_lld_csv",
    "CccReport", "TaskWeights", "ccc", "evaluate", "multitask_loss",
    "ModelConfig", "MultitaskRegressor", "Standardizer", "TrainConfig",
    "FrameConfig", "SilenceConfig", "SilenceFeaturizer", "SilenceResult", "silence_fraction",
]
