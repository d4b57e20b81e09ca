from .checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from .config import Config, StageConfig, TTAConfig, load_config, parse_config
from .evaluate import Predictions, evaluate, predict, predict_adapted
from .schedule import wsd_lr
from .train import load_model, run_stage, save_model, train_stage

__all__ = [
    "FORMAT_VERSION",
    "Config",
    "Predictions",
    "StageConfig",
    "TTAConfig",
    "evaluate",
    "load_checkpoint",
    "load_config",
    "load_model",
    "parse_config",
    "predict",
    "predict_adapted",
    "run_stage",
    "save_checkpoint",
    "save_model",
    "train_stage",
    "wsd_lr",
]
