"""Forgery detection and localization: ViT encoder, patch-aware classifier,
conditional deformable pixel decoder, query mask decoder and test-time adaptation."""
from .adaptation import TestTimeAdapter, tta_loss
from .classifier import PatchAwareClassifier, PolyFocalParams, classification_loss
from .errors import CheckpointError, ConfigError, DataError, ForgelocError
from .model import ForgeryDetector, ModelConfig

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "ForgelocError",
    "ForgeryDetector",
    "ModelConfig",
    "PatchAwareClassifier",
    "PolyFocalParams",
    "TestTimeAdapter",
    "classification_loss",
    "tta_loss",
]
