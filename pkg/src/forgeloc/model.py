"""The full detector: encoder, patch-aware classifier and conditional segmenter."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch
from torch import Tensor, nn

from .classifier import ClassifierOutput, PatchAwareClassifier
from .encoder import Encoder, EncoderConfig
from .mask_decoder import InstancePredictions, MaskDecoder
from .pixel_decoder import ConditionalPixelDecoder, DeformableConfig
from .pyramid import FeaturePyramid


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 128
    depth: int = 4
    heads: int = 4
    max_grid: int = 8
    num_queries: int = 20
    msda_points: int = 4
    decoder_layers: int = 3
    mask_rounds: int = 3
    use_patch: bool = True
    use_condition: bool = True
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class ForgeryDetector(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        D, s = config.embed_dim, config.seed
        self.encoder = Encoder(EncoderConfig(D, config.depth, config.heads, config.max_grid), seed=s * 10 + 0)
        self.classifier = PatchAwareClassifier(D, use_patch=config.use_patch, seed=s * 10 + 1)
        self.pyramid = FeaturePyramid(D, seed=s * 10 + 2)
        self.pixel_decoder = ConditionalPixelDecoder(
            D,
            DeformableConfig(levels=4, points=config.msda_points, heads=config.heads, layers=config.decoder_layers),
            use_condition=config.use_condition,
            seed=s * 10 + 3,
        )
        self.mask_decoder = MaskDecoder(D, config.num_queries, config.heads, config.mask_rounds, seed=s * 10 + 4)

    def segmenter_parameters(self) -> list[nn.Parameter]:
        """Everything stage 2 trains: pyramid, pixel decoder (with condition embeddings), mask decoder."""
        return [p for m in (self.pyramid, self.pixel_decoder, self.mask_decoder) for p in m.parameters()]

    def adaptable_parameters(self) -> list[nn.Parameter]:
        """The subset test-time adaptation updates: pixel decoder and mask decoder."""
        return [p for m in (self.pixel_decoder, self.mask_decoder) for p in m.parameters()]

    def classify(self, images: Tensor) -> tuple[Tensor, ClassifierOutput]:
        features = self.encoder(images)
        return features, self.classifier(features)

    def segment(self, features: Tensor, condition_prob: Tensor) -> InstancePredictions:
        levels = self.pyramid(features)
        cond = self.pixel_decoder.condition(condition_prob) if self.config.use_condition else None
        refined, mask_features = self.pixel_decoder(levels, cond)
        return self.mask_decoder(refined, mask_features)

    def forward(self, images: Tensor, condition_prob: Tensor | None = None) -> tuple[ClassifierOutput, InstancePredictions]:
        """Classify, then segment conditioned on ``condition_prob`` (default: the fused probability)."""
        features, cls_out = self.classify(images)
        if condition_prob is None:
            condition_prob = cls_out.fused_prob.detach()
        return cls_out, self.segment(features, condition_prob)
