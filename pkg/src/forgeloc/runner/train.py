"""Staged training: optional encoder pretraining, classification, segmentation."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import torch
from torch import nn

from ..classifier import PolyFocalParams, classification_loss, patch_targets_from_mask
from ..errors import CheckpointError
from ..forgebench.dataset import Split
from ..model import ForgeryDetector, ModelConfig
from ..numerics import check_finite, make_generator, seed_everything
from ..seg_losses import LossConfig, Targets, segmentation_loss
from .checkpoint import load_checkpoint, save_checkpoint
from .config import STAGES, Config, StageConfig
from .schedule import wsd_lr

log = logging.getLogger(__name__)

STAGE_ALIASES = {"pretrain": "pretrain", "1": "stage1", "2": "stage2", "stage1": "stage1", "stage2": "stage2"}


@dataclass
class TrainHistory:
    stage: str
    losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    seconds: float = 0.0


def build_model(config: ModelConfig) -> ForgeryDetector:
    return ForgeryDetector(config)


def trainable_modules(model: ForgeryDetector, stage: str, freeze_encoder: bool) -> list[nn.Module]:
    if stage == "pretrain":
        return [model.encoder, model.classifier]
    if stage == "stage1":
        return [model.classifier] if freeze_encoder else [model.encoder, model.classifier]
    if stage == "stage2":
        return [model.pyramid, model.pixel_decoder, model.mask_decoder]
    raise ValueError(f"unknown stage {stage!r}")


def _batches(n: int, batch_size: int, generator: torch.Generator) -> list[torch.Tensor]:
    order = torch.randperm(n, generator=generator)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_stage(model: ForgeryDetector, data: Split, stage: str, cfg: StageConfig, seed: int) -> TrainHistory:
    """Train ``model`` in place for one stage and return the loss trace."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    seed_everything(seed)
    gen = make_generator(seed * 7919 + STAGES.index(stage))
    modules = trainable_modules(model, stage, cfg.freeze_encoder)
    params = [p for m in modules for p in m.parameters()]
    trainable = {id(p) for p in params}
    for p in model.parameters():
        p.requires_grad_(id(p) in trainable)
    optimizer = torch.optim.AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    n = len(data)
    micro_per_epoch = math.ceil(n / cfg.batch_size)
    steps_per_epoch = math.ceil(micro_per_epoch / cfg.accum)
    total = steps_per_epoch * cfg.epochs
    labels = torch.from_numpy(data.labels).to(torch.get_default_dtype())
    masks = torch.from_numpy(data.masks)
    focal = PolyFocalParams(cfg.alpha, cfg.gamma, cfg.epsilon)
    history = TrainHistory(stage)
    start = time.time()

    if stage == "stage2":
        loss_cfg = LossConfig(cfg.lambda1, cfg.lambda2, cfg.lambda3, cfg.tversky_alpha, cfg.tversky_beta,
                              cfg.tversky_smooth, focal)
        targets = [Targets.from_mask(m) for m in data.masks]
        model.encoder.eval()
        with torch.no_grad():
            features = torch.cat([model.encoder(data.images[i:i + 256]) for i in range(0, n, 256)])
    else:
        patch_targets = patch_targets_from_mask(masks)

    step = 0
    for epoch in range(cfg.epochs):
        batches = _batches(n, cfg.batch_size, gen)
        for g in range(0, len(batches), cfg.accum):
            group = batches[g:g + cfg.accum]
            lr = wsd_lr(step, total, cfg.lr, cfg.warmup, cfg.decay)
            for pg in optimizer.param_groups:
                pg["lr"] = lr
            optimizer.zero_grad(set_to_none=True)
            total_loss = 0.0
            for idx in group:
                if stage == "stage2":
                    preds = model.segment(features[idx], labels[idx])
                    loss = segmentation_loss(preds, [targets[i] for i in idx], loss_cfg)["total"]
                else:
                    _, out = model.classify(data.images[idx])
                    loss = classification_loss(out, labels[idx], patch_targets[idx], focal,
                                               use_patch=model.config.use_patch)["total"]
                check_finite(loss, f"{stage} loss")
                (loss * (len(idx) / sum(len(b) for b in group))).backward()
                total_loss += float(loss.detach()) * len(idx)
            if cfg.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            optimizer.step()
            history.losses.append(total_loss / sum(len(b) for b in group))
            history.lrs.append(lr)
            step += 1
        log.info("%s epoch %d/%d loss %.4f (%.0fs)", stage, epoch + 1, cfg.epochs,
                 history.losses[-1], time.time() - start)
    for p in model.parameters():
        p.requires_grad_(True)
    history.seconds = time.time() - start
    return history


def checkpoint_meta(config: Config, model_config: ModelConfig, stage: str, seed: int, parent: dict | None = None) -> dict:
    provenance = list(parent.get("provenance", [])) if parent else []
    provenance.append(stage)
    return {"config": config.to_dict(), "stage": stage, "seed": seed, "provenance": provenance,
            "model": model_config.to_dict()}


def save_model(path: Path, model: ForgeryDetector, meta: dict) -> None:
    save_checkpoint(path, model.state_dict(), meta)


def load_model(path: Path) -> tuple[ForgeryDetector, dict]:
    tensors, meta = load_checkpoint(path)
    if "model" not in meta:
        raise CheckpointError(f"{path} has no model description")
    model = build_model(ModelConfig.from_dict(meta["model"]))
    try:
        model.load_state_dict(tensors, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint {path} does not match the model: {exc}") from exc
    return model, meta


def run_stage(stage: str, config: Config, data: Split, seed: int, init: Path | None = None) -> tuple[ForgeryDetector, dict, TrainHistory]:
    """Build or load the model, train one stage and return it with checkpoint metadata."""
    stage = STAGE_ALIASES.get(stage, stage)
    parent = None
    if init is not None:
        model, parent = load_model(init)
    elif stage == "stage2":
        raise CheckpointError("stage 2 needs a stage-1 checkpoint (--init)")
    else:
        model = build_model(replace(config.model, seed=seed))
    if stage == "stage2" and parent is not None and "stage1" not in parent.get("provenance", []):
        raise CheckpointError("stage 2 must start from a checkpoint that went through stage 1")
    history = train_stage(model, data, stage, config.stage(stage), seed)
    return model, checkpoint_meta(config, model.config, stage, seed, parent), history
