# insilico-labeling/training/trainer.py
# Optimization loop, learning-rate schedule and the separate / unified / dynamic training strategies.

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch.utils.data import DataLoader

from ingest.manifest import Manifest
from models.checkpoints import CheckpointHeader, load_checkpoint, save_checkpoint
from models.networks import (
    GeneratorSpec, UnetPPSpec, DiscriminatorSpec, Tier,
    build_discriminator_bank, build_generator, build_unetpp, check_one_hot, is_conditioned, make_dynamic,
    modality_codes,
)
from preprocess.sampler import BalancedBatchSampler, BalancedOrganelleSampler, build_organelle_lists
from shared.errors import CheckpointError, ConfigurationError, LabelValidationError, ShapeError
from shared.organelle_types import MODALITY_ORDER, Modality, N_ORGANELLES, ORGANELLE_ORDER
from shared.settings import CHECKPOINT_EPOCH_PATTERN, CHECKPOINT_FINAL_FILENAME, TRAIN_LOG_FILENAME
from shared.training_logger import close_step_log, log_train_step, open_step_log
from training.losses import LossConfig, LossReport, adaptive_loss, as_availability_list, discriminator_loss, organelle_members
from training.patch_data import PatchBatch, PatchDataset, collate_patches

logger = logging.getLogger(__name__)

Strategy = Literal["separate", "unified", "dynamic"]
Backbone = Literal["pix2pix_resnet9", "unetpp"]

TIER_PATCH_SIZE = {"full": 512, "test": 64}


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    strategy: Strategy = "unified"
    backbone: Backbone = "pix2pix_resnet9"
    epochs_constant: int = Field(150, ge=0)
    epochs_decay: int = Field(150, ge=0)
    lr0: float = Field(2e-4, gt=0)
    betas: Tuple[float, float] = (0.5, 0.999)
    batch_size: int = Field(12, ge=1)
    patch_size: Optional[int] = Field(None, ge=4)
    seed: int = 0
    tier: Tier = "full"
    steps_per_epoch: int = Field(100, ge=1)
    checkpoint_every: int = Field(10, ge=1)
    modality_filter: Optional[Modality] = None
    loss: LossConfig = Field(default_factory=LossConfig)
    augment: bool = True
    num_workers: int = Field(0, ge=0)
    num_threads: Optional[int] = Field(None, ge=1)
    device: str = "cpu"

    @model_validator(mode="after")
    def _filter_only_for_separate(self):
        if self.modality_filter is not None and self.strategy != "separate":
            raise ValueError(f"a modality filter only applies to the separate strategy, not '{self.strategy}'")
        if self.epochs_constant + self.epochs_decay < 1:
            raise ValueError("training needs at least one epoch")
        return self

    @property
    def total_epochs(self) -> int:
        return self.epochs_constant + self.epochs_decay

    @property
    def adversarial(self) -> bool:
        """UNet++ trains without adversarial terms."""
        return self.backbone == "pix2pix_resnet9"

    @property
    def effective_patch_size(self) -> int:
        return self.patch_size or TIER_PATCH_SIZE[self.tier]

    @property
    def modality_scope(self) -> str:
        return self.modality_filter.value if self.modality_filter is not None else "all"

    @property
    def model_id(self) -> str:
        return f"{self.backbone}-{self.strategy}-{self.modality_scope}"

    def generator_spec(self):
        if self.backbone == "unetpp":
            return UnetPPSpec.for_tier(self.tier)
        return GeneratorSpec.for_tier(self.tier).model_copy(update={"patch_size": self.effective_patch_size})


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Constant lr0 for `epochs_constant` epochs, then linear decay reaching 0 at the last epoch."""
    if epoch < 0 or epoch > cfg.total_epochs:
        raise ConfigurationError(f"epoch {epoch} outside the schedule [0, {cfg.total_epochs}]")
    if epoch < cfg.epochs_constant or cfg.epochs_decay == 0:
        return cfg.lr0
    return cfg.lr0 * (1.0 - (epoch - cfg.epochs_constant) / cfg.epochs_decay)


# --- Training State ---

@dataclass
class TrainingState:
    cfg: TrainConfig
    generator: nn.Module
    discriminators: Optional[nn.ModuleList]
    opt_g: torch.optim.Optimizer
    opt_d: Optional[List[torch.optim.Optimizer]]
    sampler: BalancedOrganelleSampler
    epoch: int = 0
    step: int = 0

    @property
    def dynamic(self) -> bool:
        return is_conditioned(self.generator)

    def optimizers(self) -> Dict[str, torch.optim.Optimizer]:
        optimizers = {"generator": self.opt_g}
        for i, opt in enumerate(self.opt_d or []):
            optimizers[f"discriminator_{ORGANELLE_ORDER[i].value}"] = opt
        return optimizers

    def header(self) -> CheckpointHeader:
        return CheckpointHeader(
            model_id=self.cfg.model_id,
            strategy=self.cfg.strategy,
            backbone=self.cfg.backbone,
            modality_scope=self.cfg.modality_scope,
            generator_spec=self.cfg.generator_spec().model_dump(),
            epoch=self.epoch,
            step=self.step,
            train_config=self.cfg.model_dump(mode="json"),
        )


def set_lr(optimizer: torch.optim.Optimizer, lr: float):
    for group in optimizer.param_groups:
        group["lr"] = lr


def build_training_state(manifest: Manifest, cfg: TrainConfig) -> TrainingState:
    """Builds seeded networks, optimizers and the balanced sampler for one run."""
    if cfg.strategy == "separate" and cfg.modality_filter is None:
        raise ConfigurationError("the separate strategy trains one modality per run; set modality_filter")
    scoped = manifest.filter_modality(cfg.modality_filter)
    if len(scoped) == 0:
        raise ConfigurationError(f"no training samples for modality scope '{cfg.modality_scope}'")
    lists = build_organelle_lists(scoped, cfg.modality_filter)
    sampler = BalancedOrganelleSampler(lists, np.random.default_rng([cfg.seed, 1]))
    sampler.quota(cfg.batch_size)

    spec = cfg.generator_spec()
    if cfg.backbone == "unetpp":
        generator = build_unetpp(spec, seed=cfg.seed)
    else:
        generator = build_generator(spec, seed=cfg.seed)
    if cfg.strategy == "dynamic":
        generator = make_dynamic(generator, seed=cfg.seed + 2)

    generator.to(cfg.device)
    discriminators, opt_d = None, None
    if cfg.adversarial:
        discriminators = build_discriminator_bank(DiscriminatorSpec.for_tier(cfg.tier), seed=cfg.seed + 1)
        discriminators.to(cfg.device)
        opt_d = [torch.optim.Adam(d.parameters(), lr=cfg.lr0, betas=cfg.betas) for d in discriminators]
    opt_g = torch.optim.Adam(generator.parameters(), lr=cfg.lr0, betas=cfg.betas)
    logger.info(
        f"Training state for {cfg.model_id}: {len(scoped)} samples, "
        f"{sum(p.numel() for p in generator.parameters())} generator parameters, adversarial={cfg.adversarial}"
    )
    return TrainingState(cfg=cfg, generator=generator, discriminators=discriminators,
                         opt_g=opt_g, opt_d=opt_d, sampler=sampler)


# --- One Step ---

def _validate_batch(batch: PatchBatch, state: TrainingState):
    b = len(batch)
    if batch.source.dim() != 4 or batch.source.shape[:2] != (b, 1):
        raise ShapeError(f"source batch must be (B, 1, H, W) with B={b}, got {tuple(batch.source.shape)}")
    expected = (b, N_ORGANELLES, *batch.source.shape[2:])
    if tuple(batch.targets.shape) != expected or tuple(batch.masks.shape) != expected:
        raise ShapeError(f"targets/masks must be {expected}, got {tuple(batch.targets.shape)} / {tuple(batch.masks.shape)}")
    avails = as_availability_list(batch.availability, b)
    for a, focus, sid in zip(avails, batch.focus, batch.sample_ids):
        if focus is not None and not a[focus]:
            raise LabelValidationError(f"sample {sid} was drawn for {focus.value} but is not labeled for it")
    if state.cfg.modality_filter is not None:
        foreign = [m.value for m in batch.modalities if m != state.cfg.modality_filter]
        if foreign:
            raise LabelValidationError(f"batch for scope {state.cfg.modality_scope} contains modalities {foreign}")
    if state.dynamic:
        check_one_hot(batch.codes)
        if not torch.equal(batch.codes.cpu(), modality_codes(batch.modalities, dtype=batch.codes.dtype)):
            raise LabelValidationError("modality codes do not match the batch modalities")
    return avails


def _set_requires_grad(module: Optional[nn.Module], flag: bool):
    if module is None:
        return
    for p in module.parameters():
        p.requires_grad_(flag)


def train_step(batch: PatchBatch, state: TrainingState) -> LossReport:
    """
    One optimization step: every included discriminator first, then one generator update.

    Heads and discriminators of organelles absent from the whole batch are left untouched.
    """
    avails = _validate_batch(batch, state)
    cfg = state.cfg
    members = organelle_members(avails)
    generator, discriminators = state.generator, state.discriminators
    generator.train()

    if state.dynamic:
        fake = generator(batch.source, batch.codes)
    else:
        fake = generator(batch.source)

    d_losses = {}
    if cfg.adversarial:
        _set_requires_grad(discriminators, True)
        for organelle, idx in members.items():
            c = organelle.index
            sel = torch.tensor(idx, dtype=torch.long, device=fake.device)
            opt = state.opt_d[c]
            opt.zero_grad(set_to_none=True)
            d_loss = discriminator_loss(
                discriminators[c], batch.source.index_select(0, sel),
                batch.targets.index_select(0, sel)[:, c:c + 1], fake.index_select(0, sel)[:, c:c + 1],
                cfg.loss.gan_mode,
            )
            d_loss.backward()
            opt.step()
            d_losses[organelle] = float(d_loss.detach())
        _set_requires_grad(discriminators, False)

    state.opt_g.zero_grad(set_to_none=True)
    report = adaptive_loss(
        fake, batch.targets, avails, batch.masks,
        discriminators if cfg.adversarial else None, cfg.loss, batch.source,
    )
    report.total.backward()
    for organelle in report.excluded:
        for p in generator.head_parameters(organelle.index):
            p.grad = None
    state.opt_g.step()
    _set_requires_grad(discriminators, True)

    report.d_loss.update(d_losses)
    state.step += 1
    return report


def step_record(state: TrainingState, batch: PatchBatch, report: LossReport, lr: float) -> dict:
    record = {
        "step": state.step,
        "epoch": state.epoch,
        "lr": lr,
        "strategy": state.cfg.strategy,
        "backbone": state.cfg.backbone,
        "modality_scope": state.cfg.modality_scope,
        "sample_ids": list(batch.sample_ids),
        "focus_organelles": [f.value if f is not None else None for f in batch.focus],
        "modalities": [m.value for m in batch.modalities],
        "loss": report.to_record(),
    }
    if state.dynamic:
        record["modality_codes"] = batch.codes.to(torch.int64).tolist()
    return record


# --- Checkpointing ---

def save_training_checkpoint(state: TrainingState, path: str):
    save_checkpoint(
        path, state.header(), state.generator, state.discriminators, state.optimizers(),
        extra={"sampler": state.sampler.state_dict(), "epoch": state.epoch, "step": state.step},
    )


def restore_training_state(state: TrainingState, path: str):
    """Loads parameters, optimizer moments, sampler position and counters into `state`."""
    checkpoint = load_checkpoint(path)
    if checkpoint.header.model_id != state.cfg.model_id:
        raise CheckpointError(f"checkpoint {path} belongs to {checkpoint.header.model_id}, not {state.cfg.model_id}")
    saved = checkpoint.state
    state.generator.load_state_dict(saved["generator"])
    if state.discriminators is not None:
        if saved["discriminators"] is None:
            raise CheckpointError(f"checkpoint {path} has no discriminator parameters")
        state.discriminators.load_state_dict(saved["discriminators"])
    for name, opt in state.optimizers().items():
        opt.load_state_dict(saved["optimizers"][name])
    state.sampler.load_state_dict(saved["extra"]["sampler"])
    state.epoch = int(saved["extra"]["epoch"])
    state.step = int(saved["extra"]["step"])
    logger.info(f"Resumed {state.cfg.model_id} from {path} at epoch {state.epoch}, step {state.step}")


# --- Runs ---

@dataclass
class RunResult:
    model_id: str
    run_dir: str
    final_checkpoint: str
    log_path: str
    epochs_completed: int
    steps: int
    checkpoints: List[str] = field(default_factory=list)


def run_training(manifest: Manifest, root: str, cfg: TrainConfig, out_dir: str,
                 resume_from: Optional[str] = None) -> RunResult:
    """Trains one model (one modality scope) to the end of its schedule."""
    if cfg.num_threads:
        torch.set_num_threads(cfg.num_threads)
    state = build_training_state(manifest, cfg)
    if resume_from:
        restore_training_state(state, resume_from)

    run_dir = os.path.join(out_dir, cfg.model_id)
    os.makedirs(run_dir, exist_ok=True)
    log_path = os.path.join(run_dir, TRAIN_LOG_FILENAME)
    step_logger = open_step_log(log_path, cfg.model_id)
    dataset = PatchDataset(manifest.filter_modality(cfg.modality_filter), root, cfg.effective_patch_size,
                           cfg.seed, cfg.loss, augment_patches=cfg.augment)
    checkpoints = []
    try:
        while state.epoch < cfg.total_epochs:
            lr = lr_at(state.epoch, cfg)
            set_lr(state.opt_g, lr)
            for opt in state.opt_d or []:
                set_lr(opt, lr)
            batches = BalancedBatchSampler(state.sampler, cfg.batch_size, cfg.steps_per_epoch, start_batch=state.step)
            loader = DataLoader(dataset, batch_sampler=batches, collate_fn=collate_patches, num_workers=cfg.num_workers)
            for batch in loader:
                batch = batch.to(device=cfg.device)
                report = train_step(batch, state)
                log_train_step(step_logger, step_record(state, batch, report, lr))
            state.epoch += 1
            logger.info(f"{cfg.model_id}: epoch {state.epoch}/{cfg.total_epochs} done (lr {lr:.3g}, last loss {float(report.total):.4f})")
            if state.epoch % cfg.checkpoint_every == 0 and state.epoch < cfg.total_epochs:
                path = os.path.join(run_dir, CHECKPOINT_EPOCH_PATTERN.format(epoch=state.epoch))
                save_training_checkpoint(state, path)
                checkpoints.append(path)
        final_path = os.path.join(run_dir, CHECKPOINT_FINAL_FILENAME)
        save_training_checkpoint(state, final_path)
        checkpoints.append(final_path)
    finally:
        close_step_log(step_logger)
    return RunResult(model_id=cfg.model_id, run_dir=run_dir, final_checkpoint=final_path, log_path=log_path,
                     epochs_completed=state.epoch, steps=state.step, checkpoints=checkpoints)


def plan_runs(manifest: Manifest, cfg: TrainConfig) -> List[TrainConfig]:
    """One config per run: three modality-scoped runs for `separate`, otherwise a single run."""
    if cfg.strategy != "separate":
        return [cfg]
    modalities = [cfg.modality_filter] if cfg.modality_filter is not None else list(MODALITY_ORDER)
    runs = []
    for modality in modalities:
        if len(manifest.filter_modality(modality)) == 0:
            raise ConfigurationError(f"separate strategy: no training samples for modality {modality.value}")
        runs.append(cfg.model_copy(update={"modality_filter": modality}))
    return runs


def train(manifest: Manifest, root: str, cfg: TrainConfig, out_dir: str,
          resume_from: Optional[str] = None) -> List[RunResult]:
    """Runs every training run the strategy calls for; checkpoints land in `<out_dir>/<model_id>/`."""
    if len(manifest) == 0:
        raise ConfigurationError("cannot train on an empty manifest")
    runs = plan_runs(manifest, cfg)
    if resume_from and len(runs) > 1:
        raise ConfigurationError("resuming needs a single run; set a modality filter for the separate strategy")
    logger.info(f"Starting {len(runs)} training run(s): {[r.model_id for r in runs]}")
    return [run_training(manifest, root, run_cfg, out_dir, resume_from) for run_cfg in runs]
