# insilico-labeling/training/losses.py
# Adaptive partial-label loss over the weighted pix2pix composite, plus the adversarial objectives.
#
# Per sample: total = lambda1 * weighted_l1(T(pred), T(gt), T(M)) + lambda2 * mean of the
# generator adversarial terms of its labeled organelles. The batch loss is the mean over samples.

import logging
from typing import Dict, List, Literal, Optional, Sequence, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field, model_validator

from shared.errors import LabelValidationError, ShapeError
from shared.organelle_types import LabelAvailability, ORGANELLE_ORDER, Organelle

logger = logging.getLogger(__name__)

GanMode = Literal["vanilla", "lsgan"]


class LossConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    lambda1: float = Field(100.0, gt=0)
    lambda2: float = Field(1.0, gt=0)
    low_weight: float = Field(0.1, gt=0)
    lo_pct: float = Field(2.0, ge=0, le=100)
    hi_pct: float = Field(99.8, ge=0, le=100)
    gan_mode: GanMode = "vanilla"

    @model_validator(mode="after")
    def _ordered_band(self):
        if self.lo_pct > self.hi_pct:
            raise ValueError(f"percentile band is inverted: [{self.lo_pct}, {self.hi_pct}]")
        return self


class LossReport(BaseModel):
    """One step's loss breakdown. Organelles absent from every sample are listed in `excluded`."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    total: torch.Tensor
    weighted_l1: float
    l1_component: float
    adversarial_component: float = 0.0
    l1: Dict[Organelle, float] = Field(default_factory=dict)
    g_adv: Dict[Organelle, float] = Field(default_factory=dict)
    d_loss: Dict[Organelle, float] = Field(default_factory=dict)
    excluded: List[Organelle] = Field(default_factory=list)
    n_included: int = 0
    adversarial: bool = True

    def to_record(self) -> dict:
        record = {
            "total": float(self.total.detach()),
            "weighted_l1": self.weighted_l1,
            "l1_component": self.l1_component,
            "l1": {o.value: v for o, v in self.l1.items()},
            "excluded": [o.value for o in self.excluded],
            "n_included": self.n_included,
        }
        if self.adversarial:
            record["adversarial_component"] = self.adversarial_component
            record["g_adv"] = {o.value: v for o, v in self.g_adv.items()}
            record["d_loss"] = {o.value: v for o, v in self.d_loss.items()}
        return record


# --- Channel Selection ---

def _availability_index(avail: LabelAvailability, device) -> torch.Tensor:
    if not avail.any():
        raise LabelValidationError("availability has no labeled organelle; nothing to train on")
    return torch.tensor(avail.indices(), dtype=torch.long, device=device)


def transform_T(pred: torch.Tensor, avail: LabelAvailability) -> torch.Tensor:
    """Keeps only the labeled organelle channels (channel dim -3), in canonical order."""
    if pred.dim() < 3 or pred.shape[-3] != len(ORGANELLE_ORDER):
        raise ShapeError(f"expected {len(ORGANELLE_ORDER)} organelle channels at dim -3, got {tuple(pred.shape)}")
    return pred.index_select(pred.dim() - 3, _availability_index(avail, pred.device))


def weighted_l1(pred_sel: torch.Tensor, gt_sel: torch.Tensor, masks_sel: torch.Tensor) -> torch.Tensor:
    """Mean over channels and pixels of |pred - gt| * M."""
    if pred_sel.shape != gt_sel.shape or pred_sel.shape != masks_sel.shape:
        raise ShapeError(
            f"weighted L1 shape mismatch: pred {tuple(pred_sel.shape)}, gt {tuple(gt_sel.shape)}, "
            f"mask {tuple(masks_sel.shape)}"
        )
    return torch.mean(torch.abs(pred_sel - gt_sel) * masks_sel)


# --- Adversarial Objectives ---

def gan_criterion(logits: torch.Tensor, target_is_real: bool, gan_mode: GanMode = "vanilla",
                  per_sample: bool = False) -> torch.Tensor:
    """Cross-entropy on logits (vanilla) or least squares (lsgan); optionally one value per sample."""
    target = torch.ones_like(logits) if target_is_real else torch.zeros_like(logits)
    if gan_mode == "lsgan":
        elementwise = F.mse_loss(logits, target, reduction="none")
    else:
        elementwise = F.binary_cross_entropy_with_logits(logits, target, reduction="none")
    if per_sample:
        return elementwise.flatten(1).mean(dim=1)
    return elementwise.mean()


def discriminator_loss(disc: nn.Module, source: torch.Tensor, real_target: torch.Tensor,
                       fake_target: torch.Tensor, gan_mode: GanMode = "vanilla") -> torch.Tensor:
    real_logits = disc(torch.cat([source, real_target], dim=1))
    fake_logits = disc(torch.cat([source, fake_target.detach()], dim=1))
    return 0.5 * (gan_criterion(real_logits, True, gan_mode) + gan_criterion(fake_logits, False, gan_mode))


def generator_adversarial_loss(disc: nn.Module, source: torch.Tensor, fake_target: torch.Tensor,
                               gan_mode: GanMode = "vanilla", per_sample: bool = False) -> torch.Tensor:
    return gan_criterion(disc(torch.cat([source, fake_target], dim=1)), True, gan_mode, per_sample)


def cgan_losses(disc: nn.Module, source: torch.Tensor, real_target: torch.Tensor, fake_target: torch.Tensor,
                gan_mode: GanMode = "vanilla") -> Tuple[torch.Tensor, torch.Tensor]:
    """(d_loss, g_adv_loss) for one organelle's single-channel planes; the fake is detached for d_loss."""
    d_loss = discriminator_loss(disc, source, real_target, fake_target, gan_mode)
    g_adv = generator_adversarial_loss(disc, source, fake_target, gan_mode)
    return d_loss, g_adv


# --- Adaptive Loss ---

def as_availability_list(avail: Union[LabelAvailability, Sequence[LabelAvailability], torch.Tensor],
                         batch: int) -> List[LabelAvailability]:
    if isinstance(avail, LabelAvailability):
        avails = [avail] * batch
    elif isinstance(avail, torch.Tensor):
        avails = [LabelAvailability(flags=tuple(bool(v) for v in row)) for row in avail.tolist()]
    else:
        avails = list(avail)
    if len(avails) != batch:
        raise LabelValidationError(f"{len(avails)} availability records for a batch of {batch}")
    for a in avails:
        if not a.any():
            raise LabelValidationError("availability has no labeled organelle; nothing to train on")
    return avails


def organelle_members(avails: Sequence[LabelAvailability]) -> Dict[Organelle, List[int]]:
    """Batch positions labeled for each organelle; organelles with no member are omitted."""
    members = {o: [b for b, a in enumerate(avails) if a[o]] for o in ORGANELLE_ORDER}
    return {o: idx for o, idx in members.items() if idx}


def adaptive_loss(pred4: torch.Tensor, targets: torch.Tensor,
                  avail: Union[LabelAvailability, Sequence[LabelAvailability], torch.Tensor],
                  masks: torch.Tensor, disc_bank: Optional[nn.ModuleList], cfg: LossConfig = None,
                  source: Optional[torch.Tensor] = None) -> LossReport:
    """
    Partial-label loss for a (B, 4, H, W) prediction.

    Unlabeled channels are removed before the weighted L1, and only the discriminators of
    labeled organelles are queried, so unlabeled heads and discriminators get no gradient.
    With `disc_bank=None` the loss is L1 only.
    """
    cfg = cfg or LossConfig()
    if pred4.shape != targets.shape or pred4.shape != masks.shape:
        raise ShapeError(
            f"adaptive loss shape mismatch: pred {tuple(pred4.shape)}, targets {tuple(targets.shape)}, "
            f"masks {tuple(masks.shape)}"
        )
    batch = pred4.shape[0]
    avails = as_availability_list(avail, batch)
    members = organelle_members(avails)
    adversarial = disc_bank is not None
    if adversarial and source is None:
        raise ShapeError("adversarial loss needs the source image batch")

    per_sample_l1 = [
        weighted_l1(transform_T(pred4[b], a), transform_T(targets[b], a), transform_T(masks[b], a))
        for b, a in enumerate(avails)
    ]

    adv_terms: List[List[torch.Tensor]] = [[] for _ in range(batch)]
    g_adv_report = {}
    if adversarial:
        for organelle, idx in members.items():
            sel = torch.tensor(idx, dtype=torch.long, device=pred4.device)
            c = organelle.index
            per = generator_adversarial_loss(
                disc_bank[c], source.index_select(0, sel), pred4.index_select(0, sel)[:, c:c + 1],
                cfg.gan_mode, per_sample=True,
            )
            for k, b in enumerate(idx):
                adv_terms[b].append(per[k])
            g_adv_report[organelle] = float(per.detach().mean())

    totals = []
    adv_means = []
    for b in range(batch):
        total_b = cfg.lambda1 * per_sample_l1[b]
        if adversarial:
            adv_b = torch.stack(adv_terms[b]).mean()
            adv_means.append(adv_b)
            total_b = total_b + cfg.lambda2 * adv_b
        totals.append(total_b)
    total = torch.stack(totals).mean()

    l1_report = {}
    with torch.no_grad():
        for organelle, idx in members.items():
            c = organelle.index
            l1_report[organelle] = float(torch.stack([
                weighted_l1(pred4[b, c], targets[b, c], masks[b, c]) for b in idx
            ]).mean())
        mean_l1 = float(torch.stack(per_sample_l1).mean())
        adversarial_component = cfg.lambda2 * float(torch.stack(adv_means).mean()) if adversarial else 0.0

    return LossReport(
        total=total,
        weighted_l1=mean_l1,
        l1_component=cfg.lambda1 * mean_l1,
        adversarial_component=adversarial_component,
        l1=l1_report,
        g_adv=g_adv_report,
        excluded=[o for o in ORGANELLE_ORDER if o not in members],
        n_included=len(members),
        adversarial=adversarial,
    )
