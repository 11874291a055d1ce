# insilico-labeling/training/patch_data.py
# Map-style patch dataset keyed by balanced-sampler picks, and batch collation into tensors.

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np
import torch
from torch.utils.data import Dataset

from ingest.manifest import Manifest, load_sample
from models.networks import modality_codes
from preprocess.transforms import NormalizedSample, PatchPair, augment, normalize_sample, random_crop, stack_targets
from shared.organelle_types import LabelAvailability, Modality, Organelle
from training.losses import LossConfig

logger = logging.getLogger(__name__)


class PatchDataset(Dataset):
    """
    Produces one cropped, augmented PatchPair per (sample_id, focus, batch_idx, pos) key.

    The crop/augmentation stream is seeded from (seed, batch_idx, pos), so a batch is identical
    whichever worker builds it.
    """

    def __init__(self, manifest: Manifest, root: str, patch_size: int, seed: int,
                 loss_cfg: LossConfig = None, augment_patches: bool = True):
        self.entries = manifest.by_id()
        self.root = root
        self.patch_size = patch_size
        self.seed = seed
        self.loss_cfg = loss_cfg or LossConfig()
        self.augment_patches = augment_patches
        self._cache: Dict[str, NormalizedSample] = {}

    def __len__(self):
        return len(self.entries)

    def normalized(self, sample_id: str) -> NormalizedSample:
        if sample_id not in self._cache:
            self._cache[sample_id] = normalize_sample(load_sample(self.entries[sample_id], self.root))
        return self._cache[sample_id]

    def __getitem__(self, key: Tuple[str, str, int, int]) -> PatchPair:
        sample_id, focus, batch_idx, pos = key
        rng = np.random.default_rng([self.seed, batch_idx, pos])
        patch = random_crop(
            self.normalized(sample_id), self.patch_size, rng, focus=Organelle(focus),
            lo_pct=self.loss_cfg.lo_pct, hi_pct=self.loss_cfg.hi_pct, low_weight=self.loss_cfg.low_weight,
        )
        return augment(patch, rng) if self.augment_patches else patch


@dataclass
class PatchBatch:
    source: torch.Tensor
    targets: torch.Tensor
    masks: torch.Tensor
    availability: List[LabelAvailability]
    sample_ids: List[str]
    focus: List[Organelle]
    modalities: List[Modality]
    codes: torch.Tensor

    def __len__(self):
        return len(self.sample_ids)

    def to(self, device=None, dtype=None) -> "PatchBatch":
        def move(t):
            return t.to(device=device, dtype=dtype)
        return PatchBatch(
            source=move(self.source), targets=move(self.targets), masks=move(self.masks),
            availability=self.availability, sample_ids=self.sample_ids, focus=self.focus,
            modalities=self.modalities, codes=move(self.codes),
        )

    def availability_tensor(self) -> torch.Tensor:
        return torch.tensor([a.flags for a in self.availability], dtype=torch.bool)


def collate_patches(patches: Sequence[PatchPair], dtype=torch.float32) -> PatchBatch:
    """Stacks PatchPairs; targets and masks are zero where a label is absent."""
    stacked = [stack_targets(p) for p in patches]
    return PatchBatch(
        source=torch.as_tensor(np.stack([p.input for p in patches])[:, None], dtype=dtype),
        targets=torch.as_tensor(np.stack([t for t, _ in stacked]), dtype=dtype),
        masks=torch.as_tensor(np.stack([m for _, m in stacked]), dtype=dtype),
        availability=[p.availability for p in patches],
        sample_ids=[p.sample_id for p in patches],
        focus=[p.focus for p in patches],
        modalities=[p.modality for p in patches],
        codes=modality_codes([p.modality for p in patches], dtype=dtype),
    )
