# insilico-labeling/preprocess/transforms.py
# Intensity rescaling, percentile weight masks, random crops and dihedral augmentation.
#
# All operations are pure given an explicit numpy Generator.

import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from shared.organelle_types import (
    LabelAvailability, Modality, ORGANELLE_ORDER, Organelle, Sample, UINT16_MAX,
)

logger = logging.getLogger(__name__)

# --- Weight Mask Defaults ---
MASK_LO_PCT = 2.0
MASK_HI_PCT = 99.8
MASK_LOW_WEIGHT = 0.1
MASK_HIGH_WEIGHT = 1.0

DEFAULT_PATCH_SIZE = 512


# --- Intensity Rescaling ---

def rescale_to_model(plane: np.ndarray) -> np.ndarray:
    """Maps uint16 intensities [0, 65535] affinely onto [-1, 1] (float64)."""
    return 2.0 * plane.astype(np.float64) / UINT16_MAX - 1.0


def rescale_to_uint16(normalized: np.ndarray) -> np.ndarray:
    """Clamps to [-1, 1] and maps back to uint16; exact inverse of rescale_to_model."""
    clipped = np.clip(np.asarray(normalized, dtype=np.float64), -1.0, 1.0)
    return np.rint((clipped + 1.0) / 2.0 * UINT16_MAX).astype(np.uint16)


# --- Weight Mask ---

def percentile_weight_mask(gt: np.ndarray, lo_pct: float = MASK_LO_PCT, hi_pct: float = MASK_HI_PCT,
                           low_weight: float = MASK_LOW_WEIGHT) -> np.ndarray:
    """
    Per-pixel loss weights for one ground-truth plane.

    Pixels inside the closed [lo_pct, hi_pct] percentile band of `gt` get 1.0, the rest
    `low_weight`. Percentiles use linear interpolation between order statistics.
    """
    if gt.size == 0:
        raise ValueError("cannot build a weight mask for an empty plane")
    lo, hi = np.percentile(gt, [lo_pct, hi_pct], method="linear")
    inside = (gt >= lo) & (gt <= hi)
    return np.where(inside, MASK_HIGH_WEIGHT, low_weight).astype(np.float64)


# --- Normalized Samples & Patches ---

@dataclass(frozen=True)
class NormalizedSample:
    sample_id: str
    input: np.ndarray
    modality: Modality
    targets: Dict[Organelle, np.ndarray]
    availability: LabelAvailability

    @property
    def shape(self) -> Tuple[int, int]:
        return self.input.shape


def normalize_sample(sample: Sample) -> NormalizedSample:
    return NormalizedSample(
        sample_id=sample.sample_id,
        input=rescale_to_model(sample.input),
        modality=sample.modality,
        targets={o: rescale_to_model(p) for o, p in sample.targets.items()},
        availability=sample.availability,
    )


@dataclass(frozen=True)
class PatchPair:
    """Aligned input/target/mask patches for one sample. Masks exist exactly for labeled organelles."""
    sample_id: str
    input: np.ndarray
    targets: Dict[Organelle, np.ndarray]
    masks: Dict[Organelle, np.ndarray]
    availability: LabelAvailability
    modality: Modality
    focus: Organelle = field(default=None)


def reflect_pad_to(plane: np.ndarray, height: int, width: int) -> np.ndarray:
    """Reflect-pads the bottom and right edges up to (height, width); never shrinks."""
    pad_h = max(0, height - plane.shape[0])
    pad_w = max(0, width - plane.shape[1])
    if pad_h == 0 and pad_w == 0:
        return plane
    return np.pad(plane, ((0, pad_h), (0, pad_w)), mode="reflect")


def random_crop(ns: NormalizedSample, size: int = DEFAULT_PATCH_SIZE, rng: np.random.Generator = None,
                focus: Organelle = None, lo_pct: float = MASK_LO_PCT, hi_pct: float = MASK_HI_PCT,
                low_weight: float = MASK_LOW_WEIGHT) -> PatchPair:
    """
    Crops input and targets at one shared offset, drawn uniformly over valid positions.

    Planes smaller than `size` are reflect-padded first. Masks come from the cropped
    ground truth of each labeled organelle.
    """
    rng = rng if rng is not None else np.random.default_rng()
    h, w = ns.shape
    ph, pw = max(h, size), max(w, size)
    top = int(rng.integers(0, ph - size + 1))
    left = int(rng.integers(0, pw - size + 1))

    def crop(plane):
        padded = reflect_pad_to(plane, ph, pw)
        return np.ascontiguousarray(padded[top:top + size, left:left + size])

    targets = {o: crop(ns.targets[o]) for o in ns.availability.organelles()}
    masks = {o: percentile_weight_mask(t, lo_pct, hi_pct, low_weight) for o, t in targets.items()}
    return PatchPair(
        sample_id=ns.sample_id,
        input=crop(ns.input),
        targets=targets,
        masks=masks,
        availability=ns.availability,
        modality=ns.modality,
        focus=focus,
    )


# --- Augmentation ---

def draw_dihedral(rng: np.random.Generator) -> Tuple[int, bool]:
    """Quarter-turn count k in {0..3} and a horizontal flip with probability 0.5."""
    k = int(rng.integers(0, 4))
    flip = bool(rng.random() < 0.5)
    return k, flip


def apply_dihedral(arr: np.ndarray, k: int, flip: bool) -> np.ndarray:
    out = np.rot90(arr, k)
    if flip:
        out = np.fliplr(out)
    return np.ascontiguousarray(out)


def augment(p: PatchPair, rng: np.random.Generator) -> PatchPair:
    """Applies one random rotation/flip jointly to input, targets and masks."""
    if p.input.shape[0] != p.input.shape[1]:
        raise ValueError(f"augmentation needs a square patch, got {p.input.shape}")
    k, flip = draw_dihedral(rng)
    return PatchPair(
        sample_id=p.sample_id,
        input=apply_dihedral(p.input, k, flip),
        targets={o: apply_dihedral(t, k, flip) for o, t in p.targets.items()},
        masks={o: apply_dihedral(m, k, flip) for o, m in p.masks.items()},
        availability=p.availability,
        modality=p.modality,
        focus=p.focus,
    )


def stack_targets(p: PatchPair) -> Tuple[np.ndarray, np.ndarray]:
    """(4, H, W) targets and masks in canonical order; zeros where a label is absent."""
    h, w = p.input.shape
    targets = np.zeros((len(ORGANELLE_ORDER), h, w), dtype=np.float64)
    masks = np.zeros_like(targets)
    for organelle in p.availability.organelles():
        targets[organelle.index] = p.targets[organelle]
        masks[organelle.index] = p.masks[organelle]
    return targets, masks
