# insilico-labeling/synth/generator.py
# Deterministic synthetic microscopy dataset: three modalities, partial labels, class imbalance,
# and no actin labels for DIC.
#
# Organelle maps are procedural; each modality's input is an analytic rendering of the same
# maps, so the input -> target mapping is learnable by construction.

import logging
import math
import os
from typing import Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.ndimage import gaussian_filter, sobel
from skimage.draw import ellipse, line_aa

from ingest.image_io import write_image
from ingest.manifest import Manifest, build_manifest, save_manifest
from shared.errors import ConfigurationError
from shared.organelle_types import (
    LabelAvailability, MIN_SYNTHETIC_SIZE, MODALITY_ORDER, Modality, ORGANELLE_ORDER, Organelle, Sample,
    UINT16_MAX, validate_sample,
)
from shared.settings import MANIFEST_FILENAME

logger = logging.getLogger(__name__)

M, N, T, A = ORGANELLE_ORDER

# --- Configuration ---
TARGET_BACKGROUND = 1000.0
TARGET_SIGNAL = 40000.0


class LabelPattern(BaseModel):
    """A set of labeled organelles shared by one synthetic study, with its sampling weight."""
    model_config = ConfigDict(frozen=True)

    organelles: Tuple[Organelle, ...]
    weight: float = Field(1.0, gt=0)

    @field_validator("organelles")
    @classmethod
    def _non_empty(cls, organelles):
        if not organelles:
            raise ValueError("a label pattern needs at least one organelle")
        return tuple(o for o in ORGANELLE_ORDER if o in set(organelles))

    @property
    def code(self) -> str:
        return "".join(o.short for o in self.organelles)


def _patterns(*rows) -> List[LabelPattern]:
    return [LabelPattern(organelles=orgs, weight=w) for orgs, w in rows]


# Imbalance shaped after the study counts per organelle: nucleus most common, actin rarest,
# and no DIC study labels actin.
DEFAULT_LABEL_PATTERNS: Dict[Modality, List[LabelPattern]] = {
    Modality.BF: _patterns(((M, N), 4.0), ((N,), 2.0), ((N, T), 1.5), ((N, A), 1.0), ((M,), 1.0)),
    Modality.PC: _patterns(((M, N), 4.0), ((N,), 2.0), ((N, T), 1.0), ((M, T, A), 0.8), ((M,), 1.0)),
    Modality.DIC: _patterns(((M, N), 4.0), ((N,), 2.0), ((N, T), 1.5), ((M,), 1.0)),
}


class ShapeParams(BaseModel):
    """Organelle geometry, as fractions of the image side unless noted."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    cells_min: int = Field(2, ge=1)
    cells_max: int = Field(4, ge=1)
    nucleus_radius: Tuple[float, float] = (0.06, 0.11)
    mito_per_cell: Tuple[int, int] = (4, 8)
    mito_length: Tuple[float, float] = (0.05, 0.12)
    fibers_per_cell: Tuple[int, int] = (6, 10)
    fiber_length: Tuple[float, float] = (0.18, 0.32)
    actin_arcs_per_cell: Tuple[int, int] = (2, 4)
    texture_sigma: float = Field(1.0, gt=0)  # pixels


class SynthConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_samples: int = Field(24, ge=1)
    image_size: int = Field(256, ge=MIN_SYNTHETIC_SIZE)
    seed: int = 0
    noise_sigma: float = Field(300.0, ge=0)
    label_patterns: Dict[Modality, List[LabelPattern]] = Field(default_factory=lambda: dict(DEFAULT_LABEL_PATTERNS))
    shape: ShapeParams = Field(default_factory=ShapeParams)

    @model_validator(mode="after")
    def _dataset_structure(self):
        for modality in MODALITY_ORDER:
            if not self.label_patterns.get(modality):
                raise ValueError(f"modality {modality.value} needs at least one label pattern")
        for pattern in self.label_patterns[Modality.DIC]:
            if Organelle.ACTIN in pattern.organelles:
                raise ValueError("DIC label patterns must not include Actin")
        return self


# --- Pattern Allocation ---

def allocate_patterns(patterns: Sequence[LabelPattern], count: int, rng: np.random.Generator) -> List[int]:
    """Largest-remainder quotas of pattern indices for `count` samples, in shuffled order."""
    weights = np.array([p.weight for p in patterns], dtype=np.float64)
    exact = count * weights / weights.sum()
    quotas = np.floor(exact).astype(int)
    remainders = exact - quotas
    for i in np.argsort(-remainders, kind="stable")[: count - int(quotas.sum())]:
        quotas[i] += 1
    indices = np.repeat(np.arange(len(patterns)), quotas)
    return [int(i) for i in rng.permutation(indices)]


def plan_samples(cfg: SynthConfig) -> List[Tuple[int, Modality, int]]:
    """(sample index, modality, pattern index) triples; modalities assigned round-robin."""
    rng = np.random.default_rng([cfg.seed, 0])
    by_modality = {m: [i for i in range(cfg.n_samples) if MODALITY_ORDER[i % len(MODALITY_ORDER)] == m]
                   for m in MODALITY_ORDER}
    plan = []
    for modality in MODALITY_ORDER:
        indices = by_modality[modality]
        allocation = allocate_patterns(cfg.label_patterns[modality], len(indices), rng)
        plan.extend((i, modality, p) for i, p in zip(indices, allocation))
    return sorted(plan)


# --- Organelle Rendering ---

def _draw_polyline(canvas: np.ndarray, points: np.ndarray, value: float = 1.0):
    h, w = canvas.shape
    for (r0, c0), (r1, c1) in zip(points[:-1], points[1:]):
        rr, cc, aa = line_aa(int(round(r0)), int(round(c0)), int(round(r1)), int(round(c1)))
        keep = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        canvas[rr[keep], cc[keep]] = np.maximum(canvas[rr[keep], cc[keep]], value * aa[keep])


def _unit(canvas: np.ndarray, sigma: float) -> np.ndarray:
    smooth = gaussian_filter(canvas, sigma)
    peak = smooth.max()
    return smooth / peak if peak > 0 else smooth


def render_organelle_maps(size: int, shape: ShapeParams, rng: np.random.Generator) -> Dict[Organelle, np.ndarray]:
    """Four [0, 1] organelle maps over the same randomly placed cells."""
    maps = {o: np.zeros((size, size), dtype=np.float64) for o in ORGANELLE_ORDER}
    n_cells = int(rng.integers(shape.cells_min, max(shape.cells_min, shape.cells_max) + 1))
    for _ in range(n_cells):
        radius = size * rng.uniform(*shape.nucleus_radius)
        aspect = rng.uniform(0.7, 1.0)
        center = rng.uniform(radius, size - radius, size=2)
        rr, cc = ellipse(center[0], center[1], radius, radius * aspect, shape=(size, size),
                         rotation=rng.uniform(-math.pi, math.pi))
        maps[N][rr, cc] = 1.0

        # mitochondria: short curved filaments scattered around the nucleus
        for _ in range(int(rng.integers(shape.mito_per_cell[0], shape.mito_per_cell[1] + 1))):
            angle = rng.uniform(0, 2 * math.pi)
            dist = radius * rng.uniform(1.2, 2.4)
            start = center + dist * np.array([math.sin(angle), math.cos(angle)])
            heading = rng.uniform(0, 2 * math.pi)
            length = size * rng.uniform(*shape.mito_length)
            bend = rng.uniform(-1.5, 1.5)
            t = np.linspace(0.0, 1.0, 6)
            headings = heading + bend * t
            steps = (length / 5) * np.stack([np.sin(headings), np.cos(headings)], axis=1)
            _draw_polyline(maps[M], start + np.vstack([[0.0, 0.0], np.cumsum(steps[:-1], axis=0)]))

        # tubulin: fibers radiating from the nucleus
        for _ in range(int(rng.integers(shape.fibers_per_cell[0], shape.fibers_per_cell[1] + 1))):
            angle = rng.uniform(0, 2 * math.pi)
            direction = np.array([math.sin(angle), math.cos(angle)])
            length = size * rng.uniform(*shape.fiber_length)
            t = np.linspace(radius * 0.8, radius * 0.8 + length, 8)[:, None]
            wobble = rng.normal(0.0, 0.6, size=(8, 2))
            _draw_polyline(maps[T], center + t * direction + wobble, value=0.8)

        # actin: arcs along the cell periphery
        cell_radius = radius * rng.uniform(2.6, 3.2)
        for _ in range(int(rng.integers(shape.actin_arcs_per_cell[0], shape.actin_arcs_per_cell[1] + 1))):
            a0 = rng.uniform(0, 2 * math.pi)
            theta = np.linspace(a0, a0 + rng.uniform(0.6, 1.4), 10)
            r = cell_radius * rng.uniform(0.9, 1.1, size=10)
            _draw_polyline(maps[A], center + np.stack([r * np.sin(theta), r * np.cos(theta)], axis=1))

    return {o: _unit(m, shape.texture_sigma) for o, m in maps.items()}


def _to_uint16(values: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(values, 0, UINT16_MAX)).astype(np.uint16)


def render_target(organelle_map: np.ndarray, noise_sigma: float, rng: np.random.Generator) -> np.ndarray:
    noise = rng.normal(0.0, noise_sigma, size=organelle_map.shape) if noise_sigma else 0.0
    return _to_uint16(TARGET_BACKGROUND + TARGET_SIGNAL * organelle_map + noise)


def render_input(maps: Dict[Organelle, np.ndarray], modality: Modality, noise_sigma: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Transmitted-light rendering of the organelle maps for one modality."""
    density = gaussian_filter(0.5 * maps[N] + 0.3 * maps[M] + 0.2 * maps[T] + 0.2 * maps[A], 1.0)
    if modality == Modality.BF:
        # low-contrast absorption
        image = 42000.0 * np.exp(-0.9 * density) + 4000.0
    elif modality == Modality.PC:
        # halo at object edges
        halo = gaussian_filter(density, 1.0) - gaussian_filter(density, 4.0)
        image = 22000.0 + 9000.0 * density + 60000.0 * halo
    else:
        # directional-gradient relief
        relief = sobel(density, axis=0) + sobel(density, axis=1)
        image = 32768.0 + 14000.0 * relief
    noise = rng.normal(0.0, noise_sigma, size=image.shape) if noise_sigma else 0.0
    return _to_uint16(image + noise)


def render_sample(index: int, modality: Modality, organelles: Sequence[Organelle], cfg: SynthConfig,
                  study_id: str = "") -> Sample:
    """Renders sample `index` from its own seeded stream; only `organelles` receive target planes."""
    rng = np.random.default_rng([cfg.seed, index + 1])
    maps = render_organelle_maps(cfg.image_size, cfg.shape, rng)
    input_plane = render_input(maps, modality, cfg.noise_sigma, rng)
    targets = {o: render_target(maps[o], cfg.noise_sigma, rng) for o in ORGANELLE_ORDER}
    labeled = set(organelles)
    return Sample(
        sample_id=f"img{index:04d}",
        input=input_plane,
        modality=modality,
        targets={o: targets[o] for o in ORGANELLE_ORDER if o in labeled},
        availability=LabelAvailability.from_organelles(labeled),
        study_id=study_id or f"{modality.value}_synthetic",
    )


def render_samples(cfg: SynthConfig) -> List[Sample]:
    """The whole synthetic dataset in memory, in sample-index order."""
    samples = []
    for index, modality, pattern_idx in plan_samples(cfg):
        pattern = cfg.label_patterns[modality][pattern_idx]
        study_id = f"{modality.value}_s{pattern_idx:02d}"
        samples.append(render_sample(index, modality, pattern.organelles, cfg, study_id))
    return samples


def generate_dataset(cfg: SynthConfig, out_dir: str) -> Manifest:
    """
    Writes the synthetic dataset under `out_dir` in the standard directory layout, plus its
    manifest file, and returns the manifest.
    """
    os.makedirs(out_dir, exist_ok=True)
    samples = render_samples(cfg)
    for sample in samples:
        violations = validate_sample(sample)
        if violations:
            raise ConfigurationError(f"synthetic sample {sample.sample_id} is invalid: {violations}")
        study_dir = os.path.join(out_dir, sample.study_id)
        write_image(sample.input, os.path.join(study_dir, f"{sample.sample_id}_{sample.modality.value}.tif"))
        for organelle, plane in sample.targets.items():
            write_image(plane, os.path.join(study_dir, f"{sample.sample_id}_{organelle.value}.tif"))
    manifest = build_manifest(out_dir)
    save_manifest(manifest, os.path.join(out_dir, MANIFEST_FILENAME))
    counts = {o.short: sum(1 for s in samples if s.availability[o]) for o in ORGANELLE_ORDER}
    logger.info(f"Generated {len(samples)} synthetic samples ({cfg.image_size}px) in {out_dir}; label counts {counts}")
    return manifest
