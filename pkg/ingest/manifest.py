# insilico-labeling/ingest/manifest.py
# Builds, persists and reloads the dataset manifest; loads Samples from entries.
#
# Directory layout:
#   <root>/<study_id>/<sample_id>_<MODALITY>.tif    input (MODALITY in BF, PC, DIC)
#   <root>/<study_id>/<sample_id>_<Organelle>.tif   target (Mitochondria, Nucleus, Tubulin, Actin)

import json
import logging
import os
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from ingest.image_io import read_image
from shared.errors import ManifestError, SampleLoadError
from shared.organelle_types import (
    LabelAvailability, Modality, ORGANELLE_ORDER, Organelle, Sample,
    validate_sample, warn_if_outside_real_bounds,
)

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1


class LayoutSpec(BaseModel):
    """Filename convention of a dataset tree."""
    model_config = ConfigDict(frozen=True)

    extension: str = ".tif"
    separator: str = "_"


class ManifestEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    input_path: str
    modality: Modality
    target_paths: Dict[Organelle, str]
    study_id: str

    @field_validator("target_paths")
    @classmethod
    def _at_least_one_target(cls, target_paths):
        if not target_paths:
            raise ValueError("manifest entry needs at least one target path")
        return target_paths

    @property
    def availability(self) -> LabelAvailability:
        return LabelAvailability.from_organelles(self.target_paths.keys())

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "study_id": self.study_id,
            "modality": self.modality.value,
            "input": self.input_path,
            "targets": {o.value: self.target_paths[o] for o in ORGANELLE_ORDER if o in self.target_paths},
        }

    @classmethod
    def from_record(cls, record: dict) -> "ManifestEntry":
        return cls(
            id=record["id"],
            study_id=record["study_id"],
            modality=record["modality"],
            input_path=record["input"],
            target_paths=record["targets"],
        )


class Manifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    root: str
    entries: List[ManifestEntry] = Field(default_factory=list)

    @field_validator("entries")
    @classmethod
    def _unique_ids(cls, entries):
        seen = set()
        for entry in entries:
            if entry.id in seen:
                raise ValueError(f"duplicate manifest entry id: {entry.id}")
            seen.add(entry.id)
        return entries

    def __len__(self):
        return len(self.entries)

    def by_id(self) -> Dict[str, ManifestEntry]:
        return {e.id: e for e in self.entries}

    def filter_modality(self, modality: Optional[Modality]) -> "Manifest":
        if modality is None:
            return self
        return Manifest(root=self.root, entries=[e for e in self.entries if e.modality == Modality(modality)])

    def to_json(self) -> str:
        payload = {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "root": self.root,
            "organelle_order": [o.value for o in ORGANELLE_ORDER],
            "entries": [e.to_record() for e in self.entries],
        }
        return json.dumps(payload, indent=2, sort_keys=False) + "\n"


# --- Building ---

def classify_file(stem: str, layout: LayoutSpec):
    """Splits `<sample_id>_<SUFFIX>` and classifies the suffix as a modality or an organelle."""
    if layout.separator not in stem:
        return None, None
    sample_id, suffix = stem.rsplit(layout.separator, 1)
    modality = Modality._missing_(suffix)
    if modality is not None:
        return sample_id, modality
    organelle = Organelle._missing_(suffix)
    if organelle is not None:
        return sample_id, organelle
    return None, None


def build_manifest(root: str, layout_spec: LayoutSpec = None) -> Manifest:
    """
    Scans `root` for per-study subdirectories and returns one entry per input image.

    Inputs without any target file are skipped with a warning. Entries are sorted by id,
    and all paths are stored relative to `root` with forward slashes.
    """
    layout = layout_spec or LayoutSpec()
    if not os.path.isdir(root):
        raise FileNotFoundError(f"Dataset root not found: {root}")

    inputs: Dict[str, tuple] = {}
    targets: Dict[tuple, Dict[Organelle, str]] = {}
    for study_id in sorted(os.listdir(root)):
        study_dir = os.path.join(root, study_id)
        if not os.path.isdir(study_dir):
            continue
        for filename in sorted(os.listdir(study_dir)):
            if not filename.lower().endswith(layout.extension.lower()):
                continue
            stem = filename[: -len(layout.extension)]
            sample_id, kind = classify_file(stem, layout)
            if sample_id is None:
                logger.debug(f"Ignoring file with unrecognised suffix: {study_id}/{filename}")
                continue
            rel_path = f"{study_id}/{filename}"
            if isinstance(kind, Modality):
                if sample_id in inputs:
                    raise ManifestError(f"duplicate sample id '{sample_id}' ({inputs[sample_id][2]} and {rel_path})")
                inputs[sample_id] = (study_id, kind, rel_path)
            else:
                targets.setdefault((study_id, sample_id), {})[kind] = rel_path

    entries = []
    for sample_id in sorted(inputs):
        study_id, modality, rel_path = inputs[sample_id]
        sample_targets = targets.get((study_id, sample_id), {})
        if not sample_targets:
            logger.warning(f"Skipping input {rel_path}: no target files found")
            continue
        entries.append(ManifestEntry(
            id=sample_id,
            input_path=rel_path,
            modality=modality,
            target_paths={o: sample_targets[o] for o in ORGANELLE_ORDER if o in sample_targets},
            study_id=study_id,
        ))
    logger.info(f"Built manifest for {root}: {len(entries)} entries from {len(inputs)} inputs")
    return Manifest(root=root, entries=entries)


def find_inputs(path: str, layout_spec: LayoutSpec = None) -> List[Tuple[str, Modality, str]]:
    """
    (sample_id, modality, file path) for every input image at `path`: a single file, or all
    files below a directory. Targets are not required.
    """
    layout = layout_spec or LayoutSpec()
    if os.path.isfile(path):
        candidates = [path]
    elif os.path.isdir(path):
        candidates = sorted(
            os.path.join(d, f) for d, _, files in os.walk(path) for f in files
            if f.lower().endswith(layout.extension.lower())
        )
    else:
        raise FileNotFoundError(f"Input path not found: {path}")
    found = []
    for candidate in candidates:
        stem = os.path.basename(candidate)[: -len(layout.extension)]
        sample_id, kind = classify_file(stem, layout)
        if isinstance(kind, Modality):
            found.append((sample_id, kind, candidate))
    return sorted(found)


# --- Persistence ---

def save_manifest(manifest: Manifest, path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(manifest.to_json())
    logger.info(f"Manifest with {len(manifest)} entries saved to {path}")


def load_manifest(path: str, root: Optional[str] = None) -> Manifest:
    """
    Reloads a saved manifest and checks that every referenced file exists.

    Args:
        path (str): Manifest JSON file.
        root (str): Overrides the stored root (e.g. after moving the dataset).
    """
    with open(path, 'r', encoding='utf-8') as f:
        payload = json.load(f)
    stored_order = payload.get("organelle_order")
    if stored_order and stored_order != [o.value for o in ORGANELLE_ORDER]:
        raise ManifestError(f"manifest {path} uses organelle order {stored_order}")
    try:
        manifest = Manifest(
            root=root or payload["root"],
            entries=[ManifestEntry.from_record(r) for r in payload["entries"]],
        )
    except ValueError as e:
        raise ManifestError(f"invalid manifest {path}: {e}") from e

    missing = []
    for entry in manifest.entries:
        for rel_path in [entry.input_path, *entry.target_paths.values()]:
            if not os.path.exists(os.path.join(manifest.root, rel_path)):
                missing.append(rel_path)
    if missing:
        raise ManifestError(f"manifest {path} references {len(missing)} missing files, e.g. {missing[:3]}")
    return manifest


# --- Sample Loading ---

def load_sample(entry: ManifestEntry, root: str) -> Sample:
    """Reads the entry's input and target planes into a validated Sample."""
    input_plane = read_image(os.path.join(root, entry.input_path))
    warn_if_outside_real_bounds(input_plane, f"input of {entry.id}")
    target_planes = {}
    for organelle, rel_path in entry.target_paths.items():
        plane = read_image(os.path.join(root, rel_path))
        if plane.shape != input_plane.shape:
            raise SampleLoadError(
                f"dimension mismatch for {organelle.value} in sample {entry.id}: "
                f"target {plane.shape} vs input {input_plane.shape}"
            )
        target_planes[organelle] = plane
    sample = Sample(
        sample_id=entry.id,
        input=input_plane,
        modality=entry.modality,
        targets=target_planes,
        availability=entry.availability,
        study_id=entry.study_id,
    )
    violations = validate_sample(sample)
    if violations:
        raise SampleLoadError(f"sample {entry.id} is invalid: {violations}")
    return sample
