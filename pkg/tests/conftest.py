# insilico-labeling/tests/conftest.py
# Shared fixtures: tiny model specs, in-memory synthetic samples, on-disk synthetic trees.

import numpy as np
import pytest
import torch

from ingest.manifest import Manifest, ManifestEntry
from models.networks import modality_codes
from shared.organelle_types import LabelAvailability, Modality, ORGANELLE_ORDER, Organelle, PredictionSet, Sample
from synth.generator import SynthConfig, generate_dataset, render_samples
from training.patch_data import PatchBatch


@pytest.fixture
def tiny_synth_cfg():
    return SynthConfig(n_samples=6, image_size=64, seed=3)


@pytest.fixture
def synthetic_samples(tiny_synth_cfg):
    return render_samples(tiny_synth_cfg)


@pytest.fixture
def synthetic_tree(tmp_path, tiny_synth_cfg):
    """(root, manifest) of a six-sample synthetic dataset written under tmp_path."""
    root = str(tmp_path / "data")
    manifest = generate_dataset(tiny_synth_cfg, root)
    return root, manifest


def fake_manifest(labels, modality=Modality.BF):
    """In-memory manifest; `labels` maps sample id -> organelles. Paths are never read."""
    entries = [
        ManifestEntry(
            id=sid, input_path=f"s/{sid}_{modality.value}.tif", modality=modality, study_id="s",
            target_paths={Organelle(o): f"s/{sid}_{Organelle(o).value}.tif" for o in organelles},
        )
        for sid, organelles in labels.items()
    ]
    return Manifest(root="/nonexistent", entries=entries)


def random_batch(avails, size=64, modalities=None, seed=0, dtype=torch.float32):
    """PatchBatch of random planes in [-1, 1]; unlabeled channels are zero, masks are ones."""
    gen = torch.Generator().manual_seed(seed)
    b = len(avails)
    flags = torch.tensor([a.flags for a in avails], dtype=dtype)[:, :, None, None]
    modalities = modalities or [Modality.BF] * b
    return PatchBatch(
        source=torch.rand(b, 1, size, size, generator=gen, dtype=dtype) * 2 - 1,
        targets=(torch.rand(b, 4, size, size, generator=gen, dtype=dtype) * 2 - 1) * flags,
        masks=torch.ones(b, 4, size, size, dtype=dtype) * flags,
        availability=list(avails),
        sample_ids=[f"img{i:04d}" for i in range(b)],
        focus=[a.organelles()[0] for a in avails],
        modalities=list(modalities),
        codes=modality_codes(modalities, dtype=dtype),
    )


def availability(*organelles):
    return LabelAvailability.from_organelles(organelles)


def labeled_sample(organelles, seed=0, size=32, sample_id="img0000"):
    """In-memory BF sample with random targets for `organelles` only."""
    rng = np.random.default_rng(seed)
    targets = {Organelle(o): rng.integers(1000, 40000, size=(size, size), dtype=np.uint16) for o in organelles}
    return Sample(sample_id=sample_id, input=rng.integers(0, 65536, size=(size, size), dtype=np.uint16),
                  modality=Modality.BF, targets=targets, availability=availability(*organelles))


def perfect_prediction(sample, model_id="m"):
    """PredictionSet equal to the sample's targets; unlabeled planes are zero."""
    shape = sample.input.shape
    planes = {o: sample.targets.get(o, np.zeros(shape, dtype=np.uint16)) for o in ORGANELLE_ORDER}
    return PredictionSet(sample_id=sample.sample_id, planes=planes, model_ids={o: model_id for o in ORGANELLE_ORDER},
                         modality=sample.modality)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ALL_LABELED = LabelAvailability.from_organelles(ORGANELLE_ORDER)
