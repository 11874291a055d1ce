# insilico-labeling/synth/fixtures.py
# Small deterministic images with known properties, used by unit tests and smoke checks.

from typing import Union

import numpy as np

from shared.errors import ConfigurationError
from shared.organelle_types import MIN_SYNTHETIC_SIZE, Modality, ORGANELLE_ORDER, Sample
from synth.generator import SynthConfig, render_sample

CONSTANT_VALUE = 13107  # 0.2 * 65535
OUTLIER_BACKGROUND = 1000
OUTLIER_VALUE = 65535
CHECKER_BLOCK = 8
ROTATION_PROBE_LEVELS = (10000, 20000, 30000, 40000)  # top-left, top-right, bottom-left, bottom-right

FIXTURE_KINDS = (
    "constant", "gradient", "checkerboard", "single-outlier", "rotation-probe", "full-range", "sample",
)


def outlier_position(size: int = MIN_SYNTHETIC_SIZE):
    return size // 3, size // 2


def make_unit_fixture(kind: str, size: int = MIN_SYNTHETIC_SIZE, seed: int = 0) -> Union[np.ndarray, Sample]:
    """
    Builds a named test image.

    `full-range` is always 256x256 and holds every uint16 value once; `sample` returns a fully
    labeled synthetic BF Sample. Every other kind is a (size, size) uint16 plane.
    """
    if kind == "constant":
        return np.full((size, size), CONSTANT_VALUE, dtype=np.uint16)
    if kind == "gradient":
        return (np.arange(size * size, dtype=np.int64) % 65536).astype(np.uint16).reshape(size, size)
    if kind == "checkerboard":
        rows, cols = np.indices((size, size))
        return (((rows // CHECKER_BLOCK + cols // CHECKER_BLOCK) % 2) * 65535).astype(np.uint16)
    if kind == "single-outlier":
        plane = np.full((size, size), OUTLIER_BACKGROUND, dtype=np.uint16)
        plane[outlier_position(size)] = OUTLIER_VALUE
        return plane
    if kind == "rotation-probe":
        half = size // 2
        plane = np.empty((size, size), dtype=np.uint16)
        plane[:half, :half], plane[:half, half:], plane[half:, :half], plane[half:, half:] = ROTATION_PROBE_LEVELS
        return plane
    if kind == "full-range":
        return np.arange(65536, dtype=np.uint16).reshape(256, 256)
    if kind == "sample":
        cfg = SynthConfig(n_samples=1, image_size=size, seed=seed)
        return render_sample(0, Modality.BF, ORGANELLE_ORDER, cfg, study_id="BF_fixture")
    raise ConfigurationError(f"unknown fixture kind '{kind}'; expected one of {list(FIXTURE_KINDS)}")
