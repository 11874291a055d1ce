# insilico-labeling/shared/organelle_types.py
# Domain vocabulary and validated record types shared by every module.

import logging
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)

# --- Constants ---
UINT16_MAX = 65535
MIN_SYNTHETIC_SIZE = 64
REAL_DATA_MIN_SIZE = 512
REAL_DATA_MAX_SIZE = 2048


class _CaseInsensitiveEnum(str, Enum):
    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str):
            for member in cls:
                if member.value.lower() == value.strip().lower():
                    return member
        return None


class Modality(_CaseInsensitiveEnum):
    BF = "BF"
    PC = "PC"
    DIC = "DIC"

    @property
    def code_index(self) -> int:
        return MODALITY_ORDER.index(self)


class Organelle(_CaseInsensitiveEnum):
    MITOCHONDRIA = "Mitochondria"
    NUCLEUS = "Nucleus"
    TUBULIN = "Tubulin"
    ACTIN = "Actin"

    @property
    def index(self) -> int:
        """Channel index in every 4-channel tensor of the system."""
        return ORGANELLE_ORDER.index(self)

    @property
    def short(self) -> str:
        return self.value[0]


# Canonical channel order. Every organelle<->channel mapping goes through this tuple.
ORGANELLE_ORDER: Tuple[Organelle, ...] = (
    Organelle.MITOCHONDRIA,
    Organelle.NUCLEUS,
    Organelle.TUBULIN,
    Organelle.ACTIN,
)
N_ORGANELLES = len(ORGANELLE_ORDER)

# One-hot modality code order.
MODALITY_ORDER: Tuple[Modality, ...] = (Modality.BF, Modality.PC, Modality.DIC)


# --- Image Planes ---

def check_image_plane(plane: np.ndarray, name: str = "plane") -> List[str]:
    """Returns the problems that keep `plane` from being a valid 16-bit image plane."""
    problems = []
    if not isinstance(plane, np.ndarray):
        return [f"{name} is not an array"]
    if plane.ndim != 2:
        problems.append(f"{name} is not 2D (shape {plane.shape})")
    if plane.dtype != np.uint16:
        problems.append(f"{name} is not uint16 (dtype {plane.dtype})")
    if plane.ndim == 2 and min(plane.shape) < MIN_SYNTHETIC_SIZE:
        problems.append(f"{name} smaller than {MIN_SYNTHETIC_SIZE} pixels (shape {plane.shape})")
    return problems


def warn_if_outside_real_bounds(plane: np.ndarray, name: str = "plane") -> bool:
    """Logs a warning when a plane falls outside the real-data size range. Never raises."""
    h, w = plane.shape[:2]
    inside = all(REAL_DATA_MIN_SIZE <= d <= REAL_DATA_MAX_SIZE for d in (h, w))
    if not inside:
        logger.warning(f"{name} has size {h}x{w}, outside the real-data range [{REAL_DATA_MIN_SIZE}, {REAL_DATA_MAX_SIZE}]")
    return inside


# --- Records ---

class LabelAvailability(BaseModel):
    """Per-organelle label flags in canonical channel order."""
    model_config = ConfigDict(frozen=True)

    flags: Tuple[bool, bool, bool, bool]

    @classmethod
    def from_organelles(cls, organelles) -> "LabelAvailability":
        present = {Organelle(o) for o in organelles}
        return cls(flags=tuple(o in present for o in ORGANELLE_ORDER))

    @classmethod
    def all_labeled(cls) -> "LabelAvailability":
        return cls(flags=(True,) * N_ORGANELLES)

    def __getitem__(self, organelle) -> bool:
        return self.flags[Organelle(organelle).index]

    def organelles(self) -> List[Organelle]:
        return [o for o, flag in zip(ORGANELLE_ORDER, self.flags) if flag]

    def indices(self) -> List[int]:
        return [i for i, flag in enumerate(self.flags) if flag]

    def any(self) -> bool:
        return any(self.flags)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.flags, dtype=bool)


class Sample(BaseModel):
    """One input plane with its partially labeled organelle targets."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    sample_id: str
    input: np.ndarray
    modality: Modality
    targets: Dict[Organelle, np.ndarray] = Field(default_factory=dict)
    availability: LabelAvailability
    study_id: str = ""


def validate_sample(s: Sample) -> List[str]:
    """Lists every violated Sample invariant. Violations are data, never exceptions."""
    violations = []
    violations.extend(f"invalid input: {p}" for p in check_image_plane(s.input, "input"))
    if not s.availability.any():
        violations.append("no labeled organelle")
    for organelle in ORGANELLE_ORDER:
        if s.availability[organelle] != (organelle in s.targets):
            violations.append(f"availability/target mismatch: {organelle.value}")
    for organelle in ORGANELLE_ORDER:
        plane = s.targets.get(organelle)
        if plane is None:
            continue
        if getattr(plane, "shape", None) != s.input.shape:
            violations.append(f"dimension mismatch: {organelle.value}")
        elif plane.dtype != np.uint16:
            violations.append(f"invalid target: {organelle.value} is not uint16")
    return violations


class PredictionSet(BaseModel):
    """Four organelle planes predicted for one input, with provenance."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    sample_id: str
    planes: Dict[Organelle, np.ndarray]
    model_ids: Dict[Organelle, str]
    strategies: Dict[Organelle, str] = Field(default_factory=dict)
    tta: bool = False
    modality: Optional[Modality] = None

    @field_validator("planes")
    @classmethod
    def _all_four_planes(cls, planes):
        missing = [o.value for o in ORGANELLE_ORDER if o not in planes]
        if missing:
            raise ValueError(f"prediction set is missing organelles: {missing}")
        shapes = {p.shape for p in planes.values()}
        if len(shapes) != 1:
            raise ValueError(f"prediction planes differ in shape: {sorted(shapes)}")
        return planes

    @model_validator(mode="after")
    def _provenance_for_every_plane(self):
        missing = [o.value for o in ORGANELLE_ORDER if o not in self.model_ids]
        if missing:
            raise ValueError(f"provenance is missing organelles: {missing}")
        return self

    def provenance_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "modality": self.modality.value if self.modality else None,
            "tta": self.tta,
            "organelle_order": [o.value for o in ORGANELLE_ORDER],
            "models": {o.value: self.model_ids[o] for o in ORGANELLE_ORDER},
            "strategies": {o.value: self.strategies.get(o) for o in ORGANELLE_ORDER},
        }
