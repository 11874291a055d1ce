# insilico-labeling/models/checkpoints.py
# Checkpoint container: torch-serialized parameter blobs plus a structured header,
# mirrored into a JSON sidecar for inspection without torch.

import json
import logging
import os
from typing import Any, Dict, List, Literal, Optional

import torch
import torch.nn as nn
from pydantic import BaseModel, ConfigDict, Field

from models.networks import (
    GeneratorSpec, UnetPPSpec, build_generator, build_unetpp, make_dynamic,
)
from shared.errors import CheckpointError
from shared.organelle_types import ORGANELLE_ORDER

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
SIDECAR_SUFFIX = ".json"

Backbone = Literal["pix2pix_resnet9", "unetpp"]
Strategy = Literal["separate", "unified", "dynamic"]


def canonical_order() -> List[str]:
    return [o.value for o in ORGANELLE_ORDER]


class CheckpointHeader(BaseModel):
    model_config = ConfigDict(frozen=True)

    format_version: int = CHECKPOINT_FORMAT_VERSION
    model_id: str
    strategy: Strategy
    backbone: Backbone
    modality_scope: str
    organelle_order: List[str] = Field(default_factory=canonical_order)
    generator_spec: Dict[str, Any]
    epoch: int = 0
    step: int = 0
    train_config: Dict[str, Any] = Field(default_factory=dict)


class Checkpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    header: CheckpointHeader
    state: Dict[str, Any]


def sidecar_path(path: str) -> str:
    return os.path.splitext(path)[0] + SIDECAR_SUFFIX


def save_checkpoint(path: str, header: CheckpointHeader, generator: nn.Module,
                    discriminators: Optional[nn.Module] = None, optimizers: Optional[Dict[str, Any]] = None,
                    extra: Optional[Dict[str, Any]] = None):
    """Writes `<path>` (torch) and its JSON header sidecar. Parent directories are created."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    state = {
        "generator": generator.state_dict(),
        "discriminators": discriminators.state_dict() if discriminators is not None else None,
        "optimizers": {name: opt.state_dict() for name, opt in (optimizers or {}).items()},
        "extra": extra or {},
    }
    torch.save({"header": header.model_dump(), "state": state}, path)
    with open(sidecar_path(path), 'w', encoding='utf-8') as f:
        json.dump(header.model_dump(), f, indent=2, sort_keys=True)
    logger.info(f"Checkpoint {header.model_id} (epoch {header.epoch}, step {header.step}) saved to {path}")


def load_checkpoint(path: str) -> Checkpoint:
    """Reads a checkpoint and verifies it was written with the canonical organelle channel order."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
        header = CheckpointHeader(**payload["header"])
    except (KeyError, TypeError, ValueError, RuntimeError) as e:
        raise CheckpointError(f"unreadable checkpoint {path}: {e}") from e
    if header.organelle_order != canonical_order():
        raise CheckpointError(
            f"checkpoint {path} uses organelle order {header.organelle_order}, expected {canonical_order()}"
        )
    if header.format_version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"checkpoint {path} has format version {header.format_version}")
    return Checkpoint(header=header, state=payload["state"])


def build_model_from_header(header: CheckpointHeader) -> nn.Module:
    """Rebuilds an untrained generator with the architecture recorded in `header`."""
    if header.backbone == "unetpp":
        model = build_unetpp(UnetPPSpec(**header.generator_spec))
    else:
        model = build_generator(GeneratorSpec(**header.generator_spec))
    if header.strategy == "dynamic":
        model = make_dynamic(model)
    return model


def load_generator(path: str) -> tuple:
    """Returns (generator in eval mode, header) from a checkpoint file."""
    checkpoint = load_checkpoint(path)
    model = build_model_from_header(checkpoint.header)
    try:
        model.load_state_dict(checkpoint.state["generator"])
    except RuntimeError as e:
        raise CheckpointError(f"checkpoint {path} does not match its header architecture: {e}") from e
    model.eval()
    return model, checkpoint.header
