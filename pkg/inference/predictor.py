# insilico-labeling/inference/predictor.py
# Full-image prediction through the routing table, and prediction file I/O.

import json
import logging
import os
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from inference.routing import ModelRegistry, RoutingTable
from inference.tiling import DEFAULT_OVERLAP, DEFAULT_TILE_BATCH, plan_tiles, tta_predict
from ingest.image_io import read_image, write_image
from preprocess.transforms import rescale_to_model, rescale_to_uint16
from shared.errors import ImageFormatError
from shared.organelle_types import Modality, ORGANELLE_ORDER, Organelle, PredictionSet, check_image_plane

logger = logging.getLogger(__name__)

PRED_SUFFIX = "_pred"
PROVENANCE_SUFFIX = "_provenance.json"


class InferenceConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    patch_size: int = Field(512, ge=4)
    overlap: float = Field(DEFAULT_OVERLAP, ge=0.0, lt=1.0)
    tta: bool = False
    tile_batch: int = Field(DEFAULT_TILE_BATCH, ge=1)
    device: str = "cpu"


def predict_image(input_plane: np.ndarray, modality: Modality, registry: ModelRegistry, routing: RoutingTable,
                  tta: Optional[bool] = None, cfg: InferenceConfig = None, sample_id: str = "") -> PredictionSet:
    """
    Predicts all four organelle planes for one uint16 input.

    Every (modality, organelle) route is resolved before any compute; each distinct routed
    model runs once, and each organelle keeps its channel from the model routed to it.
    """
    cfg = cfg or InferenceConfig()
    tta = cfg.tta if tta is None else tta
    modality = Modality(modality)
    problems = [p for p in check_image_plane(input_plane, "input") if "smaller than" not in p]
    if problems:
        raise ImageFormatError(f"cannot predict from input {sample_id}: {problems}")

    routing.validate_total()
    routed: Dict[Organelle, str] = {}
    for organelle in ORGANELLE_ORDER:
        model_id = routing.route(modality, organelle)
        routed[organelle] = registry.resolve(model_id, pair=(modality, organelle))

    normalized = rescale_to_model(input_plane)
    grid = plan_tiles(normalized.shape[0], normalized.shape[1], cfg.patch_size, cfg.overlap)
    planes: Dict[Organelle, np.ndarray] = {}
    strategies: Dict[Organelle, str] = {}
    for model_id in sorted(set(routed.values())):
        registered = registry.load(model_id)
        predict_fn = registered.predictor(modality, device=cfg.device)
        output = tta_predict(predict_fn, normalized, tta, grid=grid, batch_size=cfg.tile_batch)
        for organelle, routed_id in routed.items():
            if routed_id == model_id:
                planes[organelle] = rescale_to_uint16(output[organelle.index])
                strategies[organelle] = registered.strategy
        logger.debug(f"{sample_id or 'input'}: model {model_id} ran over {len(grid)} tiles (tta={tta})")

    return PredictionSet(
        sample_id=sample_id, planes=planes, model_ids=routed, strategies=strategies, tta=tta, modality=modality,
    )


# --- Prediction Files ---

def prediction_path(out_dir: str, sample_id: str, organelle: Organelle) -> str:
    return os.path.join(out_dir, f"{sample_id}_{organelle.value}{PRED_SUFFIX}.tif")


def provenance_path(out_dir: str, sample_id: str) -> str:
    return os.path.join(out_dir, f"{sample_id}{PROVENANCE_SUFFIX}")


def write_prediction_set(ps: PredictionSet, out_dir: str) -> List[str]:
    """Writes `<sample_id>_<Organelle>_pred.tif` per organelle plus the provenance sidecar."""
    paths = []
    for organelle in ORGANELLE_ORDER:
        path = prediction_path(out_dir, ps.sample_id, organelle)
        write_image(ps.planes[organelle], path)
        paths.append(path)
    sidecar = provenance_path(out_dir, ps.sample_id)
    with open(sidecar, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(ps.provenance_record(), f, indent=2)
    paths.append(sidecar)
    return paths


def read_prediction_set(pred_dir: str, sample_id: str) -> PredictionSet:
    """Reloads a written prediction set; FileNotFoundError when any plane or the sidecar is missing."""
    planes = {o: read_image(prediction_path(pred_dir, sample_id, o)) for o in ORGANELLE_ORDER}
    with open(provenance_path(pred_dir, sample_id), 'r', encoding='utf-8') as f:
        provenance = json.load(f)
    return PredictionSet(
        sample_id=sample_id,
        planes=planes,
        model_ids={Organelle(k): v for k, v in provenance["models"].items()},
        strategies={Organelle(k): v for k, v in provenance.get("strategies", {}).items() if v is not None},
        tta=bool(provenance.get("tta", False)),
        modality=provenance.get("modality"),
    )


def list_prediction_ids(pred_dir: str) -> List[str]:
    """Sample ids that have a provenance sidecar in `pred_dir`."""
    if not os.path.isdir(pred_dir):
        raise FileNotFoundError(f"Prediction directory not found: {pred_dir}")
    return sorted(name[: -len(PROVENANCE_SUFFIX)] for name in os.listdir(pred_dir) if name.endswith(PROVENANCE_SUFFIX))
