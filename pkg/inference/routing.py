# insilico-labeling/inference/routing.py
# Routing of every (modality, organelle) pair to a trained model, and the registry that loads models.

import json
import logging
import os
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple, Union

import torch.nn as nn
from pydantic import BaseModel, ConfigDict

from inference.tiling import PredictFn, TorchTilePredictor
from models.checkpoints import load_generator
from models.networks import ModalityCode, is_conditioned
from shared.errors import RoutingError
from shared.organelle_types import MODALITY_ORDER, Modality, ORGANELLE_ORDER, Organelle
from shared.settings import CHECKPOINT_FINAL_FILENAME

logger = logging.getLogger(__name__)

Pair = Tuple[Modality, Organelle]


class RouteEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    modality: Modality
    organelle: Organelle
    model_id: str


class RoutingTable(BaseModel):
    """Deployment map (modality, organelle) -> model id; must be total over all 12 pairs."""
    model_config = ConfigDict(frozen=True)

    entries: List[RouteEntry]

    @classmethod
    def from_mapping(cls, mapping: Dict[Pair, str]) -> "RoutingTable":
        return cls(entries=[
            RouteEntry(modality=m, organelle=o, model_id=mapping[(m, o)])
            for m in MODALITY_ORDER for o in ORGANELLE_ORDER if (m, o) in mapping
        ])

    def mapping(self) -> Dict[Pair, str]:
        result = {}
        for entry in self.entries:
            pair = (entry.modality, entry.organelle)
            if pair in result and result[pair] != entry.model_id:
                raise RoutingError(f"conflicting routes for {entry.modality.value}/{entry.organelle.value}")
            result[pair] = entry.model_id
        return result

    def missing_pairs(self) -> List[Pair]:
        mapping = self.mapping()
        return [(m, o) for m in MODALITY_ORDER for o in ORGANELLE_ORDER if (m, o) not in mapping]

    def validate_total(self) -> "RoutingTable":
        missing = self.missing_pairs()
        if missing:
            names = [f"{m.value}/{o.value}" for m, o in missing]
            raise RoutingError(f"routing table is not total; unrouted pairs: {names}")
        return self

    def route(self, modality: Union[Modality, str], organelle: Union[Organelle, str]) -> str:
        pair = (Modality(modality), Organelle(organelle))
        try:
            return self.mapping()[pair]
        except KeyError:
            raise RoutingError(f"no model routed for ({pair[0].value}, {pair[1].value})") from None

    def model_ids(self) -> List[str]:
        return sorted({e.model_id for e in self.entries})

    def to_json(self) -> str:
        rows = [
            {"modality": m.value, "organelle": o.value, "model_id": model_id}
            for (m, o), model_id in sorted(self.mapping().items(), key=lambda kv: (kv[0][0].code_index, kv[0][1].index))
        ]
        return json.dumps(rows, indent=2) + "\n"


def default_routing(separate_ids: Dict[Modality, str], unified_id: str) -> RoutingTable:
    """Modality-specific models everywhere except DIC actin, which goes to the unified model."""
    mapping = {}
    for modality in MODALITY_ORDER:
        if modality not in separate_ids:
            raise RoutingError(f"no modality-specific model given for {modality.value}")
        for organelle in ORGANELLE_ORDER:
            mapping[(modality, organelle)] = separate_ids[modality]
    mapping[(Modality.DIC, Organelle.ACTIN)] = unified_id
    return RoutingTable.from_mapping(mapping).validate_total()


def uniform_routing(model_id: str) -> RoutingTable:
    return RoutingTable.from_mapping({(m, o): model_id for m in MODALITY_ORDER for o in ORGANELLE_ORDER})


def save_routing(table: RoutingTable, path: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(table.to_json())
    logger.info(f"Routing table with {len(table.entries)} entries saved to {path}")


def load_routing(path: str) -> RoutingTable:
    with open(path, 'r', encoding='utf-8') as f:
        rows = json.load(f)
    try:
        table = RoutingTable(entries=[RouteEntry(**row) for row in rows])
    except (TypeError, ValueError) as e:
        raise RoutingError(f"invalid routing file {path}: {e}") from e
    return table.validate_total()


# --- Model Registry ---

@dataclass
class RegisteredModel:
    model_id: str
    strategy: str
    model: Optional[nn.Module] = None
    predict_fn: Optional[PredictFn] = None

    def predictor(self, modality: Modality, device: str = "cpu") -> PredictFn:
        if self.predict_fn is not None:
            return self.predict_fn
        code = ModalityCode.for_modality(modality) if is_conditioned(self.model) else None
        return TorchTilePredictor(self.model, code=code, device=device)


class ModelRegistry:
    """
    Resolves model ids to checkpoints under `models_dir/<model_id>/final.pt`; models load lazily
    and are cached. In-memory models or predict functions can be registered directly.
    """

    def __init__(self, models_dir: Optional[str] = None, checkpoint_name: str = CHECKPOINT_FINAL_FILENAME):
        self.models_dir = models_dir
        self.checkpoint_name = checkpoint_name
        self._paths: Dict[str, str] = {}
        self._loaded: Dict[str, RegisteredModel] = {}

    def add_checkpoint(self, model_id: str, path: str):
        self._paths[model_id] = path

    def register(self, model_id: str, model: Union[nn.Module, Callable, None] = None, strategy: str = "stub"):
        if isinstance(model, nn.Module):
            self._loaded[model_id] = RegisteredModel(model_id=model_id, strategy=strategy, model=model.eval())
        else:
            self._loaded[model_id] = RegisteredModel(model_id=model_id, strategy=strategy, predict_fn=model)

    def checkpoint_path(self, model_id: str) -> Optional[str]:
        if model_id in self._paths:
            return self._paths[model_id]
        if self.models_dir:
            candidate = os.path.join(self.models_dir, model_id, self.checkpoint_name)
            if os.path.exists(candidate):
                return candidate
        return None

    def resolve(self, model_id: str, pair: Optional[Pair] = None) -> str:
        """Confirms `model_id` is loadable without loading it; errors name the routed pair."""
        if model_id in self._loaded:
            return model_id
        path = self.checkpoint_path(model_id)
        if path is None or not os.path.exists(path):
            where = f" routed for ({pair[0].value}, {pair[1].value})" if pair else ""
            raise RoutingError(f"model '{model_id}'{where} cannot be resolved")
        return model_id

    def load(self, model_id: str) -> RegisteredModel:
        if model_id not in self._loaded:
            self.resolve(model_id)
            path = self.checkpoint_path(model_id)
            model, header = load_generator(path)
            self._loaded[model_id] = RegisteredModel(model_id=model_id, strategy=header.strategy, model=model)
            logger.info(f"Loaded model {model_id} ({header.backbone}, {header.strategy}) from {path}")
        return self._loaded[model_id]
