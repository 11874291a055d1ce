# insilico-labeling/cli/run_config.py
# YAML run configuration: one validated view over synthesis, training, inference and evaluation options.

import logging
import os
from typing import Any, Dict, Mapping, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from inference.predictor import InferenceConfig
from metrics import EvaluationConfig
from shared.errors import ConfigurationError
from synth.generator import SynthConfig
from training.trainer import TrainConfig

logger = logging.getLogger(__name__)


class RunConfig(BaseModel):
    """Merged, fully validated configuration; unknown keys anywhere are rejected."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    synth: SynthConfig = Field(default_factory=SynthConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    inference: InferenceConfig = Field(default_factory=InferenceConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)


def apply_overrides(data: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """
    Sets dotted keys (`train.strategy`, `train.loss.lambda1`) on a nested dict copy.
    None values are skipped so unset command-line flags leave the file value alone.
    """
    merged = _deep_copy(data)
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = merged
        *parents, leaf = dotted.split(".")
        for key in parents:
            child = node.setdefault(key, {})
            if not isinstance(child, dict):
                raise ConfigurationError(f"cannot override '{dotted}': '{key}' is not a section")
            node = child
        node[leaf] = value
    return merged


def _deep_copy(data: Mapping[str, Any]) -> Dict[str, Any]:
    return {k: _deep_copy(v) if isinstance(v, Mapping) else v for k, v in data.items()}


def read_config_file(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigurationError(f"config file {path} is not valid YAML: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a mapping at top level")
    return data


def load_run_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Reads `path` (optional), applies overrides, and validates everything before returning."""
    data = read_config_file(path) if path else {}
    data = apply_overrides(data, overrides or {})
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration{f' in {path}' if path else ''}:\n{e}") from e
    logger.debug(f"Run configuration loaded from {path or 'defaults'}")
    return cfg


def dump_run_config(cfg: RunConfig, path: str):
    """Writes the resolved configuration as YAML, for reproducing a run."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(cfg.model_dump(mode="json"), f, sort_keys=False)
