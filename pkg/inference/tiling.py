# insilico-labeling/inference/tiling.py
# Sliding-window tiling, unweighted-mean merging and deterministic rotation TTA.
#
# Predict functions take a float64 (N, 1, P, P) array of normalized tiles and return (N, C, P, P).

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from models.networks import ModalityCode, is_conditioned
from preprocess.transforms import reflect_pad_to
from shared.errors import ConfigurationError, InferenceError

logger = logging.getLogger(__name__)

DEFAULT_OVERLAP = 0.8
DEFAULT_TILE_BATCH = 4

PredictFn = Callable[[np.ndarray], np.ndarray]
Offset = Tuple[int, int]


@dataclass(frozen=True)
class TileGrid:
    """Window offsets over an image padded (bottom/right) to at least one patch per axis."""
    patch_size: int
    stride: int
    offsets: Tuple[Offset, ...]
    height: int
    width: int
    padded_height: int
    padded_width: int

    def __len__(self):
        return len(self.offsets)

    def coverage(self) -> np.ndarray:
        counts = np.zeros((self.padded_height, self.padded_width), dtype=np.int64)
        for top, left in self.offsets:
            counts[top:top + self.patch_size, left:left + self.patch_size] += 1
        return counts


def _axis_offsets(dim: int, patch: int, stride: int) -> List[int]:
    last = dim - patch
    return sorted(set(range(0, last, stride)) | {last})


def plan_tiles(height: int, width: int, patch: int = 512, overlap: float = DEFAULT_OVERLAP) -> TileGrid:
    """
    Window offsets with stride floor(patch * (1 - overlap)); the last window on each axis is
    flush with the (padded) image edge.
    """
    if height < 1 or width < 1:
        raise ConfigurationError(f"cannot tile an image of size {height}x{width}")
    if not 0.0 <= overlap < 1.0:
        raise ConfigurationError(f"overlap must lie in [0, 1), got {overlap}")
    # the epsilon absorbs binary representation error, e.g. 512 * 0.2 -> 102.39999...
    stride = max(1, math.floor(patch * (1.0 - overlap) + 1e-9))
    ph, pw = max(height, patch), max(width, patch)
    rows = _axis_offsets(ph, patch, stride)
    cols = _axis_offsets(pw, patch, stride)
    return TileGrid(
        patch_size=patch, stride=stride, offsets=tuple((r, c) for r in rows for c in cols),
        height=height, width=width, padded_height=ph, padded_width=pw,
    )


def extract_tiles(image: np.ndarray, grid: TileGrid) -> np.ndarray:
    """(N, 1, P, P) tiles of a reflect-padded (H, W) plane, in grid order."""
    padded = reflect_pad_to(np.asarray(image, dtype=np.float64), grid.padded_height, grid.padded_width)
    p = grid.patch_size
    return np.stack([padded[t:t + p, l:l + p] for t, l in grid.offsets])[:, None]


def merge_tiles(tile_outputs: Dict[Offset, np.ndarray], grid: TileGrid) -> np.ndarray:
    """
    Unweighted mean of all tile predictions covering each pixel, cropped back to (C, H, W).

    Raises:
        InferenceError: a grid window has no tile output.
    """
    missing = [o for o in grid.offsets if o not in tile_outputs]
    if missing:
        raise InferenceError(f"missing tile outputs for {len(missing)} window(s), e.g. {missing[:3]}")
    p = grid.patch_size
    n_channels = next(iter(tile_outputs.values())).shape[0]
    acc = np.zeros((n_channels, grid.padded_height, grid.padded_width), dtype=np.float64)
    counts = np.zeros((grid.padded_height, grid.padded_width), dtype=np.float64)
    for top, left in grid.offsets:
        acc[:, top:top + p, left:left + p] += tile_outputs[(top, left)]
        counts[top:top + p, left:left + p] += 1.0
    merged = acc / counts
    return merged[:, :grid.height, :grid.width]


def tiled_predict(predict_fn: PredictFn, image: np.ndarray, grid: TileGrid,
                  batch_size: int = DEFAULT_TILE_BATCH) -> np.ndarray:
    tiles = extract_tiles(image, grid)
    outputs: Dict[Offset, np.ndarray] = {}
    for start in range(0, len(tiles), batch_size):
        chunk = predict_fn(tiles[start:start + batch_size])
        for k, offset in enumerate(grid.offsets[start:start + batch_size]):
            outputs[offset] = np.asarray(chunk[k], dtype=np.float64)
    return merge_tiles(outputs, grid)


# --- Test-time Augmentation ---

def tta_wrap(predict_fn: PredictFn) -> PredictFn:
    """Averages predictions over the four quarter-turn rotations, each rotated back."""
    def predict_rotations(tiles: np.ndarray) -> np.ndarray:
        outs = []
        for k in range(4):
            rotated = np.ascontiguousarray(np.rot90(tiles, k, axes=(2, 3)))
            outs.append(np.rot90(np.asarray(predict_fn(rotated), dtype=np.float64), -k, axes=(2, 3)))
        # pairwise order keeps the ensemble exact when all four members agree
        return ((outs[0] + outs[2]) + (outs[1] + outs[3])) / 4.0
    return predict_rotations


def tta_predict(predict_fn: PredictFn, image: np.ndarray, enabled: bool, grid: Optional[TileGrid] = None,
                patch: int = 512, overlap: float = DEFAULT_OVERLAP,
                batch_size: int = DEFAULT_TILE_BATCH) -> np.ndarray:
    """Tiled prediction of a normalized (H, W) plane, optionally with the 4-rotation ensemble per tile."""
    grid = grid or plan_tiles(image.shape[0], image.shape[1], patch, overlap)
    fn = tta_wrap(predict_fn) if enabled else predict_fn
    return tiled_predict(fn, image, grid, batch_size)


class TorchTilePredictor:
    """Adapts a four-head generator to the numpy predict-function contract."""

    def __init__(self, model: nn.Module, code: Optional[ModalityCode] = None, device: str = "cpu",
                 dtype: torch.dtype = torch.float32):
        self.model = model.to(device).eval()
        self.code = code
        self.device = device
        self.dtype = dtype
        if is_conditioned(model) and code is None and model.default_code is None:
            raise ConfigurationError("a modality-conditioned model needs a modality code at inference")

    def __call__(self, tiles: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            x = torch.as_tensor(np.ascontiguousarray(tiles), dtype=self.dtype, device=self.device)
            if is_conditioned(self.model) and self.code is not None:
                out = self.model(x, self.code.as_tensor(x.shape[0], dtype=self.dtype).to(self.device))
            else:
                out = self.model(x)
        return out.cpu().numpy().astype(np.float64)
