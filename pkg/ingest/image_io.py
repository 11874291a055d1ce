# insilico-labeling/ingest/image_io.py
# Reads and writes single-channel unsigned 16-bit TIFF planes bit-exactly.

import logging
import os

import numpy as np
import tifffile

from shared.errors import ImageFormatError

logger = logging.getLogger(__name__)


def read_image(path: str) -> np.ndarray:
    """
    Reads a single-channel 16-bit TIFF into a (H, W) uint16 array.

    Raises:
        FileNotFoundError: `path` does not exist.
        ImageFormatError: the file holds more than one channel or non-16-bit data.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Image file not found: {path}")
    data = tifffile.imread(path)
    if data.dtype != np.uint16:
        raise ImageFormatError(f"expected 16-bit unsigned integer data in {path}, found {data.dtype}")
    if data.ndim != 2:
        raise ImageFormatError(f"expected a single-channel 2D plane in {path}, found shape {data.shape}")
    return np.ascontiguousarray(data)


def write_image(plane: np.ndarray, path: str):
    """Writes a (H, W) uint16 plane; parent directories are created. OSError on unwritable paths."""
    if plane.dtype != np.uint16 or plane.ndim != 2:
        raise ImageFormatError(f"expected a 2D uint16 plane for {path}, got {plane.dtype} {plane.shape}")
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    # metadata=None keeps the file a pure function of the pixels
    tifffile.imwrite(path, plane, photometric='minisblack', metadata=None)
    logger.debug(f"Wrote {plane.shape[0]}x{plane.shape[1]} plane to {path}")
