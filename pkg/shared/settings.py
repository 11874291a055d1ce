# insilico-labeling/shared/settings.py
# Environment-driven paths and logging setup shared by all entry points.

import logging
import os

# --- Define Workspace Paths ---
# Base directory for data, checkpoints, predictions and reports; created lazily by the commands.
APP_BASE_DIR = os.getenv("APP_BASE_DIRECTORY", os.path.join(os.getcwd(), "isl_workspace"))
DATA_DIR = os.path.join(APP_BASE_DIR, "data")
MODELS_DIR = os.path.join(APP_BASE_DIR, "models")
REPORTS_DIR = os.path.join(APP_BASE_DIR, "reports")
PREDICTIONS_DIR = os.path.join(APP_BASE_DIR, "predictions")

# --- Configuration ---
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
TRAIN_LOG_FILENAME = os.getenv("TRAIN_LOG_FILENAME", "train_log.jsonl")
MANIFEST_FILENAME = os.getenv("MANIFEST_FILENAME", "manifest.json")
CHECKPOINT_FINAL_FILENAME = "final.pt"
CHECKPOINT_EPOCH_PATTERN = "epoch_{epoch:04d}.pt"


def configure_logging(level: str = None):
    """Configures root logging once; later calls only adjust the level."""
    level_name = (level or os.getenv("LOG_LEVEL", "INFO")).upper()
    if not logging.getLogger().hasHandlers():
        logging.basicConfig(level=level_name, format=LOG_FORMAT)
    else:
        logging.getLogger().setLevel(level_name)
