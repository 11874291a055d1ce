# insilico-labeling/shared/training_logger.py
# Dedicated JSON-lines logger for per-step training records.

import datetime
import json
import logging
import os
from typing import List

import pandas as pd

log_setup_logger = logging.getLogger(__name__ + '_setup')


class JsonFormatter(logging.Formatter):
    def format(self, record):
        log_record = {
            'timestamp': datetime.datetime.fromtimestamp(record.created, datetime.timezone.utc).isoformat().replace('+00:00', 'Z'),
            'level': record.levelname,
            'logger_name': record.name,
            'message': record.getMessage(),
            # Step details passed through `extra`
            **(record.details if hasattr(record, 'details') else {})
        }
        return json.dumps(log_record)


def open_step_log(path: str, run_id: str) -> logging.Logger:
    """
    Returns a non-propagating logger writing one JSON object per line to `path`.

    Args:
        path (str): Log file location; parent directories are created.
        run_id (str): Distinguishes loggers of concurrent or successive runs.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    step_logger = logging.getLogger(f"isl.train.{run_id}")
    step_logger.setLevel(logging.INFO)
    step_logger.propagate = False
    close_step_log(step_logger)  # drop handlers left by an earlier run with the same id
    file_handler = logging.FileHandler(path, mode='a', encoding='utf-8')
    file_handler.setFormatter(JsonFormatter())
    step_logger.addHandler(file_handler)
    log_setup_logger.info(f"Training step log for run '{run_id}' writing to {path}")
    return step_logger


def close_step_log(step_logger: logging.Logger):
    for handler in list(step_logger.handlers):
        handler.close()
        step_logger.removeHandler(handler)


def log_train_step(step_logger: logging.Logger, details: dict):
    step_logger.info("train_step", extra={'details': details})


def read_step_log(path: str) -> List[dict]:
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]


def training_log_frame(path: str) -> pd.DataFrame:
    """Loads a step log as a DataFrame, one row per step."""
    return pd.read_json(path, lines=True)
