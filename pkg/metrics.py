# insilico-labeling/metrics.py
# Image-comparison metrics with per-organelle applicability, and dataset-level reports.
#
# All comparisons run on planes scaled to [0, 1] by dividing by 65535.

import json
import logging
import math
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial.distance import cosine
from scipy.stats import pearsonr
from skimage.metrics import structural_similarity

from inference.predictor import list_prediction_ids, prediction_path, read_prediction_set
from ingest.manifest import Manifest, ManifestEntry, load_sample
from shared.errors import MetricError, UndefinedMetricError
from shared.organelle_types import ORGANELLE_ORDER, Organelle, PredictionSet, Sample, UINT16_MAX

# Use a distinct logger name for this module
logger = logging.getLogger('metrics_module')

# --- Configuration ---
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
SSIM_K1 = 0.01
SSIM_K2 = 0.03

METRIC_COLUMNS = ("MAE", "SSIM", "PCC", "E_dist", "C_dist")
APPLICABLE_METRICS: Dict[Organelle, Tuple[str, ...]] = {
    Organelle.MITOCHONDRIA: METRIC_COLUMNS,
    Organelle.NUCLEUS: METRIC_COLUMNS,
    Organelle.TUBULIN: ("SSIM", "PCC"),
    Organelle.ACTIN: ("SSIM", "PCC"),
}

TABLE_FILENAME = "metrics_table.csv"
PER_IMAGE_FILENAME = "metrics_per_image.csv"
REPORT_JSON_FILENAME = "metrics_report.json"
MISSING_CELL = "-"


def to_unit_range(plane: np.ndarray) -> np.ndarray:
    return np.asarray(plane, dtype=np.float64) / UINT16_MAX


def _pair(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if pred.shape != gt.shape:
        raise MetricError(f"dimension mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    return to_unit_range(pred), to_unit_range(gt)


# --- Metrics ---

def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    p, g = _pair(pred, gt)
    return float(np.mean(np.abs(p - g)))


def ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), data range 1."""
    p, g = _pair(pred, gt)
    if min(p.shape) < SSIM_WINDOW:
        raise MetricError(f"image {p.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    return float(structural_similarity(
        p, g, data_range=1.0, gaussian_weights=True, sigma=SSIM_SIGMA,
        use_sample_covariance=False, K1=SSIM_K1, K2=SSIM_K2,
    ))


def pcc(pred: np.ndarray, gt: np.ndarray) -> float:
    p, g = _pair(pred, gt)
    if np.ptp(p) == 0 or np.ptp(g) == 0:
        raise UndefinedMetricError("Pearson correlation is undefined for a constant image")
    return float(pearsonr(p.ravel(), g.ravel())[0])


def distances(pred: np.ndarray, gt: np.ndarray) -> Tuple[float, float]:
    """(Euclidean distance, cosine distance) between the flattened planes."""
    p, g = _pair(pred, gt)
    e_dist = float(np.linalg.norm((p - g).ravel()))
    if not np.any(p) or not np.any(g):
        raise UndefinedMetricError("cosine distance is undefined for an all-zero image")
    return e_dist, float(cosine(p.ravel(), g.ravel()))


# --- Reports ---

class OrganelleMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    MAE: Optional[float] = None
    SSIM: Optional[float] = None
    PCC: Optional[float] = None
    E_dist: Optional[float] = None
    C_dist: Optional[float] = None

    def present(self) -> Dict[str, float]:
        return {k: v for k, v in self.model_dump().items() if v is not None}


class MetricReport(BaseModel):
    """Metrics of one image; only labeled organelles appear, with their applicable metrics."""
    model_config = ConfigDict(frozen=True)

    sample_id: str
    organelles: Dict[Organelle, OrganelleMetrics] = Field(default_factory=dict)


def _guarded(name: str, organelle: Organelle, sample_id: str, fn, *args) -> float:
    try:
        return fn(*args)
    except UndefinedMetricError as e:
        logger.warning(f"{name} undefined for {organelle.value} of {sample_id}: {e}; recorded as NaN")
        return math.nan


def organelle_metrics(pred: np.ndarray, gt: np.ndarray, organelle: Organelle, sample_id: str = "") -> OrganelleMetrics:
    applicable = APPLICABLE_METRICS[organelle]
    values = {
        "SSIM": ssim(pred, gt),
        "PCC": _guarded("PCC", organelle, sample_id, pcc, pred, gt),
    }
    if "MAE" in applicable:
        values["MAE"] = mae(pred, gt)
        try:
            values["E_dist"], values["C_dist"] = distances(pred, gt)
        except UndefinedMetricError as e:
            logger.warning(f"C_dist undefined for {organelle.value} of {sample_id}: {e}; recorded as NaN")
            values["E_dist"] = float(np.linalg.norm(to_unit_range(pred) - to_unit_range(gt)))
            values["C_dist"] = math.nan
    return OrganelleMetrics(**values)


def evaluate(preds: PredictionSet, gt_sample: Sample) -> MetricReport:
    """Scores the labeled organelles of `gt_sample`; MAE and distances only for mitochondria and nucleus."""
    labeled = gt_sample.availability.organelles()
    if not labeled:
        raise MetricError(f"sample {gt_sample.sample_id} has no labeled organelle to evaluate")
    report = {}
    for organelle in labeled:
        report[organelle] = organelle_metrics(
            preds.planes[organelle], gt_sample.targets[organelle], organelle, gt_sample.sample_id,
        )
    return MetricReport(sample_id=gt_sample.sample_id, organelles=report)


def per_image_frame(reports: Sequence[MetricReport]) -> pd.DataFrame:
    rows = []
    for report in reports:
        for organelle in ORGANELLE_ORDER:
            if organelle in report.organelles:
                row = {"sample_id": report.sample_id, "organelle": organelle.value}
                row.update({c: getattr(report.organelles[organelle], c) for c in METRIC_COLUMNS})
                rows.append(row)
    frame = pd.DataFrame(rows, columns=["sample_id", "organelle", *METRIC_COLUMNS])
    frame[list(METRIC_COLUMNS)] = frame[list(METRIC_COLUMNS)].astype(float)
    return frame.sort_values(["sample_id", "organelle"], kind="stable").reset_index(drop=True)


def aggregate_reports(reports: Sequence[MetricReport]) -> pd.DataFrame:
    """
    Dataset-level table: rows M, N, T, A; columns MAE, SSIM, PCC, E_dist, C_dist.

    Each cell is the arithmetic mean of the per-image values (NaNs skipped); inapplicable
    cells and organelles with no labeled image stay NaN.
    """
    frame = per_image_frame(reports)
    table = pd.DataFrame(index=[o.value for o in ORGANELLE_ORDER], columns=list(METRIC_COLUMNS), dtype=float)
    for organelle in ORGANELLE_ORDER:
        subset = frame[frame["organelle"] == organelle.value]
        for column in APPLICABLE_METRICS[organelle]:
            if len(subset):
                table.loc[organelle.value, column] = subset[column].astype(float).mean()
    table.index.name = "organelle"
    return table


def report_table(table: pd.DataFrame) -> pd.DataFrame:
    """String-formatted copy of an aggregate table with `-` for empty cells."""
    return table.apply(lambda col: col.map(lambda v: MISSING_CELL if pd.isna(v) else f"{v:.6f}"))


def write_reports(reports: Sequence[MetricReport], out_dir: str) -> Dict[str, str]:
    """Writes the aggregate table, the per-image CSV and a JSON dump; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "table": os.path.join(out_dir, TABLE_FILENAME),
        "per_image": os.path.join(out_dir, PER_IMAGE_FILENAME),
        "json": os.path.join(out_dir, REPORT_JSON_FILENAME),
    }
    table = aggregate_reports(reports)
    report_table(table).to_csv(paths["table"], lineterminator="\n")
    per_image_frame(reports).to_csv(paths["per_image"], index=False, float_format="%.6f", lineterminator="\n")
    dump_report_json(reports, table, paths["json"])
    logger.info(f"Metric reports for {len(reports)} image(s) written to {out_dir}")
    return paths


def dump_report_json(reports: Sequence[MetricReport], table: pd.DataFrame, path: str):
    payload = {
        "n_images": len(reports),
        "table": {
            organelle: {c: (None if pd.isna(v) else round(float(v), 10)) for c, v in row.items()}
            for organelle, row in table.iterrows()
        },
        "images": [
            {
                "sample_id": r.sample_id,
                "organelles": {
                    o.value: {k: (None if math.isnan(v) else v) for k, v in m.present().items()}
                    for o, m in r.organelles.items()
                },
            }
            for r in reports
        ],
    }
    try:
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(payload, f, indent=2)
    except OSError as e:
        logger.error(f"ERROR: Failed to dump metric report to JSON file {path}: {e}", exc_info=True)
        raise


# --- Dataset Evaluation ---

class EvaluationConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    n_jobs: int = Field(1, ge=-1)


class EvaluationResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    reports: List[MetricReport]
    unmatched_predictions: List[str] = Field(default_factory=list)
    incomplete_predictions: List[str] = Field(default_factory=list)
    missing_predictions: List[str] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.unmatched_predictions and not self.incomplete_predictions


def _evaluate_one(pred_dir: str, entry: ManifestEntry, root: str) -> MetricReport:
    return evaluate(read_prediction_set(pred_dir, entry.id), load_sample(entry, root))


def evaluate_dataset(pred_dir: str, manifest: Manifest, root: Optional[str] = None, n_jobs: int = 1) -> EvaluationResult:
    """
    Matches predictions to manifest entries by sample id and scores every matched image.

    Predictions without a ground-truth entry, or missing planes, are listed rather than scored.
    """
    root = root or manifest.root
    entries = manifest.by_id()
    pred_ids = list_prediction_ids(pred_dir)
    unmatched = [i for i in pred_ids if i not in entries]
    incomplete = [
        i for i in pred_ids if i in entries
        and not all(os.path.exists(prediction_path(pred_dir, i, o)) for o in ORGANELLE_ORDER)
    ]
    matched = [entries[i] for i in pred_ids if i in entries and i not in incomplete]
    missing = sorted(set(entries) - set(pred_ids))
    if missing:
        logger.warning(f"{len(missing)} ground-truth image(s) have no prediction, e.g. {missing[:3]}")
    reports = Parallel(n_jobs=n_jobs)(delayed(_evaluate_one)(pred_dir, entry, root) for entry in matched)
    return EvaluationResult(
        reports=list(reports), unmatched_predictions=unmatched,
        incomplete_predictions=incomplete, missing_predictions=missing,
    )
