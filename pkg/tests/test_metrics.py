import math

import numpy as np
import pytest

from conftest import labeled_sample, perfect_prediction
from inference.predictor import write_prediction_set
from metrics import (
    METRIC_COLUMNS, MISSING_CELL, MetricReport, OrganelleMetrics, aggregate_reports, distances, evaluate,
    evaluate_dataset, mae, organelle_metrics, pcc, report_table, ssim, write_reports,
)
from shared.errors import MetricError, UndefinedMetricError
from shared.organelle_types import ORGANELLE_ORDER
from synth.fixtures import make_unit_fixture

M, N, T, A = ORGANELLE_ORDER


def random_planes(rng, shape=(16, 16)):
    return rng.integers(0, 65536, size=(2, *shape), dtype=np.uint16)


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - size // 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_oracle(pred, gt):
    """Windowed SSIM averaged over the centers whose window lies fully inside the image."""
    x, y = pred.astype(np.float64) / 65535, gt.astype(np.float64) / 65535
    w = gaussian_window()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    half = 5
    values = []
    for i in range(half, x.shape[0] - half):
        for j in range(half, x.shape[1] - half):
            px = x[i - half:i + half + 1, j - half:j + half + 1]
            py = y[i - half:i + half + 1, j - half:j + half + 1]
            mx, my = np.sum(w * px), np.sum(w * py)
            vx = np.sum(w * px * px) - mx * mx
            vy = np.sum(w * py * py) - my * my
            cxy = np.sum(w * px * py) - mx * my
            values.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(values))


# --- Metric Oracles ---

def test_mae_pcc_and_distances_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        pred, gt = random_planes(rng)
        p, g = pred.astype(np.float64).ravel() / 65535, gt.astype(np.float64).ravel() / 65535
        assert abs(mae(pred, gt) - sum(abs(a - b) for a, b in zip(p, g)) / p.size) <= 1e-12

        dp, dg = p - p.mean(), g - g.mean()
        expected_pcc = np.sum(dp * dg) / math.sqrt(np.sum(dp * dp) * np.sum(dg * dg))
        assert abs(pcc(pred, gt) - expected_pcc) <= 1e-12

        e_dist, c_dist = distances(pred, gt)
        assert abs(e_dist - math.sqrt(sum((a - b) ** 2 for a, b in zip(p, g)))) <= 1e-12
        expected_c = 1 - np.dot(p, g) / (math.sqrt(np.dot(p, p)) * math.sqrt(np.dot(g, g)))
        assert abs(c_dist - expected_c) <= 1e-12


def test_ssim_matches_windowed_oracle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        pred, gt = random_planes(rng)
        assert abs(ssim(pred, gt) - ssim_oracle(pred, gt)) <= 1e-7


def test_identical_images_score_perfectly():
    plane = make_unit_fixture("gradient")
    assert mae(plane, plane) == 0.0
    assert ssim(plane, plane) == pytest.approx(1.0, abs=1e-12)
    assert pcc(plane, plane) == pytest.approx(1.0, abs=1e-12)
    e_dist, c_dist = distances(plane, plane)
    assert e_dist == 0.0 and c_dist == pytest.approx(0.0, abs=1e-12)


def test_metric_edge_cases():
    constant = make_unit_fixture("constant")
    with pytest.raises(UndefinedMetricError):
        pcc(constant, make_unit_fixture("gradient"))
    with pytest.raises(UndefinedMetricError):
        distances(np.zeros((16, 16), dtype=np.uint16), constant[:16, :16])
    with pytest.raises(MetricError):
        mae(np.zeros((16, 16), dtype=np.uint16), np.zeros((16, 17), dtype=np.uint16))
    with pytest.raises(MetricError):
        ssim(np.zeros((8, 64), dtype=np.uint16), np.zeros((8, 64), dtype=np.uint16))


def test_undefined_metrics_are_recorded_as_nan():
    gt = make_unit_fixture("gradient")
    result = organelle_metrics(np.zeros_like(gt), gt, N, "img0001")
    assert math.isnan(result.PCC) and math.isnan(result.C_dist)
    assert result.E_dist > 0 and result.MAE > 0


# --- Applicability ---

def test_evaluate_reports_only_labeled_organelles_and_applicable_metrics():
    sample = labeled_sample([M, T, A])
    report = evaluate(perfect_prediction(sample), sample)
    assert set(report.organelles) == {M, T, A}
    assert set(report.organelles[M].present()) == set(METRIC_COLUMNS)
    for organelle in (T, A):
        assert set(report.organelles[organelle].present()) == {"SSIM", "PCC"}
    assert report.organelles[M].MAE == 0.0


def test_aggregate_table_layout():
    reports = [
        MetricReport(sample_id="a", organelles={
            M: OrganelleMetrics(MAE=0.1, SSIM=0.5, PCC=0.2, E_dist=1.0, C_dist=0.1),
            T: OrganelleMetrics(SSIM=0.4, PCC=0.6),
        }),
        MetricReport(sample_id="b", organelles={
            M: OrganelleMetrics(MAE=0.3, SSIM=0.7, PCC=float("nan"), E_dist=3.0, C_dist=0.3),
        }),
    ]
    table = aggregate_reports(reports)
    assert list(table.index) == ["Mitochondria", "Nucleus", "Tubulin", "Actin"]
    assert list(table.columns) == list(METRIC_COLUMNS)
    assert table.loc["Mitochondria", "MAE"] == pytest.approx(0.2)
    assert table.loc["Mitochondria", "PCC"] == pytest.approx(0.2)
    assert table.loc["Tubulin", "SSIM"] == pytest.approx(0.4)

    text = report_table(table)
    assert text.loc["Tubulin", "MAE"] == MISSING_CELL
    assert text.loc["Tubulin", "C_dist"] == MISSING_CELL
    assert (text.loc["Nucleus"] == MISSING_CELL).all()
    assert text.loc["Mitochondria", "SSIM"] == "0.600000"


# --- Dataset Evaluation ---

def _write_perfect_predictions(samples, pred_dir):
    for sample in samples:
        write_prediction_set(perfect_prediction(sample), pred_dir)


def test_evaluate_dataset_with_perfect_predictions(synthetic_tree, synthetic_samples, tmp_path):
    root, manifest = synthetic_tree
    pred_dir = str(tmp_path / "pred")
    (tmp_path / "pred").mkdir()
    _write_perfect_predictions(synthetic_samples, pred_dir)

    result = evaluate_dataset(pred_dir, manifest, root)
    assert result.ok
    assert sorted(r.sample_id for r in result.reports) == sorted(s.sample_id for s in synthetic_samples)
    table = aggregate_reports(result.reports)
    for organelle in ("Mitochondria", "Nucleus"):
        if not np.isnan(table.loc[organelle, "MAE"]):
            assert table.loc[organelle, "MAE"] == 0.0
            assert table.loc[organelle, "E_dist"] == 0.0
    labeled = [o for o in ORGANELLE_ORDER if any(s.availability[o] for s in synthetic_samples)]
    for organelle in labeled:
        assert table.loc[organelle.value, "SSIM"] == pytest.approx(1.0, abs=1e-9)


def test_unmatched_and_missing_predictions_are_listed(synthetic_tree, synthetic_samples, tmp_path):
    root, manifest = synthetic_tree
    pred_dir = str(tmp_path / "pred")
    (tmp_path / "pred").mkdir()
    _write_perfect_predictions(synthetic_samples[1:], pred_dir)
    ghost = labeled_sample([N], size=64, sample_id="ghost")
    write_prediction_set(perfect_prediction(ghost), pred_dir)

    result = evaluate_dataset(pred_dir, manifest, root)
    assert not result.ok
    assert result.unmatched_predictions == ["ghost"]
    assert result.missing_predictions == [synthetic_samples[0].sample_id]
    assert len(result.reports) == len(synthetic_samples) - 1


def test_reports_are_byte_identical_across_runs(synthetic_tree, synthetic_samples, tmp_path):
    root, manifest = synthetic_tree
    pred_dir = str(tmp_path / "pred")
    (tmp_path / "pred").mkdir()
    _write_perfect_predictions(synthetic_samples, pred_dir)

    first = write_reports(evaluate_dataset(pred_dir, manifest, root).reports, str(tmp_path / "r1"))
    second = write_reports(evaluate_dataset(pred_dir, manifest, root, n_jobs=2).reports, str(tmp_path / "r2"))
    for key in ("table", "per_image", "json"):
        with open(first[key], "rb") as a, open(second[key], "rb") as b:
            assert a.read() == b.read(), key
