import os

import pytest

from conftest import labeled_sample, perfect_prediction
from cli.isl_cli import main
from cli.run_config import RunConfig, apply_overrides, load_run_config
from inference.predictor import write_prediction_set
from inference.routing import load_routing
from ingest.manifest import load_manifest
from shared.errors import ConfigurationError

CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "config")


# --- Run Configuration ---

@pytest.mark.parametrize("name", ["full.yaml", "test.yaml"])
def test_shipped_configs_validate(name):
    cfg = load_run_config(os.path.join(CONFIG_DIR, name))
    assert isinstance(cfg, RunConfig)


def test_test_tier_config_values():
    cfg = load_run_config(os.path.join(CONFIG_DIR, "test.yaml"))
    assert cfg.train.tier == "test" and cfg.train.batch_size == 12
    assert cfg.synth.image_size == 64 and cfg.inference.patch_size == 64


def test_unknown_keys_are_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("train:\n  strategy: unified\n  learning_rate_typo: 0.1\n")
    with pytest.raises(ConfigurationError):
        load_run_config(str(path))
    path.write_text("- just\n- a list\n")
    with pytest.raises(ConfigurationError):
        load_run_config(str(path))
    with pytest.raises(FileNotFoundError):
        load_run_config(str(tmp_path / "absent.yaml"))


def test_overrides_apply_dotted_keys():
    data = {"train": {"strategy": "unified", "loss": {"lambda1": 100.0}}}
    merged = apply_overrides(data, {"train.strategy": "separate", "train.loss.lambda1": 10.0, "train.seed": None})
    assert merged == {"train": {"strategy": "separate", "loss": {"lambda1": 10.0}}}
    assert data["train"]["strategy"] == "unified"
    with pytest.raises(ConfigurationError):
        apply_overrides({"train": 3}, {"train.seed": 1})


def test_flags_override_file_values(tmp_path):
    out = tmp_path / "data"
    code = main(["synth", "--config", os.path.join(CONFIG_DIR, "test.yaml"), "--out", str(out), "--n-samples", "3"])
    assert code == 0
    assert len([f for f in os.listdir(out) if os.path.isdir(out / f)]) >= 1
    assert (out / "manifest.json").exists()


# --- Exit Codes ---

def test_unknown_flag_exits_with_usage_code():
    with pytest.raises(SystemExit) as info:
        main(["synth", "--out", "x", "--bogus"])
    assert info.value.code == 1


def test_dynamic_with_modality_filter_is_a_usage_error(tmp_path):
    code = main(["train", "--data-root", str(tmp_path), "--out", str(tmp_path / "m"),
                 "--strategy", "dynamic", "--modality", "BF"])
    assert code == 1
    assert not (tmp_path / "m").exists()


def test_unwritable_output_is_a_data_error(tmp_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    code = main(["synth", "--out", str(blocker / "data"), "--n-samples", "3", "--image-size", "64"])
    assert code == 2


def test_routing_command(tmp_path):
    path = tmp_path / "routing.json"
    assert main(["routing", "--uniform", "m", "--out", str(path)]) == 0
    assert load_routing(str(path)).model_ids() == ["m"]

    assert main(["routing", "--separate", "BF=b", "PC=p", "DIC=d", "--unified", "u", "--out", str(path)]) == 0
    table = load_routing(str(path))
    assert table.route("DIC", "Actin") == "u" and table.route("PC", "Actin") == "p"

    assert main(["routing", "--separate", "BF=b", "--out", str(path)]) == 1
    assert main(["routing", "--separate", "XX=b", "--unified", "u", "--out", str(path)]) == 1


def test_predict_with_missing_model_writes_nothing(tmp_path, synthetic_tree):
    root, _ = synthetic_tree
    routing = tmp_path / "routing.json"
    main(["routing", "--uniform", "never-trained", "--out", str(routing)])
    (tmp_path / "models").mkdir()
    code = main(["predict", "--checkpoints", str(tmp_path / "models"), "--routing", str(routing),
                 "--images", root, "--out", str(tmp_path / "pred")])
    assert code == 2
    assert not (tmp_path / "pred").exists()


def test_manifest_command(synthetic_tree, tmp_path):
    root, manifest = synthetic_tree
    out = tmp_path / "m.json"
    assert main(["manifest", "--data-root", root, "--out", str(out)]) == 0
    assert [e.id for e in load_manifest(str(out)).entries] == [e.id for e in manifest.entries]
    assert main(["manifest", "--data-root", str(tmp_path / "absent")]) == 2


def test_evaluate_flags_unmatched_predictions(synthetic_tree, synthetic_samples, tmp_path):
    root, _ = synthetic_tree
    pred_dir = tmp_path / "pred"
    pred_dir.mkdir()
    for sample in synthetic_samples:
        write_prediction_set(perfect_prediction(sample), str(pred_dir))
    args = ["evaluate", "--pred-dir", str(pred_dir), "--gt-manifest", os.path.join(root, "manifest.json"),
            "--out", str(tmp_path / "report")]
    assert main(args) == 0

    write_prediction_set(perfect_prediction(labeled_sample(["Nucleus"], size=64, sample_id="ghost")), str(pred_dir))
    assert main(args) == 2
    assert (tmp_path / "report" / "metrics_table.csv").exists()
