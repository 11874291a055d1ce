import os

import numpy as np
import pytest
import tifffile

from ingest.image_io import read_image, write_image
from ingest.manifest import (
    Manifest, build_manifest, classify_file, find_inputs, load_manifest, load_sample, save_manifest, LayoutSpec,
)
from shared.errors import ImageFormatError, ManifestError, SampleLoadError
from shared.organelle_types import Modality, Organelle, validate_sample
from synth.fixtures import make_unit_fixture


def _write(root, rel, plane):
    write_image(plane, os.path.join(root, rel))


def test_full_range_round_trip_is_bit_exact(tmp_path):
    plane = make_unit_fixture("full-range")
    path = str(tmp_path / "full.tif")
    write_image(plane, path)
    back = read_image(path)
    assert back.dtype == np.uint16
    assert np.array_equal(back, plane)


def test_read_image_rejects_non_16_bit_and_multichannel(tmp_path):
    tifffile.imwrite(str(tmp_path / "f.tif"), np.zeros((64, 64), dtype=np.float32))
    tifffile.imwrite(str(tmp_path / "rgb.tif"), np.zeros((64, 64, 3), dtype=np.uint16), photometric="rgb")
    with pytest.raises(ImageFormatError):
        read_image(str(tmp_path / "f.tif"))
    with pytest.raises(ImageFormatError):
        read_image(str(tmp_path / "rgb.tif"))
    with pytest.raises(FileNotFoundError):
        read_image(str(tmp_path / "missing.tif"))


def test_write_image_rejects_wrong_dtype(tmp_path):
    with pytest.raises(ImageFormatError):
        write_image(np.zeros((64, 64), dtype=np.uint8), str(tmp_path / "x.tif"))


def test_classify_file():
    layout = LayoutSpec()
    assert classify_file("img0001_DIC", layout) == ("img0001", Modality.DIC)
    assert classify_file("cell_a_Nucleus", layout) == ("cell_a", Organelle.NUCLEUS)
    assert classify_file("img0001_Nucleus_pred", layout) == (None, None)


def test_build_manifest_skips_inputs_without_targets(tmp_path, caplog):
    root = str(tmp_path)
    plane = make_unit_fixture("gradient")
    _write(root, "study_b/x2_PC.tif", plane)
    _write(root, "study_b/x2_Actin.tif", plane)
    _write(root, "study_a/x1_BF.tif", plane)
    _write(root, "study_a/x1_Nucleus.tif", plane)
    _write(root, "study_a/x1_Mitochondria.tif", plane)
    _write(root, "study_a/orphan_DIC.tif", plane)

    manifest = build_manifest(root)
    assert [e.id for e in manifest.entries] == ["x1", "x2"]
    x1 = manifest.by_id()["x1"]
    assert x1.modality is Modality.BF and x1.study_id == "study_a"
    assert list(x1.target_paths) == [Organelle.MITOCHONDRIA, Organelle.NUCLEUS]
    assert x1.availability.flags == (True, True, False, False)
    assert "orphan" in caplog.text


def test_duplicate_sample_ids_are_rejected(tmp_path):
    root = str(tmp_path)
    plane = make_unit_fixture("constant")
    for study in ("s1", "s2"):
        _write(root, f"{study}/dup_BF.tif", plane)
        _write(root, f"{study}/dup_Nucleus.tif", plane)
    with pytest.raises(ManifestError):
        build_manifest(root)


def test_missing_root_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        build_manifest(str(tmp_path / "nope"))


def test_manifest_save_and_reload(synthetic_tree, tmp_path):
    root, manifest = synthetic_tree
    path = str(tmp_path / "copy.json")
    save_manifest(manifest, path)
    reloaded = load_manifest(path)
    assert reloaded == manifest
    with open(path, encoding="utf-8") as f:
        assert f.read() == manifest.to_json()


def test_load_manifest_reports_missing_files(synthetic_tree):
    root, manifest = synthetic_tree
    entry = manifest.entries[0]
    os.remove(os.path.join(root, entry.input_path))
    with pytest.raises(ManifestError):
        load_manifest(os.path.join(root, "manifest.json"))


def test_load_sample_is_valid(synthetic_tree):
    root, manifest = synthetic_tree
    for entry in manifest.entries:
        sample = load_sample(entry, root)
        assert validate_sample(sample) == []
        assert sample.availability == entry.availability


def test_load_sample_dimension_mismatch(tmp_path):
    root = str(tmp_path)
    _write(root, "s/a_BF.tif", make_unit_fixture("constant"))
    _write(root, "s/a_Nucleus.tif", make_unit_fixture("constant", size=96))
    manifest = build_manifest(root)
    with pytest.raises(SampleLoadError, match="Nucleus"):
        load_sample(manifest.entries[0], root)


def test_filter_modality(synthetic_tree):
    _, manifest = synthetic_tree
    dic = manifest.filter_modality(Modality.DIC)
    assert len(dic) > 0 and all(e.modality is Modality.DIC for e in dic.entries)
    assert manifest.filter_modality(None) is manifest
    assert isinstance(dic, Manifest)


def test_find_inputs_ignores_targets(synthetic_tree):
    root, manifest = synthetic_tree
    found = find_inputs(root)
    assert [sid for sid, _, _ in found] == [e.id for e in manifest.entries]
    single = find_inputs(os.path.join(root, manifest.entries[0].input_path))
    assert single[0][1] is manifest.entries[0].modality


def test_repeated_manifest_builds_serialize_identically(synthetic_tree, tmp_path):
    root, _ = synthetic_tree
    first, second = str(tmp_path / "m1.json"), str(tmp_path / "m2.json")
    save_manifest(build_manifest(root), first)
    save_manifest(build_manifest(root), second)
    with open(first, "rb") as a, open(second, "rb") as b:
        assert a.read() == b.read()
