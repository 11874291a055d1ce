import numpy as np
import pytest
from pydantic import ValidationError

from shared.errors import ConfigurationError, ImageFormatError, RoutingError, exit_code_for
from shared.organelle_types import (
    LabelAvailability, Modality, ORGANELLE_ORDER, Organelle, PredictionSet, Sample,
    check_image_plane, validate_sample, warn_if_outside_real_bounds,
)


def _plane(value=1000, size=64):
    return np.full((size, size), value, dtype=np.uint16)


def test_canonical_order_and_channel_index():
    assert [o.value for o in ORGANELLE_ORDER] == ["Mitochondria", "Nucleus", "Tubulin", "Actin"]
    assert [o.index for o in ORGANELLE_ORDER] == [0, 1, 2, 3]
    assert [m.code_index for m in (Modality.BF, Modality.PC, Modality.DIC)] == [0, 1, 2]


def test_names_parse_case_insensitively():
    assert Modality("dic") is Modality.DIC
    assert Organelle("nucleus") is Organelle.NUCLEUS
    with pytest.raises(ValueError):
        Organelle("Golgi")


def test_label_availability_helpers():
    avail = LabelAvailability.from_organelles(["Actin", Organelle.MITOCHONDRIA])
    assert avail.flags == (True, False, False, True)
    assert avail.organelles() == [Organelle.MITOCHONDRIA, Organelle.ACTIN]
    assert avail.indices() == [0, 3]
    assert avail[Organelle.ACTIN] and not avail["Nucleus"]
    assert not LabelAvailability(flags=(False,) * 4).any()


def test_valid_sample_has_no_violations():
    sample = Sample(
        sample_id="a", input=_plane(), modality=Modality.BF,
        targets={Organelle.NUCLEUS: _plane(2000)},
        availability=LabelAvailability.from_organelles([Organelle.NUCLEUS]),
    )
    assert validate_sample(sample) == []


def test_validate_sample_lists_every_violation():
    sample = Sample(
        sample_id="a", input=_plane().astype(np.float32), modality=Modality.PC,
        targets={Organelle.NUCLEUS: _plane(size=80)},
        availability=LabelAvailability.from_organelles([Organelle.NUCLEUS, Organelle.ACTIN]),
    )
    violations = validate_sample(sample)
    assert any("not uint16" in v for v in violations)
    assert "availability/target mismatch: Actin" in violations
    assert "dimension mismatch: Nucleus" in violations


def test_sample_without_labels_is_flagged():
    sample = Sample(sample_id="a", input=_plane(), modality=Modality.BF, targets={},
                    availability=LabelAvailability(flags=(False,) * 4))
    assert "no labeled organelle" in validate_sample(sample)


def test_check_image_plane_rejects_small_and_3d():
    assert check_image_plane(_plane(size=32))
    assert check_image_plane(np.zeros((2, 64, 64), dtype=np.uint16))
    assert check_image_plane(_plane()) == []


def test_real_bounds_only_warn(caplog):
    assert warn_if_outside_real_bounds(_plane(size=64)) is False
    assert "outside the real-data range" in caplog.text
    assert warn_if_outside_real_bounds(np.zeros((512, 600), dtype=np.uint16)) is True


def test_prediction_set_requires_all_planes_and_provenance():
    planes = {o: _plane() for o in ORGANELLE_ORDER}
    ids = {o: "m" for o in ORGANELLE_ORDER}
    ps = PredictionSet(sample_id="a", planes=planes, model_ids=ids, modality=Modality.DIC)
    assert ps.provenance_record()["models"]["Actin"] == "m"
    with pytest.raises(ValidationError):
        PredictionSet(sample_id="a", planes={Organelle.NUCLEUS: _plane()}, model_ids=ids)
    with pytest.raises(ValidationError):
        PredictionSet(sample_id="a", planes=planes, model_ids={Organelle.NUCLEUS: "m"})


def test_exit_codes():
    assert exit_code_for(ConfigurationError("x")) == 1
    assert exit_code_for(ImageFormatError("x")) == 2
    assert exit_code_for(RoutingError("x")) == 2
    assert exit_code_for(FileNotFoundError("x")) == 2
    assert exit_code_for(RuntimeError("x")) == 3
