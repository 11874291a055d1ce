import numpy as np
import pytest
import torch

from inference.tiling import (
    TorchTilePredictor, extract_tiles, merge_tiles, plan_tiles, tiled_predict, tta_predict, tta_wrap,
)
from models.networks import GeneratorSpec, ModalityCode, build_generator, make_dynamic
from shared.errors import ConfigurationError, InferenceError


def identity4(tiles):
    return np.repeat(tiles, 4, axis=1)


def row_ramp(tiles):
    """Not rotation-equivariant: adds a ramp along the tile's row axis."""
    ramp = np.linspace(0.0, 0.5, tiles.shape[2])[None, None, :, None]
    return np.repeat(tiles, 4, axis=1) + ramp


def test_stride_for_default_overlap():
    assert plan_tiles(512, 512).stride == 102
    assert plan_tiles(512, 512, overlap=0.0).stride == 512


def test_offsets_are_flush_and_cover_every_pixel():
    grid = plan_tiles(715, 1024)
    rows = sorted({r for r, _ in grid.offsets})
    assert rows == [0, 102, 203]
    cols = sorted({c for _, c in grid.offsets})
    assert cols[-1] == 1024 - 512 and cols[:2] == [0, 102]
    assert grid.coverage().min() >= 1


def test_small_image_is_padded_to_one_patch():
    grid = plan_tiles(300, 300)
    assert grid.offsets == ((0, 0),)
    assert (grid.padded_height, grid.padded_width) == (512, 512)
    assert extract_tiles(np.zeros((300, 300)), grid).shape == (1, 1, 512, 512)


def test_plan_rejects_bad_arguments():
    with pytest.raises(ConfigurationError):
        plan_tiles(0, 10)
    with pytest.raises(ConfigurationError):
        plan_tiles(10, 10, overlap=1.0)


@pytest.mark.parametrize("shape", [(512, 512), (715, 715), (300, 300), (1024, 640)])
def test_identity_reconstruction(shape):
    image = np.random.default_rng(0).uniform(-1, 1, shape)
    out = tiled_predict(identity4, image, plan_tiles(*shape), batch_size=8)
    assert out.shape == (4, *shape)
    assert np.max(np.abs(out - image[None])) < 1e-6


def test_merge_is_unweighted_mean():
    grid = plan_tiles(6, 4, patch=4, overlap=0.5)
    assert grid.offsets == ((0, 0), (2, 0))
    outputs = {(0, 0): np.full((1, 4, 4), 1.0), (2, 0): np.full((1, 4, 4), 3.0)}
    merged = merge_tiles(outputs, grid)
    assert merged[0, :, 0].tolist() == [1.0, 1.0, 2.0, 2.0, 3.0, 3.0]
    with pytest.raises(InferenceError):
        merge_tiles({(0, 0): outputs[(0, 0)]}, grid)


def test_tta_is_bit_equal_for_equivariant_model():
    image = np.random.default_rng(1).uniform(-1, 1, (96, 80))
    plain = tta_predict(identity4, image, enabled=False, patch=64, overlap=0.5)
    with_tta = tta_predict(identity4, image, enabled=True, patch=64, overlap=0.5)
    assert np.array_equal(plain, with_tta)


def test_tta_matches_brute_force_rotation_mean():
    tiles = np.random.default_rng(2).uniform(-1, 1, (3, 1, 16, 16))
    expected = np.zeros((3, 4, 16, 16))
    for k in range(4):
        expected += np.rot90(row_ramp(np.rot90(tiles, k, axes=(2, 3))), -k, axes=(2, 3))
    expected /= 4
    np.testing.assert_allclose(tta_wrap(row_ramp)(tiles), expected, atol=1e-12, rtol=0)
    assert not np.allclose(tta_wrap(row_ramp)(tiles), row_ramp(tiles))


def test_torch_predictor_wraps_generators():
    model = build_generator(GeneratorSpec.for_tier("test"), seed=0)
    predictor = TorchTilePredictor(model)
    tiles = np.zeros((2, 1, 64, 64))
    out = predictor(tiles)
    assert out.shape == (2, 4, 64, 64) and out.dtype == np.float64
    with torch.no_grad():
        assert np.allclose(out, model(torch.zeros(2, 1, 64, 64)).numpy())


def test_torch_predictor_needs_code_for_conditioned_model():
    model = make_dynamic(build_generator(GeneratorSpec.for_tier("test"), seed=0), seed=1)
    with pytest.raises(ConfigurationError):
        TorchTilePredictor(model)
    assert TorchTilePredictor(model, code=ModalityCode.for_modality("DIC"))(np.zeros((1, 1, 64, 64))).shape == (1, 4, 64, 64)
