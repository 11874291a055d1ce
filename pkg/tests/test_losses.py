import numpy as np
import pytest
import torch
import torch.nn.functional as F
from pydantic import ValidationError

from conftest import ALL_LABELED, availability, random_batch
from models.networks import DiscriminatorSpec, build_discriminator_bank, build_generator, GeneratorSpec
from shared.errors import LabelValidationError, ShapeError
from shared.organelle_types import LabelAvailability, ORGANELLE_ORDER
from training.losses import (
    LossConfig, adaptive_loss, cgan_losses, gan_criterion, transform_T, weighted_l1,
)

M, N, T, A = ORGANELLE_ORDER


def test_transform_T_selects_labeled_channels_in_order():
    pred = torch.arange(4.0).reshape(4, 1, 1).expand(4, 2, 2)
    out = transform_T(pred, availability(A, M))
    assert out[:, 0, 0].tolist() == [0.0, 3.0]
    with pytest.raises(LabelValidationError):
        transform_T(pred, LabelAvailability(flags=(False,) * 4))
    with pytest.raises(ShapeError):
        transform_T(torch.zeros(3, 2, 2), ALL_LABELED)


def test_weighted_l1_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        c, h, w = rng.integers(1, 5), rng.integers(1, 9), rng.integers(1, 9)
        pred, gt = rng.uniform(-1, 1, (2, c, h, w))
        mask = rng.choice([0.1, 1.0], size=(c, h, w))
        expected = sum(
            abs(pred[i, j, k] - gt[i, j, k]) * mask[i, j, k] for i in range(c) for j in range(h) for k in range(w)
        ) / (c * h * w)
        got = weighted_l1(torch.from_numpy(pred), torch.from_numpy(gt), torch.from_numpy(mask)).item()
        assert abs(got - expected) <= 1e-12


def test_weighted_l1_shape_mismatch():
    with pytest.raises(ShapeError):
        weighted_l1(torch.zeros(2, 4, 4), torch.zeros(2, 4, 4), torch.zeros(1, 4, 4))


def test_gan_criterion_modes():
    logits = torch.zeros(2, 1, 3, 3)
    assert gan_criterion(logits, True).item() == pytest.approx(np.log(2))
    assert gan_criterion(logits, True, "lsgan").item() == pytest.approx(1.0)
    assert gan_criterion(logits, False, per_sample=True).shape == (2,)


def test_loss_config_validation():
    with pytest.raises(ValidationError):
        LossConfig(lo_pct=90, hi_pct=10)
    with pytest.raises(ValidationError):
        LossConfig(lambda1=0)
    with pytest.raises(ValidationError):
        LossConfig(gan_mode="wgan")


def _models(dtype=torch.float64):
    gen = build_generator(GeneratorSpec.for_tier("test"), seed=0).to(dtype)
    bank = build_discriminator_bank(DiscriminatorSpec.for_tier("test"), seed=1).to(dtype)
    return gen, bank


def test_full_label_equivalence_with_direct_composite():
    gen, bank = _models()
    batch = random_batch([ALL_LABELED] * 3, dtype=torch.float64, seed=2)
    pred = gen(batch.source)
    cfg = LossConfig()
    report = adaptive_loss(pred, batch.targets, ALL_LABELED, batch.masks, bank, cfg, batch.source)

    l1 = torch.mean(torch.abs(pred - batch.targets) * batch.masks)
    adv = torch.stack([
        F.binary_cross_entropy_with_logits(
            bank[c](torch.cat([batch.source, pred[:, c:c + 1]], dim=1)),
            torch.ones_like(bank[c](torch.cat([batch.source, pred[:, c:c + 1]], dim=1))),
        )
        for c in range(4)
    ]).mean()
    direct = cfg.lambda1 * l1 + cfg.lambda2 * adv
    assert abs(report.total.item() - direct.item()) <= 1e-10
    assert report.excluded == [] and report.n_included == 4


def test_l1_only_loss_without_discriminators():
    gen, _ = _models()
    batch = random_batch([availability(N), availability(M, N)], dtype=torch.float64)
    pred = gen(batch.source)
    report = adaptive_loss(pred, batch.targets, batch.availability, batch.masks, None)
    expected = 100.0 * np.mean([
        torch.mean(torch.abs(pred[0, 1] - batch.targets[0, 1])).item(),
        torch.mean(torch.abs(pred[1, :2] - batch.targets[1, :2])).item(),
    ])
    assert report.total.item() == pytest.approx(expected, rel=1e-12)
    assert report.excluded == [T, A]
    assert "d_loss" not in report.to_record() and "g_adv" not in report.to_record()


def test_unlabeled_heads_and_discriminators_get_no_gradient():
    gen, bank = _models()
    batch = random_batch([availability(M, N), availability(N)], dtype=torch.float64)
    pred = gen(batch.source)
    report = adaptive_loss(pred, batch.targets, batch.availability, batch.masks, bank, source=batch.source)
    report.total.backward()
    for c in (T.index, A.index):
        for p in gen.head_parameters(c):
            assert p.grad is None or torch.all(p.grad == 0)
        for p in bank[c].parameters():
            assert p.grad is None
    assert any(p.grad is not None and torch.any(p.grad != 0) for p in gen.head_parameters(N.index))


def test_unlabeled_target_values_do_not_matter():
    gen, bank = _models()
    avails = [availability(M, N)] * 2
    batch = random_batch(avails, dtype=torch.float64)
    pred = gen(batch.source)
    noisy = batch.targets.clone()
    noisy[:, 2:] = torch.rand_like(noisy[:, 2:])
    a = adaptive_loss(pred, batch.targets, avails, batch.masks, bank, source=batch.source)
    b = adaptive_loss(pred, noisy, avails, batch.masks, bank, source=batch.source)
    assert a.total.item() == b.total.item()


def test_adaptive_loss_rejects_empty_availability():
    gen, bank = _models()
    batch = random_batch([ALL_LABELED], dtype=torch.float64)
    pred = gen(batch.source)
    with pytest.raises(LabelValidationError):
        adaptive_loss(pred, batch.targets, [LabelAvailability(flags=(False,) * 4)], batch.masks, bank,
                      source=batch.source)


def test_cgan_losses_detach_fake_for_discriminator():
    _, bank = _models()
    source = torch.rand(2, 1, 64, 64, dtype=torch.float64)
    real = torch.rand(2, 1, 64, 64, dtype=torch.float64)
    fake = torch.rand(2, 1, 64, 64, dtype=torch.float64, requires_grad=True)
    d_loss, g_adv = cgan_losses(bank[0], source, real, fake)
    d_loss.backward()
    assert fake.grad is None
    g_adv.backward()
    assert fake.grad is not None


def test_batched_loss_is_mean_of_per_sample_losses():
    gen, bank = _models()
    avails = [availability(M, N), availability(N), availability(T, A, M), ALL_LABELED]
    batch = random_batch(avails, dtype=torch.float64, seed=4)
    pred = gen(batch.source)
    cfg = LossConfig()
    batched = adaptive_loss(pred, batch.targets, avails, batch.masks, bank, cfg, batch.source)
    singles = [
        adaptive_loss(pred[b:b + 1], batch.targets[b:b + 1], [a], batch.masks[b:b + 1], bank, cfg,
                      batch.source[b:b + 1]).total.item()
        for b, a in enumerate(avails)
    ]
    assert abs(batched.total.item() - float(np.mean(singles))) <= 1e-12
