from dataclasses import replace

import numpy as np
import pytest

from cfdistill.adapt import (AdaptConfig, AugmentSpec, SampleBatch, adapt_online, adaptation_batches, crop_samples,
                             negative_energy, online_loss)
from cfdistill.distill import Teacher, TrainingConfig, TrainingPair, cf_layer, offline_loss
from cfdistill.distill.train import Windows, level_sigma, pair_labels
from cfdistill.imaging import box_center, crop_side, crop_square, iou
from cfdistill.nnet import forward_taps, init_weights
from cfdistill.spectral import gaussian_label
from nets import tiny_spec


def _frame(seed=0, size=64):
    return (np.random.default_rng(seed).random((size, size, 3)) * 255).astype(np.uint8)


BOX = (24.0, 26.0, 10.0, 8.0)


def test_identity_augmentation_is_bit_identical():
    b = crop_samples(_frame(), BOX, 3, 0, AugmentSpec.identity(), seed=1, out_size=16)
    ref = crop_square(_frame(), box_center(BOX), crop_side(BOX, 2.5), 16)
    np.testing.assert_array_equal(b.x, ref)
    for p, off in zip(b.positives, b.offsets):
        np.testing.assert_array_equal(p, ref)
        assert off == (0.0, 0.0) or off == (-0.0, -0.0)


def test_negatives_never_overlap_target():
    frame = _frame(1)
    side = crop_side(BOX, 2.5)
    for seed in range(1000):
        b = crop_samples(frame, BOX, 0, 4, seed=seed, out_size=8)
        assert len(b.negatives) == 4 and not b.warnings
        for reg in b.neg_regions:
            assert reg[2] == reg[3] == side
            assert iou(reg, BOX) == 0.0


def test_no_room_for_negatives_is_reported():
    b = crop_samples(_frame(2, 32), (8, 8, 16, 16), 2, 5, seed=0, out_size=8)
    assert b.negatives == [] and len(b.warnings) == 1
    assert len(b.positives) == 2


def test_positive_offsets_follow_the_shift():
    aug = AugmentSpec(flip_prob=0.0, shift=0.1, blur_radii=(0,), gain=(1.0, 1.0))
    frame = _frame(3)
    b = crop_samples(frame, BOX, 5, 0, aug, seed=4, out_size=32)
    side = crop_side(BOX, 2.5)
    cy, cx = box_center(BOX)
    for p, (orow, ocol) in zip(b.positives, b.offsets):
        # undo the recorded offset: recrop at the implied centre and compare
        center = (cy - orow * side / 32, cx - ocol * side / 32)
        np.testing.assert_allclose(p, crop_square(frame, center, side, 32), atol=1e-12)
        assert abs(orow) <= 0.1 * 32 + 1e-9 and abs(ocol) <= 0.1 * 32 + 1e-9


def test_flip_mirrors_offset():
    aug = AugmentSpec(flip_prob=1.0, shift=0.0, blur_radii=(0,), gain=(1.0, 1.0))
    b = crop_samples(_frame(4), BOX, 1, 0, aug, seed=0, out_size=16)
    np.testing.assert_allclose(b.positives[0], b.x[:, ::-1], rtol=0, atol=1e-12)


def test_augment_validation():
    with pytest.raises(ValueError):
        AugmentSpec(gain=(0.0, 1.0))
    with pytest.raises(ValueError):
        AugmentSpec(gain=(1.0, 2.5))
    with pytest.raises(ValueError):
        crop_samples(_frame(), (10, 10, 1, 5), 1, 1)


def test_crop_samples_deterministic():
    a = crop_samples(_frame(), BOX, 4, 4, seed=7, out_size=16)
    b = crop_samples(_frame(), BOX, 4, 4, seed=7, out_size=16)
    assert all(np.array_equal(p, q) for p, q in zip(a.positives + a.negatives, b.positives + b.negatives))


# --- online loss ---

def _net(seed=0):
    spec = tiny_spec()
    teacher = Teacher.random(tiny_spec((8, 12, 16)), seed + 1)
    w = init_weights(spec, seed)
    w.adapters["high"] = 0.2 * np.random.default_rng(seed).standard_normal((16, 8))
    return spec, w, teacher


def test_online_without_negatives_equals_offline():
    spec, w, teacher = _net()
    b = crop_samples(_frame(5), BOX, 1, 0, AugmentSpec.identity(), seed=0, out_size=12)
    cfg = TrainingConfig()
    on, g_on = online_loss(b, spec, w, teacher, cfg)
    pair = TrainingPair(b.x, b.positives[0], b.offsets[0], b.target_size)
    off, g_off = offline_loss([pair], spec, w, teacher, cfg)
    assert abs(on.total - off.total) < 1e-10
    for (_, a), (_, c) in zip(g_on.named_arrays(), g_off.named_arrays()):
        np.testing.assert_allclose(a, c, rtol=0, atol=1e-10)


def test_online_matches_per_sample_recomputation():
    spec, w, teacher = _net(1)
    b = crop_samples(_frame(6), BOX, 2, 2, seed=3, out_size=12)
    cfg = TrainingConfig(lambda_fid=0.0, weight_decay=0.0)
    br, _ = online_loss(b, spec, w, teacher, cfg)
    zs = b.positives + b.negatives
    taps, _ = forward_taps(spec, w, np.stack([b.x] + zs))
    win = Windows.for_spec(spec).maps
    ref = 0.0
    for k, z in enumerate(zs):
        for l in ("low", "middle", "high"):
            h, ww, _ = spec.tap_shape(l)
            y = gaussian_label(h, ww, level_sigma(spec, l, b.target_size))
            if k < 2:
                tgt = pair_labels(spec, b.target_size, b.offsets[k])[1][l]
            else:
                tgt = np.zeros((h, ww))
            res = cf_layer(taps[l][0] * win[l], taps[l][k + 1] * win[l], y, cfg.lambda_cf, target=tgt)
            ref += res.loss * h * ww / len(zs)
    assert abs(br.total - ref) < 1e-10


def test_zero_response_negatives_add_nothing():
    spec, w, teacher = _net(2)
    w = w.map(np.copy)
    w.biases = {k: np.zeros_like(v) for k, v in w.biases.items()}
    b = crop_samples(_frame(7), BOX, 2, 0, seed=1, out_size=12)
    cfg = TrainingConfig(lambda_fid=0.0, weight_decay=0.0)
    base, _ = online_loss(b, spec, w, teacher, cfg)
    # an all-zero patch gives all-zero features without biases, hence a zero response
    with_neg = replace(b, negatives=[np.zeros_like(b.x)] * 2)
    br, _ = online_loss(with_neg, spec, w, teacher, cfg)
    assert br.tracking_total == pytest.approx(base.tracking_total * 2 / 4, rel=1e-12)


def test_online_without_adapter_skips_fidelity():
    spec, w, teacher = _net(3)
    b = crop_samples(_frame(8), BOX, 2, 2, seed=1, out_size=12)
    br, grads = online_loss(b, spec, w.without_adapters(), teacher, TrainingConfig())
    assert br.fidelity == 0 and grads.adapters == {}


# --- adapt_online ---

def _cfg(**kw):
    base = dict(iterations=2, n_pos=3, n_neg=3, out_size=12)
    base.update(kw)
    return AdaptConfig(**base)


def test_zero_iterations_returns_input():
    spec, w, teacher = _net()
    res = adapt_online(spec, w, teacher, _frame(), BOX, _cfg(iterations=0))
    assert res.weights.equal(w) and not res.diverged


def test_adapt_deterministic_and_pure():
    spec, w, teacher = _net()
    before = w.copy()
    a = adapt_online(spec, w, teacher, _frame(), BOX, _cfg(lr=1e-3))
    b = adapt_online(spec, w, teacher, _frame(), BOX, _cfg(lr=1e-3))
    assert a.weights.equal(b.weights)
    assert w.equal(before)
    assert not a.weights.equal(w)
    assert set(a.weights.adapters) == {"high"}


def test_adapt_divergence_returns_input():
    spec, w, teacher = _net()
    res = adapt_online(spec, w, teacher, _frame(), BOX, _cfg(iterations=3, lr=1e300))
    assert res.diverged and res.weights is w
    assert any("diverged" in m for m in res.warnings)


def test_adaptation_batches_are_the_ones_used():
    cfg = _cfg()
    a = list(adaptation_batches(_frame(), BOX, cfg))
    b = list(adaptation_batches(_frame(), BOX, cfg))
    assert len(a) == 2
    assert not np.array_equal(a[0].negatives[0], a[1].negatives[0])
    assert np.array_equal(a[1].negatives[0], b[1].negatives[0])


def test_negative_energy_matches_loss_term():
    spec, w, teacher = _net(4)
    b = crop_samples(_frame(9), BOX, 0, 3, seed=2, out_size=12)
    cfg = TrainingConfig(lambda_fid=0.0, weight_decay=0.0)
    br, _ = online_loss(b, spec, w, teacher, cfg)
    assert negative_energy(b, spec, w, cfg) == pytest.approx(br.tracking_total * 3, rel=1e-12)
