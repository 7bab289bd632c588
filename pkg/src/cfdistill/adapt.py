"""First-frame fine-tuning that pushes background responses towards zero.

Positives are augmented crops around the target with shifted Gaussian
targets; negatives are crops whose source square does not touch the target
box and whose desired response is the zero map.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .distill.losses import cf_layer
from .distill.train import (NonFiniteGradient, TrainingConfig, Windows, _objective, level_sigma, pair_labels,
                            sgd_step)
from .imaging import bilinear, box_blur, box_center, crop_side, iou, sample_grid, to_float
from .nnet import LEVELS, forward_taps
from .spectral import gaussian_label

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentSpec:
    flip_prob: float = 0.5
    shift: float = 0.1  # max |shift| as a fraction of the crop side
    blur_radii: tuple[int, ...] = (0, 1, 2)
    gain: tuple[float, float] = (0.6, 1.4)

    def __post_init__(self):
        if not 0 < self.gain[0] <= self.gain[1] < 2:
            raise ValueError(f"gain range must lie in (0, 2), got {self.gain}")
        if not 0 <= self.flip_prob <= 1 or self.shift < 0 or any(r < 0 for r in self.blur_radii):
            raise ValueError("bad augmentation parameters")

    @classmethod
    def identity(cls):
        return cls(flip_prob=0.0, shift=0.0, blur_radii=(0,), gain=(1.0, 1.0))


@dataclass
class SampleBatch:
    x: np.ndarray
    target_size: tuple[float, float]  # target (h, w) in network pixels
    positives: list
    offsets: list  # per positive: target centre minus patch centre, network pixels (row, col)
    negatives: list
    neg_regions: list = field(default_factory=list)  # source squares as x, y, w, h
    warnings: list = field(default_factory=list)


@dataclass(frozen=True)
class AdaptConfig:
    iterations: int = 8
    n_pos: int = 32
    n_neg: int = 32
    lr: float = 1e-5
    padding: float = 2.5
    out_size: int = 64
    augment: AugmentSpec = AugmentSpec()
    seed: int = 0
    train: TrainingConfig = TrainingConfig()


def _raw_crop(img, center, side, out_size):
    rows, cols = sample_grid(center, side, out_size)
    return bilinear(img, rows, cols)


def _centre(p):
    return p - p.mean(axis=(0, 1), keepdims=True)


def _negative_centres(rng, frame_hw, box, side, n):
    """Uniform draws over the centres whose ``side`` square has zero-area overlap with ``box``.

    The admissible set is a union of up to four strips; a strip is picked in
    proportion to its area and a draw covered by ``k`` strips is kept with
    probability ``1/k``, which makes the union uniform.
    """
    H, W = frame_hw
    x, y, w, h = (float(v) for v in box)
    half = side / 2.0
    strips = []
    if x - half > 0:
        strips.append((0.0, x - half, 0.0, float(H)))
    if x + w + half < W:
        strips.append((x + w + half, float(W), 0.0, float(H)))
    if y - half > 0:
        strips.append((0.0, float(W), 0.0, y - half))
    if y + h + half < H:
        strips.append((0.0, float(W), y + h + half, float(H)))
    if not strips:
        return []
    areas = np.array([(s[1] - s[0]) * (s[3] - s[2]) for s in strips])
    out = []
    while len(out) < n:
        s = strips[int(rng.choice(len(strips), p=areas / areas.sum()))]
        cx, cy = rng.uniform(s[0], s[1]), rng.uniform(s[2], s[3])
        k = sum(t[0] <= cx <= t[1] and t[2] <= cy <= t[3] for t in strips)
        if rng.random() * k > 1.0:
            continue
        if iou((cx - half, cy - half, side, side), box) > 0:
            continue  # rounding at a strip edge
        out.append((cy, cx))
    return out


def crop_samples(frame, bbox, n_pos, n_neg, augment=None, seed=0, padding=2.5, out_size=64):
    """Template, augmented positives and zero-overlap negatives from one frame."""
    bbox = np.asarray(bbox, dtype=np.float64)
    if bbox[2] < 2 or bbox[3] < 2:
        raise ValueError(f"degenerate box {tuple(bbox)}")
    augment = augment or AugmentSpec()
    rng = np.random.default_rng(seed)
    img = to_float(frame)
    H, W = img.shape[:2]
    side = crop_side(bbox, padding)
    scale = out_size / side
    center = box_center(bbox)
    x = _centre(_raw_crop(img, center, side, out_size))
    tsize = (bbox[3] * scale, bbox[2] * scale)

    # largest shift that keeps the whole target inside the crop
    lim_r = max(0.0, min(augment.shift * side, (side - bbox[3]) / 2))
    lim_c = max(0.0, min(augment.shift * side, (side - bbox[2]) / 2))
    positives, offsets = [], []
    for _ in range(n_pos):
        dr = rng.uniform(-lim_r, lim_r) if lim_r > 0 else 0.0
        dc = rng.uniform(-lim_c, lim_c) if lim_c > 0 else 0.0
        flip = rng.random() < augment.flip_prob
        radius = int(rng.choice(augment.blur_radii))
        gain = rng.uniform(*augment.gain) if augment.gain[1] > augment.gain[0] else augment.gain[0]
        p = _raw_crop(img, (center[0] + dr, center[1] + dc), side, out_size)
        p = box_blur(p, radius)
        if gain != 1.0:
            p = p * gain
        off = (-dr * scale, -dc * scale)
        if flip:
            p = p[:, ::-1]
            off = (off[0], -off[1])
        positives.append(_centre(p))
        offsets.append(off)

    warnings = []
    centres = _negative_centres(rng, (H, W), bbox, side, n_neg)
    if len(centres) < n_neg:
        msg = f"frame {W}x{H} cannot host a {side:.1f}px crop clear of the target; no negatives"
        log.warning(msg)
        warnings.append(msg)
    negatives = [_centre(_raw_crop(img, c, side, out_size)) for c in centres]
    regions = [(c[1] - side / 2, c[0] - side / 2, side, side) for c in centres]
    return SampleBatch(x, tsize, positives, offsets, negatives, regions, warnings)


def _usable(config, weights):
    levels = tuple(l for l in config.fidelity_levels if l in weights.adapters)
    return replace(config, fidelity_levels=levels) if levels != config.fidelity_levels else config


def _teacher_taps(teacher, patches, levels):
    if not levels or teacher is None:
        return {}
    return teacher.taps(np.stack(patches), levels)


def online_loss(batch, spec, weights, teacher, config, windows=None):
    """Positive and negative tracking terms averaged over all samples, plus fidelity and decay.

    Fidelity is only evaluated at levels that carry an adapter; without a
    teacher it is skipped.
    """
    config = _usable(config, weights)
    if teacher is None:
        config = replace(config, fidelity_levels=())
    windows = windows or Windows.for_spec(spec, config.window)
    zs = list(batch.positives) + list(batch.negatives)
    if not zs:
        raise ValueError("sample batch has no search patches")
    targets = []
    for off in batch.offsets:
        _, t = pair_labels(spec, batch.target_size, off, config.sigma_factor)
        targets.append(t)
    for _ in batch.negatives:
        targets.append({l: np.zeros(spec.tap_shape(l)[:2]) for l in LEVELS})
    tx = _teacher_taps(teacher, [batch.x], config.fidelity_levels)
    tz = _teacher_taps(teacher, zs, config.fidelity_levels)
    return _objective(spec, weights, [batch.x], zs, [batch.target_size], targets, tx, tz, config, windows)


def negative_energy(batch, spec, weights, config, windows=None):
    """Sum over negatives and levels of the squared response of the template's filter."""
    windows = windows or Windows.for_spec(spec, config.window)
    if not batch.negatives:
        return 0.0
    taps, _ = forward_taps(spec, weights, np.stack([batch.x] + list(batch.negatives)))
    total = 0.0
    for l in LEVELS:
        h, w, _ = spec.tap_shape(l)
        y = gaussian_label(h, w, level_sigma(spec, l, batch.target_size, config.sigma_factor))
        win = windows.maps[l]
        for k in range(len(batch.negatives)):
            r = cf_layer(taps[l][0] * win, taps[l][k + 1] * win, y, config.lambda_cf, target=np.zeros((h, w)))
            total += float(np.sum(r.response**2))
    return total


@dataclass
class AdaptResult:
    weights: object
    history: list = field(default_factory=list)  # LossBreakdown per iteration
    diverged: bool = False
    warnings: list = field(default_factory=list)


def adaptation_batches(frame, bbox, config):
    """The sample batches ``adapt_online`` draws, one per iteration, in order."""
    seeds = np.random.SeedSequence(config.seed).generate_state(max(config.iterations, 1))
    for it in range(config.iterations):
        yield crop_samples(frame, bbox, config.n_pos, config.n_neg, config.augment, int(seeds[it]),
                           config.padding, config.out_size)


def adapt_online(spec, weights, teacher, frame, bbox, config=None):
    """A few momentum-SGD steps on fresh first-frame sample batches.

    The input snapshot is never modified. On a non-finite loss or gradient
    the input snapshot comes back together with a warning.
    """
    config = config or AdaptConfig()
    tcfg = config.train
    windows = Windows.for_spec(spec, tcfg.window)
    result = AdaptResult(weights)
    w, velocity = weights, None
    for it, batch in enumerate(adaptation_batches(frame, bbox, config)):
        result.warnings.extend(batch.warnings)
        try:
            br, grads = online_loss(batch, spec, w, teacher, tcfg, windows)
            result.history.append(br)
            if not np.isfinite(br.total):
                raise NonFiniteGradient("non-finite online loss")
            w, velocity = sgd_step(w, grads, velocity, tcfg, 0, lr=config.lr)
        except NonFiniteGradient as e:
            msg = f"adaptation diverged at iteration {it} ({e}); keeping the input weights"
            log.warning(msg)
            result.warnings.append(msg)
            result.diverged = True
            return result
    result.weights = w
    return result
