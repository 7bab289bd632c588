"""Offline objective, SGD with momentum, and the distillation loop."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ..nnet import LEVELS, NetworkWeights, backward, forward_taps, init_weights, prune_init
from ..nnet.prune import embedding_adapter
from ..spectral import cosine_window, gaussian_label
from .losses import LossBreakdown, cf_layer, fidelity_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 50
    lr_start: float = 1e-2
    lr_end: float = 1e-5
    momentum: float = 0.9
    weight_decay: float = 0.005
    lambda_fid: float = 1e-5
    lambda_cf: float = 1e-4
    batch_size: int = 8
    seed: int = 0
    keep_fraction: float = 1 / 8
    fidelity_levels: tuple[str, ...] = ("high",)
    sigma_factor: float = 0.1
    window: bool = True
    adapter_init: str = "zero"  # "zero" | "embed" | "lstsq"
    tracking_norm: str = "sum"  # "sum": ||r - g||^2 per map; "mean": divided by the map's element count

    def __post_init__(self):
        if not self.lr_start >= self.lr_end > 0:
            raise ValueError("need lr_start >= lr_end > 0")
        if min(self.momentum, self.weight_decay, self.lambda_fid, self.lambda_cf) < 0:
            raise ValueError("loss weights and momentum must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    def lr(self, epoch):
        if self.epochs == 1:
            return self.lr_start
        return self.lr_start * (self.lr_end / self.lr_start) ** (epoch / (self.epochs - 1))


class Teacher:
    """Frozen network whose tap outputs are treated as constants."""

    def __init__(self, spec, weights):
        self.spec = spec
        self.weights = weights

    @classmethod
    def random(cls, spec, seed=0):
        return cls(spec, init_weights(spec, seed))

    def taps(self, batch, levels=LEVELS):
        out, _ = forward_taps(self.spec, self.weights, batch)
        return {l: out[l] for l in levels}


def shifted_gaussian(h, w, sigma, peak):
    """Wrapped Gaussian map ``(h, w)`` whose peak may sit between cells."""
    pr, pc = peak
    dr = (np.arange(h) - pr) % h
    dr = np.minimum(dr, h - dr)
    dc = (np.arange(w) - pc) % w
    dc = np.minimum(dc, w - dc)
    return np.exp(-(dr[:, None] ** 2 + dc[None, :] ** 2) / (2.0 * sigma**2))


def level_sigma(spec, level, target_size, factor=0.1):
    """``factor * sqrt(w * h)`` with the target measured in cells of the level's grid."""
    s = spec.tap_stride(level)
    return factor * float(np.sqrt((target_size[0] / s) * (target_size[1] / s)))


def pair_labels(spec, target_size, offset, factor=0.1, levels=LEVELS):
    """Training labels (peak at the origin) and response targets (peak at ``offset``) per level."""
    labels, targets = {}, {}
    for l in levels:
        h, w, _ = spec.tap_shape(l)
        s = spec.tap_stride(l)
        sigma = level_sigma(spec, l, target_size, factor)
        labels[l] = gaussian_label(h, w, sigma, (0, 0))
        targets[l] = shifted_gaussian(h, w, sigma, (offset[0] / s, offset[1] / s))
    return labels, targets


@dataclass
class Windows:
    maps: dict

    @classmethod
    def for_spec(cls, spec, enabled=True):
        maps = {}
        for l in LEVELS:
            h, w, _ = spec.tap_shape(l)
            maps[l] = cosine_window(h, w) if enabled and h >= 2 and w >= 2 else np.ones((h, w, 1))
        return cls(maps)


def _objective(spec, weights, xs, zs, target_sizes, z_targets, teacher_x, teacher_z, config, windows,
               levels=LEVELS):
    """Shared core for the offline and online losses.

    ``xs``: template patches (one per sample, possibly repeated); ``zs``:
    search patches; ``z_targets[b][l]``: desired response map (zeros for
    background). Tracking and fidelity averaged over the ``len(zs)`` samples;
    template fidelity averaged over the distinct templates in ``teacher_x``.
    """
    B = len(zs)
    nx = len(xs)
    inp = np.concatenate([np.stack(xs), np.stack(zs)])
    taps, cache = forward_taps(spec, weights, inp)
    if not all(np.all(np.isfinite(t)) for t in taps.values()):
        raise NonFiniteGradient("non-finite activations")
    tap_grads = {l: np.zeros_like(taps[l]) for l in taps}
    br = LossBreakdown(lambda_fid=config.lambda_fid, decay_weight=config.weight_decay)
    for l in levels:
        br.tracking[l] = 0.0
    for b in range(B):
        xi = b % nx
        tsize = target_sizes[xi]
        for l in levels:
            win = windows.maps[l]
            h, w, _ = spec.tap_shape(l)
            sigma = level_sigma(spec, l, tsize, config.sigma_factor)
            y = gaussian_label(h, w, sigma, (0, 0))
            scale = (h * w if config.tracking_norm == "sum" else 1.0) / B
            res = cf_layer(taps[l][xi] * win, taps[l][nx + b] * win, y, config.lambda_cf,
                           target=z_targets[b][l], scale=scale)
            br.tracking[l] += res.loss
            tap_grads[l][xi] += res.grad_x * win
            tap_grads[l][nx + b] += res.grad_z * win
    adapter_grads = {}
    for l in config.fidelity_levels:
        A = weights.adapters[l]
        lt, gpx, gax = fidelity_loss(taps[l][:nx], teacher_x[l], A, batch=nx)
        ls, gpz, gaz = fidelity_loss(taps[l][nx:], teacher_z[l], A, batch=B)
        br.fidelity_target += lt
        br.fidelity_search += ls
        tap_grads[l][:nx] += config.lambda_fid * gpx
        tap_grads[l][nx:] += config.lambda_fid * gpz
        adapter_grads[l] = config.lambda_fid * (gax + gaz)
    grads, _ = backward(spec, weights, cache, tap_grads, need_input_grad=False)
    for l, g in adapter_grads.items():
        grads.adapters[l] = g
    br.decay = weights.sq_norm()
    grads = grads.zip_map(weights, lambda g, w: g + 2.0 * config.weight_decay * w)
    return br, grads


def offline_loss(pairs, spec, weights, teacher, config, teacher_taps=None, windows=None):
    """Tracking + lambda_fid * fidelity + weight_decay * ||weights||^2 over a mini-batch of pairs.

    Both branches run through the same weights; their gradients add up.
    Returns ``(LossBreakdown, grads)``.
    """
    if teacher_taps is None:
        tx = teacher.taps(np.stack([p.x for p in pairs]), config.fidelity_levels)
        tz = teacher.taps(np.stack([p.z for p in pairs]), config.fidelity_levels)
    else:
        tx, tz = teacher_taps
    windows = windows or Windows.for_spec(spec, config.window)
    targets = []
    for p in pairs:
        _, t = pair_labels(spec, p.target_size, p.offset, config.sigma_factor)
        targets.append(t)
    return _objective(spec, weights, [p.x for p in pairs], [p.z for p in pairs], [p.target_size for p in pairs],
                      targets, tx, tz, config, windows)


class NonFiniteGradient(FloatingPointError):
    pass


def sgd_step(weights, grads, velocity, config, epoch, lr=None):
    """``v <- m v - lr g``; ``w <- w + v``. Returns ``(new_weights, new_velocity)``."""
    if not grads.all_finite():
        raise NonFiniteGradient("non-finite gradient; step rejected")
    lr = config.lr(epoch) if lr is None else lr
    if velocity is None:
        velocity = weights.zeros_like()
    v = velocity.zip_map(grads, lambda v, g: config.momentum * v - lr * g)
    return weights.zip_map(v, lambda w, dv: w + dv), v


@dataclass
class TrainResult:
    spec: object
    weights: NetworkWeights  # includes adapters
    records: list
    history: list = field(default_factory=list)  # per-epoch mean LossBreakdown
    initial: LossBreakdown | None = None
    final: LossBreakdown | None = None
    diverged: bool = False


def _teacher_taps(teacher, pairs, levels, chunk=64):
    tx = {l: [] for l in levels}
    tz = {l: [] for l in levels}
    for i in range(0, len(pairs), chunk):
        part = pairs[i:i + chunk]
        a = teacher.taps(np.stack([p.x for p in part]), levels)
        b = teacher.taps(np.stack([p.z for p in part]), levels)
        for l in levels:
            tx[l].append(a[l])
            tz[l].append(b[l])
    return {l: np.concatenate(v) for l, v in tx.items()}, {l: np.concatenate(v) for l, v in tz.items()}


def evaluate(pairs, spec, weights, teacher, config, teacher_taps=None, windows=None):
    """Dataset-level loss: mini-batch breakdowns averaged with weights proportional to batch size."""
    tx, tz = teacher_taps or _teacher_taps(teacher, pairs, config.fidelity_levels)
    windows = windows or Windows.for_spec(spec, config.window)
    total = LossBreakdown(lambda_fid=config.lambda_fid, decay_weight=config.weight_decay)
    n = len(pairs)
    for i in range(0, n, config.batch_size):
        idx = list(range(i, min(i + config.batch_size, n)))
        br, _ = offline_loss([pairs[j] for j in idx], spec, weights, teacher, config,
                             ({l: tx[l][idx] for l in tx}, {l: tz[l][idx] for l in tz}), windows)
        total += br.scaled(len(idx) / n)
    return total


def init_student(teacher, config, pairs=None):
    """Pruned student plus one adapter per fidelity level.

    ``adapter_init``: ``embed`` maps each student channel onto the teacher
    channel it was cut from; ``zero`` starts from the zero map; ``lstsq`` fits
    the adapter to the teacher on the templates of ``pairs`` in closed form.
    """
    spec, weights, records = prune_init(teacher.spec, teacher.weights, config.keep_fraction, config.seed)
    for l in config.fidelity_levels:
        if config.adapter_init == "embed":
            weights.adapters[l] = embedding_adapter(records, spec, teacher.spec, l)
        elif config.adapter_init == "zero":
            weights.adapters[l] = np.zeros((teacher.spec.tap_shape(l)[2], spec.tap_shape(l)[2]))
        elif config.adapter_init == "lstsq":
            if not pairs:
                raise ValueError("lstsq adapter init needs training pairs")
            xs = np.stack([p.x for p in pairs])
            stu = forward_taps(spec, weights, xs)[0][l].reshape(-1, spec.tap_shape(l)[2])
            tea = teacher.taps(xs, (l,))[l].reshape(-1, teacher.spec.tap_shape(l)[2])
            weights.adapters[l] = np.linalg.lstsq(stu, tea, rcond=None)[0].T
        else:
            raise ValueError(f"unknown adapter_init {config.adapter_init!r}")
    return spec, weights, records


def train_offline(pairs, teacher, config, student=None):
    """Distil a pruned student from ``teacher`` on ``pairs``.

    Every epoch visits the pairs in a seeded shuffled order. Stops early
    (``diverged=True``) if a loss or gradient turns non-finite.
    """
    if not pairs:
        raise ValueError("empty training set")
    spec, weights, records = student if student is not None else init_student(teacher, config, pairs)
    rng = np.random.default_rng(config.seed)
    tx, tz = _teacher_taps(teacher, pairs, config.fidelity_levels)
    windows = Windows.for_spec(spec, config.window)
    result = TrainResult(spec, weights, records)
    result.initial = evaluate(pairs, spec, weights, teacher, config, (tx, tz), windows)
    velocity = None
    n = len(pairs)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = LossBreakdown(lambda_fid=config.lambda_fid, decay_weight=config.weight_decay)
        for i in range(0, n, config.batch_size):
            idx = order[i:i + config.batch_size]
            try:
                br, grads = offline_loss([pairs[j] for j in idx], spec, weights, teacher, config,
                                         ({l: tx[l][idx] for l in tx}, {l: tz[l][idx] for l in tz}), windows)
                if not np.isfinite(br.total):
                    raise NonFiniteGradient("non-finite loss")
                weights, velocity = sgd_step(weights, grads, velocity, config, epoch)
            except NonFiniteGradient as e:
                result.diverged = True
                log.error("epoch %d: %s; aborting", epoch, e)
                break
            epoch_loss += br.scaled(len(idx) / n)
        result.history.append(epoch_loss)
        log.info("epoch %d lr %.2e total %.6f tracking %.6f fidelity %.3f", epoch, config.lr(epoch),
                 epoch_loss.total, epoch_loss.tracking_total, epoch_loss.fidelity)
        if result.diverged:
            break
    result.weights = weights
    if result.diverged:
        return result
    result.final = evaluate(pairs, spec, weights, teacher, config, (tx, tz), windows)
    return result


def write_history(path, result):
    """CSV ``epoch,tracking,fidelity,decay,total``; epoch 0 is the pruned initialisation."""
    rows = [(0, result.initial)] + [(i + 1, h) for i, h in enumerate(result.history)]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "tracking", "fidelity", "decay", "total"])
        for e, br in rows:
            w.writerow([e, repr(br.tracking_total), repr(br.fidelity), repr(br.decay), repr(br.total)])
