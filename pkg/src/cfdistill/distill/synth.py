"""Seeded synthetic tracking sequences.

A block-textured target moves over a smooth static background with a
bounded random-walk velocity. Optional extras: slow scale drift, look-alike
distractors that never overlap the target, and short-lived occluder bars.
Boxes are integer and pixel-exact.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..imaging import resize_bilinear
from ..sequences import SequenceRecord


@dataclass(frozen=True)
class SynthConfig:
    frame_size: tuple[int, int] = (128, 128)
    target_size: tuple[int, int] = (18, 28)  # side range, pixels
    accel: float = 0.6
    max_speed: float = 2.5
    scale_rate: float = 0.0  # relative size change per frame, <= 0.01
    distractors: int = 0
    occluders: bool = False
    margin: int = 4


SUITE_KINDS = {
    "plain": SynthConfig(),
    "distractor": SynthConfig(distractors=2),
    "occlusion": SynthConfig(occluders=True),
    "scale": SynthConfig(scale_rate=0.008),
}


def _overlaps(a, b):
    return a[0] < b[0] + b[2] and b[0] < a[0] + a[2] and a[1] < b[1] + b[3] and b[1] < a[1] + a[3]


def _background(rng, h, w):
    coarse = rng.random((6, 6, 3))
    bg = resize_bilinear(coarse, h, w) * 0.6 + 0.2
    bg += 0.04 * rng.standard_normal((h, w, 3))
    return bg


def _texture(rng, n=32):
    blocks = rng.random((4, 4, 3))
    tex = np.repeat(np.repeat(blocks, n // 4, axis=0), n // 4, axis=1)
    return np.clip(tex + 0.08 * rng.standard_normal((n, n, 3)), 0, 1)


def _paste(canvas, tex, box):
    x, y, w, h = (int(v) for v in box)
    patch = resize_bilinear(tex, h, w)
    H, W = canvas.shape[:2]
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, W), min(y + h, H)
    if x1 > x0 and y1 > y0:
        canvas[y0:y1, x0:x1] = patch[y0 - y:y1 - y, x0 - x:x1 - x]


def _make_sequence(rng, length, cfg, name):
    H, W = cfg.frame_size
    bg = _background(rng, H, W)
    tex = _texture(rng)
    lo, hi = cfg.target_size
    base_w, base_h = rng.uniform(lo, hi, size=2)
    scale = 1.0
    direction = rng.choice([-1.0, 1.0])
    pos = np.array([rng.uniform(0.35, 0.65) * W, rng.uniform(0.35, 0.65) * H])  # center (x, y)
    vel = rng.normal(0, 1.0, size=2)

    def box_at(center, s):
        w = max(4, int(round(base_w * s)))
        h = max(4, int(round(base_h * s)))
        x = int(round(center[0] - w / 2))
        y = int(round(center[1] - h / 2))
        x = min(max(x, cfg.margin), W - cfg.margin - w)
        y = min(max(y, cfg.margin), H - cfg.margin - h)
        return (x, y, w, h)

    box = box_at(pos, scale)
    # look-alikes: the target texture rotated by 180 degrees with its colour channels permuted
    dtex = [np.rot90(tex, 2)[:, :, list(rng.permutation(3))] for _ in range(cfg.distractors)]
    dboxes = []
    for _ in range(cfg.distractors):
        for _ in range(500):
            cand = (int(rng.integers(cfg.margin, W - cfg.margin - box[2])),
                    int(rng.integers(cfg.margin, H - cfg.margin - box[3])), box[2], box[3])
            if not _overlaps(cand, box) and not any(_overlaps(cand, d) for d in dboxes):
                dboxes.append(cand)
                break
    dvel = [rng.normal(0, 1.0, size=2) for _ in dboxes]
    occl_start = set(range(int(rng.integers(4, 10)), length, 15)) if cfg.occluders else set()
    occl_bar = None

    frames, boxes = [], []
    for t in range(length):
        if t > 0:
            vel = np.clip(vel + rng.normal(0, cfg.accel, size=2), -cfg.max_speed, cfg.max_speed)
            pos = pos + vel
            if cfg.scale_rate:
                if rng.random() < 0.05:
                    direction = -direction
                scale = float(np.clip(scale * (1 + direction * cfg.scale_rate), 0.6, 1.6))
            new_box = box_at(pos, scale)
            # bounce off the margins
            for k, (lo_b, hi_b) in enumerate(((cfg.margin, W - cfg.margin - new_box[2]),
                                              (cfg.margin, H - cfg.margin - new_box[3]))):
                if new_box[k] <= lo_b or new_box[k] >= hi_b:
                    vel[k] = -vel[k]
            pos = np.array([new_box[0] + new_box[2] / 2, new_box[1] + new_box[3] / 2])
            if any(_overlaps(new_box, d) for d in dboxes):
                vel = -vel
                new_box = box_at(np.array([box[0] + box[2] / 2, box[1] + box[3] / 2]), scale)
                if any(_overlaps(new_box, d) for d in dboxes):
                    new_box = box
                pos = np.array([new_box[0] + new_box[2] / 2, new_box[1] + new_box[3] / 2])
            box = new_box
            for j, d in enumerate(dboxes):
                dvel[j] = np.clip(dvel[j] + rng.normal(0, cfg.accel, size=2), -cfg.max_speed, cfg.max_speed)
                nd = (int(round(d[0] + dvel[j][0])), int(round(d[1] + dvel[j][1])), d[2], d[3])
                inside = cfg.margin <= nd[0] <= W - cfg.margin - nd[2] and cfg.margin <= nd[1] <= H - cfg.margin - nd[3]
                clash = _overlaps(nd, box) or any(_overlaps(nd, o) for i, o in enumerate(dboxes) if i != j)
                if inside and not clash:
                    dboxes[j] = nd
                else:
                    dvel[j] = -dvel[j]
        canvas = bg.copy()
        for d, tx in zip(dboxes, dtex):
            _paste(canvas, tx, d)
        _paste(canvas, tex, box)
        if t in occl_start:
            occl_bar = (t + 4, rng.random(3) * 0.5 + 0.25, rng.uniform(0.2, 0.8))
        if occl_bar is not None and t < occl_bar[0]:
            _, colour, frac = occl_bar
            bw = max(2, int(0.4 * box[2]))
            bx = box[0] + int(frac * (box[2] - bw))
            canvas[:, bx:bx + bw] = colour
        frames.append(np.round(np.clip(canvas, 0, 1) * 255).astype(np.uint8))
        boxes.append(box)
    return SequenceRecord(name, frames, np.array(boxes, dtype=np.float64),
                          tags={"distractor_boxes": dboxes, "kind": name.split("-")[0]})


def synth_sequences(count, length, seed=0, config=None, prefix="synth"):
    if count < 1 or length < 1:
        raise ValueError("count and length must be >= 1")
    cfg = config or SynthConfig()
    if not 0 <= cfg.scale_rate <= 0.01:
        raise ValueError("scale_rate must be within [0, 0.01]")
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**32, size=count)
    return [_make_sequence(np.random.default_rng(int(s)), length, cfg, f"{prefix}-{seed}-{i:03d}")
            for i, s in enumerate(seeds)]


def benchmark_suite(seed=0, length=40, per_kind=5):
    """Plain, distractor, occlusion and scale-change sequences, ``per_kind`` each."""
    out = []
    for k, (kind, cfg) in enumerate(SUITE_KINDS.items()):
        out.extend(synth_sequences(per_kind, length, seed=seed * 100 + k + 1, config=cfg, prefix=kind))
    return out
