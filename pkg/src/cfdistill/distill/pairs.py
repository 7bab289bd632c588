from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..imaging import box_center, crop_side, crop_square


@dataclass(frozen=True)
class CropConfig:
    out_size: int = 64
    padding: float = 2.0
    max_gap: int = 10
    jitter: float = 0.15  # fraction of crop side


@dataclass(frozen=True)
class TrainingPair:
    """Target patch ``x`` and search patch ``z`` (network-input pixels).

    ``offset`` is the target centre in ``z`` minus the patch centre, in
    network-input pixels (row, col); ``target_size`` is the target's (h, w)
    in ``x``.
    """

    x: np.ndarray
    z: np.ndarray
    offset: tuple[float, float]
    target_size: tuple[float, float]


def sample_pair(seq, gap=None, crop=None, seed=0, jitter_px=None, start=None):
    """Crop a training pair from ``seq``.

    ``gap`` / ``start`` / ``jitter_px`` override the random choices (``jitter_px``
    is the crop-centre shift in frame pixels, (dy, dx)). Returns ``None`` when
    either box is degenerate (side < 2 px).
    """
    crop = crop or CropConfig()
    rng = np.random.default_rng(seed)
    n = len(seq)
    if gap is None:
        gap = int(rng.integers(0, crop.max_gap + 1))
    gap = min(gap, n - 1)
    if start is None:
        start = int(rng.integers(0, n - gap))
    b0, b1 = seq.boxes[start], seq.boxes[start + gap]
    if min(b0[2], b0[3], b1[2], b1[3]) < 2:
        return None
    side0 = crop_side(b0, crop.padding)
    side1 = crop_side(b1, crop.padding)
    if jitter_px is None:
        jitter_px = tuple(rng.uniform(-crop.jitter, crop.jitter, size=2) * side1)
    x = crop_square(seq.frame(start), box_center(b0), side0, crop.out_size)
    c1 = box_center(b1)
    zc = (c1[0] + jitter_px[0], c1[1] + jitter_px[1])
    z = crop_square(seq.frame(start + gap), zc, side1, crop.out_size)
    s = crop.out_size / side1
    offset = (-jitter_px[0] * s, -jitter_px[1] * s)
    scale0 = crop.out_size / side0
    return TrainingPair(x, z, offset, (b0[3] * scale0, b0[2] * scale0))


def sample_pairs(sequences, count, crop=None, seed=0):
    """``count`` pairs drawn round-robin from ``sequences`` with per-pair seeds."""
    rng = np.random.default_rng(seed)
    out = []
    attempts = 0
    while len(out) < count:
        seq = sequences[attempts % len(sequences)]
        p = sample_pair(seq, crop=crop, seed=int(rng.integers(0, 2**32)))
        attempts += 1
        if p is not None:
            out.append(p)
        if attempts > 10 * count + 10:
            raise ValueError("could not draw enough valid pairs (degenerate boxes?)")
    return out
