from dataclasses import dataclass
from fractions import Fraction
from math import ceil

import numpy as np

from .engine import NetworkWeights
from .profiles import student_spec


@dataclass(frozen=True)
class PruneRecord:
    """Teacher indices kept by each student conv layer."""

    layer: int
    kept_filters: tuple[int, ...]
    kept_inputs: tuple[int, ...]
    exact: bool  # False when out_channels was not divisible and ceil() was used


def prune_init(teacher_spec, teacher_weights, keep_fraction=1 / 8, seed=0):
    """Random filter pruning of every conv layer; returns ``(spec, weights, records)``.

    Layer d keeps a seeded random subset of its filters and only the input
    channels that survived in layer d-1. Kept weights are copied verbatim.
    """
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    rng = np.random.default_rng(seed)
    frac = Fraction(keep_fraction).limit_denominator(1000)
    prev = tuple(range(teacher_spec.input_shape[2]))
    records = []
    kernels, biases = {}, {}
    for i in teacher_spec.conv_indices:
        c = teacher_spec.layers[i].out_channels
        n_keep = ceil(c * frac)
        if n_keep < 1:
            raise ValueError(f"layer {i}: pruning would leave no filters")
        kept = tuple(int(v) for v in np.sort(rng.choice(c, size=n_keep, replace=False)))
        records.append(PruneRecord(i, kept, prev, exact=(c * frac).denominator == 1))
        kernels[i] = teacher_weights.kernels[i][np.ix_(kept, prev)].copy()
        if i in teacher_weights.biases:
            biases[i] = teacher_weights.biases[i][list(kept)].copy()
        prev = kept
    spec = student_spec(teacher_spec, keep_fraction)
    for r in records:
        if len(r.kept_filters) != spec.layers[r.layer].out_channels:
            raise AssertionError(f"layer {r.layer}: pruned width disagrees with student geometry")
    return spec, NetworkWeights(kernels, biases), records


def embedding_adapter(records, spec, teacher_spec, tap="high"):
    """1x1 adapter that places each student channel on the teacher channel it was pruned from."""
    conv_before = max(i for i in spec.conv_indices if i <= spec.taps[tap])
    rec = next(r for r in records if r.layer == conv_before)
    t_ch = teacher_spec.tap_shape(tap)[2]
    a = np.zeros((t_ch, len(rec.kept_filters)))
    for j, f in enumerate(rec.kept_filters):
        a[f, j] = 1.0
    return a
