"""Plain multi-level correlation-filter tracker on network features.

One filter per selected tap. Responses of coarser taps are resampled onto the
finest selected grid (circularly, since they are in the wrapped layout) and
summed with the fusion weights. A three-scale pyramid with a penalty on the
off-unity scales handles size changes.
"""
from __future__ import annotations

import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from .adapt import AdaptConfig, adapt_online
from .distill.train import level_sigma
from .imaging import box_center, crop_side, crop_square
from .nnet import LEVELS, forward_taps
from .spectral import (argmax_first, cosine_window, decode_offset, detect_cf, gaussian_label, subcell_peak,
                       train_cf, update_cf)

DEFAULT_FUSION = {"low": 0.25, "middle": 0.25, "high": 0.5}


@dataclass(frozen=True)
class TrackerConfig:
    level: str = "fused"  # low | middle | high | fused
    fusion: dict = field(default_factory=lambda: dict(DEFAULT_FUSION))
    padding: float = 2.5
    update_rate: float = 0.01
    scales: tuple[float, ...] = (0.985, 1.0, 1.015)
    scale_penalty: float = 0.975
    lambda_cf: float = 1e-4
    sigma_factor: float = 0.1
    window: bool = True
    min_visible: float = 0.5  # per axis, so at least a quarter of the box stays in frame

    def __post_init__(self):
        if self.level not in LEVELS + ("fused",):
            raise ValueError(f"unknown level {self.level!r}")
        w = self.weights()
        if any(v < 0 for v in w.values()) or abs(sum(w.values()) - 1.0) > 1e-9:
            raise ValueError(f"fusion weights must be >= 0 and sum to 1, got {w}")
        if not 0.0 <= self.update_rate <= 1.0:
            raise ValueError(f"update_rate must be in [0, 1], got {self.update_rate}")
        if not 0.0 < self.min_visible <= 1.0:
            raise ValueError(f"min_visible must be in (0, 1], got {self.min_visible}")
        if 1.0 not in self.scales:
            raise ValueError("scale set must contain 1.0")

    def levels(self):
        return LEVELS if self.level == "fused" else (self.level,)

    def weights(self):
        if self.level != "fused":
            return {self.level: 1.0}
        return {l: float(self.fusion.get(l, 0.0)) for l in LEVELS}


class FeatureNet:
    """Tap extractor around (spec, weights) that keeps a running feature-time total."""

    def __init__(self, spec, weights):
        self.spec = spec
        self.weights = weights
        self.feat_seconds = 0.0
        self.calls = 0

    @property
    def out_size(self):
        return self.spec.input_shape[0]

    def taps(self, patches, levels=LEVELS):
        t0 = time.perf_counter()
        out, _ = forward_taps(self.spec, self.weights, np.asarray(patches))
        self.feat_seconds += time.perf_counter() - t0
        self.calls += 1
        return {l: out[l] for l in levels}


def extract_patch(frame, box, padding, out_size):
    """Mean-subtracted square crop of side ``padding * sqrt(w h)`` around the box centre."""
    if not (box[2] > 0 and box[3] > 0):
        raise ValueError(f"box must have positive area, got {tuple(box)}")
    return crop_square(frame, box_center(box), crop_side(box, padding), out_size)


def _interp_matrix(n_out, n_in, ratio):
    """Rows map wrapped output cells to a linear blend of wrapped input cells at ``offset * ratio``."""
    m = np.zeros((n_out, n_in))
    for j in range(n_out):
        p = decode_offset(j, n_out) * ratio
        k = int(np.floor(p))
        f = p - k
        m[j, k % n_in] += 1.0 - f
        m[j, (k + 1) % n_in] += f
    return m


def resample_wrapped(resp, out_shape, ratio):
    """Circular bilinear resampling; ``ratio`` = output stride / input stride."""
    h, w = resp.shape
    if (h, w) == tuple(out_shape) and ratio == 1:
        return resp
    return _interp_matrix(out_shape[0], h, ratio) @ resp @ _interp_matrix(out_shape[1], w, ratio).T


def fuse_responses(responses, spec, weights):
    """Weighted sum of per-level responses on the grid of the finest level present."""
    levels = [l for l in LEVELS if l in responses]
    finest = min(levels, key=spec.tap_stride)
    shape = responses[finest].shape
    s0 = spec.tap_stride(finest)
    out = np.zeros(shape)
    for l in levels:
        out += weights[l] * resample_wrapped(responses[l], shape, s0 / spec.tap_stride(l))
    return out, s0


@dataclass
class TrackerState:
    box: np.ndarray  # x, y, w, h
    filters: dict
    windows: dict
    labels: dict
    net: FeatureNet
    config: TrackerConfig
    frame_shape: tuple
    frames: int = 1
    warnings: list = field(default_factory=list)


def _train_filters(net, config, frame, box, windows, labels):
    patch = extract_patch(frame, box, config.padding, net.out_size)
    taps = net.taps(patch[None], config.levels())
    return {l: train_cf(taps[l][0] * windows[l], labels[l], config.lambda_cf) for l in config.levels()}


def tracker_init(frame, box, net, config=None, adapt=False, teacher=None, adapt_config=None):
    config = config or TrackerConfig()
    box = np.asarray(box, dtype=np.float64)
    warnings = []
    if adapt:
        res = adapt_online(net.spec, net.weights, teacher, frame, box, adapt_config or AdaptConfig())
        warnings.extend(res.warnings)
        net = FeatureNet(net.spec, res.weights)
    spec = net.spec
    scale = net.out_size / crop_side(box, config.padding)
    tsize = (box[3] * scale, box[2] * scale)
    windows, labels = {}, {}
    for l in config.levels():
        h, w, _ = spec.tap_shape(l)
        windows[l] = cosine_window(h, w) if config.window and h >= 2 and w >= 2 else np.ones((h, w, 1))
        labels[l] = gaussian_label(h, w, level_sigma(spec, l, tsize, config.sigma_factor))
    filters = _train_filters(net, config, frame, box, windows, labels)
    return TrackerState(box, filters, windows, labels, net, config, np.asarray(frame).shape[:2], 1, warnings)


def _clamp(box, frame_hw, min_visible):
    H, W = frame_hw
    x, y, w, h = box
    # a side longer than frame / min_visible could never show the required fraction
    w = float(np.clip(w, 2.0, W / min_visible))
    h = float(np.clip(h, 2.0, H / min_visible))
    x = float(np.clip(x, -(1 - min_visible) * w, W - min_visible * w))
    y = float(np.clip(y, -(1 - min_visible) * h, H - min_visible * h))
    return np.array([x, y, w, h])


def tracker_update(state, frame):
    """Locate the target in ``frame``; returns ``(state, box, diagnostics)``. ``state`` is updated in place."""
    cfg = state.config
    net = state.net
    spec = net.spec
    base_side = crop_side(state.box, cfg.padding)
    cy, cx = box_center(state.box)
    patches = np.stack([crop_square(frame, (cy, cx), base_side * s, net.out_size) for s in cfg.scales])
    taps = net.taps(patches, cfg.levels())
    weights = cfg.weights()
    best = None
    for i, s in enumerate(cfg.scales):
        resp = {l: detect_cf(state.filters[l], taps[l][i] * state.windows[l]).response[:, :, 0]
                for l in cfg.levels()}
        fused, stride = fuse_responses(resp, spec, weights)
        r, c = argmax_first(fused)
        peak = float(fused[r, c])
        score = peak * (1.0 if s == 1.0 else cfg.scale_penalty)
        if best is None or score > best[0]:
            best = (score, s, fused, r, c, peak, stride)
    _, s, fused, r, c, peak, stride = best
    diag = {"peak": peak, "scale": s, "zero_response": not np.any(fused)}
    if diag["zero_response"]:
        diag["offset_px"] = (0.0, 0.0)
        state.frames += 1
        return state, state.box.copy(), diag
    h, w = fused.shape
    rr, cc = subcell_peak(fused, r, c)
    dr = decode_offset(r, h) + (rr - r)
    dc = decode_offset(c, w) + (cc - c)
    px = stride * base_side * s / net.out_size
    dy, dx = dr * px, dc * px
    nw, nh = state.box[2] * s, state.box[3] * s
    new_box = np.array([cx + dx - nw / 2, cy + dy - nh / 2, nw, nh])
    new_box = _clamp(new_box, np.asarray(frame).shape[:2], cfg.min_visible)
    diag["offset_px"] = (dy, dx)
    if cfg.update_rate > 0:
        fresh = _train_filters(net, cfg, frame, new_box, state.windows, state.labels)
        state.filters = {l: update_cf(state.filters[l], fresh[l], cfg.update_rate) for l in state.filters}
    state.box = new_box
    state.frames += 1
    return state, new_box.copy(), diag


def track_sequence(seq, net, config=None, adapt=False, teacher=None, adapt_config=None):
    """Initialise on the first ground-truth box and track to the end.

    Returns ``(boxes, diagnostics, seconds, final state)`` where ``seconds``
    is tracking wall time excluding frame decoding.
    """
    frame0 = seq.frame(0)
    t0 = time.perf_counter()
    state = tracker_init(frame0, seq.boxes[0], net, config, adapt, teacher, adapt_config)
    elapsed = time.perf_counter() - t0
    boxes, diags = [seq.boxes[0].copy()], [{}]
    for i in range(1, len(seq)):
        frame = seq.frame(i)
        t0 = time.perf_counter()
        state, box, d = tracker_update(state, frame)
        elapsed += time.perf_counter() - t0
        boxes.append(box)
        diags.append(d)
    return np.array(boxes), diags, elapsed, state


def write_trajectory(path, boxes):
    """One ``x,y,w,h`` line per frame, written to a temporary file and renamed into place."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".traj-")
    try:
        with os.fdopen(fd, "w") as f:
            for b in boxes:
                f.write(",".join(f"{float(v):.4f}" for v in b) + "\n")
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise
