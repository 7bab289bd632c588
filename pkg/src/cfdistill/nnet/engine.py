"""Small conv / ReLU / max-pool network with exact backward passes.

Activations are laid out ``(N, H, W, C)``; conv kernels are ``(out, in, K, K)``.
Everything runs in float64.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LEVELS = ("low", "middle", "high")


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" | "relu" | "maxpool"
    kernel: int = 1
    stride: int = 1
    pad: int = 0
    in_channels: int = 0
    out_channels: int = 0
    has_bias: bool = True
    window: int = 2

    @classmethod
    def conv(cls, in_channels, out_channels, kernel, stride=1, pad=0, has_bias=True):
        return cls("conv", kernel=kernel, stride=stride, pad=pad, in_channels=in_channels,
                   out_channels=out_channels, has_bias=has_bias)

    @classmethod
    def relu(cls):
        return cls("relu")

    @classmethod
    def maxpool(cls, window=2, stride=2):
        return cls("maxpool", window=window, stride=stride)

    def output_shape(self, h, w, c):
        if self.kind == "conv":
            if c != self.in_channels:
                raise ValueError(f"conv expects {self.in_channels} input channels, got {c}")
            ho = (h + 2 * self.pad - self.kernel) // self.stride + 1
            wo = (w + 2 * self.pad - self.kernel) // self.stride + 1
            return ho, wo, self.out_channels
        if self.kind == "maxpool":
            return (h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1, c
        if self.kind == "relu":
            return h, w, c
        raise ValueError(f"unknown layer kind {self.kind!r}")

    def to_dict(self):
        if self.kind == "conv":
            return {"kind": "conv", "kernel": self.kernel, "stride": self.stride, "pad": self.pad,
                    "in_channels": self.in_channels, "out_channels": self.out_channels,
                    "has_bias": self.has_bias}
        if self.kind == "maxpool":
            return {"kind": "maxpool", "window": self.window, "stride": self.stride}
        return {"kind": self.kind}

    @classmethod
    def from_dict(cls, d):
        kind = d["kind"]
        if kind == "conv":
            return cls.conv(int(d["in_channels"]), int(d["out_channels"]), int(d["kernel"]),
                            int(d.get("stride", 1)), int(d.get("pad", 0)), bool(d.get("has_bias", True)))
        if kind == "maxpool":
            return cls.maxpool(int(d.get("window", 2)), int(d.get("stride", 2)))
        if kind == "relu":
            return cls.relu()
        raise ValueError(f"unknown layer kind {kind!r}")


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]
    taps: dict[str, int] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        self.validate()

    def validate(self):
        for i, l in enumerate(self.layers):
            if l.kind == "conv" and (l.kernel < 1 or l.stride < 1 or l.pad < 0 or l.out_channels < 1):
                raise ValueError(f"layer {i}: invalid conv parameters {l}")
            if l.kind == "maxpool" and (l.window < 1 or l.stride < 1):
                raise ValueError(f"layer {i}: invalid pool parameters {l}")
        shapes = self.shapes()
        for i, s in enumerate(shapes):
            if min(s) < 1:
                raise ValueError(f"layer {i} ({self.layers[i].kind}): output shape {s} is empty")
        idx = [self.taps[k] for k in LEVELS if k in self.taps]
        if any(not 0 <= t < len(self.layers) for t in self.taps.values()):
            raise ValueError(f"tap index out of range: {self.taps}")
        if idx != sorted(set(idx)):
            raise ValueError(f"taps must be strictly increasing low < middle < high: {self.taps}")

    def shapes(self):
        """Output (H, W, C) of every layer."""
        out = []
        h, w, c = self.input_shape
        for i, l in enumerate(self.layers):
            try:
                h, w, c = l.output_shape(h, w, c)
            except ValueError as e:
                raise ValueError(f"layer {i}: {e}") from None
            out.append((h, w, c))
        return out

    @property
    def conv_indices(self):
        return [i for i, l in enumerate(self.layers) if l.kind == "conv"]

    def tap_shape(self, name):
        return self.shapes()[self.taps[name]]

    def tap_stride(self, name):
        """Input pixels per cell of a tap."""
        s = 1
        for l in self.layers[: self.taps[name] + 1]:
            if l.kind in ("conv", "maxpool"):
                s *= l.stride
        return s

    def to_dict(self):
        return {"name": self.name, "input": list(self.input_shape),
                "layers": [l.to_dict() for l in self.layers], "taps": dict(self.taps)}

    @classmethod
    def from_dict(cls, d):
        return cls(layers=tuple(LayerSpec.from_dict(l) for l in d["layers"]),
                   input_shape=tuple(d["input"]), taps={k: int(v) for k, v in d.get("taps", {}).items()},
                   name=d.get("name", ""))

    def with_channels(self, channels):
        """Copy with conv ``out_channels`` replaced in order (input channels follow)."""
        layers = []
        cin = self.input_shape[2]
        it = iter(channels)
        for l in self.layers:
            if l.kind == "conv":
                cout = next(it)
                layers.append(replace(l, in_channels=cin, out_channels=cout))
                cin = cout
            else:
                layers.append(l)
        return replace(self, layers=tuple(layers))


@dataclass
class NetworkWeights:
    """Conv kernels and biases keyed by layer index, plus optional 1x1 adapters keyed by tap name.

    An adapter is a ``(teacher_channels, student_channels)`` matrix, i.e. a
    bias-free 1x1 convolution. Instances are treated as immutable snapshots.
    """

    kernels: dict[int, np.ndarray]
    biases: dict[int, np.ndarray] = field(default_factory=dict)
    adapters: dict[str, np.ndarray] = field(default_factory=dict)

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        for i in sorted(self.kernels):
            yield f"conv{i}.weight", self.kernels[i]
            if i in self.biases:
                yield f"conv{i}.bias", self.biases[i]
        for k in LEVELS:
            if k in self.adapters:
                yield f"adapter.{k}", self.adapters[k]

    def map(self, fn):
        return NetworkWeights({i: fn(v) for i, v in self.kernels.items()},
                              {i: fn(v) for i, v in self.biases.items()},
                              {k: fn(v) for k, v in self.adapters.items()})

    def zip_map(self, other, fn):
        return NetworkWeights({i: fn(v, other.kernels[i]) for i, v in self.kernels.items()},
                              {i: fn(v, other.biases[i]) for i, v in self.biases.items()},
                              {k: fn(v, other.adapters[k]) for k, v in self.adapters.items()})

    def copy(self):
        return self.map(np.copy)

    def zeros_like(self):
        return self.map(np.zeros_like)

    def sq_norm(self):
        return float(sum(np.sum(a * a) for _, a in self.named_arrays()))

    def all_finite(self):
        return all(np.all(np.isfinite(a)) for _, a in self.named_arrays())

    def without_adapters(self):
        return NetworkWeights(dict(self.kernels), dict(self.biases), {})

    def equal(self, other):
        a = dict(self.named_arrays())
        b = dict(other.named_arrays())
        return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def check_weights(spec, weights):
    for i in spec.conv_indices:
        l = spec.layers[i]
        if i not in weights.kernels:
            raise ValueError(f"layer {i}: missing conv kernel")
        want = (l.out_channels, l.in_channels, l.kernel, l.kernel)
        if weights.kernels[i].shape != want:
            raise ValueError(f"layer {i}: kernel shape {weights.kernels[i].shape}, expected {want}")
        if l.has_bias and (i not in weights.biases or weights.biases[i].shape != (l.out_channels,)):
            raise ValueError(f"layer {i}: bias missing or mis-shaped, expected ({l.out_channels},)")
    extra = set(weights.kernels) - set(spec.conv_indices)
    if extra:
        raise ValueError(f"layer {min(extra)}: kernel given for a non-conv layer")


def init_weights(spec, seed=0):
    """He-normal kernels, zero biases."""
    rng = np.random.default_rng(seed)
    kernels, biases = {}, {}
    for i in spec.conv_indices:
        l = spec.layers[i]
        fan_in = l.in_channels * l.kernel * l.kernel
        kernels[i] = rng.standard_normal((l.out_channels, l.in_channels, l.kernel, l.kernel)) * np.sqrt(2.0 / fan_in)
        if l.has_bias:
            biases[i] = np.zeros(l.out_channels)
    return NetworkWeights(kernels, biases)


# --- layer primitives ---

def _conv_forward(x, kernel, bias, stride, pad):
    n, h, w, c = x.shape
    cout, cin, k, _ = kernel.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.reshape(n * ho * wo, cin * k * k)  # channel-major, then kernel row, then column
    out = cols @ kernel.reshape(cout, -1).T
    if bias is not None:
        out += bias
    return out.reshape(n, ho, wo, cout), cols


def _conv_backward(dout, cols, x_shape, kernel, stride, pad, need_dx=True):
    n, h, w, c = x_shape
    cout, cin, k, _ = kernel.shape
    _, ho, wo, _ = dout.shape
    dflat = dout.reshape(-1, cout)
    dk = (dflat.T @ cols).reshape(kernel.shape)
    db = dflat.sum(axis=0)
    if not need_dx:
        return None, dk, db
    dcols = (dflat @ kernel.reshape(cout, -1)).reshape(n, ho, wo, cin, k, k)
    dxp = np.zeros((n, h + 2 * pad, w + 2 * pad, c))
    for u in range(k):
        for v in range(k):
            dxp[:, u:u + stride * (ho - 1) + 1:stride, v:v + stride * (wo - 1) + 1:stride, :] += dcols[..., u, v]
    dx = dxp[:, pad:pad + h, pad:pad + w, :] if pad else dxp
    return dx, dk, db


def _pool_forward(x, window, stride):
    n, h, w, c = x.shape
    ho = (h - window) // stride + 1
    wo = (w - window) // stride + 1
    best = None
    arg = np.zeros((n, ho, wo, c), dtype=np.int32)
    for u in range(window):
        for v in range(window):
            s = x[:, u:u + stride * (ho - 1) + 1:stride, v:v + stride * (wo - 1) + 1:stride, :]
            if best is None:
                best = s.copy()
            else:
                upd = s > best  # strict: ties keep the first cell in scan order
                best = np.where(upd, s, best)
                arg = np.where(upd, u * window + v, arg)
    return best, arg


def _pool_backward(dout, arg, x_shape, window, stride):
    _, ho, wo, _ = dout.shape
    dx = np.zeros(x_shape)
    for u in range(window):
        for v in range(window):
            dx[:, u:u + stride * (ho - 1) + 1:stride, v:v + stride * (wo - 1) + 1:stride, :] += \
                np.where(arg == u * window + v, dout, 0.0)
    return dx


@dataclass
class ForwardCache:
    batched: bool
    entries: list  # per executed layer: (input shape, output shape, saved tensor)


def forward_taps(spec, weights, x, stop_at=None):
    """Run the network and return ``(taps, cache)``.

    ``x`` is ``(H, W, C)`` or ``(N, H, W, C)``; taps come back with the same
    rank. The network stops after the last tap (or ``stop_at``).
    """
    a = np.asarray(x, dtype=np.float64)
    batched = a.ndim == 4
    if not batched:
        a = a[None]
    if a.ndim != 4 or a.shape[1:] != spec.input_shape:
        raise ValueError(f"layer 0: input shape {a.shape[1:] if a.ndim == 4 else a.shape} "
                         f"does not match network input {spec.input_shape}")
    last = max(spec.taps.values()) if stop_at is None else stop_at
    tap_at = {v: k for k, v in spec.taps.items()}
    taps = {}
    entries = []
    for i, l in enumerate(spec.layers[: last + 1]):
        if l.kind == "conv":
            k = weights.kernels[i]
            if k.shape[1] != a.shape[3]:
                raise ValueError(f"layer {i}: kernel expects {k.shape[1]} channels, activation has {a.shape[3]}")
            out, cols = _conv_forward(a, k, weights.biases.get(i), l.stride, l.pad)
            entries.append((a.shape, out.shape, cols))
        elif l.kind == "relu":
            out = np.maximum(a, 0.0)
            entries.append((a.shape, out.shape, a > 0))
        elif l.kind == "maxpool":
            out, arg = _pool_forward(a, l.window, l.stride)
            entries.append((a.shape, out.shape, arg))
        else:
            raise ValueError(f"layer {i}: unknown kind {l.kind!r}")
        a = out
        if i in tap_at:
            taps[tap_at[i]] = a if batched else a[0]
    return taps, ForwardCache(batched, entries)


def backward(spec, weights, cache, tap_grads, need_input_grad=True):
    """Gradients of a scalar loss given its gradients w.r.t. the tap outputs.

    Returns ``(weight_grads, input_grad)``; adapters are not touched here.
    """
    if cache is None or not cache.entries:
        raise ValueError("backward needs the cache returned by forward_taps")
    tap_at = {v: k for k, v in spec.taps.items()}
    kgrads = {i: np.zeros_like(weights.kernels[i]) for i in weights.kernels}
    bgrads = {i: np.zeros_like(weights.biases[i]) for i in weights.biases}
    g = None
    for i in range(len(cache.entries) - 1, -1, -1):
        l = spec.layers[i]
        if i in tap_at and tap_at[i] in tap_grads and tap_grads[tap_at[i]] is not None:
            tg = np.asarray(tap_grads[tap_at[i]], dtype=np.float64)
            if not cache.batched:
                tg = tg[None]
            want = cache.entries[i][1]
            if tg.shape != want:
                raise ValueError(f"tap {tap_at[i]!r}: gradient shape {tg.shape} does not match output {want}")
            g = tg.copy() if g is None else g + tg
        if g is None:
            continue
        in_shape, _, saved = cache.entries[i]
        if l.kind == "conv":
            need_dx = need_input_grad or i > 0
            g, dk, db = _conv_backward(g, saved, in_shape, weights.kernels[i], l.stride, l.pad, need_dx)
            kgrads[i] = dk
            if i in bgrads:
                bgrads[i] = db
        elif l.kind == "relu":
            g = g * saved
        elif l.kind == "maxpool":
            g = _pool_backward(g, saved, in_shape, l.window, l.stride)
    if g is None:
        g = np.zeros(cache.entries[0][0])
    grads = NetworkWeights(kgrads, bgrads, {k: np.zeros_like(v) for k, v in weights.adapters.items()})
    if not cache.batched:
        g = g[0]
    return grads, g


def apply_adapter(adapter, feats):
    """1x1 convolution: ``(..., C_student) -> (..., C_teacher)``."""
    return feats @ adapter.T
