"""FLOPs and parameter counts.

Per conv layer ``FLOPs = (C_in * K^2 + 1) * H_out * W_out * C_out``; the +1 is
always counted, with or without a bias. ReLU and pooling count zero.
"""
from dataclasses import dataclass


@dataclass(frozen=True)
class LayerCount:
    index: int
    kind: str
    in_channels: int
    kernel: int
    out_h: int
    out_w: int
    out_channels: int
    flops: int
    weights: int
    biases: int


@dataclass(frozen=True)
class FlopsReport:
    name: str
    layers: tuple[LayerCount, ...]

    @property
    def total_flops(self):
        return sum(l.flops for l in self.layers)

    @property
    def total_weights(self):
        return sum(l.weights for l in self.layers)

    @property
    def total_biases(self):
        return sum(l.biases for l in self.layers)

    @property
    def total_params(self):
        return self.total_weights + self.total_biases

    def ratios(self, reference):
        """reference / self for FLOPs, conv weights and all parameters."""
        def div(a, b):
            return a / b if b else float("inf")

        return {
            "flops": div(reference.total_flops, self.total_flops),
            "weights": div(reference.total_weights, self.total_weights),
            "params": div(reference.total_params, self.total_params),
        }


def count_flops(spec):
    rows = []
    for i, (l, (h, w, c)) in enumerate(zip(spec.layers, spec.shapes())):
        if l.kind == "conv":
            k = l.kernel
            rows.append(LayerCount(i, "conv", l.in_channels, k, h, w, c,
                                   flops=(l.in_channels * k * k + 1) * h * w * c,
                                   weights=k * k * l.in_channels * c,
                                   biases=c if l.has_bias else 0))
        else:
            rows.append(LayerCount(i, l.kind, c, 0, h, w, c, 0, 0, 0))
    return FlopsReport(spec.name, tuple(rows))


@dataclass(frozen=True)
class ParamCount:
    weights: int
    biases: int
    ratio: float | None = None  # conv-weight ratio reference / self

    @property
    def total(self):
        return self.weights + self.biases


def count_params(spec, reference=None):
    rep = count_flops(spec)
    ratio = None
    if reference is not None:
        ref = count_flops(reference)
        ratio = ref.total_weights / rep.total_weights if rep.total_weights else float("inf")
    return ParamCount(rep.total_weights, rep.total_biases, ratio)
