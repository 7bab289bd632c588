"""Glue between the tracker and the evaluation loop."""
from __future__ import annotations

from dataclasses import dataclass, replace

from ..adapt import AdaptConfig
from ..distill.synth import benchmark_suite
from ..tracker import FeatureNet, TrackerConfig, tracker_init, tracker_update


class FkcfRunner:
    def __init__(self, spec, weights, config, adapt, teacher, adapt_config):
        self.net = FeatureNet(spec, weights)
        self.config = config
        self.adapt = adapt
        self.teacher = teacher
        self.adapt_config = adapt_config
        self.state = None
        self.diagnostics = []

    @property
    def feat_seconds(self):
        return self.state.net.feat_seconds if self.state is not None else self.net.feat_seconds

    def init(self, frame, box):
        self.state = tracker_init(frame, box, self.net, self.config, self.adapt, self.teacher, self.adapt_config)

    def update(self, frame):
        self.state, box, diag = tracker_update(self.state, frame)
        self.diagnostics.append(diag)
        return box


@dataclass
class FkcfFactory:
    """Builds one fresh tracker per sequence; the run seed drives the adaptation sampler."""

    spec: object
    weights: object
    config: TrackerConfig = TrackerConfig()
    adapt: bool = False
    teacher: object = None
    adapt_config: AdaptConfig = AdaptConfig()

    def __call__(self, seq, seed):
        return FkcfRunner(self.spec, self.weights, self.config, self.adapt, self.teacher,
                          replace(self.adapt_config, seed=seed))


def synth_benchmark(seed=0, per_kind=5, length=40):
    """The 20-sequence desk-scale suite: plain, distractor, occlusion and scale-change kinds."""
    return benchmark_suite(seed=seed, length=length, per_kind=per_kind)
