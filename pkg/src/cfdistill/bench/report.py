"""FLOPs / parameter comparison between two network specs."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

from ..nnet import count_flops


@dataclass
class ModelReport:
    reference: object  # FlopsReport
    model: object  # FlopsReport

    @property
    def ratios(self):
        return self.model.ratios(self.reference)

    def _conv_rows(self):
        ref = {l.index: l for l in self.reference.layers if l.kind == "conv"}
        for l in self.model.layers:
            if l.kind != "conv":
                continue
            r = ref.get(l.index)
            yield (f"conv@{l.index}", f"{l.in_channels}->{l.out_channels}", f"{l.kernel}x{l.kernel}",
                   f"{l.out_h}x{l.out_w}", r.flops if r else "", l.flops, r.weights if r else "", l.weights)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "channels", "kernel", "output", "ref_flops", "flops", "ref_weights", "weights"])
        w.writerows(self._conv_rows())
        w.writerow(["total", "", "", "", self.reference.total_flops, self.model.total_flops,
                    self.reference.total_weights, self.model.total_weights])
        r = self.ratios
        w.writerow(["ratio", "", "", "", "", f"{r['flops']:.4f}", "", f"{r['weights']:.4f}"])
        return buf.getvalue()

    def to_text(self):
        head = ("layer", "channels", "kernel", "output", "ref FLOPs", "FLOPs", "ref weights", "weights")
        rows = [tuple(str(v) for v in r) for r in self._conv_rows()]
        rows.append(("total", "", "", "", f"{self.reference.total_flops:,}", f"{self.model.total_flops:,}",
                     f"{self.reference.total_weights:,}", f"{self.model.total_weights:,}"))
        widths = [max(len(r[i]) for r in rows + [head]) for i in range(len(head))]
        fmt = lambda r: "  ".join(v.rjust(w) for v, w in zip(r, widths))
        lines = [fmt(head), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]
        r = self.ratios
        lines.append(f"compression: FLOPs {r['flops']:.2f}x  conv weights {r['weights']:.2f}x  "
                     f"all params {r['params']:.2f}x")
        return "\n".join(lines) + "\n"


def report_model(reference_spec, spec):
    """Compare ``spec`` against ``reference_spec`` (ratios are reference / model)."""
    return ModelReport(count_flops(reference_spec), count_flops(spec))
