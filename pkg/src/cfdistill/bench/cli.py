"""Command-line entry point: ``cfdistill <command> ...``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from ..adapt import AdaptConfig, adapt_online
from ..distill import Teacher, TrainingConfig, sample_pairs, synth_sequences, train_offline, write_history
from ..nnet import init_weights, load_spec, load_weights, save_weights, student_spec, teacher_spec
from ..sequences import load_sequence
from ..tracker import FeatureNet, TrackerConfig, track_sequence, write_trajectory
from .ope import run_ope
from .report import report_model
from .runners import FkcfFactory, synth_benchmark

log = logging.getLogger("cfdistill")


def default_seed():
    return int(os.environ.get("DT_SEED", "0"))


def load_teacher(source, profile):
    """``random:SEED`` builds a seeded random teacher of ``profile``; anything else is a weight file."""
    if source.startswith("random:"):
        return Teacher.random(teacher_spec(profile), int(source.split(":", 1)[1]))
    spec, w = load_weights(source)
    return Teacher(spec, w.without_adapters())


def load_net(source, profile):
    if source.startswith("random:"):
        t = load_teacher(source, profile)
        return t.spec, t.weights
    return load_weights(source)


def resolve_spec(name):
    """A spec JSON path, or ``PROFILE[:teacher|student]`` such as ``table3:student``."""
    if os.path.exists(name):
        return load_spec(name)
    profile, _, role = name.partition(":")
    t = teacher_spec(profile)
    if role in ("", "teacher"):
        return t
    if role == "student":
        return student_spec(t)
    raise ValueError(f"unknown role {role!r} in {name!r}")


def load_dataset(source, seed, length=40):
    if source.startswith("synth:"):
        n = int(source.split(":", 1)[1])
        if n % 4 == 0:
            return synth_benchmark(seed, per_kind=n // 4, length=length)
        return synth_sequences(n, length, seed=seed)
    dirs = sorted(d for d in os.listdir(source) if os.path.isdir(os.path.join(source, d)))
    if not dirs:
        raise ValueError(f"{source}: no sequence directories")
    return [load_sequence(os.path.join(source, d)) for d in dirs]


def cmd_distill(a):
    teacher = load_teacher(a.teacher, a.profile)
    if a.data.startswith("synth:"):
        seqs = synth_sequences(int(a.data.split(":", 1)[1]), a.length, seed=1000 + a.seed)
    else:
        seqs = load_dataset(a.data, a.seed)
    pairs = sample_pairs(seqs, a.pairs, seed=a.seed)
    cfg = TrainingConfig(epochs=a.epochs, batch_size=a.batch_size, seed=a.seed)
    res = train_offline(pairs, teacher, cfg)
    save_weights(a.out, res.spec, res.weights)
    if a.log:
        write_history(a.log, res)
    print(f"initial total {res.initial.total:.6f}  final total {res.final.total:.6f}  "
          f"fidelity {res.initial.fidelity:.6f} -> {res.final.fidelity:.6f}")
    return 1 if res.diverged else 0


def cmd_adapt(a):
    spec, w = load_weights(a.net)
    teacher = load_teacher(a.teacher, a.profile) if a.teacher else None
    seq = load_sequence(a.sequence)
    cfg = AdaptConfig(iterations=a.iters, lr=a.lr, seed=a.seed)
    res = adapt_online(spec, w, teacher, seq.frame(0), seq.boxes[0], cfg)
    for msg in res.warnings:
        print("warning:", msg, file=sys.stderr)
    save_weights(a.out, spec, res.weights)
    return 1 if res.diverged else 0


def _factory(a, spec, w):
    teacher = load_teacher(a.teacher, a.profile) if a.teacher else None
    return FkcfFactory(spec, w, TrackerConfig(level=a.level), a.adapt, teacher, AdaptConfig(seed=a.seed))


def cmd_track(a):
    spec, w = load_net(a.net, a.profile)
    seq = load_sequence(a.sequence)
    fac = _factory(a, spec, w)
    boxes, _, secs, _ = track_sequence(seq, FeatureNet(spec, w), fac.config, fac.adapt, fac.teacher,
                                       fac.adapt_config)
    write_trajectory(a.out, boxes)
    print(f"{seq.name}: {len(boxes)} frames, {len(boxes) / max(secs, 1e-9):.1f} fps")
    return 0


def cmd_bench(a):
    spec, w = load_net(a.net, a.profile)
    seqs = load_dataset(a.dataset, a.seed)
    rep = run_ope(seqs, _factory(a, spec, w), a.seed)
    rep.write_csv(a.out, timing=not a.no_timing)
    print(f"mean AUC {rep.mean_auc:.4f} over {len(rep.sequences)} sequences")
    return 0


def cmd_flops(a):
    spec = resolve_spec(a.spec)
    ref = resolve_spec(a.ref) if a.ref else spec
    rep = report_model(ref, spec)
    if a.csv:
        with open(a.csv, "w", newline="") as f:
            f.write(rep.to_csv())
    print(rep.to_text(), end="")
    print(f"total FLOPs {rep.model.total_flops}")
    return 0


def cmd_pilot(a):
    from .pilot import record, write_record
    rec, _, _ = record(a.seed)
    write_record(a.out, rec)
    return 0


def cmd_selfcheck(a):
    from .selfcheck import run_all
    return 0 if run_all(seed=a.seed) else 1


def build_parser():
    p = argparse.ArgumentParser(prog="cfdistill", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=default_seed(), help="defaults to $DT_SEED or 0")
        sp.add_argument("--profile", default="desk64", choices=("table3", "desk64"))

    d = sub.add_parser("distill", help="distil a pruned student from a teacher")
    common(d)
    d.add_argument("--teacher", default="random:0", help="weight file or random:SEED")
    d.add_argument("--data", default="synth:20", help="dataset directory or synth:N")
    d.add_argument("--epochs", type=int, default=50)
    d.add_argument("--pairs", type=int, default=200)
    d.add_argument("--batch-size", type=int, default=8)
    d.add_argument("--length", type=int, default=30, help="frames per synthetic sequence")
    d.add_argument("--out", required=True)
    d.add_argument("--log", help="loss history CSV")
    d.set_defaults(fn=cmd_distill)

    ad = sub.add_parser("adapt", help="first-frame background-aware fine-tuning")
    common(ad)
    ad.add_argument("--net", required=True)
    ad.add_argument("--teacher", help="weight file or random:SEED; enables the fidelity term")
    ad.add_argument("--sequence", required=True)
    ad.add_argument("--iters", type=int, default=8)
    ad.add_argument("--lr", type=float, default=AdaptConfig.lr)
    ad.add_argument("--out", required=True)
    ad.set_defaults(fn=cmd_adapt)

    for name, fn, helptext in (("track", cmd_track, "track one sequence"),
                               ("bench", cmd_bench, "one-pass evaluation over a dataset")):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--net", required=True, help="weight file or random:SEED")
        sp.add_argument("--level", default="fused", choices=("low", "middle", "high", "fused"))
        sp.add_argument("--adapt", action=argparse.BooleanOptionalAction, default=False)
        sp.add_argument("--teacher", help="teacher for the adaptation fidelity term")
        sp.add_argument("--out", required=True)
        if name == "track":
            sp.add_argument("--sequence", required=True)
        else:
            sp.add_argument("--dataset", default="synth:20")
            sp.add_argument("--no-timing", action="store_true", help="leave fps and feat_ms empty")
        sp.set_defaults(fn=fn)

    f = sub.add_parser("flops", help="FLOPs and parameter report")
    f.add_argument("--spec", required=True, help="spec JSON or PROFILE[:teacher|student]")
    f.add_argument("--ref", help="reference spec for ratios")
    f.add_argument("--csv", help="also write the table as CSV")
    f.set_defaults(fn=cmd_flops)

    pl = sub.add_parser("pilot", help="seeded desk-scale distil / benchmark / adaptation run, saved as JSON")
    pl.add_argument("--seed", type=int, default=default_seed())
    pl.add_argument("--out", required=True)
    pl.set_defaults(fn=cmd_pilot)

    s = sub.add_parser("selfcheck", help="run the built-in oracle and gradient checks")
    s.add_argument("--seed", type=int, default=default_seed())
    s.set_defaults(fn=cmd_selfcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
