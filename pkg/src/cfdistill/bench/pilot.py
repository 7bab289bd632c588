"""The seeded desk-scale experiment: distil a student, benchmark it against
the teacher, and measure what first-frame adaptation does on the distractor
sequences. ``record`` collects everything into one JSON-friendly dict.
"""
from __future__ import annotations

import json
import time
from dataclasses import replace

import numpy as np

from ..adapt import AdaptConfig, adapt_online, adaptation_batches, negative_energy
from ..distill import Teacher, TrainingConfig, sample_pairs, synth_sequences, train_offline
from ..nnet import teacher_spec
from ..tracker import TrackerConfig
from .ope import run_ope
from .runners import FkcfFactory, synth_benchmark

HELDOUT_SEED_OFFSET = 10_000


def distill_run(seed=0, profile="desk64", teacher_seed=0, n_seqs=20, length=30, n_pairs=200, epochs=20):
    teacher = Teacher.random(teacher_spec(profile), teacher_seed)
    seqs = synth_sequences(n_seqs, length, seed=1000 + seed)
    pairs = sample_pairs(seqs, n_pairs, seed=seed)
    return teacher, train_offline(pairs, teacher, TrainingConfig(epochs=epochs, seed=seed))


def benchmark(spec, weights, sequences, seed=0, config=None, adapt=False, teacher=None, adapt_config=None):
    fac = FkcfFactory(spec, weights, config or TrackerConfig(), adapt, teacher, adapt_config or AdaptConfig())
    return run_ope(sequences, fac, seed)


def adaptation_effect(spec, weights, teacher, sequences, config=None):
    """Summed negative-response energy before and after ``adapt_online``, per sequence.

    ``batches`` are the very samples the adaptation consumed; ``heldout`` are
    fresh draws from the same first frame under another seed.
    """
    config = config or AdaptConfig()
    held_cfg = replace(config, seed=config.seed + HELDOUT_SEED_OFFSET)
    tcfg = config.train
    rows = []
    for seq in sequences:
        frame, box = seq.frame(0), seq.boxes[0]
        res = adapt_online(spec, weights, teacher, frame, box, config)
        row = {"sequence": seq.name, "diverged": res.diverged}
        for key, cfg in (("batches", config), ("heldout", held_cfg)):
            batches = list(adaptation_batches(frame, box, cfg))
            row[key] = (sum(negative_energy(b, spec, weights, tcfg) for b in batches),
                        sum(negative_energy(b, spec, res.weights, tcfg) for b in batches))
        rows.append(row)
    return rows


def _kind(names, kind):
    return [n for n in names if n.startswith(kind)]


def record(seed=0, log=print):
    """Run the whole experiment and return its numbers (timings are informational)."""
    out = {"seed": seed}
    t0 = time.perf_counter()
    teacher, res = distill_run(seed)
    out["distill"] = {
        "initial_total": res.initial.total, "final_total": res.final.total,
        "ratio": res.final.total / res.initial.total,
        "initial_fidelity": res.initial.fidelity, "final_fidelity": res.final.fidelity,
        "diverged": res.diverged, "seconds": time.perf_counter() - t0,
    }
    log(f"distill: total {res.initial.total:.4f} -> {res.final.total:.4f}, "
        f"fidelity {res.initial.fidelity:.4f} -> {res.final.fidelity:.4f}")

    seqs = synth_benchmark(seed)
    names = sorted(s.name for s in seqs)
    student = res.weights.without_adapters()
    bench = {}
    for label, spec, w in (("teacher", teacher.spec, teacher.weights), ("student", res.spec, student)):
        t0 = time.perf_counter()
        rep = benchmark(spec, w, seqs, seed)
        bench[label] = {"mean_auc": rep.mean_auc,
                        "plain_auc": rep.subset(_kind(names, "plain")).mean_auc,
                        "per_sequence": {s.name: s.auc for s in rep.sequences},
                        "seconds": time.perf_counter() - t0}
        log(f"{label}: mean AUC {rep.mean_auc:.4f}, plain {bench[label]['plain_auc']:.4f}")
    out["benchmark"] = bench

    distractors = [s for s in seqs if s.name.startswith("distractor")]
    t0 = time.perf_counter()
    rows = adaptation_effect(res.spec, res.weights, teacher, distractors, AdaptConfig(seed=seed))
    off = benchmark(res.spec, res.weights, distractors, seed)
    on = benchmark(res.spec, res.weights, distractors, seed, adapt=True, teacher=teacher,
                   adapt_config=AdaptConfig(seed=seed))
    out["adaptation"] = {
        "per_sequence": rows,
        "batches": [sum(r["batches"][0] for r in rows), sum(r["batches"][1] for r in rows)],
        "heldout": [sum(r["heldout"][0] for r in rows), sum(r["heldout"][1] for r in rows)],
        "auc_off": off.mean_auc, "auc_on": on.mean_auc,
        "seconds": time.perf_counter() - t0,
    }
    a = out["adaptation"]
    log(f"adaptation: batch energy {a['batches'][0]:.4f} -> {a['batches'][1]:.4f}, "
        f"held-out {a['heldout'][0]:.4f} -> {a['heldout'][1]:.4f}, AUC {a['auc_off']:.4f} -> {a['auc_on']:.4f}")
    return out, res, teacher


def write_record(path, rec):
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, (np.floating, np.integer, np.bool_)):
            return v.item()
        return v

    with open(path, "w") as f:
        json.dump(clean(rec), f, indent=2, sort_keys=True)
        f.write("\n")
