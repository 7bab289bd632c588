"""Acceptance criteria, one test each.

Every test records a one-line PASS/FAIL verdict (printed in the terminal
summary by conftest.py) before asserting. Run with

    pytest tests/test_acceptance.py -v
"""
import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from cfdistill import spectral as sp
from cfdistill.bench import pilot
from cfdistill.distill import Teacher, TrainingConfig, TrainingPair, cf_layer, offline_loss
from cfdistill.nnet import count_flops, count_params, init_weights, student_spec, teacher_spec
from nets import tiny_spec
from oracles import central_diff, dense_context, dense_ridge, rel_err

VERDICTS = []
ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
PILOT_RECORD = os.path.join(ROOT, "pilot", "pilot_seed0.json")


def verdict(n, ok, detail):
    VERDICTS.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def test_criterion_1_flops():
    t0 = time.perf_counter()
    t = count_flops(teacher_spec("table3")).total_flops
    s = count_flops(student_spec(teacher_spec("table3"))).total_flops
    dt = time.perf_counter() - t0
    out = subprocess.run([sys.executable, "-m", "cfdistill.bench.cli", "flops", "--spec", "table3:student"],
                         capture_output=True, text=True)
    cli_ok = out.returncode == 0 and out.stdout.splitlines()[-1] == "total FLOPs 47930624"
    verdict(1, t == 1_816_471_552 and s == 47_930_624 and cli_ok and dt < 1.0,
            f"teacher {t:,} student {s:,} in {dt * 1000:.1f} ms, cli output {'matches' if cli_ok else 'differs'}")


def test_criterion_2_param_ratio():
    t0 = time.perf_counter()
    t = teacher_spec("table3")
    ratio = count_params(student_spec(t), t).ratio
    dt = time.perf_counter() - t0
    verdict(2, abs(ratio - 63.05) <= 0.1 and dt < 1.0, f"conv weight ratio {ratio:.4f} in {dt * 1000:.1f} ms")


def test_criterion_3_closed_form():
    t0 = time.perf_counter()
    r = np.random.default_rng(3)
    worst_plain = worst_ctx = 0.0
    for i in range(100):
        d = 1 + i % 3
        x = r.standard_normal((8, 8, d))
        lab = sp.gaussian_label(8, 8, float(r.uniform(0.8, 2.0)))
        reg = float(r.uniform(0.01, 1.0))
        ref = np.fft.fft2(dense_ridge(x, lab.map[:, :, 0], reg), axes=(0, 1))
        got = sp.train_cf(x, lab, reg).spectrum()
        worst_plain = max(worst_plain, np.linalg.norm(got - ref) / np.linalg.norm(ref))
        negs = [r.standard_normal((8, 8, d)) for _ in range(int(r.integers(1, 4)))]
        reg2 = float(r.uniform(0.1, 2.0))
        ref = np.fft.fft2(dense_context(x, negs, lab.map[:, :, 0], reg, reg2), axes=(0, 1))
        got = sp.train_cf_context(x, negs, lab, reg, reg2).spectrum()
        worst_ctx = max(worst_ctx, np.linalg.norm(got - ref) / np.linalg.norm(ref))
    dt = time.perf_counter() - t0
    verdict(3, worst_plain < 1e-6 and worst_ctx < 1e-6 and dt < 10,
            f"max rel err plain {worst_plain:.2e} context {worst_ctx:.2e} in {dt:.1f}s")


def test_criterion_4_gradients():
    t0 = time.perf_counter()
    worst_layer = 0.0
    for seed in range(20):
        r = np.random.default_rng(100 + seed)
        x, z = r.standard_normal((6, 6, 2)), r.standard_normal((6, 6, 2))
        y = sp.gaussian_label(6, 6, 1.2)
        g = np.roll(y.map[:, :, 0], (int(r.integers(6)), int(r.integers(6))), axis=(0, 1))
        res = cf_layer(x, z, y, 0.1, target=g)
        f = lambda: cf_layer(x, z, y, 0.1, target=g).loss
        for _ in range(50):
            arr, grad = (x, res.grad_x) if r.random() < 0.5 else (z, res.grad_z)
            idx = tuple(int(r.integers(0, s)) for s in arr.shape)
            worst_layer = max(worst_layer, rel_err(grad[idx], central_diff(f, arr, idx, step=1e-4)))

    r = np.random.default_rng(7)
    spec = tiny_spec()
    teacher = Teacher.random(tiny_spec((8, 12, 16)), 8)
    w = init_weights(spec, 7)
    w.biases = {k: 0.1 * r.standard_normal(b.shape) for k, b in w.biases.items()}
    w.adapters["high"] = 0.3 * r.standard_normal((16, 8))
    pairs = [TrainingPair(r.standard_normal((12, 12, 3)), r.standard_normal((12, 12, 3)),
                          tuple(r.uniform(-2, 2, 2)), (5.0, 6.0)) for _ in range(3)]
    cfg = TrainingConfig(lambda_fid=1e-2, lambda_cf=1e-2)
    tt = (teacher.taps(np.stack([p.x for p in pairs])), teacher.taps(np.stack([p.z for p in pairs])))
    _, grads = offline_loss(pairs, spec, w, teacher, cfg, tt)
    named_w, named_g = dict(w.named_arrays()), dict(grads.named_arrays())
    names = sorted(named_w)
    f = lambda: offline_loss(pairs, spec, w, teacher, cfg, tt)[0].total
    worst_e2e = 0.0
    for _ in range(30):
        name = names[int(r.integers(len(names)))]
        idx = tuple(int(r.integers(0, s)) for s in named_w[name].shape)
        num = central_diff(f, named_w[name], idx, step=1e-6)
        worst_e2e = max(worst_e2e, rel_err(named_g[name][idx], num, floor=1e-6))
    dt = time.perf_counter() - t0
    verdict(4, worst_layer < 1e-4 and worst_e2e < 1e-3 and dt < 60,
            f"cf layer max rel err {worst_layer:.2e} (1000 coords), end-to-end {worst_e2e:.2e} (30 weights) "
            f"in {dt:.1f}s")


def test_criterion_5_shift_equivariance():
    t0 = time.perf_counter()
    x = np.random.default_rng(5).standard_normal((8, 8, 1))
    filt = sp.train_cf(x, sp.gaussian_label(8, 8, 1.0), 1e-3)
    hits = 0
    for sr in range(8):
        for sc in range(8):
            p = sp.detect_cf(filt, np.roll(x, (sr, sc), axis=(0, 1))).peak
            hits += (p[0] % 8, p[1] % 8) == (sr, sc)
    dt = time.perf_counter() - t0
    verdict(5, hits == 64 and dt < 5, f"{hits}/64 shifts recovered in {dt:.2f}s")


@pytest.fixture(scope="module")
def experiment():
    t0 = time.perf_counter()
    rec, res, teacher = pilot.record(seed=0, log=lambda *_: None)
    rec["total_seconds"] = time.perf_counter() - t0
    return rec


def test_criterion_6_student_vs_teacher(experiment):
    b = experiment["benchmark"]
    gap = abs(b["student"]["mean_auc"] - b["teacher"]["mean_auc"])
    secs = experiment["distill"]["seconds"] + b["student"]["seconds"] + b["teacher"]["seconds"]
    ok = gap <= 0.05 and b["student"]["plain_auc"] >= 0.50 and secs < 15 * 60
    verdict(6, ok, f"AUC teacher {b['teacher']['mean_auc']:.4f} student {b['student']['mean_auc']:.4f} "
                   f"(gap {gap:.4f}), plain {b['student']['plain_auc']:.4f}, {secs:.0f}s")


def test_criterion_6_matches_recorded_pilot(experiment):
    with open(PILOT_RECORD) as f:
        rec = json.load(f)
    now, then = experiment["benchmark"], rec["benchmark"]
    same = all(now[k]["per_sequence"] == then[k]["per_sequence"] for k in ("teacher", "student"))
    same &= experiment["distill"]["final_total"] == rec["distill"]["final_total"]
    verdict(6, same, "rerun reproduces the committed pilot record " + ("exactly" if same else "NOT exactly"))


def test_criterion_7_distillation(experiment):
    d = experiment["distill"]
    ok = not d["diverged"] and d["final_total"] < 0.5 * d["initial_total"] \
        and d["final_fidelity"] < d["initial_fidelity"]
    verdict(7, ok, f"total {d['initial_total']:.4f} -> {d['final_total']:.4f} (ratio {d['ratio']:.3f}), "
                   f"fidelity {d['initial_fidelity']:.4f} -> {d['final_fidelity']:.4f}")


def test_criterion_8_adaptation(experiment):
    a = experiment["adaptation"]
    ok = (a["batches"][1] < a["batches"][0] and a["heldout"][1] < a["heldout"][0]
          and a["auc_on"] >= a["auc_off"] - 0.02 and a["seconds"] < 5 * 60
          and not any(r["diverged"] for r in a["per_sequence"]))
    verdict(8, ok, f"negative energy {a['batches'][0]:.3f} -> {a['batches'][1]:.3f} (held-out "
                   f"{a['heldout'][0]:.3f} -> {a['heldout'][1]:.3f}), AUC {a['auc_off']:.4f} -> "
                   f"{a['auc_on']:.4f}, {a['seconds']:.0f}s")


def _cli(args, cwd):
    env = dict(os.environ, DT_SEED="0")
    out = subprocess.run([sys.executable, "-m", "cfdistill.bench.cli"] + args, cwd=cwd, env=env,
                         capture_output=True, text=True)
    return out.stdout if out.returncode == 0 else f"exit {out.returncode}: {out.stderr}"


def test_criterion_9_determinism(tmp_path):
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        check = _cli(["selfcheck"], d)
        _cli(["distill", "--epochs", "20", "--out", "student.bin", "--log", "loss.csv"], d)
        _cli(["bench", "--net", "student.bin", "--dataset", "synth:20", "--no-timing", "--out", "report.csv"], d)
        read = lambda name: (d / name).read_bytes() if (d / name).exists() else None
        outputs.append((check, read("student.bin"), read("loss.csv"), read("report.csv")))
    a, b = outputs
    same = [x is not None and x == y for x, y in zip(a, b)]
    verdict(9, all(same) and a[0].endswith("selfcheck passed\n"),
            "selfcheck / weights / loss log / report identical: " + " ".join("yes" if s else "no" for s in same))
