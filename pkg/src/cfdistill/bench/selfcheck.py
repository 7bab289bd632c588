"""Built-in numerical checks that need nothing beyond the package itself.

Each check prints one ``PASS``/``FAIL`` line. Output is deterministic for a
given seed so two runs can be compared byte for byte.
"""
from __future__ import annotations

import numpy as np

from ..distill import TrainingConfig, TrainingPair, Teacher, cf_layer, offline_loss
from ..nnet import (LayerSpec as L, NetworkSpec, backward, count_flops, count_params, forward_taps, init_weights,
                    student_spec, teacher_spec)
from ..spectral import detect_cf, dft2, gaussian_label, train_cf, train_cf_context
from .ope import THRESHOLDS, auc


def _shift_rows(x):
    h, w, d = x.shape
    rows = []
    for sr in range(h):
        for sc in range(w):
            s = np.roll(x, (-sr, -sc), axis=(0, 1))
            rows.append(np.concatenate([s[:, :, k].ravel() for k in range(d)]))
    return np.array(rows)


def _dense_filter(x, y, reg, negs=(), reg2=0.0):
    h, w, d = x.shape
    A = _shift_rows(x)
    M = A.T @ A + reg * np.eye(A.shape[1])
    for n in negs:
        B = _shift_rows(n)
        M += reg2 * B.T @ B
    sol = np.linalg.solve(M, A.T @ y.ravel())
    return np.stack([sol[k * h * w:(k + 1) * h * w].reshape(h, w) for k in range(d)], axis=2)


def _spatial(filt):
    return np.fft.ifft2(filt.spectrum(), axes=(0, 1)).real


def check_dft(rng):
    x = rng.standard_normal((8, 8, 2))
    back = dft2(dft2(x), inverse=True)
    return float(np.max(np.abs(back - x))) < 1e-10


def check_ridge(rng, n=20):
    worst = 0.0
    for i in range(n):
        d = 1 + i % 3
        x = rng.standard_normal((8, 8, d))
        y = gaussian_label(8, 8, 1.0)
        ref = _dense_filter(x, y.map[:, :, 0], 0.1)
        got = _spatial(train_cf(x, y, 0.1))
        worst = max(worst, np.linalg.norm(got - ref) / np.linalg.norm(ref))
        negs = [rng.standard_normal((8, 8, d)) for _ in range(2)]
        ref = _dense_filter(x, y.map[:, :, 0], 0.1, negs, 0.5)
        got = _spatial(train_cf_context(x, negs, y, 0.1, 0.5))
        worst = max(worst, np.linalg.norm(got - ref) / np.linalg.norm(ref))
    return worst < 1e-6


def check_shifts(rng):
    x = rng.standard_normal((8, 8, 1))
    filt = train_cf(x, gaussian_label(8, 8, 1.0), 1e-3)
    base = detect_cf(filt, x).peak
    for sr in range(8):
        for sc in range(8):
            p = detect_cf(filt, np.roll(x, (sr, sc), axis=(0, 1))).peak
            if ((p[0] - base[0]) % 8, (p[1] - base[1]) % 8) != (sr, sc):
                return False
    return True


def _fd(f, arr, idx, step):
    old = arr[idx]
    arr[idx] = old + step
    a = f()
    arr[idx] = old - step
    b = f()
    arr[idx] = old
    return (a - b) / (2 * step)


def _rel(a, b, floor):
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_cf_layer_grad(rng, instances=5):
    for _ in range(instances):
        x, z = rng.standard_normal((6, 6, 2)), rng.standard_normal((6, 6, 2))
        y = gaussian_label(6, 6, 1.2)
        g = np.roll(y.map[:, :, 0], (1, 1), axis=(0, 1))
        res = cf_layer(x, z, y, 0.1, target=g)
        f = lambda: cf_layer(x, z, y, 0.1, target=g).loss
        for _ in range(10):
            arr, grad = (x, res.grad_x) if rng.random() < 0.5 else (z, res.grad_z)
            idx = tuple(int(rng.integers(0, s)) for s in arr.shape)
            if _rel(grad[idx], _fd(f, arr, idx, 1e-4), 1e-8) >= 1e-4:
                return False
    return True


def check_conv_grad(rng):
    spec = NetworkSpec((L.conv(2, 3, 3, 1, 1), L.relu(), L.maxpool(2, 2), L.conv(3, 2, 3, 1, 1)), (6, 6, 2),
                       {"high": 3})
    w = init_weights(spec, int(rng.integers(1 << 30)))
    x = rng.standard_normal((6, 6, 2))
    taps, cache = forward_taps(spec, w, x)
    grads, gin = backward(spec, w, cache, {"high": taps["high"]})
    f = lambda: 0.5 * float(np.sum(forward_taps(spec, w, x)[0]["high"] ** 2))
    named_w, named_g = dict(w.named_arrays()), dict(grads.named_arrays())
    for name in sorted(named_w):
        idx = tuple(int(rng.integers(0, s)) for s in named_w[name].shape)
        if _rel(named_g[name][idx], _fd(f, named_w[name], idx, 1e-6), 1e-6) >= 1e-4:
            return False
    idx = (2, 3, 1)
    return _rel(gin[idx], _fd(f, x, idx, 1e-6), 1e-6) < 1e-4


def check_offline_grad(rng):
    layers = (L.conv(3, 4, 3, 1, 1), L.relu(), L.maxpool(2, 2), L.conv(4, 6, 3, 1, 1), L.relu(),
              L.conv(6, 8, 3, 1, 1), L.relu())
    spec = NetworkSpec(layers, (12, 12, 3), {"low": 1, "middle": 4, "high": 6})
    tspec = spec.with_channels([8, 12, 16])
    teacher = Teacher.random(tspec, 1)
    w = init_weights(spec, 2)
    w.adapters["high"] = 0.3 * rng.standard_normal((16, 8))
    pairs = [TrainingPair(rng.standard_normal((12, 12, 3)), rng.standard_normal((12, 12, 3)), (0.5, -1.0),
                          (5.0, 6.0)) for _ in range(2)]
    cfg = TrainingConfig(lambda_fid=1e-2, lambda_cf=1e-2)
    _, grads = offline_loss(pairs, spec, w, teacher, cfg)
    f = lambda: offline_loss(pairs, spec, w, teacher, cfg)[0].total
    named_w, named_g = dict(w.named_arrays()), dict(grads.named_arrays())
    names = sorted(named_w)
    for _ in range(10):
        name = names[int(rng.integers(len(names)))]
        idx = tuple(int(rng.integers(0, s)) for s in named_w[name].shape)
        if _rel(named_g[name][idx], _fd(f, named_w[name], idx, 1e-6), 1e-6) >= 1e-3:
            return False
    return True


def check_flops(rng):
    t = teacher_spec("table3")
    s = student_spec(t)
    ratio = count_params(s, t).ratio
    return (count_flops(t).total_flops == 1_816_471_552 and count_flops(s).total_flops == 47_930_624
            and abs(ratio - 63.05) <= 0.1)


def check_auc(rng):
    return abs(auc(np.ones(10)) - 20 / 21) < 1e-15 and auc(np.zeros(10)) == 0.0 and len(THRESHOLDS) == 21


CHECKS = (
    ("dft round trip", check_dft),
    ("closed-form filters vs dense solve", check_ridge),
    ("shift equivariance", check_shifts),
    ("cf layer gradient", check_cf_layer_grad),
    ("conv/pool gradient", check_conv_grad),
    ("offline loss gradient", check_offline_grad),
    ("flops and parameter ratio", check_flops),
    ("auc grid", check_auc),
)


def run_all(seed=0, out=print):
    ok = True
    for i, (name, fn) in enumerate(CHECKS):
        rng = np.random.default_rng([seed, i])
        try:
            passed = bool(fn(rng))
        except Exception as e:  # noqa: BLE001 - a crash is a failed check
            passed = False
            name = f"{name} ({type(e).__name__}: {e})"
        out(f"{'PASS' if passed else 'FAIL'} {name}")
        ok &= passed
    out("selfcheck " + ("passed" if ok else "failed"))
    return ok
