"""Fidelity loss, differentiable correlation-filter layer and the combined objectives."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..nnet import LEVELS, apply_adapter
from ..spectral import GaussianLabel, as_tensor3


@dataclass
class CFLayerResult:
    response: np.ndarray  # (H, W)
    loss: float
    grad_x: np.ndarray  # (H, W, D)
    grad_z: np.ndarray  # (H, W, D)


def _label_map(label, shape, name):
    m = label.map[:, :, 0] if isinstance(label, GaussianLabel) else np.asarray(label, dtype=np.float64)
    if m.ndim == 3:
        m = m[:, :, 0]
    if m.shape != tuple(shape):
        raise ValueError(f"{name} dims {m.shape} do not match feature dims {tuple(shape)}")
    return m


def cf_layer(target_feats, search_feats, label, lambda_cf, target=None, scale=1.0):
    """Correlation-filter layer with exact gradients.

    The filter is learned on ``target_feats`` with training label ``label``
    (closed form, shared denominator), applied to ``search_feats``, and the
    response is regressed to ``target`` (defaults to ``label``; pass a zero map
    for background samples). Loss is ``scale * mean((r - g)^2)``.

    With ``X, Z`` the feature spectra, ``E = sum |X|^2 + lambda`` and ``S = sum
    conj(X) Z``, the response spectrum is ``Y S / E``. Gradients are pulled
    back through that expression in the real inner product, which gives the
    conjugate-pair form for ``x`` (through ``conj(X)`` in ``S`` and through
    ``E``) and a single term for ``z``.
    """
    if not lambda_cf > 0:
        raise ValueError(f"cf_layer needs lambda_cf > 0, got {lambda_cf}")
    x = as_tensor3(target_feats, "target_feats")
    z = as_tensor3(search_feats, "search_feats")
    if x.shape != z.shape:
        raise ValueError(f"target/search feature dims differ: {x.shape} vs {z.shape}")
    h, w = x.shape[:2]
    y = _label_map(label, (h, w), "label")
    g = y if target is None else _label_map(target, (h, w), "target")
    n = h * w

    X = np.fft.fft2(x, axes=(0, 1))
    Z = np.fft.fft2(z, axes=(0, 1))
    Y = np.fft.fft2(y)
    E = np.sum(X.real**2 + X.imag**2, axis=2) + lambda_cf
    S = np.sum(np.conj(X) * Z, axis=2)
    K = Y / E
    r = np.fft.ifft2(K * S).real
    diff = r - g
    loss = scale * float(np.sum(diff * diff)) / n

    # dL/dr, then pulled back through the normalized inverse DFT: fft2(dr) / n
    Gr = np.fft.fft2(2.0 * scale * diff / n) / n
    gz = np.conj(K)[:, :, None] * X * Gr[:, :, None]
    c = np.real(np.conj(Gr) * Y * S) / E**2
    gx = (np.conj(Gr) * K)[:, :, None] * Z - 2.0 * c[:, :, None] * X
    # adjoint of the forward DFT is n * ifft2
    grad_z = n * np.fft.ifft2(gz, axes=(0, 1)).real
    grad_x = n * np.fft.ifft2(gx, axes=(0, 1)).real
    return CFLayerResult(r, loss, grad_x, grad_z)


def fidelity_loss(student_feats, teacher_feats, adapter, batch=1):
    """``||adapter(student) - teacher||^2 / batch`` for one map; teacher features are constants.

    Returns ``(loss, grad_student_feats, grad_adapter)``.
    """
    stu = np.asarray(student_feats, dtype=np.float64)
    tea = np.asarray(teacher_feats, dtype=np.float64)
    a = apply_adapter(adapter, stu)
    if a.shape != tea.shape:
        raise ValueError(f"adapter output {a.shape} does not match teacher features {tea.shape}")
    d = a - tea
    loss = float(np.sum(d * d)) / batch
    gd = 2.0 * d / batch
    g_student = gd @ adapter
    g_adapter = gd.reshape(-1, tea.shape[-1]).T @ stu.reshape(-1, stu.shape[-1])
    return loss, g_student, g_adapter


@dataclass
class LossBreakdown:
    tracking: dict = field(default_factory=dict)  # level -> loss
    fidelity_target: float = 0.0
    fidelity_search: float = 0.0
    decay: float = 0.0
    lambda_fid: float = 0.0
    decay_weight: float = 0.0

    @property
    def tracking_total(self):
        return float(sum(self.tracking.values()))

    @property
    def fidelity(self):
        return self.fidelity_target + self.fidelity_search

    @property
    def total(self):
        return self.tracking_total + self.lambda_fid * self.fidelity + self.decay_weight * self.decay

    def __iadd__(self, other):
        for k, v in other.tracking.items():
            self.tracking[k] = self.tracking.get(k, 0.0) + v
        self.fidelity_target += other.fidelity_target
        self.fidelity_search += other.fidelity_search
        self.decay += other.decay
        self.lambda_fid, self.decay_weight = other.lambda_fid, other.decay_weight
        return self

    def scaled(self, s):
        return LossBreakdown({k: v * s for k, v in self.tracking.items()}, self.fidelity_target * s,
                             self.fidelity_search * s, self.decay * s, self.lambda_fid, self.decay_weight)


def multilevel_tracking_loss(taps_x, taps_z, labels, lambda_cf, targets=None, levels=LEVELS, scale=1.0):
    """Sum of ``cf_layer`` losses over the levels.

    Returns ``(per-level losses, grads_x, grads_z)``; grads are keyed by level.
    """
    losses, gx, gz = {}, {}, {}
    for l in levels:
        tgt = None if targets is None else targets[l]
        res = cf_layer(taps_x[l], taps_z[l], labels[l], lambda_cf, target=tgt, scale=scale)
        losses[l] = res.loss
        gx[l] = res.grad_x
        gz[l] = res.grad_z
    return losses, gx, gz
