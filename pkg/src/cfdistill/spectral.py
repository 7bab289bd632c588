"""Correlation-filter math in the DFT domain.

Feature maps are plain ``numpy`` arrays shaped ``(H, W, C)``; spectra are
complex arrays of the same shape. Forward transforms are unnormalized and
inverse transforms divide by ``H * W``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "as_tensor3",
    "dft2",
    "GaussianLabel",
    "gaussian_label",
    "cosine_window",
    "CorrelationFilter",
    "train_cf",
    "Detection",
    "detect_cf",
    "train_cf_context",
    "update_cf",
    "wrapped_to_centered",
    "centered_to_wrapped",
    "decode_offset",
    "subcell_peak",
]


def as_tensor3(t, name="tensor"):
    """Validate and return ``t`` as a float64 ``(H, W, C)`` array.

    2-D input is promoted to a single channel.
    """
    a = np.asarray(t, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or min(a.shape) < 1:
        raise ValueError(f"{name}: expected H x W x C array with all dims >= 1, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: contains non-finite values")
    return a


def dft2(t, inverse=False):
    """2-D DFT of every channel.

    ``inverse=False`` takes a real ``(H, W, C)`` map and returns its complex
    spectrum. ``inverse=True`` takes a spectrum and returns the (complex)
    inverse transform; callers keep ``.real`` when the input was Hermitian.
    """
    if inverse:
        s = np.asarray(t, dtype=np.complex128)
        if s.ndim == 2:
            s = s[:, :, None]
        if s.ndim != 3:
            raise ValueError(f"expected H x W x C spectrum, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("spectrum contains non-finite values")
        return np.fft.ifft2(s, axes=(0, 1))
    return np.fft.fft2(as_tensor3(t), axes=(0, 1))


@dataclass(frozen=True)
class GaussianLabel:
    map: np.ndarray  # (H, W, 1)
    sigma: float
    peak: tuple[int, int]


def gaussian_label(h, w, sigma, peak=(0, 0)):
    """Gaussian on the torus: ``exp(-d^2 / (2 sigma^2))`` with wrap-around distance to ``peak``."""
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if h < 1 or w < 1:
        raise ValueError(f"label dims must be >= 1, got {h}x{w}")
    pr, pc = peak
    dr = np.abs(np.arange(h) - pr) % h
    dr = np.minimum(dr, h - dr)
    dc = np.abs(np.arange(w) - pc) % w
    dc = np.minimum(dc, w - dc)
    d2 = dr[:, None] ** 2 + dc[None, :] ** 2
    g = np.exp(-d2 / (2.0 * sigma**2))
    return GaussianLabel(map=g[:, :, None], sigma=float(sigma), peak=(int(pr) % h, int(pc) % w))


def cosine_window(h, w):
    """Outer product of Hann windows ``0.5 * (1 - cos(2 pi n / (N - 1)))``, shape ``(h, w, 1)``."""
    if h < 2 or w < 2:
        raise ValueError(f"cosine window needs h, w >= 2, got {h}x{w}")
    hr = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(h) / (h - 1)))
    hc = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(w) / (w - 1)))
    return np.outer(hr, hc)[:, :, None]


@dataclass(frozen=True)
class CorrelationFilter:
    """Filter kept as numerator / denominator so running averages stay unbiased.

    The per-channel filter spectrum is ``numerator / denominator[..., None]``.
    """

    numerator: np.ndarray  # complex (H, W, D)
    denominator: np.ndarray  # real (H, W)
    lambda_cf: float

    @property
    def shape(self):
        return self.numerator.shape

    def spectrum(self):
        return self.numerator / self.denominator[:, :, None]


def _label_spectrum(label, shape):
    y = label.map if isinstance(label, GaussianLabel) else as_tensor3(label, "label")
    if y.shape[:2] != tuple(shape[:2]):
        raise ValueError(f"label dims {y.shape[:2]} do not match feature dims {tuple(shape[:2])}")
    return np.fft.fft2(y[:, :, 0])


def train_cf(features, label, lambda_cf):
    """Closed-form multi-channel ridge regression over all circular shifts."""
    x = as_tensor3(features, "features")
    if lambda_cf < 0:
        raise ValueError(f"lambda_cf must be >= 0, got {lambda_cf}")
    yf = _label_spectrum(label, x.shape)
    xf = np.fft.fft2(x, axes=(0, 1))
    num = np.conj(yf)[:, :, None] * xf
    den = np.sum(xf.real**2 + xf.imag**2, axis=2) + lambda_cf
    if np.any(den == 0):
        raise ValueError("zero denominator bin: lambda_cf = 0 and the feature spectrum vanishes somewhere")
    return CorrelationFilter(numerator=num, denominator=den, lambda_cf=float(lambda_cf))


def wrapped_to_centered(m):
    """Move index (0, 0) of a response to the map center (``fftshift`` over the spatial axes)."""
    return np.fft.fftshift(m, axes=(0, 1))


def centered_to_wrapped(m):
    return np.fft.ifftshift(m, axes=(0, 1))


def decode_offset(k, n):
    """Signed displacement for index ``k`` of a wrapped axis of length ``n``."""
    k = k % n
    return k - n if k > n / 2 else k


def subcell_peak(resp, r, c):
    """Refine integer peak ``(r, c)`` by a least-squares quadratic over the wrapped 3x3 neighbourhood.

    Falls back to independent 1-D parabolas when the 2-D fit has no maximum.
    Offsets are clipped to [-1, 1] cell.
    """
    h, w = resp.shape
    rows = [(r + d) % h for d in (-1, 0, 1)]
    cols = [(c + d) % w for d in (-1, 0, 1)]
    patch = resp[np.ix_(rows, cols)]
    dy, dx = np.meshgrid([-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0], indexing="ij")
    dy, dx = dy.ravel(), dx.ravel()
    A = np.stack([np.ones(9), dy, dx, dy * dy, dx * dx, dy * dx], axis=1)
    coef = np.linalg.lstsq(A, patch.ravel(), rcond=None)[0]
    _, b, cc, d, e, f = coef
    H = np.array([[2 * d, f], [f, 2 * e]])
    if d < 0 and e < 0 and np.linalg.det(H) > 0:
        off = np.linalg.solve(H, [-b, -cc])
    else:
        def parabola(lo, mid, hi):
            denom = lo - 2 * mid + hi
            return 0.0 if denom >= 0 else 0.5 * (lo - hi) / denom

        off = np.array([
            parabola(patch[0, 1], patch[1, 1], patch[2, 1]),
            parabola(patch[1, 0], patch[1, 1], patch[1, 2]),
        ])
    off = np.clip(off, -1.0, 1.0)
    return float(r + off[0]), float(c + off[1])


@dataclass(frozen=True)
class Detection:
    response: np.ndarray  # (H, W, 1), wrapped layout
    peak: tuple[int, int]
    subcell: tuple[float, float]
    peak_value: float

    @property
    def offset(self):
        """Signed integer displacement decoded from the wrapped peak."""
        h, w = self.response.shape[:2]
        return decode_offset(self.peak[0], h), decode_offset(self.peak[1], w)

    @property
    def subcell_offset(self):
        h, w = self.response.shape[:2]
        r, c = self.subcell
        r = r - h if r > h / 2 else r
        c = c - w if c > w / 2 else c
        return r, c


def argmax_first(m):
    """Argmax with ties broken by lowest (row, col)."""
    flat = int(np.argmax(m))  # numpy returns the first occurrence in C order
    return divmod(flat, m.shape[1])


def detect_cf(filt, features):
    """Response ``F^-1(sum_i conj(w_i) * z_i)`` plus its peak."""
    z = as_tensor3(features, "features")
    if z.shape != filt.numerator.shape:
        raise ValueError(f"feature dims {z.shape} do not match filter dims {filt.numerator.shape}")
    zf = np.fft.fft2(z, axes=(0, 1))
    rf = np.sum(np.conj(filt.spectrum()) * zf, axis=2)
    resp = np.fft.ifft2(rf).real
    r, c = argmax_first(resp)
    sub = subcell_peak(resp, r, c)
    return Detection(response=resp[:, :, None], peak=(r, c), subcell=sub, peak_value=float(resp[r, c]))


def train_cf_context(positive, negatives, label, lambda1, lambda2):
    """Context-aware filter: ridge regression with negatives regressed to zero.

    For one channel this is the per-frequency closed form
    ``conj(y) x+ / (|x+|^2 + lambda1 + lambda2 * sum_k |x-_k|^2)``. With several
    channels the per-frequency D x D system is solved exactly; the stored
    numerator is that solution times the shared denominator, so the quotient
    is the exact minimizer and ``update_cf`` still applies.
    """
    if not lambda1 > 0:
        raise ValueError(f"lambda1 must be > 0, got {lambda1}")
    if lambda2 < 0:
        raise ValueError(f"lambda2 must be >= 0, got {lambda2}")
    if not negatives or lambda2 == 0:
        return train_cf(positive, label, lambda1)
    x = as_tensor3(positive, "positive")
    negs = [as_tensor3(n, f"negatives[{k}]") for k, n in enumerate(negatives)]
    for k, n in enumerate(negs):
        if n.shape != x.shape:
            raise ValueError(f"negatives[{k}] dims {n.shape} differ from positive dims {x.shape}")
    yf = _label_spectrum(label, x.shape)
    xf = np.fft.fft2(x, axes=(0, 1))
    nf = np.stack([np.fft.fft2(n, axes=(0, 1)) for n in negs])  # (K, H, W, D)
    pos_energy = np.sum(np.abs(xf) ** 2, axis=2)
    neg_energy = np.sum(np.abs(nf) ** 2, axis=(0, 3))
    den = pos_energy + lambda1 + lambda2 * neg_energy
    d = x.shape[2]
    if d == 1:
        num = np.conj(yf)[:, :, None] * xf
    else:
        # v = M^-1 conj(x) y with M = conj(x) x^T + l1 I + l2 sum_k conj(n_k) n_k^T; filter = conj(v)
        M = np.conj(xf)[..., :, None] * xf[..., None, :]
        M = M + lambda2 * np.einsum("khwi,khwj->hwij", np.conj(nf), nf)
        M = M + lambda1 * np.eye(d)
        rhs = np.conj(xf) * yf[:, :, None]
        v = np.linalg.solve(M, rhs[..., None])[..., 0]
        num = np.conj(v) * den[:, :, None]
    return CorrelationFilter(numerator=num, denominator=den, lambda_cf=float(lambda1))


def update_cf(old, new, rate):
    """Linear interpolation of numerator and denominator: ``(1 - rate) * old + rate * new``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    if old.numerator.shape != new.numerator.shape:
        raise ValueError(f"filter dims differ: {old.numerator.shape} vs {new.numerator.shape}")
    if rate == 0.0:
        return old
    if rate == 1.0:
        return new
    return CorrelationFilter(
        numerator=(1.0 - rate) * old.numerator + rate * new.numerator,
        denominator=(1.0 - rate) * old.denominator + rate * new.denominator,
        lambda_cf=(1.0 - rate) * old.lambda_cf + rate * new.lambda_cf,
    )
