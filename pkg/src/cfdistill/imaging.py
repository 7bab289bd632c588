"""Square crops with edge replication and bilinear resampling."""
import numpy as np


def to_float(frame):
    f = np.asarray(frame)
    if f.dtype == np.uint8:
        return f.astype(np.float64) / 255.0
    return f.astype(np.float64)


def box_center(box):
    x, y, w, h = box
    return y + h / 2.0, x + w / 2.0


def crop_side(box, padding):
    return padding * float(np.sqrt(box[2] * box[3]))


def sample_grid(center, side, out_size):
    """Source coordinates (pixel centers at integer indices) of an ``out_size`` grid over the square."""
    cy, cx = center
    step = side / out_size
    t = (np.arange(out_size) + 0.5) * step - side / 2.0 - 0.5
    return cy + t, cx + t


def bilinear(img, rows, cols):
    """Bilinear lookup on a separable grid; coordinates outside the image replicate the border."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    rows = np.clip(rows, 0, h - 1)
    cols = np.clip(cols, 0, w - 1)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[:, None, None]
    fc = (cols - c0)[None, :, None]
    im = img if img.ndim == 3 else img[:, :, None]
    top = im[r0][:, c0] * (1 - fc) + im[r0][:, c1] * fc
    bot = im[r1][:, c0] * (1 - fc) + im[r1][:, c1] * fc
    out = top * (1 - fr) + bot * fr
    return out if img.ndim == 3 else out[:, :, 0]


def crop_square(frame, center, side, out_size, subtract_mean=True):
    """Resample a ``side``-pixel square around ``center`` (row, col) to ``out_size`` x ``out_size``."""
    if not side > 0:
        raise ValueError(f"crop side must be positive, got {side}")
    rows, cols = sample_grid(center, side, out_size)
    patch = bilinear(to_float(frame), rows, cols)
    if subtract_mean:
        patch = patch - patch.mean(axis=(0, 1), keepdims=True)
    return patch


def resize_bilinear(img, out_h, out_w):
    """Resize with the same pixel-center convention as ``crop_square``."""
    h, w = img.shape[:2]
    rows = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    cols = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    return bilinear(img, rows, cols)


def box_blur(img, radius):
    if radius <= 0:
        return img
    k = 2 * radius + 1
    pad = np.pad(img, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    c = np.cumsum(np.cumsum(pad, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0), (0, 0)))
    return (c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]) / (k * k)


def iou(a, b):
    """Intersection over union of two ``x, y, w, h`` boxes; 0 when the union is empty."""
    ax, ay, aw, ah = (float(v) for v in a)
    bx, by, bw, bh = (float(v) for v in b)
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    # (x + w) - x need not round back to w, so clip the ratio
    return min(1.0, inter / union) if union > 0 else 0.0
