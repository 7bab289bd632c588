"""Sequence records and the OTB-style directory layout."""
from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_EXT = (".png", ".jpg", ".jpeg")


@dataclass
class SequenceRecord:
    """Frames (uint8 arrays or image paths) with one ``x, y, w, h`` box per frame."""

    name: str
    frames: list
    boxes: np.ndarray
    warnings: list = field(default_factory=list)
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        if len(self.frames) != len(self.boxes) or len(self.frames) < 1:
            raise ValueError(f"{self.name}: {len(self.frames)} frames vs {len(self.boxes)} boxes")
        if np.any(self.boxes[:, 2:] <= 0):
            raise ValueError(f"{self.name}: boxes must have positive area")

    def __len__(self):
        return len(self.frames)

    def frame(self, i):
        f = self.frames[i]
        if isinstance(f, (str, os.PathLike)):
            try:
                with Image.open(f) as im:
                    return np.asarray(im.convert("RGB"))
            except OSError as e:
                raise ValueError(f"{self.name}: unreadable frame {f}: {e}") from None
        return f


_SPLIT = re.compile(r"[,\t ]+")


def parse_groundtruth(text, source="groundtruth_rect.txt"):
    boxes = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        parts = [p for p in _SPLIT.split(line) if p]
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            raise ValueError(f"{source}:{lineno}: malformed box line {line!r}") from None
        if len(vals) != 4:
            raise ValueError(f"{source}:{lineno}: expected 4 values, got {len(vals)}")
        boxes.append(vals)
    return np.array(boxes, dtype=np.float64).reshape(-1, 4)


def load_sequence(path):
    """Read ``img/NNNN.{png,jpg}`` plus ``groundtruth_rect.txt``; counts are reconciled to the shorter."""
    img_dir = os.path.join(path, "img")
    gt_path = os.path.join(path, "groundtruth_rect.txt")
    if not os.path.isdir(img_dir) or not os.path.isfile(gt_path):
        raise ValueError(f"{path}: expected img/ and groundtruth_rect.txt")
    names = [n for n in os.listdir(img_dir) if os.path.splitext(n)[1].lower() in IMAGE_EXT]
    names.sort(key=lambda n: int(re.sub(r"\D", "", os.path.splitext(n)[0]) or 0))
    with open(gt_path) as f:
        boxes = parse_groundtruth(f.read(), gt_path)
    warnings = []
    n = min(len(names), len(boxes))
    if len(names) != len(boxes):
        msg = f"{os.path.basename(path)}: {len(names)} frames but {len(boxes)} boxes; truncated to {n}"
        log.warning(msg)
        warnings.append(msg)
    frames = [os.path.join(img_dir, nm) for nm in names[:n]]
    for fp in frames:
        try:
            with Image.open(fp) as im:
                im.verify()
        except OSError as e:
            raise ValueError(f"{fp}: unreadable frame: {e}") from None
    return SequenceRecord(os.path.basename(os.path.normpath(path)), frames, boxes[:n], warnings)


def write_sequence(seq, path):
    """Write a sequence in the layout ``load_sequence`` reads (PNG frames, comma-separated boxes)."""
    img_dir = os.path.join(path, "img")
    os.makedirs(img_dir, exist_ok=True)
    for i in range(len(seq)):
        Image.fromarray(np.asarray(seq.frame(i), dtype=np.uint8)).save(os.path.join(img_dir, f"{i + 1:04d}.png"))
    with open(os.path.join(path, "groundtruth_rect.txt"), "w") as f:
        for b in seq.boxes:
            f.write(",".join(f"{v:g}" for v in b) + "\n")
