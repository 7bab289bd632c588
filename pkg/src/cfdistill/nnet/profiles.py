"""Named network geometries.

``table3``: VGG-M style trunk at 224x224 input (conv1 7x7/2, conv2 5x5/2,
conv3-5 3x3/1, 2x2 pools after conv1 and conv2). Feature maps are
112 / 56 / 28 / 14 / 14 / 14 cells.

``desk64``: the same five-conv trunk shrunk for CPU experiments at 64x64
input. conv2 keeps stride 1 so the high-level map is 8x8 rather than 4x4.
"""
from math import ceil

from .engine import LayerSpec as L, NetworkSpec

PROFILES = ("table3", "desk64")


def _trunk(input_shape, c, k1, s1, p1, k2, s2, p2, name):
    layers = (
        L.conv(input_shape[2], c[0], k1, s1, p1), L.relu(), L.maxpool(2, 2),
        L.conv(c[0], c[1], k2, s2, p2), L.relu(), L.maxpool(2, 2),
        L.conv(c[1], c[2], 3, 1, 1), L.relu(),
        L.conv(c[2], c[3], 3, 1, 1), L.relu(),
        L.conv(c[3], c[4], 3, 1, 1), L.relu(),
    )
    # taps read the ReLU outputs of conv1, conv2, conv5 (before any pooling)
    return NetworkSpec(layers, input_shape, {"low": 1, "middle": 4, "high": 11}, name)


def teacher_spec(profile="desk64"):
    if profile == "table3":
        return _trunk((224, 224, 3), (96, 256, 512, 512, 512), 7, 2, 3, 5, 2, 2, "table3-teacher")
    if profile == "desk64":
        return _trunk((64, 64, 3), (32, 64, 128, 128, 128), 5, 2, 2, 3, 1, 1, "desk64-teacher")
    raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")


def student_spec(teacher, keep_fraction=1 / 8):
    """Teacher geometry with every conv keeping ``ceil(C * keep_fraction)`` filters."""
    chans = [ceil(teacher.layers[i].out_channels * keep_fraction) for i in teacher.conv_indices]
    s = teacher.with_channels(chans)
    name = teacher.name.replace("teacher", "student") if "teacher" in teacher.name else teacher.name + "-student"
    return type(s)(s.layers, s.input_shape, dict(s.taps), name)
