"""Weight and spec files.

A weight file is one line of JSON header followed by the payload: every
tensor as little-endian float32, in header order. The header carries the
network spec, tensor names and shapes, and a SHA-256 of the payload.
"""
import hashlib
import json
import os
import tempfile

import numpy as np

from .engine import LEVELS, NetworkSpec, NetworkWeights, check_weights

MAGIC = "cfdistill-weights"


class WeightFileError(ValueError):
    pass


def _atomic_write(path, data):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_weights(spec, weights):
    tensors = []
    chunks = []
    for name, a in weights.named_arrays():
        tensors.append({"name": name, "shape": list(a.shape)})
        chunks.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    payload = b"".join(chunks)
    header = {
        "format": MAGIC,
        "version": 1,
        "byte_order": "little",
        "dtype": "float32",
        "spec": spec.to_dict(),
        "tensors": tensors,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    return json.dumps(header, sort_keys=True).encode() + b"\n" + payload


def save_weights(path, spec, weights):
    _atomic_write(path, encode_weights(spec, weights))


def _check_against_spec(header_spec, spec):
    file_conv = [i for i, l in enumerate(header_spec["layers"]) if l["kind"] == "conv"]
    want_conv = spec.conv_indices
    for i in sorted(set(file_conv) | set(want_conv)):
        if i not in file_conv:
            raise WeightFileError(f"layer {i}: expected conv layer missing from file")
        if i not in want_conv:
            raise WeightFileError(f"layer {i}: file has a conv layer the network does not")
        fl = header_spec["layers"][i]
        l = spec.layers[i]
        got = (fl["out_channels"], fl["in_channels"], fl["kernel"])
        want = (l.out_channels, l.in_channels, l.kernel)
        if got != want:
            raise WeightFileError(f"layer {i}: file shape (out, in, K) = {got}, expected {want}")
    if len(header_spec["layers"]) != len(spec.layers):
        raise WeightFileError(f"layer {min(len(header_spec['layers']), len(spec.layers))}: "
                              f"file has {len(header_spec['layers'])} layers, expected {len(spec.layers)}")


def decode_weights(blob, spec=None):
    """Parse a weight file; returns ``(spec, weights)``. Raises ``WeightFileError``."""
    nl = blob.find(b"\n")
    if nl < 0:
        raise WeightFileError("truncated file: no header terminator")
    try:
        header = json.loads(blob[:nl].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise WeightFileError(f"unreadable header: {e}") from None
    if header.get("format") != MAGIC or header.get("byte_order") != "little" or header.get("dtype") != "float32":
        raise WeightFileError("not a little-endian float32 cfdistill weight file")
    payload = blob[nl + 1:]
    if len(payload) != header["payload_bytes"]:
        raise WeightFileError(f"truncated payload: {len(payload)} bytes, header declares {header['payload_bytes']}")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise WeightFileError("checksum mismatch")
    if spec is not None:
        _check_against_spec(header["spec"], spec)
    file_spec = NetworkSpec.from_dict(header["spec"])
    values = np.frombuffer(payload, dtype="<f4")
    kernels, biases, adapters = {}, {}, {}
    off = 0
    for t in header["tensors"]:
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        a = values[off:off + n].astype(np.float64).reshape(t["shape"])
        off += n
        kind, _, part = t["name"].partition(".")
        if kind == "adapter" and part in LEVELS:
            adapters[part] = a
        elif kind.startswith("conv") and part in ("weight", "bias"):
            idx = int(kind[4:])
            (kernels if part == "weight" else biases)[idx] = a
        else:
            raise WeightFileError(f"unknown tensor {t['name']!r}")
    if off != values.size:
        raise WeightFileError("payload size disagrees with declared tensor shapes")
    w = NetworkWeights(kernels, biases, adapters)
    try:
        check_weights(file_spec, w)
    except ValueError as e:
        raise WeightFileError(str(e)) from None
    return file_spec, w


def load_weights(path, spec=None):
    with open(path, "rb") as f:
        return decode_weights(f.read(), spec)


def save_spec(path, spec):
    _atomic_write(path, (json.dumps(spec.to_dict(), indent=2) + "\n").encode())


def load_spec(path):
    with open(path) as f:
        return NetworkSpec.from_dict(json.load(f))
