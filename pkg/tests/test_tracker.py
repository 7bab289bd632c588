import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfdistill.adapt import AdaptConfig
from cfdistill.distill import Teacher
from cfdistill.imaging import crop_side
from cfdistill.nnet import init_weights, student_spec, teacher_spec
from cfdistill.sequences import SequenceRecord
from cfdistill.spectral import decode_offset
from cfdistill.tracker import (FeatureNet, TrackerConfig, _clamp, extract_patch, fuse_responses, resample_wrapped,
                               track_sequence, tracker_init, tracker_update, write_trajectory)


def _bilinear_ref(img, r, c):
    # direct four-neighbour formula with clamped indices
    h, w = img.shape[:2]
    r = min(max(r, 0.0), h - 1.0)
    c = min(max(c, 0.0), w - 1.0)
    r0, c0 = int(np.floor(r)), int(np.floor(c))
    r1, c1 = min(r0 + 1, h - 1), min(c0 + 1, w - 1)
    fr, fc = r - r0, c - c0
    return ((1 - fr) * (1 - fc) * img[r0, c0] + (1 - fr) * fc * img[r0, c1]
            + fr * (1 - fc) * img[r1, c0] + fr * fc * img[r1, c1])


def _crop_ref(img, box, padding, out):
    x, y, w, h = box
    side = padding * np.sqrt(w * h)
    cy, cx = y + h / 2, x + w / 2
    step = side / out
    p = np.array([[_bilinear_ref(img, cy - side / 2 + (i + 0.5) * step - 0.5, cx - side / 2 + (j + 0.5) * step - 0.5)
                   for j in range(out)] for i in range(out)])
    return p - p.mean(axis=(0, 1))


# --- extract_patch ---

def test_patch_interior_is_pure_resample():
    img = np.random.default_rng(0).random((40, 40, 3))
    box = (15.3, 14.1, 8.0, 10.0)
    p = extract_patch(img, box, 2.0, 10)
    np.testing.assert_allclose(p, _crop_ref(img, box, 2.0, 10), atol=1e-12)


def test_patch_corner_replicates_border():
    img = np.random.default_rng(1).random((30, 30, 3))
    box = (0.0, 0.0, 6.0, 6.0)
    p = extract_patch(img, box, 3.0, 12)
    np.testing.assert_allclose(p, _crop_ref(img, box, 3.0, 12), atol=1e-12)
    # side 18 around (3, 3): cells whose sample row and col are both <= 0 all read pixel (0, 0)
    coords = 3 - 9 + (np.arange(12) + 0.5) * 1.5 - 0.5
    out = coords <= 0
    corner = p[np.ix_(out, out)]
    assert corner.size > 0
    np.testing.assert_allclose(corner, np.broadcast_to(corner[0, 0], corner.shape), atol=1e-15)


def test_patch_checkerboard_downscale():
    cell = 3
    ii, jj = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    board = (((ii // cell) + (jj // cell)) % 2).astype(np.float64)[:, :, None]
    # side 16 over 8 output cells: each sample sits at 2i + 8.5, halfway between two pixels
    p = extract_patch(board, (12.0, 12.0, 8.0, 8.0), 2.0, 8)
    ref = np.zeros((8, 8))
    for i in range(8):
        for j in range(8):
            r, c = 8 + 2 * i, 8 + 2 * j
            ref[i, j] = board[r:r + 2, c:c + 2, 0].mean()
    ref -= ref.mean()
    np.testing.assert_allclose(p[:, :, 0], ref, atol=1e-6)


def test_patch_rejects_zero_area():
    with pytest.raises(ValueError):
        extract_patch(np.zeros((10, 10, 3)), (2, 2, 0, 4), 2.5, 8)


# --- response plumbing ---

def test_decode_wraps_upper_half():
    assert decode_offset(5, 8) == -3
    assert decode_offset(4, 8) == 4
    assert decode_offset(7, 7) == 0
    assert decode_offset(6, 7) == -1


def test_resample_identity_and_constants():
    r = np.random.default_rng(2).random((6, 6))
    assert resample_wrapped(r, (6, 6), 1) is r
    np.testing.assert_allclose(resample_wrapped(np.full((4, 4), 3.0), (8, 8), 0.5), 3.0, atol=1e-14)


def test_resample_keeps_peak_displacement():
    coarse = np.zeros((8, 8))
    coarse[decode_offset(-2, 8) % 8, 3] = 1.0  # displacement (-2, 3) coarse cells
    fine = resample_wrapped(coarse, (16, 16), 0.5)
    r, c = np.unravel_index(np.argmax(fine), fine.shape)
    assert (decode_offset(r, 16), decode_offset(c, 16)) == (-4, 6)


def _fuse_spec():
    return student_spec(teacher_spec("desk64"))


def test_fuse_same_grid_is_weighted_sum():
    spec = _fuse_spec()
    r = np.random.default_rng(3)
    shape = spec.tap_shape("low")[:2]
    resp = {"low": r.random(shape)}
    out, stride = fuse_responses(resp, spec, {"low": 1.0})
    np.testing.assert_array_equal(out, resp["low"])
    assert stride == spec.tap_stride("low")


def test_fuse_equals_weighted_sum_of_resampled():
    spec = _fuse_spec()
    r = np.random.default_rng(4)
    resp = {l: r.random(spec.tap_shape(l)[:2]) for l in ("low", "middle", "high")}
    w = {"low": 0.2, "middle": 0.3, "high": 0.5}
    out, s0 = fuse_responses(resp, spec, w)
    ref = sum(w[l] * resample_wrapped(resp[l], out.shape, s0 / spec.tap_stride(l)) for l in resp)
    assert np.max(np.abs(out - ref)) < 1e-10


# --- tracker ---

@pytest.fixture(scope="module")
def desk_net():
    spec = _fuse_spec()
    return spec, init_weights(spec, 0)


def _texture(seed, size):
    r = np.random.default_rng(seed)
    small = r.random((size // 4, size // 4, 3))
    return (np.kron(small, np.ones((4, 4, 1))) * 255).astype(np.uint8)


def test_init_then_detect_same_frame_is_zero(desk_net):
    spec, w = desk_net
    frame = _texture(5, 128)
    box = (50.0, 46.0, 24.0, 20.0)
    for level in ("low", "middle", "high"):
        cfg = TrackerConfig(level=level, scales=(1.0,), update_rate=0.0)
        state = tracker_init(frame, box, FeatureNet(spec, w), cfg)
        _, new_box, diag = tracker_update(state, frame)
        assert diag["scale"] == 1.0
        cell = spec.tap_stride(level) * crop_side(box, 2.5) / spec.input_shape[0]
        assert np.all(np.abs(new_box - box) <= cell)


def test_table3_label_sizes():
    spec = student_spec(teacher_spec("table3"))
    frame = _texture(6, 256)
    state = tracker_init(frame, (100, 100, 40, 40), FeatureNet(spec, init_weights(spec, 0)))
    assert {l: state.labels[l].map.shape[:2] for l in state.labels} == {
        "low": (112, 112), "middle": (28, 28), "high": (14, 14)}
    assert set(state.filters) == {"low", "middle", "high"}


def test_static_sequence_holds_box(desk_net):
    spec, w = desk_net
    frame = _texture(7, 128)
    box = np.array([40.0, 50.0, 24.0, 24.0])
    seq = SequenceRecord("static", [frame] * 8, np.tile(box, (8, 1)))
    boxes, diags, _, _ = track_sequence(seq, FeatureNet(spec, w))
    cell = spec.tap_stride("low") * crop_side(box, 2.5) / spec.input_shape[0]
    assert np.all(np.abs(boxes[:, :2] - box[:2]) <= cell)


def test_whole_frame_translation_is_followed(desk_net):
    spec, w = desk_net
    big = _texture(8, 192)
    box = np.array([60.0, 60.0, 24.0, 24.0])
    dy, dx = 5, -7
    f0 = big[32:160, 32:160]
    f1 = big[32 - dy:160 - dy, 32 - dx:160 - dx]  # content moves by (+dy, +dx)
    state = tracker_init(f0, box, FeatureNet(spec, w))
    _, new_box, diag = tracker_update(state, f1)
    cell = spec.tap_stride("low") * crop_side(box, 2.5) / spec.input_shape[0]
    assert abs(new_box[0] - box[0] - dx) <= cell and abs(new_box[1] - box[1] - dy) <= cell


def test_frozen_model_keeps_filters(desk_net):
    spec, w = desk_net
    seq_frames = [_texture(9 + i, 128) for i in range(4)]
    state = tracker_init(seq_frames[0], (40, 40, 30, 30), FeatureNet(spec, w), TrackerConfig(update_rate=0.0))
    before = {l: (f.numerator.copy(), f.denominator.copy()) for l, f in state.filters.items()}
    for f in seq_frames[1:]:
        state, _, _ = tracker_update(state, f)
    for l, (num, den) in before.items():
        np.testing.assert_array_equal(state.filters[l].numerator, num)
        np.testing.assert_array_equal(state.filters[l].denominator, den)


def test_tracking_is_deterministic(desk_net):
    spec, w = desk_net
    frames = [_texture(20 + i // 2, 128) for i in range(6)]
    seq = SequenceRecord("det", frames, np.tile([30.0, 40.0, 20.0, 26.0], (6, 1)))
    a = track_sequence(seq, FeatureNet(spec, w))[0]
    b = track_sequence(seq, FeatureNet(spec, w))[0]
    np.testing.assert_array_equal(a, b)


def test_zero_response_holds_box(desk_net):
    spec, w = desk_net
    zero = w.map(np.zeros_like)
    frame = _texture(11, 128)
    box = (40.0, 40.0, 20.0, 20.0)
    state = tracker_init(frame, box, FeatureNet(spec, zero))
    _, new_box, diag = tracker_update(state, _texture(12, 128))
    assert diag["zero_response"]
    np.testing.assert_array_equal(new_box, box)


def test_adapt_with_zero_lr_gives_identical_filters(desk_net):
    spec, w = desk_net
    tspec = teacher_spec("desk64")
    teacher = Teacher.random(tspec, 1)
    w = w.copy()
    w.adapters["high"] = np.zeros((tspec.tap_shape("high")[2], spec.tap_shape("high")[2]))
    frame = _texture(13, 128)
    box = (40.0, 44.0, 24.0, 20.0)
    plain = tracker_init(frame, box, FeatureNet(spec, w))
    adapted = tracker_init(frame, box, FeatureNet(spec, w), adapt=True, teacher=teacher,
                           adapt_config=AdaptConfig(iterations=2, n_pos=2, n_neg=2, lr=0.0))
    for l in plain.filters:
        np.testing.assert_array_equal(plain.filters[l].numerator, adapted.filters[l].numerator)


def test_config_validation():
    with pytest.raises(ValueError):
        TrackerConfig(level="conv9")
    with pytest.raises(ValueError):
        TrackerConfig(fusion={"low": 0.5, "middle": 0.5, "high": 0.5})
    with pytest.raises(ValueError):
        TrackerConfig(update_rate=1.5)


@settings(max_examples=200, deadline=None)
@given(st.floats(-500, 500), st.floats(-500, 500), st.floats(0.5, 300), st.floats(0.5, 300))
def test_clamp_keeps_a_quarter_visible(x, y, w, h):
    H, W = 90, 120
    cx, cy, cw, ch = _clamp((x, y, w, h), (H, W), 0.5)
    vis_w = min(cx + cw, W) - max(cx, 0)
    vis_h = min(cy + ch, H) - max(cy, 0)
    assert cw > 0 and ch > 0
    assert vis_w * vis_h >= 0.25 * cw * ch - 1e-9


def test_trajectory_file(tmp_path):
    boxes = np.array([[1, 2, 3, 4], [1.23456, 2.5, 3.0, 4.125]])
    path = tmp_path / "boxes.txt"
    write_trajectory(str(path), boxes)
    assert path.read_text() == "1.0000,2.0000,3.0000,4.0000\n1.2346,2.5000,3.0000,4.1250\n"
    assert os.listdir(tmp_path) == ["boxes.txt"]
