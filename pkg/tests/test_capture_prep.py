import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from panosplat.capture_prep import (
    CaptureClip,
    LossMask,
    apply_bottom_band,
    attach_caption,
    chunk_video,
    merge_masks,
    prepare_clips,
    write_manifest,
)
from panosplat.errors import DomainError, MissingCaptionError
from panosplat.pano_geometry import EquirectFrame
from panosplat.png_io import write_png


def _tiny_frames(n, h=2, value=0.5):
    pixels = np.full((h, 2 * h, 3), value, np.float32)
    return [EquirectFrame.from_array(pixels) for _ in range(n)]


def test_chunk_counts_long_sequence():
    clips = chunk_video(_tiny_frames(1500), clip_len=128, stride=128)
    assert len(clips) == 11  # floor(1500 / 128)
    assert all(len(c) == 128 for c in clips)


def test_chunk_exact_fit():
    assert len(chunk_video(_tiny_frames(128), clip_len=128)) == 1


def test_chunk_too_short_is_empty():
    assert chunk_video(_tiny_frames(100), clip_len=128) == []


def test_chunk_disjoint_gap_free():
    clips = chunk_video(_tiny_frames(1000), clip_len=128, stride=128)
    starts = [c.start_frame for c in clips]
    assert starts == [i * 128 for i in range(len(clips))]
    assert starts[-1] + 128 <= 1000 < starts[-1] + 2 * 128


def test_chunk_overlapping_stride():
    clips = chunk_video(_tiny_frames(10), clip_len=4, stride=2)
    assert [c.start_frame for c in clips] == [0, 2, 4, 6]


def test_chunk_rejects_bad_args():
    with pytest.raises(DomainError):
        chunk_video(_tiny_frames(10), clip_len=0)
    with pytest.raises(DomainError):
        chunk_video(_tiny_frames(10), clip_len=4, stride=0)


def test_clip_duration_matches_nominal_capture_length():
    clip = chunk_video(_tiny_frames(128), clip_len=128, fps=12.0)[0]
    assert round(clip.duration_s, 2) == 10.67
    clip24 = chunk_video(_tiny_frames(128), clip_len=128, fps=24.0)[0]
    assert round(clip24.duration_s, 2) == 5.33


def test_clip_rejects_mixed_dims():
    frames = _tiny_frames(2, h=2) + _tiny_frames(1, h=4)
    with pytest.raises(DomainError):
        CaptureClip(clip_id="x", frames=frames, fps=12.0)


def test_mask_rejects_non_binary():
    with pytest.raises(DomainError):
        LossMask.from_array(np.full((2, 3), 2, np.uint8))


def test_merge_identical_is_identity():
    m = LossMask.from_array(np.array([[1, 0], [0, 1]], np.uint8))
    out = merge_masks([m, m])
    np.testing.assert_array_equal(out.bits, m.bits)


def test_merge_exclusion_wins():
    a = LossMask.from_array(np.ones((2, 2), np.uint8))
    b_bits = np.ones((2, 2), np.uint8)
    b_bits[1, 0] = 0
    b = LossMask.from_array(b_bits)
    out = merge_masks([a, b])
    assert out.bits[1, 0] == 0
    assert out.bits.sum() == 3


def test_merge_128_all_ones():
    masks = [LossMask.all_ones(4, 2) for _ in range(128)]
    np.testing.assert_array_equal(merge_masks(masks).bits, 1)


def test_merge_rejects_mismatch_and_empty():
    with pytest.raises(DomainError):
        merge_masks([LossMask.all_ones(2, 2), LossMask.all_ones(4, 2)])
    with pytest.raises(DomainError):
        merge_masks([])


@given(st.lists(st.integers(0, 2 ** 12 - 1), min_size=2, max_size=4))
@settings(max_examples=40, deadline=None)
def test_merge_commutative_associative_idempotent(packed):
    masks = [LossMask.from_array(
        np.array([(p >> k) & 1 for k in range(12)], np.uint8).reshape(3, 4))
        for p in packed]
    fwd = merge_masks(masks)
    rev = merge_masks(masks[::-1])
    np.testing.assert_array_equal(fwd.bits, rev.bits)
    np.testing.assert_array_equal(merge_masks([fwd, fwd]).bits, fwd.bits)
    nested = merge_masks([merge_masks(masks[:1]), merge_masks(masks[1:])])
    np.testing.assert_array_equal(nested.bits, fwd.bits)


def test_bottom_band_zero_fraction_unchanged():
    m = LossMask.from_array(np.ones((8, 16), np.uint8))
    np.testing.assert_array_equal(apply_bottom_band(m, 0.0).bits, m.bits)


def test_bottom_band_352_rows():
    m = LossMask.all_ones(704, 352)
    out = apply_bottom_band(m, 0.125)
    assert (out.bits[-44:] == 0).all()  # ceil(0.125 * 352) = 44
    assert (out.bits[:-44] == 1).all()


def test_bottom_band_idempotent_and_monotone():
    rng = np.random.default_rng(0)
    m = LossMask.from_array(rng.integers(0, 2, (16, 32)).astype(np.uint8))
    once = apply_bottom_band(m, 0.25)
    twice = apply_bottom_band(once, 0.25)
    np.testing.assert_array_equal(once.bits, twice.bits)
    wider = apply_bottom_band(m, 0.5)
    assert np.all(wider.bits <= once.bits)


def test_bottom_band_validates_fraction():
    m = LossMask.all_ones(4, 4)
    with pytest.raises(DomainError):
        apply_bottom_band(m, 1.0)
    with pytest.raises(DomainError):
        apply_bottom_band(m, -0.1)


def test_attach_caption_verbatim_stripped():
    clip = chunk_video(_tiny_frames(4), clip_len=4)[0]
    out = attach_caption(clip, {"clip_0000": "  a cozy living room\n"})
    assert out.caption == "a cozy living room"
    assert clip.caption == ""  # original untouched


def test_attach_caption_missing_or_empty_rejected():
    clip = chunk_video(_tiny_frames(4), clip_len=4)[0]
    with pytest.raises(MissingCaptionError):
        attach_caption(clip, {})
    with pytest.raises(MissingCaptionError):
        attach_caption(clip, {"clip_0000": "   "})


def _write_dataset(root, n_frames, h=8, excluded_px=None):
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(1)
    for i in range(n_frames):
        write_png(root / f"frame_{i:06d}.png", rng.uniform(size=(h, 2 * h, 3)))
        mask = np.ones((h, 2 * h), np.float64)
        if excluded_px and i == excluded_px[0]:
            mask[excluded_px[1], excluded_px[2]] = 0.0
        write_png(root / f"mask_{i:06d}.png", mask)


def test_prepare_clips_end_to_end(tmp_path):
    video = tmp_path / "vid"
    _write_dataset(video, n_frames=8, h=8, excluded_px=(5, 2, 3))
    with open(video / "captions.json", "w") as fh:
        json.dump({"clip_0000": "checker room", "clip_0001": "checker room again"}, fh)
    clips = prepare_clips(video, clip_len=4, fps=12.0, band_fraction=0.125)
    assert [c.clip_id for c in clips] == ["clip_0000", "clip_0001"]
    assert clips[0].caption == "checker room"
    # frame 5 lives in the second clip; its excluded pixel must survive the merge
    assert clips[1].merged_mask.bits[2, 3] == 0
    assert clips[0].merged_mask.bits[2, 3] == 1
    # bottom band: ceil(0.125 * 8) = 1 row zeroed
    assert (clips[0].merged_mask.bits[-1] == 0).all()
    manifest = write_manifest(clips, tmp_path / "manifest.json")
    assert manifest[0]["duration_s"] == round(4 / 12.0, 2)
    with open(tmp_path / "manifest.json") as fh:
        assert len(json.load(fh)["clips"]) == 2


def test_prepare_clips_requires_captions(tmp_path):
    video = tmp_path / "vid"
    _write_dataset(video, n_frames=4, h=8)
    with pytest.raises(MissingCaptionError):
        prepare_clips(video, clip_len=4)
    clips = prepare_clips(video, clip_len=4, require_captions=False)
    assert len(clips) == 1 and clips[0].caption == ""
