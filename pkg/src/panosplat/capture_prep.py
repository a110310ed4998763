"""Dataset preparation for panoramic captures.

Turns directories of equirect frame PNGs into fixed-length training clips:
chunking, caption attachment, per-frame mask ingestion, mask merging, and
bottom-band masking. Mask polarity throughout: 1 = include in the loss,
0 = exclude. Mask PNGs use 8-bit gray with value >= 128 meaning include.

Dataset layout (one directory per video):
    frame_000000.png, frame_000001.png, ...
    mask_000000.png,  mask_000001.png,  ...   (optional)
    captions.json                              {clip_id: caption}
"""

import dataclasses
import json
import math
import os
import re
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, MissingCaptionError
from .pano_geometry import EquirectFrame
from .png_io import read_gray_u8, read_png

MASK_INCLUDE_THRESHOLD = 128  # 8-bit gray >= this value means "include"
DEFAULT_BOTTOM_BAND = 0.125


@dataclass
class LossMask:
    """Binary inclusion mask: 1 = include in loss, 0 = exclude."""

    width: int
    height: int
    bits: np.ndarray  # (height, width) uint8 in {0, 1}

    def __post_init__(self):
        if self.bits.shape != (self.height, self.width):
            raise DomainError(f"mask bits shape {self.bits.shape} does not match "
                              f"{self.height}x{self.width}")
        vals = np.unique(self.bits)
        if not np.all(np.isin(vals, (0, 1))):
            raise DomainError("mask values must be 0 or 1")

    @classmethod
    def from_array(cls, bits):
        bits = np.asarray(bits, dtype=np.uint8)
        h, w = bits.shape
        return cls(width=w, height=h, bits=bits)

    @classmethod
    def all_ones(cls, width, height):
        return cls(width=width, height=height, bits=np.ones((height, width), np.uint8))

    @classmethod
    def from_png(cls, path):
        gray = read_gray_u8(path)
        return cls.from_array((gray >= MASK_INCLUDE_THRESHOLD).astype(np.uint8))

    def coverage(self):
        return float(self.bits.mean())


@dataclass
class CaptureClip:
    """A fixed-length run of equirect frames with caption and merged mask."""

    clip_id: str
    frames: list  # of EquirectFrame
    fps: float
    start_frame: int = 0
    caption: str = ""
    merged_mask: LossMask = None

    def __post_init__(self):
        if not self.frames:
            raise DomainError("clip must contain at least one frame")
        if self.fps <= 0:
            raise DomainError("fps must be positive")
        w, h = self.frames[0].width, self.frames[0].height
        for f in self.frames:
            if (f.width, f.height) != (w, h):
                raise DomainError("all frames in a clip must share dimensions")

    def __len__(self):
        return len(self.frames)

    @property
    def duration_s(self):
        return len(self.frames) / self.fps


def chunk_video(frames, clip_len=128, stride=None, fps=12.0, id_prefix="clip"):
    """Split a frame sequence into fully contained fixed-length windows.

    Windows start at i*stride; a trailing window that would run past the end
    is dropped. A sequence shorter than clip_len yields an empty list.
    """
    if clip_len < 1 or (stride is not None and stride < 1):
        raise DomainError("clip_len and stride must be >= 1")
    if stride is None:
        stride = clip_len
    frames = list(frames)
    clips = []
    i = 0
    start = 0
    while start + clip_len <= len(frames):
        clips.append(CaptureClip(
            clip_id=f"{id_prefix}_{i:04d}",
            frames=frames[start:start + clip_len],
            fps=fps, start_frame=start))
        i += 1
        start += stride
    return clips


def merge_masks(per_frame_masks):
    """Pointwise AND of inclusion masks: a pixel survives only if every
    frame includes it (excluded person regions accumulate)."""
    if not per_frame_masks:
        raise DomainError("cannot merge an empty mask list")
    first = per_frame_masks[0]
    out = first.bits.copy()
    for m in per_frame_masks[1:]:
        if (m.width, m.height) != (first.width, first.height):
            raise DomainError("mask dimensions must agree")
        out &= m.bits
    return LossMask(width=first.width, height=first.height, bits=out)


def apply_bottom_band(mask: LossMask, band_fraction=DEFAULT_BOTTOM_BAND):
    """Zero the bottom ceil(band_fraction * height) rows of the mask."""
    if not 0.0 <= band_fraction < 1.0:
        raise DomainError("band_fraction must be in [0, 1)")
    rows = math.ceil(band_fraction * mask.height)
    bits = mask.bits.copy()
    if rows:
        bits[mask.height - rows:, :] = 0
    return LossMask(width=mask.width, height=mask.height, bits=bits)


def load_captions(path):
    with open(path) as fh:
        captions = json.load(fh)
    if not isinstance(captions, dict):
        raise DomainError("captions file must be a JSON object of {clip_id: caption}")
    return captions


def attach_caption(clip: CaptureClip, captions: dict):
    """Attach the caption keyed by clip id; clips without a (non-empty)
    caption are rejected rather than kept silently."""
    if clip.clip_id not in captions:
        raise MissingCaptionError(f"no caption for clip '{clip.clip_id}'")
    caption = str(captions[clip.clip_id]).strip()
    if not caption:
        raise MissingCaptionError(f"empty caption for clip '{clip.clip_id}'")
    return dataclasses.replace(clip, caption=caption)


_FRAME_RE = re.compile(r"frame_(\d{6})\.png$")


def scan_video_dir(video_dir):
    """Sorted frame paths and (possibly missing) mask paths for a video dir."""
    entries = sorted(os.listdir(video_dir))
    frames = []
    for name in entries:
        m = _FRAME_RE.match(name)
        if m:
            frames.append((int(m.group(1)), os.path.join(video_dir, name)))
    frames.sort()
    frame_paths = [p for _, p in frames]
    mask_paths = []
    for idx, p in frames:
        mp = os.path.join(video_dir, f"mask_{idx:06d}.png")
        mask_paths.append(mp if os.path.exists(mp) else None)
    return frame_paths, mask_paths


def prepare_clips(video_dir, clip_len=128, stride=None, fps=12.0,
                  band_fraction=DEFAULT_BOTTOM_BAND, require_captions=True):
    """Load a video directory into caption-attached, mask-merged clips.

    Frames without mask files count as all-include. The per-clip mask is the
    AND over the clip's frames with the bottom band zeroed afterwards.
    """
    frame_paths, mask_paths = scan_video_dir(video_dir)
    if not frame_paths:
        raise DomainError(f"no frame PNGs found in {video_dir}")
    frames = [EquirectFrame.from_array(read_png(p)) for p in frame_paths]
    clips = chunk_video(frames, clip_len=clip_len, stride=stride, fps=fps)
    stride = stride or clip_len

    captions = {}
    captions_path = os.path.join(video_dir, "captions.json")
    if os.path.exists(captions_path):
        captions = load_captions(captions_path)

    out = []
    for clip in clips:
        lo = clip.start_frame
        masks = []
        for k in range(lo, lo + len(clip)):
            if mask_paths[k] is None:
                masks.append(LossMask.all_ones(frames[k].width, frames[k].height))
            else:
                masks.append(LossMask.from_png(mask_paths[k]))
        merged = apply_bottom_band(merge_masks(masks), band_fraction)
        clip = dataclasses.replace(clip, merged_mask=merged)
        if require_captions:
            clip = attach_caption(clip, captions)
        out.append(clip)
    return out


def write_manifest(clips, path):
    """Clip manifest as JSON: ids, extents, timing, caption, mask coverage."""
    records = []
    for c in clips:
        records.append({
            "clip_id": c.clip_id,
            "start_frame": c.start_frame,
            "n_frames": len(c),
            "fps": c.fps,
            "duration_s": round(c.duration_s, 2),
            "caption": c.caption,
            "mask_coverage": round(c.merged_mask.coverage(), 6) if c.merged_mask else None,
        })
    with open(path, "w") as fh:
        json.dump({"clips": records}, fh, indent=2)
    return records
