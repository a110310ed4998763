"""Equirectangular projection, perspective cameras, and crop rendering.

Conventions (fixed for the whole package):
  - World frame: Y up, +Z forward at the panorama center, longitude
    increasing toward +X (i.e. rightward in the image).
  - Continuous pixel coordinates put the center of pixel (i, j) at
    u = i, v = j; the image therefore spans u in [-0.5, w - 0.5) with
    horizontal wrap and v in [-0.5, h - 0.5] with the poles exactly on
    the boundary.
  - Perspective cameras: x right, y up, z forward in the camera frame,
    horizontal field of view, focal = (width / 2) / tan(fov / 2).
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .rotation import quat_from_yaw_pitch, quat_to_matrix


@dataclass
class EquirectFrame:
    """A 2:1 equirectangular RGB image with samples in [0, 1]."""

    width: int
    height: int
    pixels: np.ndarray  # (height, width, 3) float32

    def __post_init__(self):
        if self.width != 2 * self.height:
            raise DomainError(f"equirect frame must be 2:1, got {self.width}x{self.height}")
        if self.height < 2 or self.height % 2 or self.width % 2:
            raise DomainError("equirect dimensions must be even and >= 2")
        if self.pixels.shape != (self.height, self.width, 3):
            raise DomainError(f"pixel array shape {self.pixels.shape} does not match "
                              f"{self.height}x{self.width}x3")

    @classmethod
    def from_array(cls, pixels):
        pixels = np.asarray(pixels, dtype=np.float32)
        h, w = pixels.shape[:2]
        return cls(width=w, height=h, pixels=pixels)


@dataclass
class PerspectiveCamera:
    """Pinhole camera: horizontal FOV, resolution, world-from-camera pose."""

    fov_deg: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise DomainError(f"fov must be in (0, 180), got {self.fov_deg}")
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.position = np.asarray(self.position, dtype=np.float64)
        if abs(np.linalg.norm(self.rotation) - 1.0) > 1e-9:
            raise DomainError("camera quaternion must be normalized (within 1e-9)")

    @classmethod
    def from_yaw_pitch(cls, fov_deg, width, height, yaw_deg, pitch_deg=0.0, position=None):
        return cls(fov_deg=fov_deg, width=width, height=height,
                   rotation=quat_from_yaw_pitch(yaw_deg, pitch_deg),
                   position=np.zeros(3) if position is None else np.asarray(position, float))

    @property
    def focal_px(self):
        return (self.width / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)


@dataclass
class CropPlan:
    """Per-frame perspective cameras for cropping a panoramic clip."""

    entries: list  # of (frame_index, PerspectiveCamera)
    rng_seed: int

    def __len__(self):
        return len(self.entries)


def dir_from_equirect(u, v, w, h):
    """Unit direction(s) for continuous equirect pixel coordinates.

    u wraps modulo w (the panorama is periodic in longitude); v must lie in
    the continuous image extent [-0.5, h - 0.5], whose endpoints map to the
    zenith and nadir exactly.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise DomainError("pixel coordinates must be finite")
    if np.any(v < -0.5) or np.any(v > h - 0.5):
        raise DomainError(f"v must be within [-0.5, {h - 0.5}]")
    theta = 2.0 * np.pi * (u + 0.5) / w - np.pi
    phi = np.pi / 2.0 - np.pi * (v + 0.5) / h
    cos_phi = np.cos(phi)
    d = np.stack([cos_phi * np.sin(theta), np.sin(phi), cos_phi * np.cos(theta)], axis=-1)
    # renormalize to keep the unit invariant airtight under fp rounding
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def equirect_from_dir(d, w, h):
    """Continuous pixel coordinates (u, v) for unit direction(s).

    Inverse of dir_from_equirect away from the poles; u is wrapped into
    [0, w). The poles map to the v boundary with u = 0 by convention.
    """
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    theta = np.arctan2(x, z)
    phi = np.arcsin(np.clip(y, -1.0, 1.0))
    u = np.mod((theta + np.pi) / (2.0 * np.pi) * w - 0.5, w)
    v = (np.pi / 2.0 - phi) / np.pi * h - 0.5
    at_pole = np.abs(y) >= 1.0 - 1e-12
    u = np.where(at_pole, 0.0, u)
    if u.ndim == 0:
        return float(u), float(v)
    return u, v


def bilinear_sample(pixels, u, v):
    """Bilinearly sample (h, w, c) pixels at continuous coordinates.

    Horizontal wrap, vertical clamp; integer coordinates are pixel centers.
    """
    h, w = pixels.shape[:2]
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x0 = np.floor(u)
    y0 = np.floor(v)
    tx = (u - x0)[..., None]
    ty = (v - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = (x0 + 1) % w
    x0 = x0 % w
    y1 = np.clip(y0 + 1, 0, h - 1)
    y0 = np.clip(y0, 0, h - 1)
    p = pixels.astype(np.float64, copy=False)
    top = p[y0, x0] * (1.0 - tx) + p[y0, x1] * tx
    bot = p[y1, x0] * (1.0 - tx) + p[y1, x1] * tx
    return top * (1.0 - ty) + bot * ty


def camera_rays(cam: PerspectiveCamera):
    """World-space unit ray directions through every pixel center, (H, W, 3)."""
    f = cam.focal_px
    i = np.arange(cam.width, dtype=np.float64)
    j = np.arange(cam.height, dtype=np.float64)
    x = (i + 0.5 - cam.width / 2.0) / f
    y = (cam.height / 2.0 - (j + 0.5)) / f
    xx, yy = np.meshgrid(x, y)
    d = np.stack([xx, yy, np.ones_like(xx)], axis=-1)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return d @ quat_to_matrix(cam.rotation).T


def render_crop(frame: EquirectFrame, cam: PerspectiveCamera):
    """Render a perspective crop of an equirect frame, (H, W, 3) float32.

    Pure rotation: the camera position is ignored because a single equirect
    frame carries no parallax.
    """
    dirs = camera_rays(cam)
    u, v = equirect_from_dir(dirs, frame.width, frame.height)
    return bilinear_sample(frame.pixels, u, v).astype(np.float32)


DEFAULT_PITCH_RANGE_DEG = (-20.0, 20.0)


def make_crop_plan(n_frames, crops_per_frame, fov_deg, res,
                   pitch_range_deg=DEFAULT_PITCH_RANGE_DEG, seed=0):
    """Random crop cameras: yaw uniform over the full circle, pitch uniform
    in pitch_range_deg, roll zero. Deterministic for a given seed."""
    if n_frames < 1 or crops_per_frame < 1:
        raise DomainError("n_frames and crops_per_frame must be >= 1")
    lo, hi = pitch_range_deg
    if lo > hi:
        raise DomainError("pitch range must be ordered (lo, hi)")
    rng = np.random.default_rng(seed)
    entries = []
    for fi in range(n_frames):
        for _ in range(crops_per_frame):
            yaw = rng.uniform(0.0, 360.0)
            pitch = rng.uniform(lo, hi)
            entries.append((fi, PerspectiveCamera.from_yaw_pitch(
                fov_deg, res, res, yaw, pitch)))
    return CropPlan(entries=entries, rng_seed=int(seed))


def save_crop_plan(plan: CropPlan, path):
    """Crop plan as JSON lines: one camera per line."""
    with open(path, "w") as fh:
        for frame_index, cam in plan.entries:
            fh.write(json.dumps({
                "frame_index": frame_index,
                "quat_wxyz": [float(c) for c in cam.rotation],
                "fov_deg": cam.fov_deg,
                "width": cam.width,
                "height": cam.height,
                "seed": plan.rng_seed,
            }) + "\n")


def load_crop_plan(path):
    entries = []
    seed = 0
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            seed = rec["seed"]
            entries.append((rec["frame_index"], PerspectiveCamera(
                fov_deg=rec["fov_deg"], width=rec["width"], height=rec["height"],
                rotation=np.array(rec["quat_wxyz"], dtype=np.float64))))
    return CropPlan(entries=entries, rng_seed=seed)
