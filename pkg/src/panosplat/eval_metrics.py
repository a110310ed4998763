"""Consistency and quality metrics for reconstructed scenes.

COLMAP matching rate is the registered-image fraction of a scene's largest
sparse model; a scene counts as failed when no model exists or the largest
model registers under 10% of its images. Matching rate across a batch is
reported two ways, per-scene mean and image-pooled, since either reading of
"average matching ratio" is defensible.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, MetricError
from .pano_geometry import bilinear_sample, equirect_from_dir
from .rotation import rot_y
from .synthetic_world import trace_rays

PSNR_SENTINEL_DB = 99.0
FAILURE_REGISTRATION_FLOOR = 0.10


@dataclass
class SceneEvalRecord:
    scene_id: str
    total_images: int
    registered_images: int
    colmap_succeeded: bool
    psnr_heldout: Optional[float] = None

    def __post_init__(self):
        if self.total_images <= 0:
            raise DomainError("record needs a positive image count")
        if not 0 <= self.registered_images <= self.total_images:
            raise DomainError("registered count outside [0, total]")


def matching_rate(record: SceneEvalRecord) -> float:
    if not record.colmap_succeeded:
        raise MetricError(f"matching rate undefined: scene "
                          f"{record.scene_id!r} has no sparse model")
    return record.registered_images / record.total_images


def failure_rate(records) -> float:
    records = list(records)
    if not records:
        raise DomainError("failure rate needs a non-empty batch")
    return sum(1 for r in records if not r.colmap_succeeded) / len(records)


def mean_matching_rate(records) -> float:
    """Per-scene mean over succeeded scenes."""
    rates = [matching_rate(r) for r in records if r.colmap_succeeded]
    if not rates:
        raise MetricError("no succeeded scene in batch")
    return float(np.mean(rates))


def pooled_matching_rate(records) -> float:
    """Images pooled across succeeded scenes."""
    succeeded = [r for r in records if r.colmap_succeeded]
    if not succeeded:
        raise MetricError("no succeeded scene in batch")
    return (sum(r.registered_images for r in succeeded)
            / sum(r.total_images for r in succeeded))


def psnr(render, reference) -> float:
    render = np.asarray(render, np.float64)
    reference = np.asarray(reference, np.float64)
    if render.shape != reference.shape:
        raise DomainError(f"shape mismatch {render.shape} vs {reference.shape}")
    mse = float(np.mean((render - reference) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL_DB
    return min(PSNR_SENTINEL_DB, 10.0 * math.log10(1.0 / mse))


def _sample_directions(rng, n):
    """Area-uniform directions with elevation in [-10, 60] degrees: enough
    sky and wall coverage while staying clear of the photographer blob that
    occupies the straight-down view."""
    lo, hi = math.sin(math.radians(-10.0)), math.sin(math.radians(60.0))
    y = rng.uniform(lo, hi, n)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    r = np.sqrt(1.0 - y * y)
    return np.column_stack([r * np.sin(theta), y, r * np.cos(theta)])


def _sample_frame(frame, yaw_deg, direction):
    d_pano = rot_y(yaw_deg).T @ direction
    h, w = frame.shape[:2]
    u, v = equirect_from_dir(d_pano, w, h)
    return bilinear_sample(frame, np.array([u]), np.array([v]))[0]


def reprojection_consistency(frames, poses, scene, n_points=400, seed=0):
    """Mean absolute color difference of surface points reprojected into
    pairs of capture frames.

    frames: equirect images; poses: (position, yaw_deg) per frame; scene:
    the synthetic geometry that generated them. Points occluded in the
    second frame are skipped; if nothing survives, raises MetricError.
    """
    if n_points <= 0:
        raise MetricError("consistency check needs at least one sample point")
    if len(frames) < 2 or len(frames) != len(poses):
        raise DomainError("need >= 2 frames with one pose each")
    rng = np.random.default_rng(seed)
    dirs = _sample_directions(rng, n_points)
    frame_a = rng.integers(0, len(frames), n_points)
    offset = rng.integers(1, len(frames), n_points)
    errors = []
    for i in range(n_points):
        a = int(frame_a[i])
        b = int((frame_a[i] + offset[i]) % len(frames))
        pos_a = np.asarray(poses[a][0], np.float64)
        pos_b = np.asarray(poses[b][0], np.float64)
        _, t = trace_rays(scene, pos_a, dirs[i][None, :])
        point = pos_a + t[0] * dirs[i]
        to_b = point - pos_b
        dist_b = float(np.linalg.norm(to_b))
        if dist_b < 1e-9:
            continue
        d_b = to_b / dist_b
        _, t_b = trace_rays(scene, pos_b, d_b[None, :])
        if abs(float(t_b[0]) - dist_b) > 1e-6:
            continue  # occluded in frame b
        color_a = _sample_frame(frames[a], poses[a][1], dirs[i])
        color_b = _sample_frame(frames[b], poses[b][1], d_b)
        errors.append(np.mean(np.abs(color_a - color_b)))
    if not errors:
        raise MetricError("no mutually visible surface points sampled")
    return float(np.mean(errors))
