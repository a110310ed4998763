"""Procedural indoor scene renderer: the ground-truth capture source.

Ray-casts equirectangular frames of a parametric room (checker-textured
axis-aligned box) containing a few solid-color primitives, along a smooth
walking path. Optionally composites a synthetic "photographer" ellipsoid
rigged below/behind the camera together with its exact exclusion mask.

Everything is deterministic: identical inputs give bit-identical frames.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .pano_geometry import EquirectFrame, dir_from_equirect
from .rotation import rot_y

# face order for room textures/normals: +X, -X, +Y, -Y, +Z, -Z
_FACE_AXIS = np.array([0, 0, 1, 1, 2, 2])
_FACE_SIGN = np.array([1, -1, 1, -1, 1, -1])

LIGHT_DIR = np.array([0.35, 0.80, 0.45])
LIGHT_DIR = LIGHT_DIR / np.linalg.norm(LIGHT_DIR)


@dataclass
class Sphere:
    center: np.ndarray
    radius: float
    albedo: np.ndarray


@dataclass
class BoxPrim:
    center: np.ndarray
    half_size: np.ndarray
    albedo: np.ndarray


@dataclass
class RoomSpec:
    """Axis-aligned room with a checker texture on every face."""

    bounds_min: np.ndarray
    bounds_max: np.ndarray
    checker_cell: float
    face_colors: list  # 6 pairs of RGB triples, face order +X,-X,+Y,-Y,+Z,-Z

    def __post_init__(self):
        self.bounds_min = np.asarray(self.bounds_min, dtype=np.float64)
        self.bounds_max = np.asarray(self.bounds_max, dtype=np.float64)
        if np.any(self.bounds_min >= self.bounds_max):
            raise DomainError("room bounds must satisfy min < max per axis")
        if self.checker_cell <= 0:
            raise DomainError("checker cell must be positive")
        if len(self.face_colors) != 6:
            raise DomainError("need exactly 6 face color pairs")

    def contains(self, p, margin=0.0):
        p = np.asarray(p, dtype=np.float64)
        return bool(np.all(p > self.bounds_min + margin) and
                    np.all(p < self.bounds_max - margin))


@dataclass
class SceneSpec:
    room: RoomSpec
    primitives: list = field(default_factory=list)
    ambient: float = 0.35

    def __post_init__(self):
        if not 0.0 <= self.ambient <= 1.0:
            raise DomainError("ambient must be in [0, 1]")
        for prim in self.primitives:
            if isinstance(prim, Sphere):
                lo = np.asarray(prim.center) - prim.radius
                hi = np.asarray(prim.center) + prim.radius
            else:
                lo = np.asarray(prim.center) - np.asarray(prim.half_size)
                hi = np.asarray(prim.center) + np.asarray(prim.half_size)
            if np.any(lo <= self.room.bounds_min) or np.any(hi >= self.room.bounds_max):
                raise DomainError("primitives must lie strictly inside the room")


@dataclass
class WalkPath:
    """Camera path: per-frame position and yaw, plus capture fps."""

    positions: np.ndarray  # (n, 3)
    yaws_deg: np.ndarray  # (n,)
    fps: float = 12.0
    max_step: float = 0.03

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.yaws_deg = np.asarray(self.yaws_deg, dtype=np.float64)
        if len(self.positions) != len(self.yaws_deg):
            raise DomainError("positions and yaws must have equal length")
        if len(self.positions) >= 2:
            steps = np.linalg.norm(np.diff(self.positions, axis=0), axis=1)
            if steps.max() > self.max_step + 1e-12:
                raise DomainError(f"walk step {steps.max():.4f} exceeds max {self.max_step}")

    def __len__(self):
        return len(self.positions)


@dataclass
class BlobSpec:
    """Photographer stand-in: an ellipsoid rigged to the camera frame."""

    offset: np.ndarray = field(default_factory=lambda: np.array([0.0, -0.45, -0.10]))
    radii: np.ndarray = field(default_factory=lambda: np.array([0.18, 0.22, 0.18]))
    color: np.ndarray = field(default_factory=lambda: np.array([0.15, 0.12, 0.10]))

    def __post_init__(self):
        self.offset = np.asarray(self.offset, dtype=np.float64)
        self.radii = np.asarray(self.radii, dtype=np.float64)
        self.color = np.asarray(self.color, dtype=np.float64)
        if np.any(self.radii < 0):
            raise DomainError("blob radii must be non-negative")


def default_scene():
    """Feature-rich checker room: distinct colors per face plus four
    primitives, so pose estimation and splat fitting stay well-conditioned."""
    room = RoomSpec(
        bounds_min=np.array([-1.0, -0.8, -1.2]),
        bounds_max=np.array([1.0, 0.8, 1.2]),
        checker_cell=0.22,
        face_colors=[
            ((0.85, 0.30, 0.25), (0.95, 0.90, 0.82)),  # +X warm red / cream
            ((0.25, 0.45, 0.85), (0.90, 0.93, 0.95)),  # -X blue / white
            ((0.80, 0.80, 0.85), (0.60, 0.62, 0.70)),  # +Y ceiling grays
            ((0.55, 0.40, 0.25), (0.80, 0.70, 0.50)),  # -Y wood-ish floor
            ((0.30, 0.70, 0.40), (0.92, 0.88, 0.75)),  # +Z green / sand
            ((0.75, 0.60, 0.20), (0.35, 0.30, 0.45)),  # -Z gold / plum
        ],
    )
    prims = [
        Sphere(center=np.array([0.45, -0.35, 0.50]), radius=0.18,
               albedo=np.array([0.80, 0.25, 0.20])),
        Sphere(center=np.array([-0.50, -0.30, -0.40]), radius=0.20,
               albedo=np.array([0.20, 0.35, 0.80])),
        BoxPrim(center=np.array([0.00, -0.55, -0.70]),
                half_size=np.array([0.25, 0.24, 0.20]),
                albedo=np.array([0.25, 0.70, 0.30])),
        BoxPrim(center=np.array([-0.55, 0.30, 0.60]),
                half_size=np.array([0.15, 0.15, 0.15]),
                albedo=np.array([0.85, 0.75, 0.20])),
    ]
    return SceneSpec(room=room, primitives=prims)


def _checker_color(room, face, p):
    """Checker albedo for hit points p (n, 3) on one room face."""
    axis = _FACE_AXIS[face]
    a, b = (axis + 1) % 3, (axis + 2) % 3
    idx = (np.floor(p[:, a] / room.checker_cell) +
           np.floor(p[:, b] / room.checker_cell)).astype(np.int64) & 1
    ca, cb = room.face_colors[face]
    return np.where(idx[:, None] == 0, np.asarray(ca, float), np.asarray(cb, float))


def _room_exit(room, origin, dirs):
    """Exit distance and face index for rays starting inside the room."""
    with np.errstate(divide="ignore", invalid="ignore"):
        bounds = np.where(dirs > 0, room.bounds_max, room.bounds_min)
        t = (bounds - origin) / dirs
    t = np.where(np.abs(dirs) < 1e-15, np.inf, t)
    axis = np.argmin(t, axis=-1)
    t_exit = np.take_along_axis(t, axis[:, None], axis=-1)[:, 0]
    sign = np.sign(np.take_along_axis(dirs, axis[:, None], axis=-1)[:, 0])
    face = axis * 2 + (sign < 0).astype(np.int64)
    return t_exit, face


def _sphere_hit(sph, origin, dirs):
    oc = origin - sph.center
    b = dirs @ oc
    c0 = oc @ oc - sph.radius ** 2
    disc = b * b - c0
    ok = disc > 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t_near = -b - sq
    t_far = -b + sq
    t = np.where(t_near > 1e-9, t_near, t_far)
    return np.where(ok & (t > 1e-9), t, np.inf)


def _box_hit(box, origin, dirs):
    lo = box.center - box.half_size
    hi = box.center + box.half_size
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - origin) / dirs
        t2 = (hi - origin) / dirs
    near = np.where(np.abs(dirs) < 1e-15, -np.inf, np.minimum(t1, t2))
    far = np.where(np.abs(dirs) < 1e-15, np.inf, np.maximum(t1, t2))
    t_enter = near.max(axis=-1)
    t_exit = far.min(axis=-1)
    ok = (t_enter <= t_exit) & (t_enter > 1e-9)
    # outside-only: rays starting inside a box are not supported by the walk
    axis = np.argmax(near, axis=-1)
    return np.where(ok, t_enter, np.inf), axis


def _shade(albedo, normal, ambient):
    lam = np.maximum(0.0, normal @ LIGHT_DIR)
    return albedo * (ambient + (1.0 - ambient) * lam)[:, None]


def trace_rays(scene: SceneSpec, origin, dirs):
    """Nearest-hit color and distance for rays from one origin. dirs (n, 3)."""
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n = len(dirs)
    t_room, face = _room_exit(scene.room, origin, dirs)
    t_best = t_room.copy()
    kind = np.full(n, -1, np.int64)  # -1 room, else primitive index
    box_axis = np.zeros(n, np.int64)
    for pi, prim in enumerate(scene.primitives):
        if isinstance(prim, Sphere):
            t = _sphere_hit(prim, origin, dirs)
            closer = t < t_best
        else:
            t, axis = _box_hit(prim, origin, dirs)
            closer = t < t_best
            box_axis = np.where(closer, axis, box_axis)
        kind = np.where(closer, pi, kind)
        t_best = np.where(closer, t, t_best)

    p = origin + t_best[:, None] * dirs
    rgb = np.zeros((n, 3))
    room_sel = kind == -1
    for f in range(6):
        sel = room_sel & (face == f)
        if not sel.any():
            continue
        normal = np.zeros((int(sel.sum()), 3))
        normal[:, _FACE_AXIS[f]] = -_FACE_SIGN[f]  # inward, toward the camera
        rgb[sel] = _shade(_checker_color(scene.room, f, p[sel]), normal, scene.ambient)
    for pi, prim in enumerate(scene.primitives):
        sel = kind == pi
        if not sel.any():
            continue
        if isinstance(prim, Sphere):
            normal = (p[sel] - prim.center) / prim.radius
        else:
            normal = np.zeros((int(sel.sum()), 3))
            ax = box_axis[sel]
            normal[np.arange(len(ax)), ax] = -np.sign(dirs[sel, ax])
        rgb[sel] = _shade(np.broadcast_to(prim.albedo, (int(sel.sum()), 3)), normal,
                          scene.ambient)
    return rgb, t_best


def render_equirect(scene: SceneSpec, position, yaw_deg, h, return_depth=False):
    """Equirect frame (2h x h) ray-cast from a camera inside the room."""
    position = np.asarray(position, dtype=np.float64)
    if h < 2 or h % 2:
        raise DomainError("equirect height must be even and >= 2")
    if not scene.room.contains(position, margin=1e-6):
        raise DomainError(f"camera {position} is outside the room")
    w = 2 * h
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs = dir_from_equirect(uu.ravel(), vv.ravel(), w, h)
    dirs = dirs @ rot_y(yaw_deg).T
    rgb, t = trace_rays(scene, position, dirs)
    frame = EquirectFrame.from_array(
        np.clip(rgb, 0.0, 1.0).reshape(h, w, 3).astype(np.float32))
    if return_depth:
        return frame, t.reshape(h, w)
    return frame


def composite_photographer(frame: EquirectFrame, position, yaw_deg,
                           blob: BlobSpec, scene_depth=None):
    """Paint the camera-rigged ellipsoid over a rendered frame.

    A pixel is painted iff its ray hits the ellipsoid closer than the scene
    surface (scene_depth, same grid; None means the blob always wins).
    Returns the painted frame and the inclusion mask (0 exactly at painted
    pixels, 1 elsewhere).
    """
    h, w = frame.height, frame.width
    mask = np.ones((h, w), np.uint8)
    if np.all(blob.radii == 0):
        return frame, mask
    R = rot_y(yaw_deg)
    center = np.asarray(position, float) + R @ blob.offset
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs = dir_from_equirect(uu.ravel(), vv.ravel(), w, h)
    # ellipsoid axes ride the camera frame: unscale into a unit sphere
    o_l = (R.T @ (np.asarray(position, float) - center)) / blob.radii
    d_l = (dirs @ R) / blob.radii
    a = np.sum(d_l * d_l, axis=-1)
    b = d_l @ o_l
    c0 = o_l @ o_l - 1.0
    disc = b * b - a * c0
    ok = disc > 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t = np.where(ok, (-b - sq) / a, np.inf)
    hit = ok & (t > 1e-9)
    if scene_depth is not None:
        hit &= t < scene_depth.ravel()
    hit = hit.reshape(h, w)
    pixels = frame.pixels.copy()
    shade = 0.75 + 0.25 * np.clip(-dirs[:, 1].reshape(h, w), 0.0, 1.0)
    pixels[hit] = (blob.color[None, :] * shade[hit, None]).astype(np.float32)
    mask[hit] = 0
    return EquirectFrame.from_array(pixels), mask


def make_walk(room: RoomSpec, n_frames, seed, max_step=0.03, margin=0.25,
              y_range=(-0.08, 0.08), fps=12.0):
    """Smooth random walk inside the room: low-pass filtered waypoint route,
    step length capped, yaw drifting slowly. Deterministic per seed."""
    if n_frames < 2:
        raise DomainError("a walk needs at least 2 frames")
    rng = np.random.default_rng(seed)
    lo = room.bounds_min + margin
    hi = room.bounds_max - margin
    n_way = max(3, n_frames // 24)
    way = rng.uniform(lo, hi, size=(n_way, 3))
    cy = 0.5 * (room.bounds_min[1] + room.bounds_max[1])
    way[:, 1] = cy + rng.uniform(y_range[0], y_range[1], size=n_way)

    # piecewise-linear route resampled to n_frames, then box-filtered
    seg = np.linspace(0.0, n_way - 1.0, n_frames)
    i0 = np.clip(seg.astype(np.int64), 0, n_way - 2)
    frac = (seg - i0)[:, None]
    pos = way[i0] * (1 - frac) + way[i0 + 1] * frac
    kernel = np.ones(9) / 9.0
    for _ in range(3):
        padded = np.pad(pos, ((4, 4), (0, 0)), mode="edge")
        pos = np.stack([np.convolve(padded[:, k], kernel, mode="valid")
                        for k in range(3)], axis=1)

    steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    peak = steps.max()
    if peak > max_step:
        centroid = pos.mean(axis=0)
        pos = centroid + (pos - centroid) * (0.95 * max_step / peak)

    yaw0 = rng.uniform(0.0, 360.0)
    turns = rng.normal(0.0, 2.5, size=n_frames)
    padded = np.pad(np.cumsum(turns), (4, 4), mode="edge")
    yaws = yaw0 + np.convolve(padded, kernel, mode="valid")
    return WalkPath(positions=pos, yaws_deg=yaws, fps=fps, max_step=max_step)


# -- JSON round trip -------------------------------------------------------

def scene_to_json(scene: SceneSpec):
    prims = []
    for p in scene.primitives:
        if isinstance(p, Sphere):
            prims.append({"kind": "sphere", "center": list(p.center),
                          "radius": p.radius, "albedo": list(p.albedo)})
        else:
            prims.append({"kind": "box", "center": list(p.center),
                          "half_size": list(p.half_size), "albedo": list(p.albedo)})
    return {
        "room": {
            "bounds_min": list(scene.room.bounds_min),
            "bounds_max": list(scene.room.bounds_max),
            "checker_cell": scene.room.checker_cell,
            "face_colors": [[list(a), list(b)] for a, b in scene.room.face_colors],
        },
        "primitives": prims,
        "ambient": scene.ambient,
    }


def scene_from_json(obj):
    room = RoomSpec(
        bounds_min=np.array(obj["room"]["bounds_min"], float),
        bounds_max=np.array(obj["room"]["bounds_max"], float),
        checker_cell=float(obj["room"]["checker_cell"]),
        face_colors=[(tuple(a), tuple(b)) for a, b in obj["room"]["face_colors"]],
    )
    prims = []
    for p in obj.get("primitives", []):
        if p["kind"] == "sphere":
            prims.append(Sphere(center=np.array(p["center"], float),
                                radius=float(p["radius"]),
                                albedo=np.array(p["albedo"], float)))
        elif p["kind"] == "box":
            prims.append(BoxPrim(center=np.array(p["center"], float),
                                 half_size=np.array(p["half_size"], float),
                                 albedo=np.array(p["albedo"], float)))
        else:
            raise DomainError(f"unknown primitive kind '{p['kind']}'")
    return SceneSpec(room=room, primitives=prims, ambient=float(obj.get("ambient", 0.35)))


def walk_to_json(walk: WalkPath):
    return {"positions": walk.positions.tolist(), "yaws_deg": walk.yaws_deg.tolist(),
            "fps": walk.fps, "max_step": walk.max_step}


def walk_from_json(obj):
    return WalkPath(positions=np.array(obj["positions"], float),
                    yaws_deg=np.array(obj["yaws_deg"], float),
                    fps=float(obj["fps"]), max_step=float(obj.get("max_step", 0.03)))


def save_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)


def load_json(path):
    with open(path) as fh:
        return json.load(fh)
