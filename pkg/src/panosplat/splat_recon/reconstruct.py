"""Optimization-based scene reconstruction from posed images.

Gaussians are seeded at sparse 3D points when a COLMAP model provides them,
otherwise at back-projected random pixels with random depths. Parameters are
fit to an L2 photometric loss with Adam, cycling views round-robin. A window
controller keeps the loss trajectory monotone at 100-iteration granularity:
after each window the mean loss is compared with the previous window's, and
a regression rolls the optimizer back and halves every learning rate before
rerunning the window.
"""

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, PanosplatError, ReconstructionError
from .gaussians import GaussianScene, PosedImage, logit
from .rasterizer import photometric_step

PARAM_KEYS = ("position", "log_scale", "rotation", "opacity_logit", "color")


@dataclass
class ReconstructConfig:
    n_gaussians: int = 20000
    iterations: int = 4000
    window: int = 100
    lr_position: float = 2e-4
    lr_log_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_color: float = 5e-2
    init_depth_range: tuple = (0.2, 2.0)
    init_opacity: float = 0.1
    knn_scale_neighbors: int = 3
    background: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    max_halvings: int = 60

    def learning_rates(self):
        return {"position": self.lr_position, "log_scale": self.lr_log_scale,
                "rotation": self.lr_rotation, "opacity_logit": self.lr_opacity,
                "color": self.lr_color}


class Adam:
    """Per-parameter adaptive steps; zero gradient gives exactly zero update."""

    def __init__(self, shapes, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def step(self, params, grads, lrs):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= lrs[k] * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def snapshot(self):
        return (self.t, {k: v.copy() for k, v in self.m.items()},
                {k: v.copy() for k, v in self.v.items()})

    def restore(self, snap):
        self.t, m, v = snap
        self.m = {k: v2.copy() for k, v2 in m.items()}
        self.v = {k: v2.copy() for k, v2 in v.items()}


def subsample_views(views, k, seed):
    """Stratified pick: the path is cut into k contiguous runs and one view
    is drawn uniformly from each, preserving order."""
    n = len(views)
    if k > n:
        raise DomainError(f"cannot subsample {k} views from {n}")
    if k <= 0:
        raise DomainError("subsample count must be positive")
    rng = np.random.default_rng(seed)
    picks = []
    for s in range(k):
        lo = (s * n) // k
        hi = ((s + 1) * n) // k
        picks.append(int(rng.integers(lo, hi)))
    return [views[i] for i in picks]


def knn_mean_distance(points, k=3, chunk=512):
    """Mean distance to the k nearest other points, blockwise O(n^2)."""
    n = len(points)
    if n <= 1:
        return np.ones(max(n, 0))
    k = min(k, n - 1)
    out = np.empty(n)
    sq = np.sum(points * points, axis=1)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * points[start:stop] @ points.T
        np.maximum(d2, 0.0, out=d2)
        # k+1 smallest include the point itself at distance zero
        part = np.partition(d2, k, axis=1)[:, :k + 1]
        part = np.sort(part, axis=1)[:, 1:]
        out[start:stop] = np.mean(np.sqrt(part), axis=1)
    return out


def params_from_scene(scene: GaussianScene):
    return {
        "position": scene.positions.copy(),
        "log_scale": scene.log_scales.copy(),
        "rotation": scene.rotations.copy(),
        "opacity_logit": scene.opacity_logits.copy(),
        "color": scene.colors.copy(),
    }


def _renormalize_quats(rot):
    """Unit-normalize rows in place, leaving rows already unit within 1e-9
    untouched so a stationary optimization stays bit-stable."""
    norm = np.linalg.norm(rot, axis=1, keepdims=True)
    divisor = np.where(np.abs(norm - 1.0) > 1e-9, norm, 1.0)
    np.divide(rot, divisor, out=rot, where=divisor > 0)
    return rot


def scene_from_params(params, scene_scale=1.0):
    return GaussianScene(
        positions=params["position"],
        log_scales=params["log_scale"],
        rotations=_renormalize_quats(params["rotation"].copy()),
        opacity_logits=params["opacity_logit"],
        colors=np.clip(params["color"], 0.0, 1.0),
        scene_scale=scene_scale,
    )


def init_params(views, config, rng, points=None, point_colors=None):
    """Starting parameter set. With sparse points the positions (and colors
    when given) are drawn from them; otherwise random pixels of random views
    are back-projected at random depths."""
    n = config.n_gaussians
    if points is not None and len(points) > 0:
        points = np.asarray(points, np.float64)
        if len(points) >= n:
            idx = rng.choice(len(points), size=n, replace=False)
            positions = points[idx]
        else:
            idx = rng.choice(len(points), size=n, replace=True)
            # oversampling duplicates points; spread them slightly
            positions = points[idx] + rng.normal(0.0, 1e-3, (n, 3))
        if point_colors is not None and len(point_colors) == len(points):
            colors = np.asarray(point_colors, np.float64)[idx]
            if colors.max() > 1.0:
                colors = colors / 255.0
            colors = np.clip(colors, 0.0, 1.0)
        else:
            colors = rng.uniform(0.2, 0.8, (n, 3))
    else:
        lo, hi = config.init_depth_range
        positions = np.empty((n, 3))
        colors = np.empty((n, 3))
        view_idx = rng.integers(0, len(views), n)
        for i in range(n):
            view = views[view_idx[i]]
            px = int(rng.integers(0, view.width))
            py = int(rng.integers(0, view.height))
            depth = rng.uniform(lo, hi)
            d_cam = np.array([(px + 0.5 - view.cx) / view.focal,
                              (py + 0.5 - view.cy) / view.focal, 1.0])
            positions[i] = view.position + view.rotation @ (depth * d_cam)
            if view.image is not None:
                colors[i] = view.image[py, px]
            else:
                colors[i] = rng.uniform(0.2, 0.8, 3)
        colors = np.clip(colors, 0.0, 1.0)

    dist = knn_mean_distance(positions, k=config.knn_scale_neighbors)
    # sparse pockets (thin point coverage) would seed huge footprints and
    # stall the rasterizer; cap against the batch median
    cap = min(0.5, 2.0 * float(np.median(dist)))
    log_scales = np.log(np.clip(dist, 1e-4, max(cap, 1e-4)))[:, None].repeat(3, axis=1)
    rotations = np.zeros((n, 4))
    rotations[:, 0] = 1.0
    opacity_logits = np.full(n, logit(config.init_opacity))
    return {"position": positions, "log_scale": log_scales,
            "rotation": rotations, "opacity_logit": opacity_logits,
            "color": colors}


def _apply_constraints(params):
    np.clip(params["color"], 0.0, 1.0, out=params["color"])
    _renormalize_quats(params["rotation"])


def _copy_params(params):
    return {k: v.copy() for k, v in params.items()}


def reconstruct(views, config: ReconstructConfig, points=None,
                point_colors=None, init_scene=None, loss_log=None,
                scene_scale=1.0) -> GaussianScene:
    """Fits a gaussian scene to the posed views. Every view needs image data.

    loss_log, when a list, receives the committed per-iteration losses.
    Raises ReconstructionError on divergence, carrying the scene state from
    the last committed window in .last_valid.
    """
    if len(views) == 0:
        raise DomainError("reconstruction needs at least one posed view")
    for v in views:
        if v.image is None:
            raise DomainError(f"view {v.name!r} carries no image data")
    rng = np.random.default_rng(config.seed)
    if init_scene is not None:
        params = params_from_scene(init_scene)
    else:
        params = init_params(views, config, rng, points, point_colors)
    opt = Adam({k: v.shape for k, v in params.items()})
    lrs = config.learning_rates()
    committed = _copy_params(params)
    prev_mean = np.inf
    it = 0
    bg = config.background

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        while it < config.iterations:
            chunk = min(config.window, config.iterations - it)
            halvings = 0
            while True:
                saved_params = _copy_params(params)
                saved_opt = opt.snapshot()
                losses = []
                diverged = False
                for j in range(chunk):
                    view = views[(it + j) % len(views)]
                    try:
                        scene = scene_from_params(params, scene_scale)
                        loss, _, grads = photometric_step(scene, view,
                                                          view.image, bg)
                    except PanosplatError:
                        diverged = True
                        break
                    if not np.isfinite(loss):
                        diverged = True
                        break
                    losses.append(loss)
                    opt.step(params, grads, lrs)
                    _apply_constraints(params)
                if diverged:
                    raise ReconstructionError(
                        f"non-finite state at iteration {it + len(losses)}",
                        last_valid=scene_from_params(committed, scene_scale))
                mean = float(np.mean(losses))
                if mean <= prev_mean or halvings >= config.max_halvings:
                    break
                params = saved_params
                opt.restore(saved_opt)
                lrs = {k: v * 0.5 for k, v in lrs.items()}
                halvings += 1
            prev_mean = mean
            it += chunk
            committed = _copy_params(params)
            if loss_log is not None:
                loss_log.extend(losses)

    return scene_from_params(committed, scene_scale)
