"""Tiny token-space denoiser with hand-derived gradients.

A residual MLP over visual tokens: per-token input projection plus a shared
additive embedding of (condition, timestep), a stack of tanh residual
blocks, and a linear output head predicting per-token noise. All math is
float64 numpy; the backward pass is written out explicitly and checked
against finite differences in the tests. Parameters live in one flat vector
so optimizers and checkpoints stay trivial.
"""

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class DenoiserConfig:
    d_token: int
    d_hidden: int = 64
    n_blocks: int = 2
    d_cond: int = 8
    d_time: int = 16

    def __post_init__(self):
        if min(self.d_token, self.d_hidden, self.d_cond, self.d_time) < 1:
            raise DomainError("denoiser dims must be positive")
        if self.n_blocks < 1:
            raise DomainError("need at least one residual block")
        if self.d_time % 2:
            raise DomainError("d_time must be even (sin/cos pairs)")


def param_layout(cfg: DenoiserConfig):
    """Ordered (name, shape) pairs defining the flat parameter vector."""
    layout = [
        ("W_in", (cfg.d_token, cfg.d_hidden)),
        ("b_in", (cfg.d_hidden,)),
        ("W_cond", (cfg.d_cond, cfg.d_hidden)),
        ("W_time", (cfg.d_time, cfg.d_hidden)),
    ]
    for i in range(cfg.n_blocks):
        layout += [
            (f"A{i}", (cfg.d_hidden, cfg.d_hidden)),
            (f"a{i}", (cfg.d_hidden,)),
            (f"B{i}", (cfg.d_hidden, cfg.d_hidden)),
            (f"c{i}", (cfg.d_hidden,)),
        ]
    layout += [("W_out", (cfg.d_hidden, cfg.d_token)), ("b_out", (cfg.d_token,))]
    return layout


def n_params(cfg: DenoiserConfig):
    return sum(int(np.prod(shape)) for _, shape in param_layout(cfg))


def _views(cfg, theta):
    """Name -> array view into the flat vector (no copies)."""
    out = {}
    off = 0
    for name, shape in param_layout(cfg):
        size = int(np.prod(shape))
        out[name] = theta[off:off + size].reshape(shape)
        off += size
    if off != theta.size:
        raise DomainError(f"theta has {theta.size} values, layout needs {off}")
    return out


def init_params(cfg: DenoiserConfig, seed=0):
    rng = np.random.default_rng(seed)
    theta = np.empty(n_params(cfg), np.float64)
    for name, view in _views(cfg, theta).items():
        if view.ndim == 1:
            view[:] = 0.0
        elif name.startswith("B"):
            # residual branch starts small so early training stays stable
            view[:] = rng.normal(0.0, 0.1 / math.sqrt(view.shape[0]), view.shape)
        else:
            view[:] = rng.normal(0.0, 1.0 / math.sqrt(view.shape[0]), view.shape)
    return theta


def timestep_embedding(t, d_time):
    """Classic sinusoidal embedding: sin/cos at geometrically spaced rates."""
    half = d_time // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def condition_embedding(tag, d_cond):
    """Fixed (non-learned) embedding for a scene tag: seeded by a stable
    hash of the string, so the same tag maps to the same vector forever."""
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.normal(0.0, 1.0, d_cond)


class Denoiser:
    """f(tokens, condition, t) -> predicted noise tokens, same shape."""

    def __init__(self, cfg: DenoiserConfig, theta):
        self.cfg = cfg
        self.theta = np.asarray(theta, np.float64)
        self.p = _views(cfg, self.theta)

    @classmethod
    def create(cls, cfg: DenoiserConfig, seed=0):
        return cls(cfg, init_params(cfg, seed))

    def replace_theta(self, theta):
        return Denoiser(self.cfg, theta)

    def forward(self, tokens, cond, t, want_cache=False):
        cfg, p = self.cfg, self.p
        tokens = np.asarray(tokens, np.float64)
        if tokens.ndim != 2 or tokens.shape[1] != cfg.d_token:
            raise DomainError(f"tokens must be (K, {cfg.d_token})")
        cond = np.asarray(cond, np.float64)
        if cond.shape != (cfg.d_cond,):
            raise DomainError(f"condition must have dim {cfg.d_cond}")
        te = timestep_embedding(float(t), cfg.d_time)
        shared = cond @ p["W_cond"] + te @ p["W_time"] + p["b_in"]
        h = tokens @ p["W_in"] + shared
        h_ins, zs = [], []
        for i in range(cfg.n_blocks):
            h_ins.append(h)
            z = np.tanh(h @ p[f"A{i}"] + p[f"a{i}"])
            zs.append(z)
            h = h + z @ p[f"B{i}"] + p[f"c{i}"]
        out = h @ p["W_out"] + p["b_out"]
        if want_cache:
            return out, {"tokens": tokens, "cond": cond, "te": te,
                         "h_ins": h_ins, "zs": zs, "h_last": h}
        return out

    def backward(self, cache, grad_out):
        """Gradient of sum(grad_out * forward(...)) w.r.t. the flat theta."""
        cfg, p = self.cfg, self.p
        g = np.zeros_like(self.theta)
        gv = _views(cfg, g)
        h = cache["h_last"]
        gv["W_out"][:] = h.T @ grad_out
        gv["b_out"][:] = grad_out.sum(axis=0)
        dh = grad_out @ p["W_out"].T
        for i in reversed(range(cfg.n_blocks)):
            z, h_in = cache["zs"][i], cache["h_ins"][i]
            gv[f"B{i}"][:] = z.T @ dh
            gv[f"c{i}"][:] = dh.sum(axis=0)
            dz = dh @ p[f"B{i}"].T
            dpre = dz * (1.0 - z * z)
            gv[f"A{i}"][:] = h_in.T @ dpre
            gv[f"a{i}"][:] = dpre.sum(axis=0)
            dh = dh + dpre @ p[f"A{i}"].T
        gv["W_in"][:] = cache["tokens"].T @ dh
        dshared = dh.sum(axis=0)
        gv["b_in"][:] = dshared
        gv["W_cond"][:] = np.outer(cache["cond"], dshared)
        gv["W_time"][:] = np.outer(cache["te"], dshared)
        return g
