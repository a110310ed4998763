"""Toy masked denoising-diffusion training.

The moving parts, at desk scale: DDPM forward noising under a linear
alpha-bar schedule, lossless patch tokenization, a masked noise-prediction
loss whose gradient is exactly zero on excluded elements, nearest-neighbor
mask resizing to the latent grid, a 1/3-image : 2/3-video batch mixer, and
a plain gradient-descent training step over the denoiser's flat parameter
vector. Images are single-frame videos (T == 1) with all-include masks.
"""

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .capture_prep import LossMask
from .denoiser import Denoiser, DenoiserConfig
from .errors import DomainError, TrainingError


@dataclass
class LatentSequence:
    """Real tensor (T, C, H, W); an image is the T == 1 case."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, np.float64)
        if self.values.ndim != 4:
            raise DomainError("latent must be (T, C, H, W)")
        if self.values.shape[0] < 1:
            raise DomainError("latent needs at least one frame")

    @property
    def shape(self):
        return self.values.shape


@dataclass
class TokenGrid:
    """(K, D) token matrix carrying enough metadata to invert patchify."""

    values: np.ndarray
    patch_size: int
    latent_shape: tuple  # (T, C, H, W)

    @property
    def k(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]


@dataclass
class NoiseSchedule:
    """alpha_bar per timestep: starts at exactly 1, strictly decreasing."""

    alpha_bar: np.ndarray

    def __post_init__(self):
        self.alpha_bar = np.asarray(self.alpha_bar, np.float64)
        a = self.alpha_bar
        if a.ndim != 1 or len(a) < 1:
            raise DomainError("alpha_bar must be a 1-D array")
        if a[0] != 1.0:
            raise DomainError("alpha_bar[0] must be exactly 1")
        if np.any(a <= 0.0) or np.any(a > 1.0):
            raise DomainError("alpha_bar values must lie in (0, 1]")
        if len(a) > 1 and np.any(np.diff(a) >= 0.0):
            raise DomainError("alpha_bar must be strictly decreasing")

    @property
    def n_steps(self):
        return len(self.alpha_bar)

    @classmethod
    def linear(cls, n_steps=1000, final=0.01):
        return cls(alpha_bar=np.linspace(1.0, final, n_steps))


@dataclass
class TrainingSample:
    latent: LatentSequence
    mask: LossMask
    condition: np.ndarray
    kind: str  # "image" | "video"

    def __post_init__(self):
        t, c, h, w = self.latent.shape
        if (self.mask.height, self.mask.width) != (h, w):
            raise DomainError("mask dims must equal latent spatial dims")
        if self.kind not in ("image", "video"):
            raise DomainError("kind must be 'image' or 'video'")
        if self.kind == "image":
            if t != 1:
                raise DomainError("image samples must have T == 1")
            if not np.all(self.mask.bits == 1):
                raise DomainError("image samples carry all-include masks")


def patchify(latent: LatentSequence, p: int):
    """Lossless rearrangement (T, C, H, W) -> (T*(H/p)*(W/p), C*p*p)."""
    t, c, h, w = latent.shape
    if p < 1 or h % p or w % p:
        raise DomainError(f"patch size {p} must divide latent dims {h}x{w}")
    gh, gw = h // p, w // p
    v = latent.values.reshape(t, c, gh, p, gw, p)
    v = v.transpose(0, 2, 4, 1, 3, 5).reshape(t * gh * gw, c * p * p)
    return TokenGrid(values=v, patch_size=p, latent_shape=(t, c, h, w))


def unpatchify(grid: TokenGrid):
    """Exact inverse of patchify."""
    t, c, h, w = grid.latent_shape
    p = grid.patch_size
    gh, gw = h // p, w // p
    v = grid.values.reshape(t, gh, gw, c, p, p)
    v = v.transpose(0, 3, 1, 4, 2, 5).reshape(t, c, h, w)
    return LatentSequence(values=v)


def forward_diffuse(x0: LatentSequence, t: int, eps, sched: NoiseSchedule):
    """DDPM q-sample: x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps."""
    eps = np.asarray(eps, np.float64)
    if eps.shape != x0.shape:
        raise DomainError(f"noise shape {eps.shape} != latent shape {x0.shape}")
    if not 0 <= t < sched.n_steps:
        raise DomainError(f"timestep {t} outside [0, {sched.n_steps})")
    ab = sched.alpha_bar[t]
    return LatentSequence(values=np.sqrt(ab) * x0.values + np.sqrt(1.0 - ab) * eps)


def _broadcast_mask(m: LossMask, shape):
    t, c, h, w = shape
    if (m.height, m.width) != (h, w):
        raise DomainError(f"mask {m.height}x{m.width} does not match latent {h}x{w}")
    return np.broadcast_to(m.bits.astype(np.float64), (t, c, h, w))


def masked_loss(eps_true, eps_pred, m: LossMask):
    """Mean squared noise error over included elements only.

    Normalized by the included-element count (sum(m) * C * T) so magnitude is
    mask-density invariant; an empty mask gives exactly 0.
    """
    loss, _ = masked_loss_and_grad(eps_true, eps_pred, m)
    return loss


def masked_loss_and_grad(eps_true, eps_pred, m: LossMask):
    """Loss plus its gradient w.r.t. eps_pred (exactly 0 where excluded)."""
    a = eps_true.values if isinstance(eps_true, LatentSequence) else np.asarray(eps_true, np.float64)
    b = eps_pred.values if isinstance(eps_pred, LatentSequence) else np.asarray(eps_pred, np.float64)
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch {a.shape} vs {b.shape}")
    mb = _broadcast_mask(m, a.shape)
    count = float(mb.sum())
    if count == 0.0:
        return 0.0, np.zeros_like(b)
    diff = mb * (a - b)
    loss = float(np.sum(diff * diff) / count)
    grad = (-2.0 / count) * mb * diff  # d loss / d eps_pred
    return loss, grad


def resize_mask_nearest(m: LossMask, out_h, out_w):
    """Nearest-neighbor resize under pixel-center mapping (halves round down
    toward the lower index); output stays binary."""
    if out_h < 1 or out_w < 1:
        raise DomainError("output dims must be >= 1")
    ys = np.floor((np.arange(out_h) + 0.5) * (m.height / out_h) - 0.5 + 0.5).astype(np.int64)
    xs = np.floor((np.arange(out_w) + 0.5) * (m.width / out_w) - 0.5 + 0.5).astype(np.int64)
    ys = np.clip(ys, 0, m.height - 1)
    xs = np.clip(xs, 0, m.width - 1)
    return LossMask(width=out_w, height=out_h, bits=m.bits[np.ix_(ys, xs)])


def mixed_batch_sampler(image_pool, video_pool, batch_size, seed):
    """Per-slot Bernoulli(1/3) image-vs-video pick, then a uniform element
    from the chosen pool. Deterministic for a given seed."""
    if not image_pool or not video_pool:
        raise DomainError("both sample pools must be non-empty")
    if batch_size < 3:
        raise DomainError("batch_size must be >= 3")
    rng = np.random.default_rng(seed)
    batch = []
    for _ in range(batch_size):
        if rng.uniform() < 1.0 / 3.0:
            batch.append(image_pool[rng.integers(len(image_pool))])
        else:
            batch.append(video_pool[rng.integers(len(video_pool))])
    return batch


def predict_noise(denoiser: Denoiser, x_t: LatentSequence, p: int, cond, t,
                  want_cache=False):
    """Denoiser applied in token space; output shape equals the input shape."""
    grid = patchify(x_t, p)
    if want_cache:
        out, cache = denoiser.forward(grid.values, cond, t, want_cache=True)
        pred = unpatchify(TokenGrid(out, p, grid.latent_shape))
        return pred, cache
    out = denoiser.forward(grid.values, cond, t)
    return unpatchify(TokenGrid(out, p, grid.latent_shape))


def batch_loss_and_grad(denoiser: Denoiser, batch, sched: NoiseSchedule, p, rng):
    """Mean masked loss over a batch and its gradient w.r.t. theta.

    Per item: draw t uniformly and eps ~ N(0,1), noise the latent, predict,
    and average. The reduction order over the batch is fixed.
    """
    total_loss = 0.0
    total_grad = np.zeros_like(denoiser.theta)
    for sample in batch:
        t = int(rng.integers(sched.n_steps))
        eps = rng.normal(size=sample.latent.shape)
        x_t = forward_diffuse(sample.latent, t, eps, sched)
        pred, cache = predict_noise(denoiser, x_t, p, sample.condition, t,
                                    want_cache=True)
        loss, dpred = masked_loss_and_grad(LatentSequence(eps), pred, sample.mask)
        # gradient flows back through the (lossless) unpatchify rearrangement
        dtokens = patchify(LatentSequence(dpred), p).values
        total_loss += loss
        total_grad += denoiser.backward(cache, dtokens)
    n = len(batch)
    return total_loss / n, total_grad / n


def train_step(denoiser: Denoiser, batch, sched: NoiseSchedule, lr, p, rng):
    """One gradient-descent step; returns (updated denoiser, pre-update loss)."""
    if lr < 0:
        raise DomainError("learning rate must be >= 0")
    loss, grad = batch_loss_and_grad(denoiser, batch, sched, p, rng)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite loss/gradient at lr={lr}: loss={loss}")
    return denoiser.replace_theta(denoiser.theta - lr * grad), loss


@dataclass
class TrainConfig:
    patch_size: int = 4
    d_hidden: int = 64
    n_blocks: int = 2
    d_cond: int = 8
    d_time: int = 16
    n_sched_steps: int = 1000
    lr: float = 1e-3
    batch_size: int = 3
    n_steps: int = 200
    seed: int = 0

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls(**json.load(fh))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2)


def train_loop(denoiser, image_pool, video_pool, cfg: TrainConfig,
               loss_csv_path=None):
    """Seeded training run; returns (trained denoiser, loss curve)."""
    sched = NoiseSchedule.linear(cfg.n_sched_steps)
    rng = np.random.default_rng(cfg.seed)
    losses = []
    for step in range(cfg.n_steps):
        batch = mixed_batch_sampler(image_pool, video_pool, cfg.batch_size,
                                    seed=cfg.seed * 1_000_003 + step)
        denoiser, loss = train_step(denoiser, batch, sched, cfg.lr,
                                    cfg.patch_size, rng)
        losses.append(loss)
    if loss_csv_path:
        with open(loss_csv_path, "w") as fh:
            fh.write("step,loss\n")
            for i, l in enumerate(losses):
                fh.write(f"{i},{l:.8f}\n")
    return denoiser, losses


def save_checkpoint(path_prefix, denoiser: Denoiser, step):
    """Flat little-endian float64 theta plus a JSON header."""
    theta = denoiser.theta.astype("<f8")
    theta.tofile(str(path_prefix) + ".bin")
    header = dataclasses.asdict(denoiser.cfg)
    header.update({"step": int(step), "n_params": int(theta.size), "dtype": "<f8"})
    with open(str(path_prefix) + ".json", "w") as fh:
        json.dump(header, fh, indent=2)


def load_checkpoint(path_prefix):
    with open(str(path_prefix) + ".json") as fh:
        header = json.load(fh)
    cfg = DenoiserConfig(
        d_token=header["d_token"], d_hidden=header["d_hidden"],
        n_blocks=header["n_blocks"], d_cond=header["d_cond"],
        d_time=header["d_time"])
    theta = np.fromfile(str(path_prefix) + ".bin", dtype="<f8")
    if theta.size != header["n_params"]:
        raise TrainingError(f"checkpoint has {theta.size} params, "
                            f"header says {header['n_params']}")
    return Denoiser(cfg, theta), header["step"]
