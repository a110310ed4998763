"""Pluecker-coordinate ray representation for posed pinhole cameras.

A ray through camera position o with unit direction d is stored as the pair
(d, m) with moment m = o x d. The pair is independent of where along the ray
o sits, and d . m = 0 always holds.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError
from .gaussians import PosedImage


@dataclass(frozen=True)
class PlueckerRay:
    direction: np.ndarray
    moment: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, np.float64)
        m = np.asarray(self.moment, np.float64)
        if d.shape != (3,) or m.shape != (3,):
            raise DomainError("ray needs 3-vector direction and moment")
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise DomainError("ray direction must be unit length")
        if abs(float(d @ m)) > 1e-9:
            raise DomainError("ray moment must be orthogonal to direction")
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "moment", m)


def pluecker_from_pixel(img: PosedImage, u, v) -> PlueckerRay:
    """Ray through the center of pixel (u, v); u indexes columns, v rows."""
    if not (0 <= u < img.width and 0 <= v < img.height):
        raise DomainError(f"pixel ({u}, {v}) outside {img.width}x{img.height} image")
    d_cam = np.array([(u + 0.5 - img.cx) / img.focal,
                      (v + 0.5 - img.cy) / img.focal,
                      1.0])
    d = img.rotation @ d_cam
    d /= np.linalg.norm(d)
    return PlueckerRay(direction=d, moment=np.cross(img.position, d))


def pluecker_grid(img: PosedImage) -> np.ndarray:
    """All pixel rays at once: float32 array shaped (6, H, W), channels
    (dx, dy, dz, mx, my, mz)."""
    us, vs = np.meshgrid(np.arange(img.width), np.arange(img.height))
    d_cam = np.stack([(us + 0.5 - img.cx) / img.focal,
                      (vs + 0.5 - img.cy) / img.focal,
                      np.ones_like(us, np.float64)], axis=-1)
    d = d_cam @ img.rotation.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    m = np.cross(np.broadcast_to(img.position, d.shape), d)
    return np.concatenate([d, m], axis=-1).transpose(2, 0, 1).astype(np.float32)


def save_pluecker(path, img: PosedImage):
    """Raw little-endian f32 dump of pluecker_grid, C order."""
    grid = pluecker_grid(img)
    grid.astype("<f4").tofile(path)
    return grid.shape


def load_pluecker(path, height, width) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    if data.size != 6 * height * width:
        raise DomainError(f"ray dump {path} has {data.size} floats, "
                          f"expected {6 * height * width}")
    return data.reshape(6, height, width)
