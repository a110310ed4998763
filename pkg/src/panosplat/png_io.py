"""PNG read/write for float images in [0, 1]. Thin wrapper over Pillow."""

import numpy as np
from PIL import Image


def write_png(path, pixels):
    """Write an (h, w), (h, w, 1), or (h, w, 3) float array in [0, 1] as 8-bit PNG."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    q = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q).save(path)


def read_png(path):
    """Read a PNG as float32 in [0, 1]; grayscale comes back as (h, w)."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return np.asarray(im, dtype=np.float32) / 255.0


def read_gray_u8(path):
    """Read a PNG as raw 8-bit grayscale (h, w) without rescaling."""
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)
