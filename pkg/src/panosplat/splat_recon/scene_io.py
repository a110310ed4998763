"""Binary scene export: 32 bytes per gaussian, little endian.

Layout per record: position 3xf32, scale 3xf32 (linear domain), color RGBA
4xu8 with alpha carrying opacity, quaternion 4xu8 fixed point
(clip(round(q*128)+128, 0, 255), decoded as (b-128)/128). A JSON sidecar
stores count, scene_scale, and format version. Encoding a decoded scene
reproduces the original bytes.
"""

import json
from pathlib import Path

import numpy as np

from ..errors import DomainError
from .gaussians import GaussianScene, sigmoid, logit

FORMAT_VERSION = 1
RECORD_BYTES = 32

_DTYPE = np.dtype([
    ("position", "<f4", 3),
    ("scale", "<f4", 3),
    ("rgba", "u1", 4),
    ("quat", "u1", 4),
])


def encode_scene(scene: GaussianScene) -> bytes:
    n = len(scene)
    rec = np.empty(n, _DTYPE)
    rec["position"] = scene.positions.astype("<f4")
    rec["scale"] = np.exp(scene.log_scales).astype("<f4")
    rgba = np.empty((n, 4))
    rgba[:, :3] = scene.colors
    rgba[:, 3] = sigmoid(scene.opacity_logits)
    rec["rgba"] = np.clip(np.round(rgba * 255.0), 0, 255).astype(np.uint8)
    rec["quat"] = np.clip(np.round(scene.rotations * 128.0) + 128.0,
                          0, 255).astype(np.uint8)
    return rec.tobytes()


def decode_scene(data: bytes, scene_scale=1.0) -> GaussianScene:
    if len(data) % RECORD_BYTES != 0:
        raise DomainError(f"payload of {len(data)} bytes is not a whole "
                          f"number of {RECORD_BYTES}-byte records")
    rec = np.frombuffer(data, _DTYPE)
    if len(rec) == 0:
        raise DomainError("scene payload holds zero gaussians")
    scale = np.maximum(rec["scale"].astype(np.float64), 1e-12)
    alpha = np.clip(rec["rgba"][:, 3] / 255.0, 1e-4, 1.0 - 1e-4)
    return GaussianScene(
        positions=rec["position"].astype(np.float64),
        log_scales=np.log(scale),
        rotations=(rec["quat"].astype(np.float64) - 128.0) / 128.0,
        opacity_logits=logit(alpha),
        colors=rec["rgba"][:, :3] / 255.0,
        scene_scale=scene_scale,
    )


def write_scene(directory, scene: GaussianScene, stem="scene"):
    """Writes <stem>.bin plus <stem>.json sidecar; returns the binary path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    bin_path = directory / f"{stem}.bin"
    bin_path.write_bytes(encode_scene(scene))
    sidecar = {"count": len(scene), "scene_scale": float(scene.scene_scale),
               "version": FORMAT_VERSION}
    (directory / f"{stem}.json").write_text(json.dumps(sidecar, indent=1) + "\n")
    return bin_path


def read_scene(bin_path) -> GaussianScene:
    bin_path = Path(bin_path)
    data = bin_path.read_bytes()
    sidecar_path = bin_path.with_suffix(".json")
    scene_scale = 1.0
    if sidecar_path.exists():
        sidecar = json.loads(sidecar_path.read_text())
        if sidecar.get("version") != FORMAT_VERSION:
            raise DomainError(f"unsupported scene format version "
                              f"{sidecar.get('version')!r}")
        if sidecar.get("count") != len(data) // RECORD_BYTES:
            raise DomainError(f"sidecar count {sidecar.get('count')} does not "
                              f"match payload of {len(data)} bytes")
        scene_scale = float(sidecar.get("scene_scale", 1.0))
    return decode_scene(data, scene_scale=scene_scale)
