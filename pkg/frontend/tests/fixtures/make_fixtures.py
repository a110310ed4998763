"""Regenerate the viewer test fixtures from the panosplat package.

Run from the repository root with the package installed:

    python3 frontend/tests/fixtures/make_fixtures.py

Writes a 3-gaussian scene in the 32-byte binary format, its JSON sidecar,
a camera description, and the reference image rendered by the package
rasterizer from the DECODED scene (so both renderers see identical
quantized inputs).
"""

import json
from pathlib import Path

import numpy as np

from panosplat.splat_recon.gaussians import GaussianScene, PosedImage
from panosplat.splat_recon.rasterizer import rasterize
from panosplat.splat_recon.scene_io import decode_scene, encode_scene

HERE = Path(__file__).parent


def viewer_camera(yaw_deg, pitch_deg, position):
    """World-from-camera matrix, columns (right, down, forward)."""
    yaw = np.radians(yaw_deg)
    pitch = np.radians(pitch_deg)
    fwd = np.array([np.sin(yaw) * np.cos(pitch), np.sin(pitch),
                    np.cos(yaw) * np.cos(pitch)])
    right = np.array([-np.cos(yaw), 0.0, np.sin(yaw)])
    down = np.cross(fwd, right)
    return np.column_stack([right, down, fwd]), np.asarray(position, float)


def main():
    scene = GaussianScene(
        positions=np.array([[0.35, 0.00, 1.10],
                            [0.62, 0.12, 1.65],
                            [0.18, -0.15, 1.40]]),
        log_scales=np.log([[0.22, 0.15, 0.18],
                           [0.30, 0.21, 0.16],
                           [0.15, 0.26, 0.20]]),
        rotations=np.array([[1.0, 0.0, 0.0, 0.0],
                            [0.9, 0.1, -0.2, 0.3],
                            [0.8, -0.3, 0.1, 0.2]]),
        opacity_logits=np.array([1.2, 0.4, 2.0]),
        colors=np.array([[0.85, 0.20, 0.15],
                         [0.15, 0.45, 0.85],
                         [0.95, 0.80, 0.25]]),
        scene_scale=1.0,
    )
    payload = encode_scene(scene)
    (HERE / "tri.bin").write_bytes(payload)
    (HERE / "tri.json").write_text(json.dumps(
        {"count": len(scene), "scene_scale": 1.0, "version": 1}) + "\n")

    decoded = decode_scene(payload, scene_scale=1.0)
    rot, pos = viewer_camera(14.0, -4.0, [0.0, 0.05, 0.0])
    cam = PosedImage(width=64, height=64, focal=70.0, rotation=rot,
                     position=pos)
    image, alpha = rasterize(decoded, cam, bg=(0.0, 0.0, 0.0))
    image.astype("<f4").tofile(HERE / "tri_reference.bin")
    (HERE / "tri_camera.json").write_text(json.dumps({
        "width": cam.width, "height": cam.height, "focal": cam.focal,
        "cx": cam.cx, "cy": cam.cy,
        "rotation": rot.flatten().tolist(),
        "position": pos.tolist(),
        "background": [0.0, 0.0, 0.0],
        "yaw_deg": 14.0, "pitch_deg": -4.0,
    }, indent=1) + "\n")
    print("wrote", sorted(p.name for p in HERE.glob("tri*")))
    print("alpha coverage:", float(alpha.mean()))


if __name__ == "__main__":
    main()
