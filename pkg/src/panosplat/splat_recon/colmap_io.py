"""COLMAP sparse-model text interop.

Readers parse the documented three-file layout (cameras.txt, images.txt with
alternating pose / 2D-point lines, points3D.txt) and report malformed input
with file and line number. Writers emit the same layout deterministically so
ground-truth poses can stand in for a real COLMAP run.

Frame convention: COLMAP projects with +y down the image, while the panorama
crops are rendered with +y up. Bridging the two with a pure rotation is
impossible (the basis change is a reflection), so every pose and point is
expressed in a mirrored world frame (x negated). Renders are unaffected;
only the pose bookkeeping lives in the mirrored frame.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ColmapParseError, WorkspaceError
from ..png_io import read_png
from ..rotation import matrix_to_quat, quat_to_matrix, rot_y
from .gaussians import PosedImage

# world mirror and the y/z-axis flip between y-up and y-down camera frames
_MIRROR = np.diag([-1.0, 1.0, 1.0])
_YFLIP = np.diag([1.0, -1.0, 1.0])


def mirror_point(p):
    """Panorama-frame world point -> reconstruction-frame world point."""
    return np.asarray(p, np.float64) * np.array([-1.0, 1.0, 1.0])


def splat_pose_from_crop(crop_quat_wxyz, pano_yaw_deg, position):
    """World-from-camera rotation and camera position in the reconstruction
    frame, for a crop taken from a panorama rendered at pano_yaw_deg.

    The crop quaternion lives in the panorama's own frame, so the panorama
    yaw composes on the left. The result is a proper rotation whose camera
    looks down +z with +y down the image.
    """
    r_pan = rot_y(pano_yaw_deg) @ quat_to_matrix(np.asarray(crop_quat_wxyz, np.float64))
    r_wc = _MIRROR @ r_pan @ _YFLIP
    return r_wc, mirror_point(position)


def w2c_quat_t(r_wc, position):
    """COLMAP stores world-to-camera: p_cam = R p_world + t."""
    r_w2c = np.asarray(r_wc, np.float64).T
    t = -r_w2c @ np.asarray(position, np.float64)
    return matrix_to_quat(r_w2c), t


def _fmt(x):
    return f"{float(x):.17g}"


def write_cameras_txt(path, width, height, fx, fy, cx, cy, camera_id=1):
    lines = [
        "# Camera list with one line of data per camera:",
        "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]",
        f"{camera_id} PINHOLE {width} {height} "
        f"{_fmt(fx)} {_fmt(fy)} {_fmt(cx)} {_fmt(cy)}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def write_images_txt(path, entries):
    """entries: iterable of (image_id, quat wxyz, t, camera_id, name).
    The per-image 2D point line is written empty."""
    lines = [
        "# Image list with two lines of data per image:",
        "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
        "#   POINTS2D[] as (X, Y, POINT3D_ID)",
    ]
    for image_id, quat, t, camera_id, name in entries:
        q = " ".join(_fmt(v) for v in quat)
        tv = " ".join(_fmt(v) for v in t)
        lines.append(f"{image_id} {q} {tv} {camera_id} {name}")
        lines.append("")
    Path(path).write_text("\n".join(lines) + "\n")


def write_points3d_txt(path, xyz, rgb):
    """xyz (m,3) float, rgb (m,3) uint8. Tracks are written empty."""
    lines = [
        "# 3D point list with one line of data per point:",
        "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)",
    ]
    xyz = np.asarray(xyz, np.float64)
    rgb = np.asarray(rgb)
    for i in range(len(xyz)):
        coords = " ".join(_fmt(v) for v in xyz[i])
        color = " ".join(str(int(v)) for v in rgb[i])
        lines.append(f"{i + 1} {coords} {color} 0")
    Path(path).write_text("\n".join(lines) + "\n")


def _data_lines(path):
    path = Path(path)
    if not path.exists():
        raise ColmapParseError(str(path), 0, "file missing")
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if line.startswith("#"):
            continue
        yield line_no, line


def _floats(path, line_no, tokens):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ColmapParseError(str(path), line_no,
                               f"expected numbers, got {' '.join(tokens)!r}") from None


def parse_cameras_txt(path):
    cameras = {}
    for line_no, line in _data_lines(path):
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 5:
            raise ColmapParseError(str(path), line_no, "camera line too short")
        try:
            cam_id = int(tokens[0])
            width, height = int(tokens[2]), int(tokens[3])
        except ValueError:
            raise ColmapParseError(str(path), line_no,
                                   "camera id and size must be integers") from None
        model = tokens[1]
        params = _floats(path, line_no, tokens[4:])
        n_expected = {"SIMPLE_PINHOLE": 3, "PINHOLE": 4,
                      "SIMPLE_RADIAL": 4, "RADIAL": 5, "OPENCV": 8}.get(model)
        if n_expected is not None and len(params) != n_expected:
            raise ColmapParseError(str(path), line_no,
                                   f"{model} takes {n_expected} params, "
                                   f"got {len(params)}")
        if model == "PINHOLE":
            fx, fy, cx, cy = params
        elif model in ("SIMPLE_PINHOLE", "SIMPLE_RADIAL", "RADIAL"):
            fx = fy = params[0]
            cx, cy = params[1], params[2]
        elif model == "OPENCV":
            fx, fy, cx, cy = params[:4]
        else:
            raise ColmapParseError(str(path), line_no,
                                   f"unsupported camera model {model!r}")
        cameras[cam_id] = {"model": model, "width": width, "height": height,
                           "fx": fx, "fy": fy, "cx": cx, "cy": cy}
    if not cameras:
        raise ColmapParseError(str(path), 0, "no cameras defined")
    return cameras


def parse_images_txt(path):
    images = []
    expect_points = False
    for line_no, line in _data_lines(path):
        if expect_points:
            # 2D observation line; content unused here, may be empty
            expect_points = False
            continue
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 10:
            raise ColmapParseError(str(path), line_no,
                                   f"image line has {len(tokens)} fields, needs 10")
        try:
            image_id = int(tokens[0])
            camera_id = int(tokens[8])
        except ValueError:
            raise ColmapParseError(str(path), line_no,
                                   "image and camera ids must be integers") from None
        nums = _floats(path, line_no, tokens[1:8])
        images.append({
            "image_id": image_id,
            "quat": np.array(nums[:4]),
            "t": np.array(nums[4:7]),
            "camera_id": camera_id,
            "name": " ".join(tokens[9:]),
        })
        expect_points = True
    return images


def parse_points3d_txt(path):
    xyz = []
    rgb = []
    for line_no, line in _data_lines(path):
        if not line:
            continue
        tokens = line.split()
        if len(tokens) < 8 or (len(tokens) - 8) % 2 != 0:
            raise ColmapParseError(str(path), line_no,
                                   f"point line has {len(tokens)} fields, "
                                   "needs 8 plus track pairs")
        nums = _floats(path, line_no, tokens[1:8])
        xyz.append(nums[:3])
        rgb.append([int(round(v)) for v in nums[3:6]])
    if xyz:
        return np.array(xyz), np.array(rgb, np.uint8)
    return np.zeros((0, 3)), np.zeros((0, 3), np.uint8)


def normalize_positions(positions):
    """Center and rescale so the position bounding box has max extent 1."""
    positions = np.asarray(positions, np.float64)
    lo = positions.min(axis=0)
    hi = positions.max(axis=0)
    center = 0.5 * (lo + hi)
    extent = float(np.max(hi - lo))
    scale = 1.0 / extent if extent > 0 else 1.0
    return center, scale


@dataclass
class IngestResult:
    views: list
    center: np.ndarray
    scale: float
    unregistered: list


def ingest_colmap_poses(sparse_dir, images_dir=None) -> IngestResult:
    """Loads a sparse model, inverts poses to world-from-camera, and rescales
    so that the camera-position bounding box has max extent 1. When
    images_dir is given each pose is paired with its image and image files
    never registered by the model are reported in `unregistered`."""
    sparse_dir = Path(sparse_dir)
    cameras = parse_cameras_txt(sparse_dir / "cameras.txt")
    records = parse_images_txt(sparse_dir / "images.txt")

    raw = []
    for rec in records:
        cam = cameras.get(rec["camera_id"])
        if cam is None:
            raise ColmapParseError(str(sparse_dir / "images.txt"), 0,
                                   f"image {rec['name']} references unknown "
                                   f"camera {rec['camera_id']}")
        r_w2c = quat_to_matrix(rec["quat"])
        r_wc = r_w2c.T
        position = -r_w2c.T @ rec["t"]
        raw.append((rec["name"], cam, r_wc, position))

    if raw:
        center, scale = normalize_positions(np.array([p for *_, p in raw]))
    else:
        center, scale = np.zeros(3), 1.0

    views = []
    for name, cam, r_wc, position in raw:
        image = None
        if images_dir is not None:
            img_path = Path(images_dir) / name
            if not img_path.exists():
                raise WorkspaceError(f"registered image {name} missing from "
                                     f"{images_dir}")
            image = read_png(img_path)
        views.append(PosedImage(
            width=cam["width"], height=cam["height"],
            focal=0.5 * (cam["fx"] + cam["fy"]),
            rotation=r_wc, position=(position - center) * scale,
            image=image, cx=cam["cx"], cy=cam["cy"], name=name,
        ))

    unregistered = []
    if images_dir is not None:
        named = {v.name for v in views}
        unregistered = sorted(p.name for p in Path(images_dir).glob("*.png")
                              if p.name not in named)
    return IngestResult(views=views, center=center, scale=scale,
                        unregistered=unregistered)
