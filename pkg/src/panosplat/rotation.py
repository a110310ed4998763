"""Quaternion and rotation-matrix helpers.

Quaternions are stored as (w, x, y, z) float64 arrays and represent proper
rotations. World frame convention used throughout the package: Y up, +Z is
the forward direction at the center of an equirectangular image, and
longitude increases toward +X.
"""

import math

import numpy as np

from .errors import DomainError

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise DomainError("cannot normalize zero or non-finite quaternion")
    return q / n


def quat_multiply(a, b):
    """Hamilton product a * b, both (w, x, y, z)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_to_matrix(q):
    """Rotation matrix for a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m):
    """Unit quaternion (w, x, y, z) for a proper rotation matrix.

    Uses the trace-based branch selection for numerical stability; the
    returned quaternion has non-negative w.
    """
    m = np.asarray(m, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([
            0.25 * s,
            (m[2, 1] - m[1, 2]) / s,
            (m[0, 2] - m[2, 0]) / s,
            (m[1, 0] - m[0, 1]) / s,
        ])
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(1.0 + m[i, i] - m[j, j] - m[k, k], 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def rot_y(deg):
    """Rotation about world +Y; positive angle turns +Z toward +X."""
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def quat_from_yaw_pitch(yaw_deg, pitch_deg=0.0):
    """Camera orientation from yaw then pitch, roll fixed at zero.

    Yaw rotates about world +Y (positive turns the view toward increasing
    longitude); pitch tilts about the camera's local x axis (positive looks
    up, toward +Y). Camera axes: x right, y up, z forward.
    """
    hy = math.radians(yaw_deg) / 2.0
    hp = math.radians(-pitch_deg) / 2.0
    q_yaw = np.array([math.cos(hy), 0.0, math.sin(hy), 0.0])
    q_pitch = np.array([math.cos(hp), math.sin(hp), 0.0, 0.0])
    return quat_multiply(q_yaw, q_pitch)
