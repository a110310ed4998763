import numpy as np
import pytest

from panosplat.errors import DomainError
from panosplat.rotation import (
    IDENTITY_QUAT,
    matrix_to_quat,
    quat_from_yaw_pitch,
    quat_multiply,
    quat_normalize,
    quat_to_matrix,
    rot_y,
)


def test_identity_quat_matrix():
    np.testing.assert_allclose(quat_to_matrix(IDENTITY_QUAT), np.eye(3), atol=1e-15)


def test_normalize_rejects_zero_and_nan():
    with pytest.raises(DomainError):
        quat_normalize(np.zeros(4))
    with pytest.raises(DomainError):
        quat_normalize(np.array([np.nan, 0, 0, 0]))


def test_multiply_matches_matrix_product():
    rng = np.random.default_rng(1)
    for _ in range(20):
        qa = quat_normalize(rng.normal(size=4))
        qb = quat_normalize(rng.normal(size=4))
        np.testing.assert_allclose(
            quat_to_matrix(quat_multiply(qa, qb)),
            quat_to_matrix(qa) @ quat_to_matrix(qb), atol=1e-12)


def test_matrix_quat_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(50):
        q = quat_normalize(rng.normal(size=4))
        q2 = matrix_to_quat(quat_to_matrix(q))
        # sign convention: w >= 0, so compare up to sign
        if q[0] < 0:
            q = -q
        np.testing.assert_allclose(q2, q, atol=1e-9)


def test_rot_y_turns_forward_toward_plus_x():
    R = rot_y(90.0)
    np.testing.assert_allclose(R @ [0, 0, 1], [1, 0, 0], atol=1e-12)


def test_positive_pitch_looks_up():
    R = quat_to_matrix(quat_from_yaw_pitch(0.0, 30.0))
    fwd = R @ np.array([0, 0, 1.0])
    assert fwd[1] > 0.49
    # camera up stays upright (no roll)
    up = R @ np.array([0, 1.0, 0])
    assert up[1] > 0.8
    right = R @ np.array([1.0, 0, 0])
    np.testing.assert_allclose(right, [1, 0, 0], atol=1e-12)


def test_yaw_then_pitch_composition():
    q = quat_from_yaw_pitch(90.0, 45.0)
    fwd = quat_to_matrix(q) @ np.array([0, 0, 1.0])
    s = np.sqrt(0.5)
    np.testing.assert_allclose(fwd, [s, s, 0.0], atol=1e-12)
