"""Gaussian scene types and camera-space projection (EWA) math.

Conventions on this side of the pipeline (matching COLMAP):
  - Camera frame: x right, y DOWN, z forward; world-from-camera pose.
  - Pixel (i, j) has continuous center (i + 0.5, j + 0.5); a point at
    camera coordinates (x, y, z) projects to u = cx + f*x/z, v = cy + f*y/z.
  - Scenes are stored struct-of-arrays in float64 for exact, fast math;
    Gaussian3D is the single-element view used at the edges.

Projection covers the standard 3DGS parameterization: per-gaussian
covariance R diag(s^2) R^T, perspective Jacobian at the mean, and a 0.3 px^2
diagonal floor on the 2D covariance as the anti-aliasing guard.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError

NEAR_PLANE = 0.01
COV2D_FLOOR = 0.3
GUARD_BAND = 0.3  # off-image center tolerance, fraction of image size


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, np.float64)))


def logit(p):
    p = np.asarray(p, np.float64)
    return np.log(p / (1.0 - p))


@dataclass
class Gaussian3D:
    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray  # quaternion (w, x, y, z), need not be unit on input
    opacity_logit: float
    color: np.ndarray  # RGB in [0, 1]


@dataclass
class GaussianScene:
    """Struct-of-arrays gaussian soup plus the ingestion scale factor."""

    positions: np.ndarray  # (n, 3)
    log_scales: np.ndarray  # (n, 3)
    rotations: np.ndarray  # (n, 4) wxyz
    opacity_logits: np.ndarray  # (n,)
    colors: np.ndarray  # (n, 3) in [0, 1]
    scene_scale: float = 1.0

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, np.float64))
        self.log_scales = np.atleast_2d(np.asarray(self.log_scales, np.float64))
        self.rotations = np.atleast_2d(np.asarray(self.rotations, np.float64))
        self.opacity_logits = np.atleast_1d(np.asarray(self.opacity_logits, np.float64))
        self.colors = np.atleast_2d(np.asarray(self.colors, np.float64))
        n = len(self.positions)
        if n < 1:
            raise DomainError("scene must contain at least one gaussian")
        shapes = (self.positions.shape, self.log_scales.shape, self.rotations.shape,
                  self.opacity_logits.shape, self.colors.shape)
        if shapes != ((n, 3), (n, 3), (n, 4), (n,), (n, 3)):
            raise DomainError(f"inconsistent scene array shapes: {shapes}")
        for arr in (self.positions, self.log_scales, self.rotations,
                    self.opacity_logits, self.colors):
            if not np.all(np.isfinite(arr)):
                raise DomainError("scene parameters must be finite")
        if np.any(np.linalg.norm(self.rotations, axis=1) < 1e-12):
            raise DomainError("zero quaternion in scene")
        if np.any(self.colors < 0.0) or np.any(self.colors > 1.0):
            raise DomainError("colors must lie in [0, 1]")

    def __len__(self):
        return len(self.positions)

    @classmethod
    def from_gaussians(cls, gaussians, scene_scale=1.0):
        if not gaussians:
            raise DomainError("scene must contain at least one gaussian")
        return cls(
            positions=np.stack([np.asarray(g.position, float) for g in gaussians]),
            log_scales=np.stack([np.asarray(g.log_scale, float) for g in gaussians]),
            rotations=np.stack([np.asarray(g.rotation, float) for g in gaussians]),
            opacity_logits=np.array([g.opacity_logit for g in gaussians], float),
            colors=np.stack([np.asarray(g.color, float) for g in gaussians]),
            scene_scale=scene_scale)

    def gaussian(self, i):
        return Gaussian3D(position=self.positions[i], log_scale=self.log_scales[i],
                          rotation=self.rotations[i], opacity_logit=float(self.opacity_logits[i]),
                          color=self.colors[i])

    @property
    def opacities(self):
        return sigmoid(self.opacity_logits)

    @property
    def scales(self):
        return np.exp(self.log_scales)


@dataclass
class PosedImage:
    """A pinhole view: optional pixels, intrinsics, world-from-camera pose."""

    width: int
    height: int
    focal: float
    rotation: np.ndarray  # (3, 3) world-from-camera
    position: np.ndarray  # camera center in world
    image: np.ndarray = None  # (height, width, 3) in [0, 1], optional
    cx: float = None
    cy: float = None
    name: str = ""

    def __post_init__(self):
        if self.focal <= 0:
            raise DomainError("focal length must be positive")
        self.rotation = np.asarray(self.rotation, np.float64)
        self.position = np.asarray(self.position, np.float64)
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6:
            raise DomainError(f"pose rotation is not orthonormal (err {err:.2e})")
        if self.cx is None:
            self.cx = self.width / 2.0
        if self.cy is None:
            self.cy = self.height / 2.0

    def w2c(self):
        """World-to-camera rotation and translation: x_cam = R p + t."""
        R = self.rotation.T
        return R, -R @ self.position


def quats_to_matrices(q):
    """Rotation matrices for (n, 4) quaternions, normalized internally."""
    q = np.asarray(q, np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def build_cov3d(log_scales, rotations):
    """Per-gaussian world covariance R S^2 R^T; also returns R and S^2."""
    R = quats_to_matrices(rotations)
    s2 = np.exp(2.0 * np.asarray(log_scales, np.float64))
    cov = np.einsum("nij,nj,nkj->nik", R, s2, R)
    return cov, R, s2


@dataclass
class ProjectionState:
    """Everything the rasterizer kernels and the backward pass need."""

    valid: np.ndarray  # (n,) bool, in front of the near plane
    p_cam: np.ndarray  # (n, 3)
    means2d: np.ndarray  # (n, 2)
    cov2d: np.ndarray  # (n, 2, 2) after the diagonal floor
    inv_cov2d: np.ndarray  # (n, 2, 2)
    depths: np.ndarray  # (n,)
    radii: np.ndarray  # (n,) 3-sigma screen radius, 0 where culled
    J: np.ndarray  # (n, 2, 3) perspective Jacobian at the mean
    W: np.ndarray  # (3, 3) world-to-camera rotation
    cov3d_R: np.ndarray  # (n, 3, 3)
    cov3d_s2: np.ndarray  # (n, 3)
    M_cam: np.ndarray  # (n, 3, 3) camera-frame 3D covariance
    quat_raw: np.ndarray  # (n, 4) as stored (possibly unnormalized)


def project_scene(scene: GaussianScene, cam: PosedImage):
    """EWA-project every gaussian into the camera; culled ones get radius 0.

    Culls behind the near plane and when the projected center falls outside
    the image rectangle expanded by 30% per side: out there the local affine
    approximation of the projection is no longer meaningful and grazing
    gaussians would otherwise smear across the whole frame.
    """
    W, t = cam.w2c()
    p_cam = scene.positions @ W.T + t
    z = p_cam[:, 2]
    valid = z > NEAR_PLANE
    zs = np.where(valid, z, 1.0)  # safe denominator for culled rows

    f = cam.focal
    x, y = p_cam[:, 0], p_cam[:, 1]
    means2d = np.stack([cam.cx + f * x / zs, cam.cy + f * y / zs], axis=-1)
    band_x, band_y = GUARD_BAND * cam.width, GUARD_BAND * cam.height
    valid &= ((means2d[:, 0] > -band_x) & (means2d[:, 0] < cam.width + band_x)
              & (means2d[:, 1] > -band_y) & (means2d[:, 1] < cam.height + band_y))

    J = np.zeros((len(scene), 2, 3))
    J[:, 0, 0] = f / zs
    J[:, 0, 2] = -f * x / zs ** 2
    J[:, 1, 1] = f / zs
    J[:, 1, 2] = -f * y / zs ** 2

    cov3d, R3, s2 = build_cov3d(scene.log_scales, scene.rotations)
    M_cam = np.einsum("ij,njk,lk->nil", W, cov3d, W)
    cov2d = np.einsum("nij,njk,nlk->nil", J, M_cam, J)
    cov2d[:, 0, 0] += COV2D_FLOOR
    cov2d[:, 1, 1] += COV2D_FLOOR

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    inv = np.empty_like(cov2d)
    inv[:, 0, 0] = c / det
    inv[:, 0, 1] = -b / det
    inv[:, 1, 0] = -b / det
    inv[:, 1, 1] = a / det

    # 3-sigma extent from the larger eigenvalue of the 2x2 covariance
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radii = np.where(valid, np.ceil(3.0 * np.sqrt(lam_max)), 0.0)

    return ProjectionState(valid=valid, p_cam=p_cam, means2d=means2d, cov2d=cov2d,
                           inv_cov2d=inv, depths=z, radii=radii, J=J, W=W,
                           cov3d_R=R3, cov3d_s2=s2, M_cam=M_cam,
                           quat_raw=scene.rotations.copy())


def project_gaussian(g: Gaussian3D, cam: PosedImage):
    """Single-gaussian projection: (mean2d, cov2d, depth), or None if culled."""
    scene = GaussianScene(positions=g.position[None], log_scales=g.log_scale[None],
                          rotations=g.rotation[None], opacity_logits=[g.opacity_logit],
                          colors=np.clip(g.color, 0.0, 1.0)[None])
    st = project_scene(scene, cam)
    if not st.valid[0]:
        return None
    return st.means2d[0], st.cov2d[0], float(st.depths[0])
