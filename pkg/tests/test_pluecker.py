import numpy as np
import pytest

from panosplat.errors import DomainError
from panosplat.rotation import quat_normalize, quat_to_matrix
from panosplat.splat_recon.gaussians import PosedImage
from panosplat.splat_recon.rays import (
    PlueckerRay,
    load_pluecker,
    pluecker_from_pixel,
    pluecker_grid,
    save_pluecker,
)


def cam(position=(0.0, 0.0, 0.0), rotation=None, width=17, height=17, focal=20.0):
    r = np.eye(3) if rotation is None else rotation
    return PosedImage(width=width, height=height, focal=focal,
                      rotation=r, position=np.asarray(position, float))


class TestPlueckerFromPixel:
    def test_origin_camera_zero_moment(self):
        c = cam()
        for u in (0, 5, 16):
            for v in (0, 8, 16):
                ray = pluecker_from_pixel(c, u, v)
                assert np.array_equal(ray.moment, np.zeros(3))

    def test_hand_cross_product(self):
        # center pixel of an odd 17x17 frame looks straight down +z
        c = cam(position=(1.0, 0.0, 0.0))
        ray = pluecker_from_pixel(c, 8, 8)
        assert np.allclose(ray.direction, [0.0, 0.0, 1.0], atol=1e-12)
        assert np.allclose(ray.moment, [0.0, -1.0, 0.0], atol=1e-12)

    def test_translation_along_ray_invariant(self):
        c1 = cam(position=(0.3, -0.2, 0.5))
        ray1 = pluecker_from_pixel(c1, 3, 11)
        c2 = cam(position=c1.position + 2.7 * ray1.direction)
        ray2 = pluecker_from_pixel(c2, 3, 11)
        assert np.allclose(ray1.direction, ray2.direction, atol=1e-12)
        assert np.allclose(ray1.moment, ray2.moment, atol=1e-12)

    def test_constraints_hold_for_rotated_camera(self):
        r = quat_to_matrix(quat_normalize(np.array([0.9, 0.2, -0.3, 0.25])))
        c = cam(position=(1.0, 2.0, -0.5), rotation=r)
        for u in range(0, 17, 4):
            for v in range(0, 17, 4):
                ray = pluecker_from_pixel(c, u, v)
                assert abs(np.linalg.norm(ray.direction) - 1.0) <= 1e-9
                assert abs(ray.direction @ ray.moment) <= 1e-9

    def test_out_of_bounds_rejected(self):
        c = cam()
        for u, v in [(-1, 0), (0, -1), (17, 0), (0, 17)]:
            with pytest.raises(DomainError):
                pluecker_from_pixel(c, u, v)

    def test_ray_type_validates(self):
        with pytest.raises(DomainError):
            PlueckerRay(direction=np.array([2.0, 0.0, 0.0]),
                        moment=np.zeros(3))
        with pytest.raises(DomainError):
            PlueckerRay(direction=np.array([1.0, 0.0, 0.0]),
                        moment=np.array([1.0, 0.0, 0.0]))


class TestPlueckerGrid:
    def test_matches_per_pixel_rays(self):
        r = quat_to_matrix(quat_normalize(np.array([0.8, -0.1, 0.4, 0.2])))
        c = cam(position=(0.5, 1.5, -2.0), rotation=r, width=9, height=7)
        grid = pluecker_grid(c)
        assert grid.shape == (6, 7, 9)
        assert grid.dtype == np.float32
        for u, v in [(0, 0), (4, 3), (8, 6)]:
            ray = pluecker_from_pixel(c, u, v)
            assert np.allclose(grid[:3, v, u], ray.direction, atol=1e-6)
            assert np.allclose(grid[3:, v, u], ray.moment, atol=1e-6)

    def test_constraint_holds_across_grid(self):
        c = cam(position=(0.2, 0.4, 0.6))
        grid = pluecker_grid(c).astype(np.float64)
        dots = np.sum(grid[:3] * grid[3:], axis=0)
        assert np.max(np.abs(dots)) <= 1e-6  # f32 storage

    def test_dump_round_trip(self, tmp_path):
        c = cam(width=9, height=7)
        path = tmp_path / "rays.bin"
        shape = save_pluecker(path, c)
        assert shape == (6, 7, 9)
        assert path.stat().st_size == 6 * 7 * 9 * 4
        loaded = load_pluecker(path, 7, 9)
        assert np.array_equal(loaded, pluecker_grid(c))

    def test_dump_size_mismatch_rejected(self, tmp_path):
        path = tmp_path / "rays.bin"
        np.zeros(10, "<f4").tofile(path)
        with pytest.raises(DomainError):
            load_pluecker(path, 7, 9)
