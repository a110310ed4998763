import math

import numpy as np
import pytest

from panosplat.errors import DomainError
from panosplat.splat_recon.gaussians import (
    GaussianScene,
    Gaussian3D,
    PosedImage,
    project_gaussian,
    project_scene,
)
from panosplat.splat_recon.rasterizer import rasterize, rasterize_backward

TILE = 16


def composite_oracle(means2d, inv_abc, radii, order, opac, colors, width, height, bg):
    """Per-pixel front-to-back compositing, written independently of the
    tiled kernel but with the same arithmetic expressions so results must
    agree bit for bit."""
    img = np.zeros((height, width, 3))
    alpha = np.zeros((height, width))
    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE
    for py in range(height):
        for px in range(width):
            T = 1.0
            acc = [0.0, 0.0, 0.0]
            for g in order:
                r = radii[g]
                if r <= 0.0:
                    continue
                x0 = means2d[g, 0] - r
                x1 = means2d[g, 0] + r
                y0 = means2d[g, 1] - r
                y1 = means2d[g, 1] + r
                if x1 < 0.0 or y1 < 0.0 or x0 > width or y0 > height:
                    continue
                ax0 = max(0, min(ntx - 1, int(x0 // TILE)))
                ax1 = max(0, min(ntx - 1, int(x1 // TILE)))
                ay0 = max(0, min(nty - 1, int(y0 // TILE)))
                ay1 = max(0, min(nty - 1, int(y1 // TILE)))
                if not (ax0 <= px // TILE <= ax1 and ay0 <= py // TILE <= ay1):
                    continue
                dx = (px + 0.5) - means2d[g, 0]
                dy = (py + 0.5) - means2d[g, 1]
                power = -0.5 * (inv_abc[g, 0] * dx * dx
                                + 2.0 * inv_abc[g, 1] * dx * dy
                                + inv_abc[g, 2] * dy * dy)
                if power > 0.0:
                    continue
                a = opac[g] * math.exp(power)
                if a > 0.99:
                    a = 0.99
                if a < 1.0 / 255.0:
                    continue
                w = a * T
                acc[0] += colors[g, 0] * w
                acc[1] += colors[g, 1] * w
                acc[2] += colors[g, 2] * w
                T *= 1.0 - a
            img[py, px, 0] = acc[0] + bg[0] * T
            img[py, px, 1] = acc[1] + bg[1] * T
            img[py, px, 2] = acc[2] + bg[2] * T
            alpha[py, px] = 1.0 - T
    return img, alpha


def oracle_render(scene, cam, bg=(0.0, 0.0, 0.0)):
    state = project_scene(scene, cam)
    order = np.nonzero(state.valid)[0][
        np.argsort(state.depths[state.valid], kind="stable")]
    inv_abc = np.stack([state.inv_cov2d[:, 0, 0], state.inv_cov2d[:, 0, 1],
                        state.inv_cov2d[:, 1, 1]], axis=-1)
    return composite_oracle(state.means2d, inv_abc, state.radii, order,
                            scene.opacities, scene.colors,
                            cam.width, cam.height, bg)


def random_scene(n, seed, spread=0.25, z_lo=0.7, z_hi=1.8):
    rng = np.random.default_rng(seed)
    positions = np.column_stack([
        rng.uniform(-spread, spread, n),
        rng.uniform(-spread, spread, n),
        rng.uniform(z_lo, z_hi, n),
    ])
    log_scales = rng.uniform(-3.4, -2.3, (n, 3))
    rotations = rng.normal(size=(n, 4))
    rotations += np.where(np.abs(rotations) < 0.05, 0.5, 0.0)
    opacity_logits = rng.uniform(-1.0, 1.4, n)
    colors = rng.uniform(0.1, 0.9, (n, 3))
    return GaussianScene(positions=positions, log_scales=log_scales,
                         rotations=rotations, opacity_logits=opacity_logits,
                         colors=colors)


def front_cam(width=24, height=24, focal=30.0):
    return PosedImage(width=width, height=height, focal=focal,
                      rotation=np.eye(3), position=np.zeros(3))


class TestForwardExactness:
    @pytest.mark.parametrize("seed", [0, 1, 2, 7])
    def test_matches_oracle_bitwise(self, seed):
        scene = random_scene(3, seed)
        cam = front_cam()
        img, alpha = rasterize(scene, cam)
        ref_img, ref_alpha = oracle_render(scene, cam)
        assert np.array_equal(img, ref_img)
        assert np.array_equal(alpha, ref_alpha)

    def test_matches_oracle_with_background(self):
        scene = random_scene(3, 11)
        cam = front_cam()
        bg = (0.2, 0.45, 0.8)
        img, alpha = rasterize(scene, cam, bg=bg)
        ref_img, ref_alpha = oracle_render(scene, cam, bg=bg)
        assert np.array_equal(img, ref_img)
        assert np.array_equal(alpha, ref_alpha)

    def test_matches_oracle_on_larger_frame(self):
        # frame spans several tiles so the binning path is exercised
        scene = random_scene(3, 5, spread=0.6)
        cam = front_cam(width=48, height=40, focal=36.0)
        img, alpha = rasterize(scene, cam)
        ref_img, ref_alpha = oracle_render(scene, cam)
        assert np.array_equal(img, ref_img)
        assert np.array_equal(alpha, ref_alpha)

    def test_ordering_invariance(self):
        scene = random_scene(6, 3)
        cam = front_cam()
        ref, ref_alpha = rasterize(scene, cam)
        perm = np.random.default_rng(0).permutation(6)
        shuffled = GaussianScene(
            positions=scene.positions[perm],
            log_scales=scene.log_scales[perm],
            rotations=scene.rotations[perm],
            opacity_logits=scene.opacity_logits[perm],
            colors=scene.colors[perm],
        )
        img, alpha = rasterize(shuffled, cam)
        assert np.array_equal(img, ref)
        assert np.array_equal(alpha, ref_alpha)

    def test_alpha_channel_in_unit_range(self):
        scene = random_scene(8, 4)
        img, alpha = rasterize(scene, front_cam())
        assert alpha.min() >= 0.0
        assert alpha.max() <= 1.0

    def test_uncovered_pixel_gets_background(self):
        scene = GaussianScene(
            positions=np.array([[0.0, 0.0, 1.0]]),
            log_scales=np.full((1, 3), -4.5),
            rotations=np.array([[1.0, 0.0, 0.0, 0.0]]),
            opacity_logits=np.array([2.0]),
            colors=np.array([[0.9, 0.1, 0.1]]),
        )
        cam = front_cam()
        bg = (0.25, 0.5, 0.75)
        img, alpha = rasterize(scene, cam, bg=bg)
        # corner tile holds no gaussian at all
        assert np.array_equal(img[23, 23], np.asarray(bg))
        assert alpha[23, 23] == 0.0
        # same tile as the splat but far enough that alpha < 1/255
        assert np.array_equal(img[0, 0], np.asarray(bg))
        assert alpha[0, 0] == 0.0

    def test_single_opaque_splat_reproduces_color(self):
        # odd frame size puts a pixel center exactly on the optical axis
        color = np.array([0.30, 0.20, 0.35])
        scene = GaussianScene(
            positions=np.array([[0.0, 0.0, 1.0]]),
            log_scales=np.full((1, 3), -3.0),
            rotations=np.array([[1.0, 0.0, 0.0, 0.0]]),
            opacity_logits=np.array([10.0]),
            colors=color[None, :],
        )
        cam = front_cam(width=17, height=17, focal=25.0)
        img, alpha = rasterize(scene, cam)
        assert np.max(np.abs(img[8, 8] - color)) < 1.0 / 255.0
        assert alpha[8, 8] > 0.98

    def test_behind_camera_gaussian_ignored(self):
        base = random_scene(1, 9)
        with_culled = GaussianScene(
            positions=np.vstack([base.positions, [[0.0, 0.0, -1.0]]]),
            log_scales=np.vstack([base.log_scales, [[-3.0, -3.0, -3.0]]]),
            rotations=np.vstack([base.rotations, [[1.0, 0.0, 0.0, 0.0]]]),
            opacity_logits=np.append(base.opacity_logits, 3.0),
            colors=np.vstack([base.colors, [[0.5, 0.5, 0.5]]]),
        )
        cam = front_cam()
        img_a, alpha_a = rasterize(base, cam)
        img_b, alpha_b = rasterize(with_culled, cam)
        assert np.array_equal(img_a, img_b)
        assert np.array_equal(alpha_a, alpha_b)


def loss_value(scene, cam, grad_out, bg):
    img, _ = rasterize(scene, cam, bg=bg)
    return float(np.sum(grad_out * img))


def scene_with(scene, **overrides):
    fields = dict(positions=scene.positions, log_scales=scene.log_scales,
                  rotations=scene.rotations, opacity_logits=scene.opacity_logits,
                  colors=scene.colors)
    fields.update(overrides)
    return GaussianScene(**fields)


class TestBackward:
    def test_finite_difference_all_parameters(self):
        scene = random_scene(5, 21)
        cam = front_cam(width=16, height=16, focal=20.0)
        rng = np.random.default_rng(3)
        grad_out = rng.normal(size=(16, 16, 3))
        bg = (0.15, 0.25, 0.35)
        grads = rasterize_backward(scene, cam, grad_out, bg=bg)
        h = 1e-4

        checks = [
            ("position", "positions", grads["position"]),
            ("log_scale", "log_scales", grads["log_scale"]),
            ("rotation", "rotations", grads["rotation"]),
            ("color", "colors", grads["color"]),
        ]
        worst = 0.0
        for label, attr, analytic in checks:
            base = getattr(scene, attr)
            for idx in np.ndindex(base.shape):
                plus = base.copy()
                plus[idx] += h
                minus = base.copy()
                minus[idx] -= h
                fd = (loss_value(scene_with(scene, **{attr: plus}), cam, grad_out, bg)
                      - loss_value(scene_with(scene, **{attr: minus}), cam, grad_out, bg)) / (2 * h)
                g = analytic[idx]
                denom = max(abs(g), abs(fd))
                if denom < 1e-7:
                    assert abs(g - fd) < 1e-7, (label, idx)
                    continue
                rel = abs(g - fd) / denom
                worst = max(worst, rel)
                assert rel < 1e-2, (label, idx, g, fd)

        base = scene.opacity_logits
        for i in range(len(base)):
            plus = base.copy()
            plus[i] += h
            minus = base.copy()
            minus[i] -= h
            fd = (loss_value(scene_with(scene, opacity_logits=plus), cam, grad_out, bg)
                  - loss_value(scene_with(scene, opacity_logits=minus), cam, grad_out, bg)) / (2 * h)
            g = grads["opacity_logit"][i]
            denom = max(abs(g), abs(fd))
            if denom < 1e-7:
                assert abs(g - fd) < 1e-7
                continue
            assert abs(g - fd) / denom < 1e-2, ("opacity_logit", i, g, fd)

    def test_zero_upstream_gives_zero_grads(self):
        scene = random_scene(4, 2)
        cam = front_cam()
        grads = rasterize_backward(scene, cam, np.zeros((24, 24, 3)))
        for value in grads.values():
            assert np.all(value == 0.0)

    def test_culled_gaussian_gets_zero_grads(self):
        scene = random_scene(3, 6)
        positions = scene.positions.copy()
        positions[1, 2] = -0.8
        scene = scene_with(scene, positions=positions)
        cam = front_cam()
        grad_out = np.random.default_rng(1).normal(size=(24, 24, 3))
        grads = rasterize_backward(scene, cam, grad_out)
        for key in ("position", "log_scale", "rotation", "color"):
            assert np.all(grads[key][1] == 0.0), key
        assert grads["opacity_logit"][1] == 0.0

    def test_alpha_clamp_blocks_shape_gradients(self):
        # opacity high enough that the center pixel saturates at the 0.99
        # clamp; upstream grad only on that pixel, so every alpha-path
        # gradient must be exactly zero while the color path stays live
        scene = GaussianScene(
            positions=np.array([[0.0, 0.0, 1.0]]),
            log_scales=np.full((1, 3), -2.5),
            rotations=np.array([[1.0, 0.0, 0.0, 0.0]]),
            opacity_logits=np.array([10.0]),
            colors=np.array([[0.4, 0.5, 0.6]]),
        )
        cam = front_cam(width=17, height=17, focal=25.0)
        grad_out = np.zeros((17, 17, 3))
        grad_out[8, 8] = 1.0
        grads = rasterize_backward(scene, cam, grad_out)
        assert np.all(grads["position"] == 0.0)
        assert np.all(grads["log_scale"] == 0.0)
        assert np.all(grads["rotation"] == 0.0)
        assert grads["opacity_logit"][0] == 0.0
        assert np.all(grads["color"][0] > 0.0)

    def test_grad_shape_validated(self):
        scene = random_scene(2, 0)
        with pytest.raises(DomainError):
            rasterize_backward(scene, front_cam(), np.zeros((8, 8, 3)))


class TestProjectGaussian:
    def test_on_axis_isotropic_covariance(self):
        g = Gaussian3D(position=np.array([0.0, 0.0, 1.0]),
                       log_scale=np.full(3, np.log(0.1)),
                       rotation=np.array([1.0, 0.0, 0.0, 0.0]),
                       opacity_logit=0.0,
                       color=np.array([0.5, 0.5, 0.5]))
        cam = front_cam(width=64, height=64, focal=120.0)
        mean2d, cov2d, depth = project_gaussian(g, cam)
        expected = (120.0 * 0.1 / 1.0) ** 2
        assert np.allclose(cov2d, expected * np.eye(2), rtol=0.01, atol=expected * 0.01)
        assert np.allclose(mean2d, [32.0, 32.0])
        assert depth == 1.0

    def test_doubling_scale_quadruples_covariance(self):
        def cov_at(log_s):
            g = Gaussian3D(position=np.array([0.15, -0.1, 1.2]),
                           log_scale=np.full(3, log_s),
                           rotation=np.array([0.9, 0.1, -0.2, 0.3]),
                           opacity_logit=0.0,
                           color=np.array([0.5, 0.5, 0.5]))
            _, cov2d, _ = project_gaussian(g, front_cam(focal=50.0))
            return cov2d - 0.3 * np.eye(2)  # remove the additive floor

        small = cov_at(np.log(0.05))
        big = cov_at(np.log(0.10))
        assert np.allclose(big, 4.0 * small, rtol=1e-9)

    def test_non_positive_depth_culled(self):
        g = Gaussian3D(position=np.array([0.0, 0.0, -0.5]),
                       log_scale=np.full(3, -3.0),
                       rotation=np.array([1.0, 0.0, 0.0, 0.0]),
                       opacity_logit=0.0,
                       color=np.array([0.5, 0.5, 0.5]))
        assert project_gaussian(g, front_cam()) is None
        g2 = Gaussian3D(position=np.array([0.0, 0.0, 0.005]),
                        log_scale=np.full(3, -3.0),
                        rotation=np.array([1.0, 0.0, 0.0, 0.0]),
                        opacity_logit=0.0,
                        color=np.array([0.5, 0.5, 0.5]))
        assert project_gaussian(g2, front_cam()) is None

    def test_far_off_image_center_culled(self):
        # 24x24 camera, guard band 0.3: centers are kept until they project
        # more than 7.2 px beyond the frame
        def at_x(x):
            g = Gaussian3D(position=np.array([x, 0.0, 1.0]),
                           log_scale=np.full(3, -3.0),
                           rotation=np.array([1.0, 0.0, 0.0, 0.0]),
                           opacity_logit=0.0,
                           color=np.array([0.5, 0.5, 0.5]))
            return project_gaussian(g, front_cam())

        # u = 12 + 30x: x=0.2 -> u=18 (inside); x=0.6 -> u=30 (in band,
        # 30 < 24 + 7.2); x=1.5 -> u=57 (beyond the band)
        assert at_x(0.2) is not None
        assert at_x(0.6) is not None
        assert at_x(1.5) is None
        assert at_x(-1.5) is None

    def test_guard_cull_keeps_render_exact(self):
        # a grazing gaussian far off-frame is culled identically in kernel
        # and oracle, and uncovered pixels still equal the background
        scene = random_scene(4, 11)
        positions = scene.positions.copy()
        positions[2] = [3.0, 0.0, 0.4]  # u far beyond the guard band
        scene = scene_with(scene, positions=positions)
        cam = front_cam()
        image, alpha = rasterize(scene, cam)
        expected, expected_alpha = oracle_render(scene, cam)
        np.testing.assert_array_equal(image, expected)
        np.testing.assert_array_equal(alpha, expected_alpha)
