"""Differentiable alpha-compositing rasterizer for gaussian scenes.

Forward: gaussians are globally sorted front-to-back by camera depth, binned
into 16 px screen tiles, and composited per pixel as
    alpha_i = min(opacity_i * exp(-0.5 d^T Sigma'^{-1} d), 0.99)
    C = sum_i c_i alpha_i prod_{j<i} (1 - alpha_j) + bg * T_final
with alpha_i < 1/255 contributions skipped. All math is float64 and the
per-pixel loop runs in a fixed order, so output is deterministic and
bit-reproducible; every term of the sum is evaluated (no transmittance
early-out), which keeps the result independent of tolerance choices.

Backward: the per-pixel walk is replayed front-to-back keeping the running
suffix S_i = C_total - prefix_i, giving dC/dalpha_i = c_i T_i - S_i/(1-a_i)
without storing per-pixel state. Screen-space gradients are then chained
through the EWA projection (including the Jacobian's own dependence on the
mean) back to position, log-scale, quaternion (with normalization), opacity
logit, and color. Clamped-at-0.99 gaussians get zero alpha-path gradients;
culled gaussians get zero everywhere.
"""

import numpy as np
from numba import njit

from ..errors import DomainError
from .gaussians import GaussianScene, PosedImage, project_scene, sigmoid

TILE = 16
ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0


@njit(cache=True)
def _build_tile_lists(means2d, radii, order, ntx, nty, width, height):
    n = len(order)
    tx0 = np.empty(n, np.int64)
    tx1 = np.empty(n, np.int64)
    ty0 = np.empty(n, np.int64)
    ty1 = np.empty(n, np.int64)
    counts = np.zeros(ntx * nty + 1, np.int64)
    for k in range(n):
        g = order[k]
        r = radii[g]
        if r <= 0.0:
            tx0[k], tx1[k], ty0[k], ty1[k] = 0, -1, 0, -1
            continue
        x0 = means2d[g, 0] - r
        x1 = means2d[g, 0] + r
        y0 = means2d[g, 1] - r
        y1 = means2d[g, 1] + r
        if x1 < 0.0 or y1 < 0.0 or x0 > width or y0 > height:
            tx0[k], tx1[k], ty0[k], ty1[k] = 0, -1, 0, -1
            continue
        ax0 = max(0, min(ntx - 1, int(x0 // TILE)))
        ax1 = max(0, min(ntx - 1, int(x1 // TILE)))
        ay0 = max(0, min(nty - 1, int(y0 // TILE)))
        ay1 = max(0, min(nty - 1, int(y1 // TILE)))
        tx0[k], tx1[k], ty0[k], ty1[k] = ax0, ax1, ay0, ay1
        for ty in range(ay0, ay1 + 1):
            for tx in range(ax0, ax1 + 1):
                counts[ty * ntx + tx + 1] += 1
    offsets = np.cumsum(counts)
    lists = np.empty(offsets[-1], np.int64)
    cursor = offsets[:-1].copy()
    for k in range(n):
        if tx1[k] < tx0[k]:
            continue
        for ty in range(ty0[k], ty1[k] + 1):
            for tx in range(tx0[k], tx1[k] + 1):
                t = ty * ntx + tx
                lists[cursor[t]] = k  # rank in depth order, not raw index
                cursor[t] += 1
    return offsets, lists


@njit(cache=True)
def _forward_kernel(width, height, ntx, offsets, lists,
                    means2d, inv_abc, opac, colors, bg, out_img, out_alpha):
    for py in range(height):
        ty = py // TILE
        pyc = py + 0.5
        for px in range(width):
            tx = px // TILE
            pxc = px + 0.5
            t = ty * ntx + tx
            T = 1.0
            cr = 0.0
            cg = 0.0
            cb = 0.0
            for k in range(offsets[t], offsets[t + 1]):
                g = lists[k]
                dx = pxc - means2d[g, 0]
                dy = pyc - means2d[g, 1]
                power = -0.5 * (inv_abc[g, 0] * dx * dx
                                + 2.0 * inv_abc[g, 1] * dx * dy
                                + inv_abc[g, 2] * dy * dy)
                if power > 0.0:
                    continue
                alpha = opac[g] * np.exp(power)
                if alpha > ALPHA_CLAMP:
                    alpha = ALPHA_CLAMP
                if alpha < ALPHA_SKIP:
                    continue
                w = alpha * T
                cr += colors[g, 0] * w
                cg += colors[g, 1] * w
                cb += colors[g, 2] * w
                T *= 1.0 - alpha
            out_img[py, px, 0] = cr + bg[0] * T
            out_img[py, px, 1] = cg + bg[1] * T
            out_img[py, px, 2] = cb + bg[2] * T
            out_alpha[py, px] = 1.0 - T


@njit(cache=True)
def _backward_kernel(width, height, ntx, offsets, lists,
                     means2d, inv_abc, opac, colors, bg, image, grad_out,
                     g_mean2d, g_invabc, g_opac, g_color):
    for py in range(height):
        ty = py // TILE
        pyc = py + 0.5
        for px in range(width):
            tx = px // TILE
            pxc = px + 0.5
            t = ty * ntx + tx
            T = 1.0
            sr = image[py, px, 0]
            sg = image[py, px, 1]
            sb = image[py, px, 2]
            dr = grad_out[py, px, 0]
            dg = grad_out[py, px, 1]
            db = grad_out[py, px, 2]
            if dr == 0.0 and dg == 0.0 and db == 0.0:
                continue
            for k in range(offsets[t], offsets[t + 1]):
                g = lists[k]
                dx = pxc - means2d[g, 0]
                dy = pyc - means2d[g, 1]
                a = inv_abc[g, 0]
                b = inv_abc[g, 1]
                c = inv_abc[g, 2]
                power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy)
                if power > 0.0:
                    continue
                e = np.exp(power)
                alpha = opac[g] * e
                clamped = alpha > ALPHA_CLAMP
                if clamped:
                    alpha = ALPHA_CLAMP
                if alpha < ALPHA_SKIP:
                    continue
                w = alpha * T
                # strip this gaussian's contribution: S becomes the suffix
                # (later gaussians plus background), all carrying (1-alpha)
                sr -= colors[g, 0] * w
                sg -= colors[g, 1] * w
                sb -= colors[g, 2] * w
                g_color[g, 0] += dr * w
                g_color[g, 1] += dg * w
                g_color[g, 2] += db * w
                one_m = 1.0 - alpha
                g_alpha = (dr * (colors[g, 0] * T - sr / one_m)
                           + dg * (colors[g, 1] * T - sg / one_m)
                           + db * (colors[g, 2] * T - sb / one_m))
                if not clamped:
                    g_opac[g] += g_alpha * e
                    g_pow = g_alpha * alpha
                    g_mean2d[g, 0] += g_pow * (a * dx + b * dy)
                    g_mean2d[g, 1] += g_pow * (b * dx + c * dy)
                    g_invabc[g, 0] += g_pow * (-0.5 * dx * dx)
                    g_invabc[g, 1] += g_pow * (-dx * dy)
                    g_invabc[g, 2] += g_pow * (-0.5 * dy * dy)
                T *= one_m


def _prep(scene: GaussianScene, cam: PosedImage):
    state = project_scene(scene, cam)
    order = np.argsort(state.depths[state.valid], kind="stable")
    idx_valid = np.nonzero(state.valid)[0]
    order = idx_valid[order]  # global front-to-back order of valid gaussians
    ntx = (cam.width + TILE - 1) // TILE
    nty = (cam.height + TILE - 1) // TILE
    inv_abc = np.stack([state.inv_cov2d[:, 0, 0], state.inv_cov2d[:, 0, 1],
                        state.inv_cov2d[:, 1, 1]], axis=-1)
    offsets, lists = _build_tile_lists(state.means2d, state.radii, order,
                                       ntx, nty, float(cam.width), float(cam.height))
    # tile lists hold ranks in depth order; translate back to gaussian ids
    lists = order[lists] if len(lists) else lists
    return state, inv_abc, ntx, offsets, lists


def rasterize(scene: GaussianScene, cam: PosedImage, bg=(0.0, 0.0, 0.0)):
    """Render the scene: returns (image (H, W, 3), accumulated alpha (H, W))."""
    state, inv_abc, ntx, offsets, lists = _prep(scene, cam)
    img = np.zeros((cam.height, cam.width, 3))
    alpha = np.zeros((cam.height, cam.width))
    _forward_kernel(cam.width, cam.height, ntx, offsets, lists,
                    state.means2d, inv_abc, scene.opacities,
                    scene.colors, np.asarray(bg, np.float64), img, alpha)
    return img, alpha


def _run_backward(scene, cam, state, inv_abc, ntx, offsets, lists, bg, img,
                  grad_out):
    n = len(scene)
    g_mean2d = np.zeros((n, 2))
    g_invabc = np.zeros((n, 3))
    g_opac = np.zeros(n)
    g_color = np.zeros((n, 3))
    _backward_kernel(cam.width, cam.height, ntx, offsets, lists,
                     state.means2d, inv_abc, scene.opacities, scene.colors,
                     bg, img, grad_out, g_mean2d, g_invabc, g_opac, g_color)
    grads = _chain_to_params(scene, state, g_mean2d, g_invabc, g_opac)
    grads["color"] = g_color
    return grads


def rasterize_backward(scene: GaussianScene, cam: PosedImage, grad_out,
                       bg=(0.0, 0.0, 0.0)):
    """Gradients of sum(grad_out * rendered image) w.r.t. scene parameters.

    Returns a dict with keys position, log_scale, rotation, opacity_logit,
    color. Culled gaussians get exactly zero everywhere.
    """
    grad_out = np.asarray(grad_out, np.float64)
    if grad_out.shape != (cam.height, cam.width, 3):
        raise DomainError(f"grad_out shape {grad_out.shape} does not match image")
    state, inv_abc, ntx, offsets, lists = _prep(scene, cam)
    bg = np.asarray(bg, np.float64)
    img = np.zeros((cam.height, cam.width, 3))
    alpha = np.zeros((cam.height, cam.width))
    _forward_kernel(cam.width, cam.height, ntx, offsets, lists,
                    state.means2d, inv_abc, scene.opacities,
                    scene.colors, bg, img, alpha)
    return _run_backward(scene, cam, state, inv_abc, ntx, offsets, lists,
                         bg, img, grad_out)


def photometric_step(scene: GaussianScene, cam: PosedImage, target,
                     bg=(0.0, 0.0, 0.0)):
    """Mean squared error against target plus its parameter gradients,
    rendering the forward image only once. Returns (loss, image, grads)."""
    target = np.asarray(target, np.float64)
    if target.shape != (cam.height, cam.width, 3):
        raise DomainError(f"target shape {target.shape} does not match camera")
    state, inv_abc, ntx, offsets, lists = _prep(scene, cam)
    bg = np.asarray(bg, np.float64)
    img = np.zeros((cam.height, cam.width, 3))
    alpha = np.zeros((cam.height, cam.width))
    _forward_kernel(cam.width, cam.height, ntx, offsets, lists,
                    state.means2d, inv_abc, scene.opacities,
                    scene.colors, bg, img, alpha)
    diff = img - target
    loss = float(np.mean(diff * diff))
    grad_out = diff * (2.0 / diff.size)
    grads = _run_backward(scene, cam, state, inv_abc, ntx, offsets, lists,
                          bg, img, grad_out)
    return loss, img, grads


def _quat_basis(qn):
    """dR/dq for unit quaternions qn (n, 4): returns (n, 4, 3, 3)."""
    w, x, y, z = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    zero = np.zeros_like(w)
    dRw = np.stack([zero, -z, y, z, zero, -x, -y, x, zero], axis=-1)
    dRx = np.stack([zero, y, z, y, -2 * x, -w, z, w, -2 * x], axis=-1)
    dRy = np.stack([-2 * y, x, w, x, zero, z, -w, z, -2 * y], axis=-1)
    dRz = np.stack([-2 * z, -w, x, w, -2 * z, y, x, y, zero], axis=-1)
    return 2.0 * np.stack([dRw, dRx, dRy, dRz], axis=1).reshape(-1, 4, 3, 3)


def _chain_to_params(scene, state, g_mean2d, g_invabc, g_opac):
    """Screen-space gradients -> 3D parameter gradients, vectorized."""
    n = len(scene)
    valid = state.valid
    f_J = state.J  # (n, 2, 3)
    Q = state.inv_cov2d

    # d loss / d inv-cov (full symmetric 2x2 from the (a, b, c) accumulators)
    G_Q = np.empty((n, 2, 2))
    G_Q[:, 0, 0] = g_invabc[:, 0]
    G_Q[:, 0, 1] = 0.5 * g_invabc[:, 1]
    G_Q[:, 1, 0] = 0.5 * g_invabc[:, 1]
    G_Q[:, 1, 1] = g_invabc[:, 2]
    # Q = Sigma^{-1}:  dL/dSigma = -Q dL/dQ Q
    G_S2 = -np.einsum("nij,njk,nkl->nil", Q, G_Q, Q)

    # Sigma2D = J M J^T (+ const floor)
    M = state.M_cam
    G_J = 2.0 * np.einsum("nij,njk,nkl->nil", G_S2, f_J, M)
    G_M = np.einsum("nji,njk,nkl->nil", f_J, G_S2, f_J)

    # mean path: mean2d = proj(p_cam) has Jacobian J by construction
    g_pcam = np.einsum("nji,nj->ni", f_J, g_mean2d)
    # J's own dependence on p_cam
    x, y = state.p_cam[:, 0], state.p_cam[:, 1]
    z = np.where(valid, state.p_cam[:, 2], 1.0)
    focal = f_J[:, 0, 0] * z  # J[0,0] = focal / z
    fz2 = focal / z ** 2
    g_pcam[:, 0] += G_J[:, 0, 2] * (-fz2)
    g_pcam[:, 1] += G_J[:, 1, 2] * (-fz2)
    g_pcam[:, 2] += (G_J[:, 0, 0] * (-fz2) + G_J[:, 1, 1] * (-fz2)
                     + G_J[:, 0, 2] * (2.0 * focal * x / z ** 3)
                     + G_J[:, 1, 2] * (2.0 * focal * y / z ** 3))
    g_pos = g_pcam @ state.W  # d p_cam / d p_world = W, so g_world = W^T g_cam

    # M = W Sigma3D W^T
    G_S3 = np.einsum("ji,njk,kl->nil", state.W, G_M, state.W)
    # Sigma3D = R diag(s^2) R^T
    R = state.cov3d_R
    s2 = state.cov3d_s2
    G_R = 2.0 * np.einsum("nij,njk,nk->nik", G_S3, R, s2)
    RtGR = np.einsum("nji,njk,nkl->nil", R, G_S3, R)
    g_logscale = 2.0 * s2 * np.stack([RtGR[:, 0, 0], RtGR[:, 1, 1], RtGR[:, 2, 2]],
                                     axis=-1)

    # quaternion: R is built from the normalized quaternion
    qraw = state.quat_raw
    norm = np.linalg.norm(qraw, axis=1, keepdims=True)
    qn = qraw / norm
    basis = _quat_basis(qn)  # (n, 4, 3, 3)
    g_qn = np.einsum("nij,nkij->nk", G_R, basis)
    g_quat = (g_qn - qn * np.sum(g_qn * qn, axis=1, keepdims=True)) / norm

    op = sigmoid(scene.opacity_logits)
    g_oplogit = g_opac * op * (1.0 - op)

    mask = valid[:, None]
    return {
        "position": np.where(mask, g_pos, 0.0),
        "log_scale": np.where(mask, g_logscale, 0.0),
        "rotation": np.where(mask, g_quat, 0.0),
        "opacity_logit": np.where(valid, g_oplogit, 0.0),
    }
