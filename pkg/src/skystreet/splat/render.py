"""Differentiable Gaussian splat renderer.

Pipeline: project every Gaussian to a 2D Gaussian (EWA first-order covariance
transform, no dilation), expand a 4-sigma bounding box of pixels into flat
fragments, sort fragments by (pixel, depth rank), and alpha-composite each
pixel's fragment run front-to-back with early termination.  Transmittance
and per-pixel sums are computed with sorted cumulative sums rather than
atomic scatter, so the result is bit-reproducible regardless of thread count
and fully differentiable (positions, scales, rotations, opacity, SH).
"""

from __future__ import annotations

import torch

from ..geom import Camera
from .model import SH_C0, SH_C1, GaussianModel

NEAR_PLANE = 0.2
FOOTPRINT_SIGMA = 4.0
ALPHA_CULL = 1e-4  # fragments fainter than this are skipped (error bound ~1e-4)
ALPHA_MAX = 1.0 - 1e-6
TRANSMITTANCE_MIN = 1e-4  # per-pixel early termination


def quat_to_rotmat(q: torch.Tensor) -> torch.Tensor:
    """(M, 4) quaternions (w, x, y, z; any norm) -> (M, 3, 3) rotations."""
    q = q / q.norm(dim=1, keepdim=True).clamp(min=1e-12)
    w, x, y, z = q.unbind(dim=1)
    return torch.stack(
        [
            torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], dim=1),
            torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], dim=1),
            torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], dim=1),
        ],
        dim=1,
    )


def sh_color(dc: torch.Tensor, rest: torch.Tensor, dirs: torch.Tensor) -> torch.Tensor:
    """Degree-1 SH: 0.5 + C0*dc - C1*y*b0 + C1*z*b1 - C1*x*b2, clamped >= 0."""
    x, y, z = dirs.unbind(dim=1)
    c = 0.5 + SH_C0 * dc
    c = c - SH_C1 * y[:, None] * rest[:, 0] + SH_C1 * z[:, None] * rest[:, 1] - SH_C1 * x[:, None] * rest[:, 2]
    return c.clamp(min=0.0)


def _gather_model(model: GaussianModel) -> dict[str, torch.Tensor]:
    groups = list(model.groups().values())
    return {
        name: torch.cat([getattr(g, name) for g in groups], dim=0)
        for name in ("positions", "log_scales", "rotations", "opacity_logits", "sh_dc", "sh_rest")
    }


def render_gaussians(
    model: GaussianModel,
    camera: Camera,
    background: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Render to (H, W, 3) plus aux maps {weight_sum, transmittance}.

    All math runs in the model's parameter dtype (float64 models give
    verification-grade output, float32 is about twice as fast).
    """
    intr = camera.intrinsics
    h, w = intr.height, intr.width
    dtype = model.dtype
    bg = torch.tensor(background, dtype=dtype)
    image = bg.expand(h * w, 3).clone()
    weight_sum = torch.zeros(h * w, dtype=dtype)
    transmittance = torch.ones(h * w, dtype=dtype)

    def finish():
        return (
            image.reshape(h, w, 3),
            {"weight_sum": weight_sum.reshape(h, w), "transmittance": transmittance.reshape(h, w)},
        )

    if len(model) == 0:
        return finish()

    p = _gather_model(model)
    cam_r = torch.from_numpy(camera.pose.rotation.copy()).to(dtype)
    cam_t = torch.from_numpy(camera.pose.translation.copy()).to(dtype)
    w2c = cam_r.T  # world-to-camera rotation

    pos_cam = (p["positions"] - cam_t) @ w2c.T
    z = pos_cam[:, 2]
    front = z > NEAR_PLANE
    if not bool(front.any()):
        return finish()
    pos_cam = pos_cam[front]
    z = pos_cam[:, 2]
    positions = p["positions"][front]
    scales = torch.exp(p["log_scales"][front])
    rot = quat_to_rotmat(p["rotations"][front])
    opacity = torch.sigmoid(p["opacity_logits"][front])
    view_dirs = positions - torch.from_numpy(camera.pose.position.copy()).to(dtype)
    view_dirs = view_dirs / view_dirs.norm(dim=1, keepdim=True).clamp(min=1e-12)
    colors = sh_color(p["sh_dc"][front], p["sh_rest"][front], view_dirs)

    # 3D covariance in camera frame: W R S S^T R^T W^T.
    rs = rot * scales[:, None, :]
    cov_world = rs @ rs.transpose(1, 2)
    cov_cam = w2c @ cov_world @ w2c.T

    fx, fy = intr.fx, intr.fy
    x_c, y_c = pos_cam[:, 0], pos_cam[:, 1]
    inv_z = 1.0 / z
    # Perspective Jacobian rows: [fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2].
    j = torch.zeros(len(z), 2, 3, dtype=dtype)
    j[:, 0, 0] = fx * inv_z
    j[:, 0, 2] = -fx * x_c * inv_z * inv_z
    j[:, 1, 1] = fy * inv_z
    j[:, 1, 2] = -fy * y_c * inv_z * inv_z
    cov2d = j @ cov_cam @ j.transpose(1, 2)

    mean2d = torch.stack([fx * x_c * inv_z + intr.cx, fy * y_c * inv_z + intr.cy], dim=1)

    a = cov2d[:, 0, 0]
    b = cov2d[:, 0, 1]
    d = cov2d[:, 1, 1]

    # Integer bbox of covered pixel centers (center of pixel j is j + 0.5).
    # The bbox is discrete bookkeeping, not part of the differentiable path.
    with torch.no_grad():
        mid = 0.5 * (a + d)
        disc = torch.sqrt((0.5 * (a - d)) ** 2 + b * b)
        lam_max = (mid + disc).clamp(min=1e-12)
        # Truncate at the ALPHA_CULL contour where that is tighter than the
        # FOOTPRINT_SIGMA box: every excluded pixel has alpha < ALPHA_CULL and
        # would be dropped below anyway, so the image is unchanged.
        r_cut = torch.sqrt(2.0 * torch.log(opacity.clamp(min=1e-12) / ALPHA_CULL).clamp(min=0.0))
        radius = torch.sqrt(lam_max) * r_cut.clamp(max=FOOTPRINT_SIGMA)
        mx, my = mean2d[:, 0], mean2d[:, 1]
        x0 = torch.ceil(mx - radius - 0.5).clamp(min=0, max=w - 1).long()
        x1 = torch.floor(mx + radius - 0.5).clamp(min=0, max=w - 1).long()
        y0 = torch.ceil(my - radius - 0.5).clamp(min=0, max=h - 1).long()
        y1 = torch.floor(my + radius - 0.5).clamp(min=0, max=h - 1).long()
        inside = (mx + radius > 0) & (mx - radius < w) & (my + radius > 0) & (my - radius < h)
        bw = torch.where(inside, x1 - x0 + 1, torch.zeros_like(x0)).clamp(min=0)
        bh = torch.where(inside, y1 - y0 + 1, torch.zeros_like(y0)).clamp(min=0)
        counts = bw * bh
        total = int(counts.sum())
        if total == 0:
            return finish()
        frag_g = torch.repeat_interleave(torch.arange(len(counts)), counts)
        offsets = torch.cumsum(counts, 0) - counts
        within = torch.arange(total) - offsets[frag_g]
        px = x0[frag_g] + within % bw[frag_g].clamp(min=1)
        py = y0[frag_g] + within // bw[frag_g].clamp(min=1)
        pix = py * w + px

    delta_x = px.to(dtype) + 0.5 - mean2d[frag_g, 0]
    delta_y = py.to(dtype) + 0.5 - mean2d[frag_g, 1]
    det = (a * d - b * b).clamp(min=1e-12)
    ia = (d / det)[frag_g]
    ib = (-b / det)[frag_g]
    idd = (a / det)[frag_g]
    power = -0.5 * (ia * delta_x**2 + 2.0 * ib * delta_x * delta_y + idd * delta_y**2)
    alpha = (opacity[frag_g] * torch.exp(power)).clamp(max=ALPHA_MAX)

    keep = alpha >= ALPHA_CULL
    if not bool(keep.any()):
        return finish()
    alpha = alpha[keep]
    frag_g = frag_g[keep]
    pix = pix[keep]

    # Depth rank per gaussian (ties by index) -> fragment sort key.  Culling
    # first shrinks the sort; survivors end up in the same order either way.
    with torch.no_grad():
        order = torch.argsort(z, stable=True)
        rank = torch.empty_like(order)
        rank[order] = torch.arange(len(order))
        perm = torch.argsort(pix * (len(order) + 1) + rank[frag_g])
    alpha = alpha[perm]
    frag_g = frag_g[perm]
    pix = pix[perm]

    # Segmented front-to-back compositing via cumulative log-transmittance.
    seg_first = torch.ones(len(pix), dtype=torch.bool)
    seg_first[1:] = pix[1:] != pix[:-1]
    log_t = torch.log1p(-alpha)
    cum = torch.cumsum(log_t, 0)
    excl = torch.cat([cum.new_zeros(1), cum[:-1]])
    seg_id = torch.cumsum(seg_first.long(), 0) - 1
    start_pos = torch.nonzero(seg_first, as_tuple=False).squeeze(1)
    t_before = torch.exp(excl - excl[start_pos][seg_id])

    live = t_before >= TRANSMITTANCE_MIN  # prefix of each segment: T is nonincreasing
    weight = alpha * t_before * live.to(dtype)

    contrib = weight[:, None] * colors[frag_g]
    cs_rgb = torch.cumsum(contrib, 0)
    cs_w = torch.cumsum(weight, 0)
    cs_log = torch.cumsum(log_t * live.to(dtype), 0)
    end_pos = torch.cat([start_pos[1:] - 1, torch.tensor([len(pix) - 1])])
    zero3 = cs_rgb.new_zeros(1, 3)
    zero1 = cs_w.new_zeros(1)
    seg_rgb = cs_rgb[end_pos] - torch.cat([zero3, cs_rgb[end_pos[:-1]]])
    seg_w = cs_w[end_pos] - torch.cat([zero1, cs_w[end_pos[:-1]]])
    seg_log = cs_log[end_pos] - torch.cat([zero1, cs_log[end_pos[:-1]]])
    seg_t_final = torch.exp(seg_log)

    seg_pix = pix[start_pos]
    image = image.index_put((seg_pix,), seg_rgb + bg * seg_t_final[:, None])
    weight_sum = weight_sum.index_put((seg_pix,), seg_w)
    transmittance = transmittance.index_put((seg_pix,), seg_t_final)
    return finish()
