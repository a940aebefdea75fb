"""Depth-map fusion into a colored point cloud, and point-cloud rendering.

Fusion back-projects a pixel grid from posed depth maps, deduplicates on a
voxel grid (first point in wins), and subsamples with a seeded generator.
Point rendering z-buffers small pixel discs; ties are broken by smaller
depth and then smaller point index, so the output never depends on point
order or scatter scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .formats import read_ply, write_ply
from .geom import Camera


@dataclass(frozen=True)
class PointCloud:
    positions: np.ndarray  # (N, 3) float64 meters
    colors: np.ndarray  # (N, 3) float64 in [0, 1]
    source_view: tuple  # view id per point

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=np.float64)
        c = np.asarray(self.colors, dtype=np.float64)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "colors", c)
        object.__setattr__(self, "source_view", tuple(self.source_view))
        if p.ndim != 2 or p.shape[1] != 3 or c.shape != p.shape:
            raise DataError(f"point cloud shapes mismatch: {p.shape} vs {c.shape}")
        if len(self.source_view) != len(p):
            raise DataError("source_view length does not match positions")
        if not np.all(np.isfinite(p)):
            raise DataError("point cloud contains non-finite coordinates")

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class PointRenderSettings:
    point_radius_px: int = 2
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.point_radius_px < 1:
            raise ConfigError(f"point_radius_px: must be >= 1, got {self.point_radius_px}")


def _depth_valid(depth: np.ndarray) -> np.ndarray:
    # Sky is +inf in memory and 0.0 in depth files; accept either convention.
    return np.isfinite(depth) & (depth > 0)


def fuse_depth(
    views: Sequence[tuple[Camera, np.ndarray, np.ndarray]],
    stride: int = 4,
    max_points: int = 400_000,
    dedup_cell: float = 0.25,
    seed: int = 0,
    view_ids: Sequence | None = None,
) -> PointCloud:
    """Back-project every stride-th non-sky pixel of (camera, depth, rgb) views."""
    if not len(views):
        raise DataError("fuse_depth: no input views")
    if stride < 1:
        raise ConfigError(f"stride: must be >= 1, got {stride}")
    if dedup_cell <= 0:
        raise ConfigError(f"dedup_cell: must be > 0, got {dedup_cell}")
    if view_ids is None:
        view_ids = list(range(len(views)))

    pos_parts, col_parts, src_parts = [], [], []
    for vid, (camera, depth, rgb) in zip(view_ids, views):
        depth = np.asarray(depth, dtype=np.float64)
        h, w = depth.shape
        if (camera.intrinsics.height, camera.intrinsics.width) != (h, w):
            raise DataError(f"fuse_depth: view {vid}: depth shape {depth.shape} != camera size")
        rgb = np.asarray(rgb)
        if rgb.shape[:2] != (h, w):
            raise DataError(f"fuse_depth: view {vid}: rgb shape {rgb.shape} != depth shape")
        if rgb.dtype == np.uint8:
            rgb = rgb.astype(np.float64) / 255.0

        vs = np.arange(0, h, stride)
        us = np.arange(0, w, stride)
        uu, vv = np.meshgrid(us, vs)
        d = depth[vv, uu]
        keep = _depth_valid(d)
        if not keep.any():
            continue
        uu, vv, d = uu[keep], vv[keep], d[keep]
        intr = camera.intrinsics
        x = (uu + 0.5 - intr.cx) / intr.fx * d
        y = (vv + 0.5 - intr.cy) / intr.fy * d
        cam_pts = np.stack([x, y, d], axis=-1)
        pos_parts.append(camera.pose.transform(cam_pts))
        col_parts.append(rgb[vv, uu, :3])
        src_parts.extend([vid] * len(d))

    if not pos_parts:
        raise DataError("fuse_depth: all input pixels are sky")
    positions = np.vstack(pos_parts)
    colors = np.vstack(col_parts)
    source = np.array(src_parts, dtype=object)

    # Voxel dedup, keeping the first point that lands in each cell.
    cells = np.floor(positions / dedup_cell).astype(np.int64)
    _, first = np.unique(cells, axis=0, return_index=True)
    keep_idx = np.sort(first)
    positions, colors, source = positions[keep_idx], colors[keep_idx], source[keep_idx]

    if len(positions) > max_points:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(len(positions), size=max_points, replace=False))
        positions, colors, source = positions[pick], colors[pick], source[pick]

    return PointCloud(positions, colors, tuple(source))


def render_points(cloud: PointCloud, camera: Camera, settings: PointRenderSettings) -> np.ndarray:
    """Z-buffered disc splatting of the cloud into an 8-bit RGB image."""
    if not len(cloud):
        raise DataError("render_points: empty point cloud")
    intr = camera.intrinsics
    h, w = intr.height, intr.width
    bg = np.clip(np.round(np.asarray(settings.background) * 255.0), 0, 255).astype(np.uint8)
    img = np.tile(bg, (h, w, 1))

    cam_pts = camera.pose.transform_inverse(cloud.positions)
    z = cam_pts[:, 2]
    vis = z > 1e-9
    if not vis.any():
        return img
    idx = np.nonzero(vis)[0]
    px = intr.fx * cam_pts[vis, 0] / z[vis] + intr.cx
    py = intr.fy * cam_pts[vis, 1] / z[vis] + intr.cy
    u0 = np.floor(px).astype(np.int64)
    v0 = np.floor(py).astype(np.int64)

    r = settings.point_radius_px
    offs = [(du, dv) for dv in range(-r, r + 1) for du in range(-r, r + 1) if du * du + dv * dv < r * r]
    frag_pix, frag_z, frag_idx = [], [], []
    for du, dv in offs:
        u = u0 + du
        v = v0 + dv
        ok = (u >= 0) & (u < w) & (v >= 0) & (v < h)
        frag_pix.append(v[ok] * w + u[ok])
        frag_z.append(z[vis][ok])
        frag_idx.append(idx[ok])
    pix = np.concatenate(frag_pix)
    if not len(pix):
        return img
    zs = np.concatenate(frag_z)
    ids = np.concatenate(frag_idx)

    # Winner per pixel = smallest depth, then smallest point index.
    order = np.lexsort((ids, zs, pix))
    pix, zs, ids = pix[order], zs[order], ids[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    win_pix = pix[first]
    win_col = np.clip(np.round(cloud.colors[ids[first]] * 255.0), 0, 255).astype(np.uint8)
    img.reshape(-1, 3)[win_pix] = win_col
    return img


def save_cloud(path: str | Path, cloud: PointCloud) -> None:
    write_ply(path, cloud.positions, cloud.colors)


def load_cloud(path: str | Path) -> PointCloud:
    """Load a PLY written by save_cloud; source ids are not stored in PLY."""
    xyz, rgb = read_ply(path)
    return PointCloud(xyz.astype(np.float64), rgb.astype(np.float64) / 255.0, ("ply",) * len(xyz))
