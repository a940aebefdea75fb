"""Reference-view selection and conditioning-bundle assembly.

For each ground camera: pick the nearest rig (3D distance, ties to the lower
rig index), rank its five cameras by angle between optical axes and the
ground camera's axis, keep the best N, and force the downward view in by
replacing the worst-ranked pick if absent.  The bundle packs the selected
images (at 256x256), their cameras, the ground camera, and the point render.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .cloud import PointCloud, PointRenderSettings, render_points
from .errors import ConfigError, DataError
from .geom import Camera, direction_angle
from .trajectory import RigPose

BUNDLE_RES = 256
DEFAULT_NUM_REFS = 3
DOWN_ROLE = "down"


@dataclass(frozen=True)
class SelectedView:
    rig_index: int
    role: str
    camera: Camera
    angle: float  # radians between this axis and the ground axis


@dataclass(frozen=True)
class ConditioningBundle:
    ref_images: np.ndarray  # (N, 256, 256, 3) uint8
    ref_cameras: tuple[Camera, ...]
    ref_roles: tuple[str, ...]
    ground_camera: Camera
    point_render: np.ndarray  # (256, 256, 3) uint8

    def __post_init__(self):
        n = len(self.ref_cameras)
        imgs = np.asarray(self.ref_images)
        if imgs.shape != (n, BUNDLE_RES, BUNDLE_RES, 3) or imgs.dtype != np.uint8:
            raise DataError(f"bundle: ref_images must be ({n}, 256, 256, 3) uint8, got {imgs.shape}")
        if len(self.ref_roles) != n:
            raise DataError("bundle: roles/cameras length mismatch")
        if sum(r == DOWN_ROLE for r in self.ref_roles) != 1:
            raise DataError(f"bundle: expected exactly one {DOWN_ROLE!r} reference, got {self.ref_roles}")
        pr = np.asarray(self.point_render)
        if pr.shape != (BUNDLE_RES, BUNDLE_RES, 3) or pr.dtype != np.uint8:
            raise DataError(f"bundle: point_render must be (256, 256, 3) uint8, got {pr.shape}")

    @property
    def n(self) -> int:
        return len(self.ref_cameras)


def select_references(
    rigs: list[tuple[RigPose, list[tuple[str, Camera]]]],
    ground_camera: Camera,
    n: int = DEFAULT_NUM_REFS,
) -> list[SelectedView]:
    """Rank-based selection with forced inclusion of the downward view.

    Output order is ranking order; the forced down view lands last because
    its angle was no better than any evicted pick.
    """
    if not 1 <= n <= 5:
        raise ConfigError(f"n: must be in [1, 5], got {n}")
    if not rigs:
        raise DataError("select_references: no rigs")

    g_pos = ground_camera.pose.position
    g_axis = ground_camera.pose.optical_axis
    dists = [float(np.linalg.norm(np.asarray(rig.position) - g_pos)) for rig, _ in rigs]
    rig_idx = int(np.argmin(dists))  # ties: first (lower index) wins
    _, cams = rigs[rig_idx]

    ranked = sorted(
        (
            SelectedView(rig_idx, role, cam, direction_angle(cam.pose.optical_axis, g_axis))
            for role, cam in cams
        ),
        key=lambda s: s.angle,
    )
    picked = ranked[:n]
    if all(s.role != DOWN_ROLE for s in picked):
        down = next(s for s in ranked if s.role == DOWN_ROLE)
        picked = picked[:-1] + [down]
    return picked


def _resize_rgb(img: np.ndarray, size: int) -> np.ndarray:
    if img.shape[:2] == (size, size):
        return img
    return np.asarray(Image.fromarray(img, mode="RGB").resize((size, size), Image.BILINEAR))


def build_bundle(
    dataset,
    ground_camera: Camera,
    cloud: PointCloud,
    settings: PointRenderSettings,
    n: int = DEFAULT_NUM_REFS,
) -> tuple[ConditioningBundle, dict]:
    """Assemble the bundle for one ground camera; also returns an audit manifest."""
    selected = select_references(dataset.rig_views(), ground_camera, n)
    images = []
    cameras = []
    for s in selected:
        vid = f"rig{s.rig_index:04d}_{s.role}"
        images.append(_resize_rgb(dataset.load_rgb(vid), BUNDLE_RES))
        cameras.append(s.camera.resized(BUNDLE_RES, BUNDLE_RES))
    g_cam = ground_camera.resized(BUNDLE_RES, BUNDLE_RES)
    point_render = render_points(cloud, g_cam, settings)
    bundle = ConditioningBundle(
        ref_images=np.stack(images),
        ref_cameras=tuple(cameras),
        ref_roles=tuple(s.role for s in selected),
        ground_camera=g_cam,
        point_render=point_render,
    )
    manifest = {
        "rig_index": selected[0].rig_index,
        "refs": [
            {"view_id": f"rig{s.rig_index:04d}_{s.role}", "role": s.role, "angle": s.angle}
            for s in selected
        ],
    }
    return bundle, manifest
