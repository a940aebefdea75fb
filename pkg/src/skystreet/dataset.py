"""Dataset directory layout, capture, and read access.

Layout (one directory per dataset):
    scene.json
    trajectories/aerial.json, trajectories/ground_00.json, ...
    views/aerial/{view_id}.png|.agd|.seg.png|.json
    views/ground/{view_id}.png|.agd|.seg.png|.json
    cloud.ply            (written by the fuse stage)
    bundles/             (bundle manifests)
    priors/              (generated ground views)
    recon/               (splat models and renders)
    reports/
    manifest.json

Aerial view ids are "rig{r:04d}_{role}"; ground ids are
"path{p:02d}_wp{w:04d}".  Every view has a sidecar JSON with its camera,
role, exposure mode, and the environment used at capture time.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .city import CityScene, EnvironmentCondition, scene_from_dict, scene_to_dict
from .errors import DataError
from .formats import read_depth, read_json, read_png, write_depth, write_json, write_png
from .geom import Camera, Intrinsics, camera_from_dict, camera_to_dict
from .render import ExposureMode, auto_expose, render
from .trajectory import (
    AerialPlanConfig,
    GroundPath,
    GroundPlanConfig,
    RigPose,
    aerial_from_dict,
    aerial_to_dict,
    ground_from_dict,
    ground_to_dict,
    path_cameras,
    rig_cameras,
)

MANIFEST_VERSION = 1


@dataclass(frozen=True)
class ViewRecord:
    view_id: str
    split: str  # "aerial" | "ground"
    role: str  # rig camera role, or "ground"
    group_index: int  # rig index or path index
    member_index: int  # camera slot in rig, or waypoint index


def view_dir(root: Path, split: str) -> Path:
    return Path(root) / "views" / split


def rgb_path(root: Path, split: str, view_id: str) -> Path:
    return view_dir(root, split) / f"{view_id}.png"


def depth_path(root: Path, split: str, view_id: str) -> Path:
    return view_dir(root, split) / f"{view_id}.agd"


def seg_path(root: Path, split: str, view_id: str) -> Path:
    return view_dir(root, split) / f"{view_id}.seg.png"


def sidecar_path(root: Path, split: str, view_id: str) -> Path:
    return view_dir(root, split) / f"{view_id}.json"


def _write_view(
    root: Path,
    split: str,
    view_id: str,
    scene: CityScene,
    camera: Camera,
    env: EnvironmentCondition,
    mode: ExposureMode,
    sidecar_extra: dict,
) -> None:
    out = render(scene, camera, env)
    write_png(rgb_path(root, split, view_id), auto_expose(out.rgb_linear, mode))
    write_depth(depth_path(root, split, view_id), out.depth)
    write_png(seg_path(root, split, view_id), out.segmentation)
    sidecar = {
        "view_id": view_id,
        "mode": mode.value,
        "camera": camera_to_dict(camera),
        "env": env.to_dict(),
        **sidecar_extra,
    }
    write_json(sidecar_path(root, split, view_id), sidecar)


def capture_dataset(
    root: str | Path,
    scene: CityScene,
    env: EnvironmentCondition,
    rigs: list[RigPose],
    aerial_cfg: AerialPlanConfig,
    aerial_intrinsics: Intrinsics,
    ground_paths: list[GroundPath],
    ground_cfg: GroundPlanConfig,
    ground_intrinsics: Intrinsics,
) -> "Dataset":
    """Render and write every aerial rig view and ground waypoint view."""
    root = Path(root)
    write_json(root / "scene.json", scene_to_dict(scene))
    write_json(root / "trajectories" / "aerial.json", aerial_to_dict(rigs, aerial_cfg))
    for i, path in enumerate(ground_paths):
        write_json(root / "trajectories" / f"ground_{i:02d}.json", ground_to_dict(path, ground_cfg))

    views: list[dict] = []
    for r, rig in enumerate(rigs):
        for slot, (role, cam) in enumerate(rig_cameras(rig, aerial_intrinsics)):
            vid = f"rig{r:04d}_{role}"
            _write_view(
                root, "aerial", vid, scene, cam, env, ExposureMode.AERIAL,
                {"rig_id": r, "role": role},
            )
            views.append(
                {"view_id": vid, "split": "aerial", "role": role, "group_index": r, "member_index": slot}
            )
    for p, path in enumerate(ground_paths):
        for wp, cam in enumerate(path_cameras(path, ground_intrinsics)):
            vid = f"path{p:02d}_wp{wp:04d}"
            _write_view(
                root, "ground", vid, scene, cam, env, ExposureMode.GROUND,
                {"path_id": p, "role": "ground"},
            )
            views.append(
                {"view_id": vid, "split": "ground", "role": "ground", "group_index": p, "member_index": wp}
            )

    write_json(
        root / "manifest.json",
        {"version": MANIFEST_VERSION, "env": env.to_dict(), "views": views},
    )
    return Dataset(root)


class Dataset:
    """Read access to a captured dataset directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        manifest_file = self.root / "manifest.json"
        if not manifest_file.exists():
            raise DataError(f"{self.root}: not a dataset (missing manifest.json)")
        manifest = read_json(manifest_file)
        if manifest.get("version") != MANIFEST_VERSION:
            raise DataError(f"{self.root}: unsupported manifest version {manifest.get('version')}")
        self.env = EnvironmentCondition.from_dict(manifest["env"])
        self._views = [ViewRecord(**v) for v in manifest["views"]]
        self._scene: CityScene | None = None

    @property
    def scene(self) -> CityScene:
        if self._scene is None:
            self._scene = scene_from_dict(read_json(self.root / "scene.json"))
        return self._scene

    def views(self, split: str | None = None) -> list[ViewRecord]:
        if split is None:
            return list(self._views)
        return [v for v in self._views if v.split == split]

    def _find(self, view_id: str) -> ViewRecord:
        for v in self._views:
            if v.view_id == view_id:
                return v
        raise DataError(f"unknown view id {view_id!r}")

    def load_rgb(self, view_id: str) -> np.ndarray:
        v = self._find(view_id)
        p = rgb_path(self.root, v.split, view_id)
        if not p.exists():
            raise DataError(f"missing view file {p}")
        return read_png(p)

    def load_depth(self, view_id: str) -> np.ndarray:
        v = self._find(view_id)
        return read_depth(depth_path(self.root, v.split, view_id))

    def load_seg(self, view_id: str) -> np.ndarray:
        v = self._find(view_id)
        return read_png(seg_path(self.root, v.split, view_id))

    def load_camera(self, view_id: str) -> Camera:
        v = self._find(view_id)
        p = sidecar_path(self.root, v.split, view_id)
        if not p.exists():
            raise DataError(f"missing sidecar {p}")
        return camera_from_dict(read_json(p)["camera"])

    def aerial_trajectory(self) -> tuple[list[RigPose], AerialPlanConfig]:
        return aerial_from_dict(read_json(self.root / "trajectories" / "aerial.json"))

    def ground_trajectories(self) -> list[tuple[GroundPath, GroundPlanConfig]]:
        out = []
        for p in sorted((self.root / "trajectories").glob("ground_*.json")):
            out.append(ground_from_dict(read_json(p)))
        return out

    def rig_views(self) -> list[tuple[RigPose, list[tuple[str, Camera]]]]:
        """Per rig: (pose, [(role, camera)]) as stored in the dataset."""
        rigs, _ = self.aerial_trajectory()
        records = self.views("aerial")
        out = []
        for r, rig in enumerate(rigs):
            members = sorted(
                (v for v in records if v.group_index == r), key=lambda v: v.member_index
            )
            out.append((rig, [(v.role, self.load_camera(v.view_id)) for v in members]))
        return out

    def cloud_path(self) -> Path:
        return self.root / "cloud.ply"
