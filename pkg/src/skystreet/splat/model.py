"""Gaussian primitive containers, point-cloud initialization, and the skybox.

Each Gaussian carries position, log-scales, a unit quaternion (w, x, y, z),
an opacity logit, and degree-1 spherical harmonics per color (1 DC + 3 linear
coefficients, 12 numbers).  Parameters are grouped (scene vs skybox) with
per-group trainability; the skybox trains opacity and SH only — geometry is
frozen.  Tensors default to float64 so gradient and conservation checks run
at full precision; pass dtype=torch.float32 for faster reconstruction runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.spatial import cKDTree

from ..cloud import PointCloud
from ..errors import ConfigError, DataError

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199

PARAM_NAMES = ("positions", "log_scales", "rotations", "opacity_logits", "sh_dc", "sh_rest")

SKYBOX_COUNT = 100_000
SKYBOX_COLOR = (0.55, 0.70, 0.95)
SKYBOX_RADIAL_FRACTION = 0.05  # shell thickness relative to tangent scale


@dataclass
class GaussianGroup:
    positions: torch.Tensor  # (M, 3)
    log_scales: torch.Tensor  # (M, 3)
    rotations: torch.Tensor  # (M, 4) unit quaternions, w first
    opacity_logits: torch.Tensor  # (M,)
    sh_dc: torch.Tensor  # (M, 3)
    sh_rest: torch.Tensor  # (M, 3, 3): [gaussian, linear basis, color]
    trainable: tuple[str, ...]

    def __post_init__(self):
        m = self.positions.shape[0]
        shapes = {
            "positions": (m, 3),
            "log_scales": (m, 3),
            "rotations": (m, 4),
            "opacity_logits": (m,),
            "sh_dc": (m, 3),
            "sh_rest": (m, 3, 3),
        }
        for name, want in shapes.items():
            t = getattr(self, name)
            if tuple(t.shape) != want:
                raise DataError(f"GaussianGroup.{name}: expected {want}, got {tuple(t.shape)}")
            t.requires_grad_(name in self.trainable)
        unknown = set(self.trainable) - set(PARAM_NAMES)
        if unknown:
            raise DataError(f"unknown trainable parameters: {sorted(unknown)}")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def parameters(self) -> dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def trainable_parameters(self) -> dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in self.trainable}


@dataclass
class GaussianModel:
    scene: GaussianGroup
    skybox: GaussianGroup | None = None

    def groups(self) -> dict[str, GaussianGroup]:
        out = {"scene": self.scene}
        if self.skybox is not None:
            out["skybox"] = self.skybox
        return out

    def __len__(self) -> int:
        return sum(len(g) for g in self.groups().values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for gname, group in self.groups().items():
            for pname, t in group.parameters().items():
                out[f"{gname}.{pname}"] = t.detach().numpy()
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for gname, group in self.groups().items():
            for pname, t in group.parameters().items():
                src = arrays[f"{gname}.{pname}"]
                if tuple(src.shape) != tuple(t.shape):
                    raise DataError(f"checkpoint {gname}.{pname}: shape {src.shape} != {tuple(t.shape)}")
                with torch.no_grad():
                    t.copy_(torch.from_numpy(np.ascontiguousarray(src)).to(t.dtype))

    @property
    def dtype(self) -> torch.dtype:
        groups = self.groups()
        if not groups:
            return torch.float64
        return next(iter(groups.values())).positions.dtype


_SCENE_TRAINABLE = PARAM_NAMES
_SKYBOX_TRAINABLE = ("opacity_logits", "sh_dc", "sh_rest")


def init_from_cloud(cloud: PointCloud, dtype: torch.dtype = torch.float64) -> GaussianModel:
    """One isotropic Gaussian per point; scale from 3-nearest-neighbor distance.

    dtype picks the working precision: float64 for verification-grade runs,
    float32 roughly halves render time and memory.
    """
    if not len(cloud):
        raise DataError("init_from_cloud: empty point cloud")
    pos = np.asarray(cloud.positions, dtype=np.float64)
    n = len(pos)
    if n >= 2:
        k = min(4, n)
        dists, _ = cKDTree(pos).query(pos, k=k)
        scale = dists[:, 1:].mean(axis=1)
    else:
        scale = np.ones(n)
    scale = np.maximum(scale, 1e-4)

    dc = (np.asarray(cloud.colors, dtype=np.float64) - 0.5) / SH_C0
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    opacity = 0.1
    group = GaussianGroup(
        positions=torch.from_numpy(pos.copy()).to(dtype),
        log_scales=torch.from_numpy(np.log(scale))[:, None].repeat(1, 3).contiguous().to(dtype),
        rotations=torch.from_numpy(quats).to(dtype),
        opacity_logits=torch.full((n,), math.log(opacity / (1.0 - opacity)), dtype=dtype),
        sh_dc=torch.from_numpy(dc.copy()).to(dtype),
        sh_rest=torch.zeros(n, 3, 3, dtype=dtype),
        trainable=_SCENE_TRAINABLE,
    )
    return GaussianModel(scene=group)


def _lattice_rotation(seed: int) -> np.ndarray:
    """Seeded random rotation applied to the Fibonacci lattice."""
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _quats_z_to(dirs: np.ndarray) -> np.ndarray:
    """Unit quaternions rotating local +z onto each row of dirs (unit vectors)."""
    z = np.array([0.0, 0.0, 1.0])
    dots = np.clip(dirs @ z, -1.0, 1.0)
    axes = np.cross(np.broadcast_to(z, dirs.shape), dirs)
    norms = np.linalg.norm(axes, axis=1)
    angles = np.arccos(dots)
    quats = np.zeros((len(dirs), 4))
    ok = norms > 1e-12
    axes[ok] /= norms[ok, None]
    quats[ok, 0] = np.cos(angles[ok] / 2)
    quats[ok, 1:] = axes[ok] * np.sin(angles[ok] / 2)[:, None]
    # Degenerate rows: dir is +z (identity) or -z (half turn about x).
    quats[~ok] = np.where(dots[~ok, None] > 0, [1.0, 0, 0, 0], [0.0, 1.0, 0, 0])
    return quats


def make_skybox(
    scene_diameter: float,
    center: np.ndarray | tuple[float, float, float] = (0.0, 0.0, 0.0),
    count: int = SKYBOX_COUNT,
    seed: int = 0,
    dtype: torch.dtype = torch.float64,
) -> GaussianGroup:
    """Flattened Gaussians on a sphere of 10x the scene diameter.

    Centers sit at radius 5*scene_diameter on a seeded (randomly rotated)
    Fibonacci lattice; each primitive is oriented tangent to the sphere with a
    thin radial scale.  Only opacity and SH are trainable.
    """
    if scene_diameter <= 0:
        raise DataError(f"make_skybox: scene_diameter must be > 0, got {scene_diameter}")
    if count < 1:
        raise ConfigError(f"make_skybox: count must be >= 1, got {count}")
    radius = 5.0 * scene_diameter

    i = np.arange(count)
    zs = 1.0 - (2.0 * i + 1.0) / count
    theta = math.pi * (3.0 - math.sqrt(5.0)) * i
    r_xy = np.sqrt(np.maximum(1.0 - zs**2, 0.0))
    unit = np.stack([r_xy * np.cos(theta), r_xy * np.sin(theta), zs], axis=1)
    unit = unit @ _lattice_rotation(seed).T
    positions = np.asarray(center, dtype=np.float64) + radius * unit

    # Mean lattice spacing ~ sqrt(sphere area / count); tangent scales sized to
    # overlap neighbors, radial scale thin.
    spacing = math.sqrt(4.0 * math.pi / count) * radius
    tangent = spacing
    scales = np.array([tangent, tangent, tangent * SKYBOX_RADIAL_FRACTION])

    dc = (np.array(SKYBOX_COLOR) - 0.5) / SH_C0
    return GaussianGroup(
        positions=torch.from_numpy(positions).to(dtype),
        log_scales=torch.from_numpy(np.tile(np.log(scales), (count, 1))).to(dtype),
        rotations=torch.from_numpy(_quats_z_to(unit)).to(dtype),
        opacity_logits=torch.zeros(count, dtype=dtype),  # sigmoid(0) = 0.5
        sh_dc=torch.from_numpy(np.tile(dc, (count, 1))).to(dtype),
        sh_rest=torch.zeros(count, 3, 3, dtype=dtype),
        trainable=_SKYBOX_TRAINABLE,
    )
