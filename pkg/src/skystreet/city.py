"""Procedural box-city generation with exact geometric oracles.

The scene is deliberately primitive: axis-aligned building boxes on a z = 0
ground plane, separated by a grid of flat roads.  Everything downstream
(ray casting, depth fusion, splat init) leans on the fact that distances and
ray intersections against this scene are analytic.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ConfigError, DataError

SCENE_SCHEMA_VERSION = 1

GROUND_ALBEDO = (0.34, 0.38, 0.30)
ROAD_ALBEDO = (0.18, 0.18, 0.20)


class SemanticLabel(IntEnum):
    # Serialized into segmentation maps; values are frozen.
    SKY = 0
    GROUND = 1
    ROAD = 2
    BUILDING = 3


@dataclass(frozen=True)
class EnvironmentCondition:
    """Sun direction (unit vector from sun toward scene), ambient term, fog."""

    sun_direction: tuple[float, float, float] = (0.35, 0.25, -0.9)
    ambient: float = 0.35
    fog_density: float = 0.0
    tag: str = "noon"

    def __post_init__(self):
        d = np.asarray(self.sun_direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise ConfigError("sun_direction: zero vector")
        d = d / n
        if d[2] >= 0:
            raise ConfigError("sun_direction: must have negative z (sun above scene)")
        object.__setattr__(self, "sun_direction", (float(d[0]), float(d[1]), float(d[2])))
        if not 0.0 <= self.ambient <= 1.0:
            raise ConfigError(f"ambient: {self.ambient} outside [0, 1]")
        if self.fog_density < 0.0:
            raise ConfigError(f"fog_density: {self.fog_density} must be >= 0")

    def to_dict(self) -> dict:
        return {
            "sun_direction": list(self.sun_direction),
            "ambient": self.ambient,
            "fog_density": self.fog_density,
            "tag": self.tag,
        }

    @staticmethod
    def from_dict(d: dict) -> "EnvironmentCondition":
        return EnvironmentCondition(
            tuple(d["sun_direction"]), d["ambient"], d["fog_density"], d.get("tag", "")
        )


@dataclass(frozen=True)
class Building:
    """Axis-aligned box; min corner sits on the ground (z = 0)."""

    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]
    albedo: tuple[float, float, float]


@dataclass(frozen=True)
class Road:
    """Flat axis-aligned strip on z = 0: a 2-point spine plus a width."""

    spine: tuple[tuple[float, float], tuple[float, float]]
    width: float
    albedo: tuple[float, float, float] = ROAD_ALBEDO


@dataclass(frozen=True)
class CityConfig:
    blocks_x: int = 2
    blocks_y: int = 2
    block_size: float = 60.0
    road_width: float = 10.0
    height_min: float = 8.0
    height_max: float = 40.0
    fill_density: float = 1.0

    def __post_init__(self):
        if self.blocks_x < 1:
            raise ConfigError(f"blocks_x: must be >= 1, got {self.blocks_x}")
        if self.blocks_y < 1:
            raise ConfigError(f"blocks_y: must be >= 1, got {self.blocks_y}")
        if self.block_size <= 0:
            raise ConfigError(f"block_size: must be > 0, got {self.block_size}")
        if self.road_width <= 0:
            raise ConfigError(f"road_width: must be > 0, got {self.road_width}")
        if not 0 < self.height_min <= self.height_max:
            raise ConfigError(
                f"height_min/height_max: need 0 < {self.height_min} <= {self.height_max}"
            )
        if not 0 < self.fill_density <= 1.0:
            raise ConfigError(f"fill_density: must be in (0, 1], got {self.fill_density}")

    def to_dict(self) -> dict:
        return {
            "blocks_x": self.blocks_x,
            "blocks_y": self.blocks_y,
            "block_size": self.block_size,
            "road_width": self.road_width,
            "height_min": self.height_min,
            "height_max": self.height_max,
            "fill_density": self.fill_density,
        }


@dataclass(frozen=True)
class CityScene:
    buildings: tuple[Building, ...]
    roads: tuple[Road, ...]
    ground_albedo: tuple[float, float, float]
    aabb_min: tuple[float, float, float]
    aabb_max: tuple[float, float, float]
    seed: int
    config: CityConfig

    def building_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(mins, maxs, albedos) as (B, 3) arrays; empty arrays for no buildings."""
        if not self.buildings:
            z = np.zeros((0, 3))
            return z, z.copy(), z.copy()
        mins = np.array([b.min_corner for b in self.buildings])
        maxs = np.array([b.max_corner for b in self.buildings])
        alb = np.array([b.albedo for b in self.buildings])
        return mins, maxs, alb

    def road_rects(self) -> np.ndarray:
        """Road footprints as (R, 4) rows [xmin, ymin, xmax, ymax]."""
        rects = []
        for r in self.roads:
            (x0, y0), (x1, y1) = r.spine
            h = r.width / 2.0
            rects.append(
                [min(x0, x1) - h, min(y0, y1) - h, max(x0, x1) + h, max(y0, y1) + h]
            )
        return np.array(rects) if rects else np.zeros((0, 4))

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.aabb_min) + np.asarray(self.aabb_max)) / 2.0


def _building_albedo(rng: np.random.Generator) -> tuple[float, float, float]:
    hue = rng.random()
    sat = 0.15 + 0.35 * rng.random()
    val = 0.45 + 0.45 * rng.random()
    r, g, b = colorsys.hsv_to_rgb(hue, sat, val)
    return (round(r, 6), round(g, 6), round(b, 6))


def generate_city(seed: int, cfg: CityConfig) -> CityScene:
    """Deterministic grid city: blocks_x x blocks_y cells separated by roads.

    Buildings are placed by seeded rejection sampling strictly inside their
    cell, so they can never touch a road.
    """
    rng = np.random.default_rng(seed)
    pitch = cfg.block_size + cfg.road_width
    extent_x = cfg.blocks_x * pitch + cfg.road_width
    extent_y = cfg.blocks_y * pitch + cfg.road_width

    roads = []
    for i in range(cfg.blocks_x + 1):
        x = i * pitch + cfg.road_width / 2.0
        roads.append(Road(((x, 0.0), (x, extent_y)), cfg.road_width))
    for j in range(cfg.blocks_y + 1):
        y = j * pitch + cfg.road_width / 2.0
        roads.append(Road(((0.0, y), (extent_x, y)), cfg.road_width))

    margin = 0.08 * cfg.block_size
    gap = 0.03 * cfg.block_size
    buildings = []
    for i in range(cfg.blocks_x):
        for j in range(cfg.blocks_y):
            if rng.random() >= cfg.fill_density:
                continue
            cell_x0 = i * pitch + cfg.road_width
            cell_y0 = j * pitch + cfg.road_width
            placed: list[tuple[float, float, float, float]] = []
            n_target = int(rng.integers(1, 4))
            for _ in range(n_target):
                for _attempt in range(20):
                    w = (0.18 + 0.30 * rng.random()) * cfg.block_size
                    d = (0.18 + 0.30 * rng.random()) * cfg.block_size
                    x0 = cell_x0 + margin + rng.random() * (cfg.block_size - 2 * margin - w)
                    y0 = cell_y0 + margin + rng.random() * (cfg.block_size - 2 * margin - d)
                    rect = (x0, y0, x0 + w, y0 + d)
                    if all(
                        rect[2] + gap <= p[0] or p[2] + gap <= rect[0]
                        or rect[3] + gap <= p[1] or p[3] + gap <= rect[1]
                        for p in placed
                    ):
                        placed.append(rect)
                        h = cfg.height_min + rng.random() * (cfg.height_max - cfg.height_min)
                        buildings.append(
                            Building(
                                (round(rect[0], 9), round(rect[1], 9), 0.0),
                                (round(rect[2], 9), round(rect[3], 9), round(h, 9)),
                                _building_albedo(rng),
                            )
                        )
                        break

    top = max((b.max_corner[2] for b in buildings), default=0.0)
    return CityScene(
        buildings=tuple(buildings),
        roads=tuple(roads),
        ground_albedo=GROUND_ALBEDO,
        aabb_min=(0.0, 0.0, 0.0),
        aabb_max=(extent_x, extent_y, top),
        seed=seed,
        config=cfg,
    )


def scene_diameter(scene: CityScene) -> float:
    """Diagonal of the scene bounding box."""
    lo = np.asarray(scene.aabb_min)
    hi = np.asarray(scene.aabb_max)
    if np.any(hi < lo):
        raise DataError("scene_diameter: degenerate aabb")
    d = float(np.linalg.norm(hi - lo))
    if d <= 0.0:
        raise DataError("scene_diameter: empty scene")
    return d


def distance_to_surface(scene: CityScene, points: np.ndarray) -> np.ndarray:
    """Min unsigned distance from point(s) to any scene surface.

    Surfaces are the ground plane and building box faces.  Roads lie inside
    the ground plane, so plane distance already bounds them from below.
    Accepts a single point (3,) or a batch (N, 3); chunked internally so
    large batches stay within memory.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    mins, maxs, _ = scene.building_arrays()
    centers = (mins + maxs) / 2.0
    halves = (maxs - mins) / 2.0

    out = np.empty(len(pts))
    chunk = 65536
    for s in range(0, len(pts), chunk):
        p = pts[s : s + chunk]
        d = np.abs(p[:, 2]).copy()
        if len(mins):
            q = np.abs(p[:, None, :] - centers[None, :, :]) - halves[None, :, :]
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=2)
            inside = np.minimum(q.max(axis=2), 0.0)
            box_d = np.abs(outside + inside).min(axis=1)
            d = np.minimum(d, box_d)
        out[s : s + chunk] = d
    return float(out[0]) if single else out


def scene_to_dict(scene: CityScene) -> dict:
    return {
        "version": SCENE_SCHEMA_VERSION,
        "seed": scene.seed,
        "config": scene.config.to_dict(),
        "ground_albedo": list(scene.ground_albedo),
        "aabb_min": list(scene.aabb_min),
        "aabb_max": list(scene.aabb_max),
        "buildings": [
            {
                "min_corner": list(b.min_corner),
                "max_corner": list(b.max_corner),
                "albedo": list(b.albedo),
            }
            for b in scene.buildings
        ],
        "roads": [
            {"spine": [list(p) for p in r.spine], "width": r.width, "albedo": list(r.albedo)}
            for r in scene.roads
        ],
    }


def scene_from_dict(d: dict) -> CityScene:
    if d.get("version") != SCENE_SCHEMA_VERSION:
        raise DataError(f"scene schema version {d.get('version')!r}, expected {SCENE_SCHEMA_VERSION}")
    try:
        return CityScene(
            buildings=tuple(
                Building(tuple(b["min_corner"]), tuple(b["max_corner"]), tuple(b["albedo"]))
                for b in d["buildings"]
            ),
            roads=tuple(
                Road(tuple(tuple(p) for p in r["spine"]), r["width"], tuple(r["albedo"]))
                for r in d["roads"]
            ),
            ground_albedo=tuple(d["ground_albedo"]),
            aabb_min=tuple(d["aabb_min"]),
            aabb_max=tuple(d["aabb_max"]),
            seed=d["seed"],
            config=CityConfig(**d["config"]),
        )
    except KeyError as e:
        raise DataError(f"scene json missing key {e}") from e
