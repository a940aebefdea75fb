"""Aerial rig and ground-path trajectory planning.

Aerial capture follows a lawnmower sweep whose altitude adapts to the tallest
building under each rig's oblique footprint and whose along-track step
shrinks where building density is above the scene mean.  Ground capture
follows road lanes between annotated endpoints, with circular-arc keypoints
inserted at turns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .city import CityScene
from .errors import ConfigError, DataError
from .geom import Camera, Intrinsics, Pose, look_at

TRAJECTORY_SCHEMA_VERSION = 1

OBLIQUE_PITCH_RAD = math.radians(60.0)  # below the horizon
FOOTPRINT_HALF_ANGLE_RAD = math.radians(30.0)  # oblique axis off-nadir
ARC_KEYPOINTS_PER_QUARTER_TURN = 5

RIG_ROLES = ("down", "front", "back", "left", "right")


@dataclass(frozen=True)
class RigPose:
    position: tuple[float, float, float]
    yaw: float  # heading of rig "forward", radians

    def __post_init__(self):
        if self.position[2] <= 0:
            raise ValueError(f"rig altitude must be positive, got {self.position[2]}")


@dataclass(frozen=True)
class AerialPlanConfig:
    base_altitude: float = 80.0
    altitude_margin: float = 30.0
    spacing_base: float = 40.0
    overlap_factor: float = 0.25

    def __post_init__(self):
        if self.base_altitude <= 0:
            raise ConfigError(f"base_altitude: must be > 0, got {self.base_altitude}")
        if self.altitude_margin <= 0:
            raise ConfigError(f"altitude_margin: must be > 0, got {self.altitude_margin}")
        if self.spacing_base <= 0:
            raise ConfigError(f"spacing_base: must be > 0, got {self.spacing_base}")
        if not 0.0 <= self.overlap_factor < 1.0:
            raise ConfigError(f"overlap_factor: must be in [0, 1), got {self.overlap_factor}")

    def to_dict(self) -> dict:
        return {
            "base_altitude": self.base_altitude,
            "altitude_margin": self.altitude_margin,
            "spacing_base": self.spacing_base,
            "overlap_factor": self.overlap_factor,
        }


@dataclass(frozen=True)
class GroundPlanConfig:
    spacing: float = 6.0
    camera_height: float = 1.7
    turn_radius: float = 4.0
    clearance: float = 1.0

    def __post_init__(self):
        if self.spacing <= 0:
            raise ConfigError(f"spacing: must be > 0, got {self.spacing}")
        if self.camera_height <= 0:
            raise ConfigError(f"camera_height: must be > 0, got {self.camera_height}")
        if self.turn_radius < 0:
            raise ConfigError(f"turn_radius: must be >= 0, got {self.turn_radius}")
        if self.clearance < 0:
            raise ConfigError(f"clearance: must be >= 0, got {self.clearance}")

    def to_dict(self) -> dict:
        return {
            "spacing": self.spacing,
            "camera_height": self.camera_height,
            "turn_radius": self.turn_radius,
            "clearance": self.clearance,
        }


@dataclass(frozen=True)
class GroundPath:
    waypoints: np.ndarray  # (N, 3), z = camera height
    turn_keypoints: tuple[int, ...]  # indices of inserted arc keypoints

    def __post_init__(self):
        w = np.asarray(self.waypoints, dtype=np.float64)
        object.__setattr__(self, "waypoints", w)
        if len(w) >= 2 and np.any(np.linalg.norm(np.diff(w, axis=0), axis=1) < 1e-12):
            raise ValueError("consecutive waypoints must be distinct")


def _footprint_tallest(mins: np.ndarray, maxs: np.ndarray, x: float, y: float, radius: float) -> float:
    """Tallest building whose footprint intersects the disc around (x, y)."""
    if not len(mins):
        return 0.0
    cx = np.clip(x, mins[:, 0], maxs[:, 0])
    cy = np.clip(y, mins[:, 1], maxs[:, 1])
    hit = (cx - x) ** 2 + (cy - y) ** 2 <= radius**2
    return float(maxs[hit, 2].max()) if hit.any() else 0.0


def _footprint_density(mins: np.ndarray, maxs: np.ndarray, x: float, y: float, radius: float) -> float:
    """Building footprint area intersecting the disc, as a fraction of disc area."""
    if not len(mins) or radius <= 0:
        return 0.0
    cx = np.clip(x, mins[:, 0], maxs[:, 0])
    cy = np.clip(y, mins[:, 1], maxs[:, 1])
    hit = (cx - x) ** 2 + (cy - y) ** 2 <= radius**2
    if not hit.any():
        return 0.0
    area = ((maxs[hit, 0] - mins[hit, 0]) * (maxs[hit, 1] - mins[hit, 1])).sum()
    return float(area / (math.pi * radius**2))


def _adaptive_altitude(mins, maxs, x, y, cfg: AerialPlanConfig) -> float:
    # Fixed point of alt = max(base, tallest within alt*tan(30 deg) + margin);
    # altitude is nondecreasing across iterations so this terminates.
    alt = cfg.base_altitude
    for _ in range(len(mins) + 2):
        radius = alt * math.tan(FOOTPRINT_HALF_ANGLE_RAD)
        new = max(cfg.base_altitude, _footprint_tallest(mins, maxs, x, y, radius) + cfg.altitude_margin)
        if new <= alt + 1e-9:
            return alt if new <= alt else new
        alt = new
    return alt


def plan_aerial(scene: CityScene, cfg: AerialPlanConfig) -> list[RigPose]:
    """Lawnmower sweep over the scene aabb with adaptive altitude and spacing."""
    lo = np.asarray(scene.aabb_min)
    hi = np.asarray(scene.aabb_max)
    if hi[0] - lo[0] <= 0 or hi[1] - lo[1] <= 0:
        raise DataError("plan_aerial: scene has zero ground extent")
    mins, maxs, _ = scene.building_arrays()

    step = cfg.spacing_base * (1.0 - cfg.overlap_factor)
    footprint_area = (hi[0] - lo[0]) * (hi[1] - lo[1])
    built_area = float(((maxs[:, 0] - mins[:, 0]) * (maxs[:, 1] - mins[:, 1])).sum()) if len(mins) else 0.0
    mean_density = built_area / footprint_area

    rigs: list[RigPose] = []
    ys = np.arange(lo[1] + step / 2.0, hi[1], step)
    for line_idx, y in enumerate(ys):
        forward = line_idx % 2 == 0
        yaw = 0.0 if forward else math.pi
        x = lo[0] + step / 2.0 if forward else hi[0] - step / 2.0
        limit = hi[0] if forward else lo[0]
        while (x < limit) if forward else (x > limit):
            alt = _adaptive_altitude(mins, maxs, x, y, cfg)
            rigs.append(RigPose((float(x), float(y), alt), yaw))
            radius = alt * math.tan(FOOTPRINT_HALF_ANGLE_RAD)
            local = _footprint_density(mins, maxs, x, y, radius)
            ratio = local / mean_density if mean_density > 0 else 0.0
            dx = step / (1.0 + ratio)
            x = x + dx if forward else x - dx
    return rigs


def rig_cameras(rig: RigPose, intr: Intrinsics) -> list[tuple[str, Camera]]:
    """The five-camera cluster: one nadir plus four obliques 60 deg below horizon."""
    pos = np.asarray(rig.position, dtype=np.float64)
    heading = np.array([math.cos(rig.yaw), math.sin(rig.yaw), 0.0])
    out: list[tuple[str, Camera]] = []
    # Nadir camera: straight down, image "up" facing along the heading.
    out.append(("down", Camera(intr, look_at(pos, pos + np.array([0.0, 0.0, -1.0]), heading))))
    c = math.cos(OBLIQUE_PITCH_RAD)
    s = math.sin(OBLIQUE_PITCH_RAD)
    for role, yaw_off in (("front", 0.0), ("back", math.pi), ("left", math.pi / 2), ("right", -math.pi / 2)):
        psi = rig.yaw + yaw_off
        axis = np.array([math.cos(psi) * c, math.sin(psi) * c, -s])
        out.append((role, Camera(intr, look_at(pos, pos + axis, np.array([0.0, 0.0, 1.0])))))
    return out


def _point_on_road(scene: CityScene, p: np.ndarray, tol: float = 1e-9) -> bool:
    rects = scene.road_rects()
    if not len(rects):
        return False
    return bool(
        np.any(
            (p[0] >= rects[:, 0] - tol)
            & (p[0] <= rects[:, 2] + tol)
            & (p[1] >= rects[:, 1] - tol)
            & (p[1] <= rects[:, 3] + tol)
        )
    )


def _horizontal_clearance(mins: np.ndarray, maxs: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Distance from each (x, y) to the nearest building footprint (0 if inside)."""
    if not len(mins):
        return np.full(len(xy), np.inf)
    dx = np.maximum(np.maximum(mins[None, :, 0] - xy[:, 0, None], xy[:, 0, None] - maxs[None, :, 0]), 0.0)
    dy = np.maximum(np.maximum(mins[None, :, 1] - xy[:, 1, None], xy[:, 1, None] - maxs[None, :, 1]), 0.0)
    return np.sqrt(dx**2 + dy**2).min(axis=1)


def _sample_leg(a: np.ndarray, b: np.ndarray, spacing: float) -> np.ndarray:
    dist = float(np.linalg.norm(b - a))
    n = max(2, int(math.ceil(dist / spacing - 1e-9)) + 1)
    t = np.linspace(0.0, 1.0, n)
    return a[None, :] + t[:, None] * (b - a)[None, :]


def plan_ground(
    scene: CityScene,
    road_endpoints: tuple[np.ndarray, np.ndarray],
    cfg: GroundPlanConfig,
) -> GroundPath:
    """Road route between two annotated endpoints (straight, or one L-turn).

    Straight legs are sampled at cfg.spacing; at a turn, the sharp corner is
    replaced by a circular arc of cfg.turn_radius with
    ARC_KEYPOINTS_PER_QUARTER_TURN inserted keypoints.
    """
    start = np.asarray(road_endpoints[0], dtype=np.float64)[:2]
    end = np.asarray(road_endpoints[1], dtype=np.float64)[:2]
    for name, p in (("start", start), ("end", end)):
        if not _point_on_road(scene, p):
            raise DataError(f"plan_ground: {name} point {p.tolist()} is not on a road")

    straight = abs(start[0] - end[0]) < 1e-9 or abs(start[1] - end[1]) < 1e-9
    if straight:
        xy = _sample_leg(start, end, cfg.spacing)
        turn_idx: list[int] = []
    else:
        corner = None
        for cand in (np.array([end[0], start[1]]), np.array([start[0], end[1]])):
            if _point_on_road(scene, cand):
                corner = cand
                break
        if corner is None:
            raise DataError("plan_ground: no single-turn road route between endpoints")
        d1 = corner - start
        d1 /= np.linalg.norm(d1)
        d2 = end - corner
        d2 /= np.linalg.norm(d2)
        r = min(cfg.turn_radius, np.linalg.norm(corner - start), np.linalg.norm(end - corner))
        arc_in = corner - d1 * r
        arc_out = corner + d2 * r
        center = arc_in + d2 * r
        a0 = math.atan2(*(arc_in - center)[::-1])
        a1 = math.atan2(*(arc_out - center)[::-1])
        sweep = (a1 - a0 + math.pi) % (2 * math.pi) - math.pi  # shortest arc
        angles = a0 + np.linspace(0.0, sweep, ARC_KEYPOINTS_PER_QUARTER_TURN)
        arc = center[None, :] + r * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        leg1 = _sample_leg(start, arc_in, cfg.spacing)[:-1]
        leg2 = _sample_leg(arc_out, end, cfg.spacing)[1:]
        xy = np.vstack([leg1, arc, leg2])
        turn_idx = list(range(len(leg1), len(leg1) + len(arc)))

    # Drop duplicate consecutive samples (degenerate arcs, zero-length legs).
    keep = np.ones(len(xy), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(xy, axis=0), axis=1) > 1e-9
    remap = np.cumsum(keep) - 1
    turn_idx = sorted({int(remap[i]) for i in turn_idx if keep[i]})
    xy = xy[keep]

    mins, maxs, _ = scene.building_arrays()
    clear = _horizontal_clearance(mins, maxs, xy)
    bad = np.nonzero(clear < cfg.clearance)[0]
    if len(bad):
        i = int(bad[0])
        raise DataError(
            f"plan_ground: clearance {clear[i]:.3f} m < {cfg.clearance} m at waypoint {i} "
            f"({xy[i].tolist()}), segment {max(i - 1, 0)}->{i}"
        )

    waypoints = np.column_stack([xy, np.full(len(xy), cfg.camera_height)])
    return GroundPath(waypoints, tuple(turn_idx))


def path_cameras(path: GroundPath, intr: Intrinsics) -> list[Camera]:
    """One camera per waypoint, optical axis along the central-difference tangent."""
    w = path.waypoints
    if len(w) < 2:
        raise DataError("path_cameras: need at least 2 waypoints")
    tangents = np.empty_like(w)
    tangents[0] = w[1] - w[0]
    tangents[-1] = w[-1] - w[-2]
    if len(w) > 2:
        tangents[1:-1] = w[2:] - w[:-2]
    up = np.array([0.0, 0.0, 1.0])
    return [Camera(intr, look_at(w[i], w[i] + tangents[i], up)) for i in range(len(w))]


def aerial_to_dict(rigs: list[RigPose], cfg: AerialPlanConfig) -> dict:
    return {
        "version": TRAJECTORY_SCHEMA_VERSION,
        "kind": "aerial",
        "config": cfg.to_dict(),
        "rigs": [{"position": list(r.position), "yaw": r.yaw} for r in rigs],
    }


def aerial_from_dict(d: dict) -> tuple[list[RigPose], AerialPlanConfig]:
    if d.get("version") != TRAJECTORY_SCHEMA_VERSION or d.get("kind") != "aerial":
        raise DataError("not an aerial trajectory file")
    cfg = AerialPlanConfig(**d["config"])
    return [RigPose(tuple(r["position"]), r["yaw"]) for r in d["rigs"]], cfg


def ground_to_dict(path: GroundPath, cfg: GroundPlanConfig) -> dict:
    return {
        "version": TRAJECTORY_SCHEMA_VERSION,
        "kind": "ground",
        "config": cfg.to_dict(),
        "waypoints": [list(map(float, p)) for p in path.waypoints],
        "turn_keypoints": list(path.turn_keypoints),
    }


def ground_from_dict(d: dict) -> tuple[GroundPath, GroundPlanConfig]:
    if d.get("version") != TRAJECTORY_SCHEMA_VERSION or d.get("kind") != "ground":
        raise DataError("not a ground trajectory file")
    cfg = GroundPlanConfig(**d["config"])
    return GroundPath(np.array(d["waypoints"]), tuple(d["turn_keypoints"])), cfg
