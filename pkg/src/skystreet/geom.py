"""Camera models, rigid transforms, and projection math.

Conventions (used by every module in this package):

World frame (right-handed):
  - x, y: horizontal, meters
  - z: up, meters; ground plane is z = 0

Camera frame (standard pinhole / computer-vision):
  - x: right in the image
  - y: down in the image
  - z: forward along the optical axis (depth = camera-frame z)

Pose storage is world-from-camera: ``p_world = R @ p_cam + t``.  The columns
of ``R`` are the camera axes expressed in the world frame, and ``t`` is the
camera center.  Trajectory generators place cameras, so this is the natural
direction; ``Pose.inverse()`` gives camera-from-world when needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ORTHONORMALITY_TOL = 1e-9


class BehindCameraError(ValueError):
    """Raised when projecting a point with non-positive camera-frame depth."""


class InvalidDepthError(ValueError):
    """Raised when back-projecting with depth <= 0."""


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width):
            raise ValueError(f"cx={self.cx} outside (0, {self.width})")
        if not (0 < self.cy < self.height):
            raise ValueError(f"cy={self.cy} outside (0, {self.height})")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def resized(self, width: int, height: int) -> "Intrinsics":
        """Intrinsics for the same field of view at a different resolution."""
        sx = width / self.width
        sy = height / self.height
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)


@dataclass(frozen=True)
class Pose:
    """Rigid world-from-camera transform. ``rotation`` 3x3, ``translation`` 3-vector."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _readonly(self.rotation))
        object.__setattr__(self, "translation", _readonly(self.translation))
        if self.rotation.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {self.rotation.shape}")
        if self.translation.shape != (3,):
            raise ValueError(f"translation must be a 3-vector, got {self.translation.shape}")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > ORTHONORMALITY_TOL:
            raise ValueError(f"rotation not orthonormal (max |R^T R - I| = {err:.3e})")
        det = np.linalg.det(self.rotation)
        if abs(det - 1.0) > ORTHONORMALITY_TOL:
            raise ValueError(f"rotation must be proper (det = {det:.12f})")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        """Camera z axis (forward) in world coordinates."""
        return self.rotation[:, 2]

    def matrix(self) -> np.ndarray:
        """4x4 world-from-camera matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        r = self.rotation.T
        return Pose(r, -r @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map camera-frame point(s) (..., 3) to world frame."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def transform_inverse(self, points: np.ndarray) -> np.ndarray:
        """Map world point(s) (..., 3) to camera frame."""
        return (np.asarray(points) - self.translation) @ self.rotation


@dataclass(frozen=True)
class Camera:
    intrinsics: Intrinsics
    pose: Pose = field(default_factory=Pose.identity)

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    def resized(self, width: int, height: int) -> "Camera":
        return Camera(self.intrinsics.resized(width, height), self.pose)


def project(camera: Camera, world_point: np.ndarray) -> tuple[np.ndarray, float]:
    """Project a world point to (pixel, depth).

    depth is the camera-frame z; raises BehindCameraError when z <= 0.
    """
    p = camera.pose.transform_inverse(np.asarray(world_point, dtype=np.float64))
    if p[2] <= 0.0:
        raise BehindCameraError(f"point has camera-frame z = {p[2]:.6g}, behind camera")
    intr = camera.intrinsics
    pixel = np.array([intr.fx * p[0] / p[2] + intr.cx, intr.fy * p[1] / p[2] + intr.cy])
    return pixel, float(p[2])


def backproject(camera: Camera, pixel: np.ndarray, depth: float) -> np.ndarray:
    """Inverse of project: pixel + camera-frame depth -> world point."""
    if depth <= 0.0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    intr = camera.intrinsics
    u, v = float(pixel[0]), float(pixel[1])
    p_cam = np.array([(u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth, depth])
    return camera.pose.transform(p_cam)


def look_at(position: np.ndarray, target: np.ndarray, up_hint: np.ndarray) -> Pose:
    """Pose whose optical axis points from position to target.

    ``up_hint`` fixes the roll: image "up" (-y_cam) is aligned with it as far
    as orthogonality allows.  Degenerate inputs raise ValueError.
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up_hint = np.asarray(up_hint, dtype=np.float64)
    forward = target - position
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("look_at: target equals position")
    forward = forward / norm
    x_cam = np.cross(forward, up_hint)
    xn = np.linalg.norm(x_cam)
    if xn < 1e-12:
        raise ValueError("look_at: up_hint parallel to view direction")
    x_cam = x_cam / xn
    y_cam = np.cross(forward, x_cam)
    return Pose(np.column_stack([x_cam, y_cam, forward]), position)


def direction_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two directions in [0, pi]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < 1e-15 or nb < 1e-15:
        raise ValueError("direction_angle: zero vector")
    return float(math.acos(np.clip(np.dot(a / na, b / nb), -1.0, 1.0)))


def camera_to_dict(camera: Camera) -> dict:
    """JSON-serializable camera record (world_from_camera row-major 4x4)."""
    intr = camera.intrinsics
    return {
        "fx": intr.fx,
        "fy": intr.fy,
        "cx": intr.cx,
        "cy": intr.cy,
        "width": intr.width,
        "height": intr.height,
        "world_from_camera": [float(v) for v in camera.pose.matrix().reshape(-1)],
    }


def camera_from_dict(d: dict) -> Camera:
    intr = Intrinsics(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"])
    m = np.array(d["world_from_camera"], dtype=np.float64).reshape(4, 4)
    return Camera(intr, Pose(m[:3, :3], m[:3, 3]))
