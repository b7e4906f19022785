"""Rotation, rigid-transform and pinhole-camera math.

Conventions used throughout the package:
  * right-handed world frame, gravity along -Y, characters stand along +Y
  * rotations are parameterized as axis-angle (radians times unit axis)
  * cameras look along +Z of the camera frame, image x right, image y down,
    u = fx * X / Z + cx, v = fy * Y / Z + cy
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

# Camera-frame depth below this is treated as behind the camera.
MIN_DEPTH = 1e-6


def axis_angle_to_matrix(v: np.ndarray) -> np.ndarray:
    """Rodrigues formula. A zero vector maps to the identity exactly."""
    v = np.asarray(v, dtype=np.float64)
    theta = float(np.linalg.norm(v))
    if theta == 0.0:
        return np.eye(3)
    axis = v / theta
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def matrix_to_axis_angle(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`axis_angle_to_matrix` with angle in [0, pi]."""
    m = np.asarray(m, dtype=np.float64)
    cos_theta = np.clip((np.trace(m) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < 1e-12:
        return np.zeros(3)
    if np.pi - theta < 1e-6:
        # Near pi the off-diagonal difference vanishes; recover the axis from
        # the symmetric part m = 2*aa^T - I.
        a2 = np.clip((np.diag(m) + 1.0) / 2.0, 0.0, None)
        axis = np.sqrt(a2)
        # Fix signs using the largest component as reference.
        i = int(np.argmax(axis))
        if axis[i] > 0.0:
            for j in range(3):
                if j != i and m[i, j] + m[j, i] < 0.0:
                    axis[j] = -axis[j]
        axis = axis / np.linalg.norm(axis)
        return theta * axis
    axis = np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])
    axis = axis / (2.0 * np.sin(theta))
    return theta * axis


@dataclass(frozen=True)
class Rotation:
    """Axis-angle rotation: magnitude is the angle in radians."""

    axis_angle: np.ndarray

    def __post_init__(self):
        aa = np.asarray(self.axis_angle, dtype=np.float64).reshape(3)
        object.__setattr__(self, "axis_angle", aa)

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Rotation":
        return Rotation(matrix_to_axis_angle(m))

    def matrix(self) -> np.ndarray:
        return axis_angle_to_matrix(self.axis_angle)

    def inverse(self) -> "Rotation":
        return Rotation(-self.axis_angle)


def rotation_to_matrix(r: Rotation) -> np.ndarray:
    """3x3 orthonormal matrix (det +1) for an axis-angle rotation."""
    return axis_angle_to_matrix(r.axis_angle)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation followed by translation: p -> R p + t."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(Rotation.identity(), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return RigidTransform(Rotation.from_matrix(m[:3, :3]), m[:3, 3])

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation.matrix()
        out[:3, 3] = self.translation
        return out

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or many points (N, 3)."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.matrix().T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self o other: apply `other` first, then `self`."""
        r_self = self.rotation.matrix()
        r = r_self @ other.rotation.matrix()
        t = r_self @ other.translation + self.translation
        return RigidTransform(Rotation.from_matrix(r), t)

    def invert(self) -> "RigidTransform":
        r_inv = self.rotation.matrix().T
        return RigidTransform(Rotation.from_matrix(r_inv), -(r_inv @ self.translation))


@dataclass(frozen=True)
class PinholeCamera:
    """Pinhole camera with fixed intrinsics and a world-to-camera extrinsic."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise InputError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if self.width < 1 or self.height < 1:
            raise InputError(f"image size must be at least 1x1, got {self.width}x{self.height}")

    @property
    def diagonal(self) -> float:
        return float(np.hypot(self.width, self.height))

    def with_extrinsics(self, world_to_camera: RigidTransform) -> "PinholeCamera":
        return PinholeCamera(self.fx, self.fy, self.cx, self.cy,
                             self.width, self.height, world_to_camera)

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return self.world_to_camera.invert().translation


def project(cam: PinholeCamera, p: np.ndarray):
    """Project one world point. Returns (u, v) or None when behind the camera.

    A point with camera-frame depth <= MIN_DEPTH cannot supervise losses for
    the frame and is reported as None.
    """
    pc = cam.world_to_camera.apply(np.asarray(p, dtype=np.float64))
    if pc[2] <= MIN_DEPTH:
        return None
    u = cam.fx * pc[0] / pc[2] + cam.cx
    v = cam.fy * pc[1] / pc[2] + cam.cy
    return (float(u), float(v))


def project_points(cam: PinholeCamera, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection.

    Returns (uv, in_front): uv is (N, 2); rows with in_front False are
    behind the camera and hold zeros.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    pc = pts @ cam.world_to_camera.rotation.matrix().T + cam.world_to_camera.translation
    in_front = pc[:, 2] > MIN_DEPTH
    uv = np.zeros((len(pts), 2))
    z = np.where(in_front, pc[:, 2], 1.0)
    uv[:, 0] = np.where(in_front, cam.fx * pc[:, 0] / z + cam.cx, 0.0)
    uv[:, 1] = np.where(in_front, cam.fy * pc[:, 1] / z + cam.cy, 0.0)
    return uv, in_front


def look_at(eye: np.ndarray, target: np.ndarray, up=(0.0, 1.0, 0.0)) -> RigidTransform:
    """World-to-camera transform for a camera at `eye` looking at `target`.

    With the default up vector the image is upright: world +Y maps to image up.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(forward)
    if n < 1e-12:
        raise InputError("look_at target coincides with the eye position")
    forward = forward / n
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise InputError("look_at view direction is parallel to the up vector")
    right = right / rn
    down = np.cross(forward, right)
    r = np.stack([right, down, forward])
    return RigidTransform(Rotation.from_matrix(r), -(r @ eye))
