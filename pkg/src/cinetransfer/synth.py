"""Synthetic ground-truth scenes and perturbation utilities.

Generates internally consistent bundles (motion, cameras, rendered evidence)
for testing and acceptance: procedural camera paths per cinematographic shot
type, analytic motion presets on the capsule-man body, and seeded
perturbations of motion and cameras.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .body import MotionClip, PoseFrame, pose_motion
from .camopt import CameraTrajectory, EvidenceTrack
from .capsule import HEIGHT as CAPSULE_HEIGHT
from .capsule import capsule_man
from .errors import InputError
from .geom import (
    RigidTransform,
    Rotation,
    axis_angle_to_matrix,
    look_at,
    matrix_to_axis_angle,
)
from .metrics import JointSet
from .raster import project_joints, rasterize_silhouette, render_flow
from .retarget import DEFAULT_BONE_MAP, BoneMap, Keypoints2D

SHOT_TYPES = ("PUSH-IN", "PULL-OUT", "PAN", "TRACK", "FOLLOW", "ARC")
MOTION_PRESETS = ("walk", "arm-raise", "turn", "idle")

# Empirically calibrated so sigma_pos maps to the intended mean joint
# displacement as a fraction of body height (see perturb_motion).
_ROT_NOISE_GAIN = 0.8
_TRANS_NOISE_GAIN = 0.55


@dataclass(frozen=True)
class SceneSpec:
    shot_type: str
    frames: int
    motion_preset: str
    resolution: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.shot_type not in SHOT_TYPES:
            raise InputError(f"unknown shot type {self.shot_type!r}, expected {SHOT_TYPES}")
        if self.motion_preset not in MOTION_PRESETS:
            raise InputError(
                f"unknown motion preset {self.motion_preset!r}, expected {MOTION_PRESETS}")
        if self.frames < 2:
            raise InputError("a scene needs at least 2 frames")
        if self.resolution < 16:
            raise InputError("resolution too small")


@dataclass(frozen=True)
class GroundTruthBundle:
    motion: MotionClip
    cameras: CameraTrajectory
    evidence: EvidenceTrack
    joints3d: tuple  # JointSet per frame, millimeters

    @property
    def joints_meters(self) -> np.ndarray:
        return np.stack([j.positions for j in self.joints3d]) / 1000.0


def motion_preset(name: str, frames: int, fps: float = 30.0) -> MotionClip:
    """Analytic rotation curves for the four presets (no mocap needed)."""
    if name not in MOTION_PRESETS:
        raise InputError(f"unknown motion preset {name!r}")
    out = []
    for t in range(frames):
        phase = t / max(frames - 1, 1)
        rots = np.zeros((24, 3))
        root = np.zeros(3)
        if name == "arm-raise":
            a = np.deg2rad(75.0) * phase
            rots[16, 2] = a
            rots[17, 2] = -a
        elif name == "walk":
            swing = 2.0 * np.pi * 1.0 * t / fps
            s = np.sin(swing)
            rots[1, 0] = 0.5 * s       # thighs swing about the lateral axis
            rots[2, 0] = -0.5 * s
            rots[4, 0] = 0.4 * max(np.sin(swing + 0.6), 0.0) * np.sign(-s + 1e-9)
            rots[5, 0] = 0.4 * max(np.sin(swing + np.pi + 0.6), 0.0) * np.sign(s + 1e-9)
            rots[16, 2] = -np.deg2rad(70.0)   # arms hang
            rots[17, 2] = np.deg2rad(70.0)
            rots[16, 0] = -0.3 * s            # and counter-swing
            rots[17, 0] = 0.3 * s
            root = np.array([0.0, 0.02 * np.sin(2.0 * swing), 1.2 * t / fps])
        elif name == "turn":
            rots[0, 1] = 1.5 * np.pi * phase
            rots[16, 2] = -np.deg2rad(20.0)
            rots[17, 2] = np.deg2rad(20.0)
        out.append(PoseFrame(root, rots))
    return MotionClip(tuple(out), fps)


def _camera_eyes(shot_type: str, roots: np.ndarray, h: float) -> np.ndarray:
    t_norm = np.linspace(0.0, 1.0, len(roots))[:, None]
    lift = np.array([0.0, 0.12 * h, 0.0])
    if shot_type == "PUSH-IN":
        d = (4.0 - 2.0 * t_norm) * h
        return roots + lift + d * np.array([0.0, 0.0, 1.0])
    if shot_type == "PULL-OUT":
        d = (2.0 + 2.0 * t_norm) * h
        return roots + lift + d * np.array([0.0, 0.0, 1.0])
    if shot_type == "PAN":
        return np.tile(roots[0] + lift + np.array([0.0, 0.0, 3.0 * h]), (len(roots), 1))
    if shot_type == "TRACK":
        return roots + lift + np.array([0.9 * h, 0.0, 2.8 * h])
    if shot_type == "FOLLOW":
        return roots + lift + np.array([0.0, 0.0, -2.5 * h])
    if shot_type == "ARC":
        theta = np.deg2rad(120.0) * t_norm[:, 0]
        offs = np.stack([3.0 * h * np.sin(theta),
                         np.full(len(roots), 0.12 * h),
                         3.0 * h * np.cos(theta)], axis=1)
        return roots + offs
    raise InputError(f"unknown shot type {shot_type!r}")


def synth_keypoints(joints: np.ndarray, cam, bone_map: BoneMap = DEFAULT_BONE_MAP) -> Keypoints2D:
    """Detector-style keypoints for the mapped joints: confidence 1 where the
    projection is visible, 0 otherwise."""
    idx = [e.joint for e in sorted(bone_map.entries, key=lambda e: e.keypoint)]
    uv, vis = project_joints(joints[idx], cam)
    pts = np.concatenate([uv, vis[:, None].astype(np.float64)], axis=1)
    return Keypoints2D(pts)


def make_scene(spec: SceneSpec, bone_map: BoneMap = DEFAULT_BONE_MAP) -> GroundTruthBundle:
    """Ground-truth bundle: capsule-man motion, a shot-type camera path that
    keeps the character framed (look-at the root), and evidence rendered
    deterministically from exactly that motion and trajectory."""
    info = capsule_man()
    model = info.model
    motion = motion_preset(spec.motion_preset, spec.frames)
    verts, joints = pose_motion(model, motion)
    roots = np.stack([j[0] for j in joints])

    h = info.height
    eyes = _camera_eyes(spec.shot_type, roots, h)
    dists = np.linalg.norm(eyes - roots, axis=1)
    size = spec.resolution
    f = 0.65 * size * dists.min() / h
    extrinsics = tuple(look_at(eyes[t], roots[t]) for t in range(spec.frames))
    cameras = CameraTrajectory(fx=f, fy=f, cx=size / 2.0, cy=size / 2.0,
                               width=size, height=size, extrinsics=extrinsics)

    masks, keypoints, flows = [], [], []
    for t in range(spec.frames):
        cam = cameras.camera(t)
        masks.append(rasterize_silhouette(verts[t], model.faces, cam))
        keypoints.append(synth_keypoints(joints[t], cam, bone_map))
    for t in range(spec.frames - 1):
        flows.append(render_flow(verts[t], verts[t + 1], model.faces,
                                 cameras.camera(t), cameras.camera(t + 1)))
    evidence = EvidenceTrack(tuple(masks), tuple(keypoints), tuple(flows))
    joints3d = tuple(JointSet(j * 1000.0) for j in joints)
    return GroundTruthBundle(motion, cameras, evidence, joints3d)


def perturb_motion(motion: MotionClip, sigma_pos: float, seed: int,
                   height: float = CAPSULE_HEIGHT) -> MotionClip:
    """Seeded Gaussian noise on local rotations and root translation.

    The gains are calibrated so the mean induced joint displacement is close
    to sigma_pos times the body height.
    """
    if sigma_pos < 0.0:
        raise InputError("sigma_pos must be non-negative")
    if sigma_pos == 0.0:
        return motion
    rng = np.random.default_rng(seed)
    frames = []
    for f in motion.frames:
        rot_noise = rng.normal(scale=_ROT_NOISE_GAIN * sigma_pos,
                               size=f.local_rotations.shape)
        trans_noise = rng.normal(scale=_TRANS_NOISE_GAIN * sigma_pos * height, size=3)
        frames.append(PoseFrame(f.root_translation + trans_noise,
                                f.local_rotations + rot_noise,
                                shape=f.shape, expression=f.expression))
    return MotionClip(tuple(frames), motion.fps)


def perturb_camera(traj: CameraTrajectory, max_rot_deg: float, max_trans_frac: float,
                   seed: int, scene_diameter: float) -> CameraTrajectory:
    """Per-frame uniform perturbation: rotation up to max_rot_deg about a
    random axis, translation up to max_trans_frac of the scene diameter."""
    if max_rot_deg < 0.0 or max_trans_frac < 0.0:
        raise InputError("perturbation bounds must be non-negative")
    rng = np.random.default_rng(seed)
    out = []
    for ext in traj.extrinsics:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(0.0, np.deg2rad(max_rot_deg))
        r_new = axis_angle_to_matrix(axis * angle) @ ext.rotation.matrix()
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        magnitude = rng.uniform(0.0, max_trans_frac * scene_diameter)
        out.append(RigidTransform(Rotation(matrix_to_axis_angle(r_new)),
                                  ext.translation + magnitude * direction))
    return traj.with_extrinsics(out)
