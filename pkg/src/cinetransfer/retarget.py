"""Structure-guided character animation.

Aligns a generated character mesh to the canonical skeleton with a global
height scale and per-bone front-view angle deltas, assigns skinning weights
by bone proximity, and drives the character with delta-compensated motion.

2D angle math happens in a y-up front-view frame (orthographic camera on +Z
looking along -Z). Detector keypoints in pixel coordinates (y down) must be
flipped before they enter compute_delta_r.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .body import (
    MotionClip,
    joint_depths,
    lbs,
    propagate_transforms,
    skinning_from_globals,
    subtree_mask,
)
from .errors import InputError
from .geom import axis_angle_to_matrix


@dataclass(frozen=True)
class CharacterMesh:
    """Character surface, assumed to face +Z with height along +Y."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) == 0:
            raise InputError(f"vertices must be non-empty (N, 3), got {v.shape}")
        if v[:, 1].max() - v[:, 1].min() <= 0.0:
            raise InputError("degenerate character mesh: zero height extent")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)


@dataclass(frozen=True)
class Keypoints2D:
    """2D keypoints as (u, v, confidence) rows with confidence in [0, 1]."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 3:
            raise InputError(f"keypoints must be (K, 3), got {p.shape}")
        if np.any(p[:, 2] < 0.0) or np.any(p[:, 2] > 1.0):
            raise InputError("keypoint confidences must lie in [0, 1]")
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return len(self.points)

    def flipped_v(self, image_height: float) -> "Keypoints2D":
        """Pixel-frame (y down) keypoints converted to y-up front-view math."""
        p = self.points.copy()
        p[:, 1] = image_height - p[:, 1]
        return Keypoints2D(p)


@dataclass(frozen=True)
class BoneMapEntry:
    keypoint: int
    joint: int
    parent_joint: int

    @property
    def is_anchor(self) -> bool:
        # Anchors carry a keypoint but measure no bone angle.
        return self.joint == self.parent_joint


@dataclass(frozen=True)
class BoneMap:
    """Pairs detector keypoints with canonical joints plus the bone each
    entry measures (joint, parent_joint)."""

    entries: tuple

    def __post_init__(self):
        entries = tuple(self.entries)
        kps = [e.keypoint for e in entries]
        joints = [e.joint for e in entries]
        if len(set(kps)) != len(kps) or len(set(joints)) != len(joints):
            raise InputError("bone map must be injective on keypoints and joints")
        if sorted(kps) != list(range(len(entries))):
            raise InputError("bone map keypoint indices must cover 0..K-1")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def keypoint_of_joint(self, joint: int):
        for e in self.entries:
            if e.joint == joint:
                return e.keypoint
        return None

    def entry_for_joint(self, joint: int):
        for e in self.entries:
            if e.joint == joint:
                return e
        return None

    def validate_against(self, num_joints: int):
        for e in self.entries:
            if not (0 <= e.joint < num_joints and 0 <= e.parent_joint < num_joints):
                raise InputError(f"bone map references joint outside 0..{num_joints - 1}")


# Default 14-keypoint map onto SMPL joint indices. The pelvis entry anchors
# the torso and measures no angle; limbs chain through their 2D parents.
DEFAULT_BONE_MAP = BoneMap(tuple(BoneMapEntry(*t) for t in [
    (0, 0, 0),     # pelvis (anchor)
    (1, 12, 0),    # neck, torso direction
    (2, 16, 12),   # left shoulder
    (3, 17, 12),   # right shoulder
    (4, 18, 16),   # left elbow (upper arm)
    (5, 19, 17),   # right elbow
    (6, 20, 18),   # left wrist (forearm)
    (7, 21, 19),   # right wrist
    (8, 1, 0),     # left hip
    (9, 2, 0),     # right hip
    (10, 4, 1),    # left knee (thigh)
    (11, 5, 2),    # right knee
    (12, 7, 4),    # left ankle (shin)
    (13, 8, 5),    # right ankle
]))

CONFIDENCE_FLOOR = 0.3


@dataclass(frozen=True)
class SkeletonAdjustment:
    """Canonical skeleton fitted to a character.

    scale is the mesh pre-scale (canonical height over character height);
    residual_rotations are the per-entry angles actually applied in
    topological order, and mesh_offset positions the scaled character onto
    the skeleton.
    """

    scale: float
    delta_r: np.ndarray
    adjusted_rest_joints: np.ndarray
    parents: np.ndarray
    bone_map: BoneMap
    residual_rotations: np.ndarray
    mesh_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.scale <= 0.0:
            raise InputError(f"scale must be positive, got {self.scale}")
        dr = np.asarray(self.delta_r, dtype=np.float64)
        if np.any(np.abs(dr) > np.pi + 1e-12):
            raise InputError("delta_r angles must lie within [-pi, pi]")
        object.__setattr__(self, "delta_r", dr)
        object.__setattr__(self, "adjusted_rest_joints",
                           np.asarray(self.adjusted_rest_joints, dtype=np.float64))
        object.__setattr__(self, "parents", np.asarray(self.parents, dtype=np.int64))
        object.__setattr__(self, "residual_rotations",
                           np.asarray(self.residual_rotations, dtype=np.float64))
        object.__setattr__(self, "mesh_offset",
                           np.asarray(self.mesh_offset, dtype=np.float64).reshape(3))


def measure_height(vertices: np.ndarray) -> float:
    """Y extent of a vertex set (the gravity-axis height)."""
    v = np.asarray(vertices, dtype=np.float64)
    if v.size == 0:
        raise InputError("cannot measure the height of an empty vertex set")
    return float(v[:, 1].max() - v[:, 1].min())


def wrap_angle(a: float) -> float:
    """Wrap into (-pi, pi]."""
    out = float(np.mod(a + np.pi, 2.0 * np.pi) - np.pi)
    return np.pi if out == -np.pi else out


def canonical_front_keypoints(rest_joints: np.ndarray, bone_map: BoneMap) -> Keypoints2D:
    """Orthographic front view of the rest skeleton (u = x, v = y, y up)."""
    rest_joints = np.asarray(rest_joints, dtype=np.float64)
    pts = np.zeros((len(bone_map), 3))
    for e in bone_map.entries:
        pts[e.keypoint, 0] = rest_joints[e.joint, 0]
        pts[e.keypoint, 1] = rest_joints[e.joint, 1]
        pts[e.keypoint, 2] = 1.0
    return Keypoints2D(pts)


def _bone_angle(points: np.ndarray, kp_joint: int, kp_parent: int):
    d = points[kp_joint, :2] - points[kp_parent, :2]
    n = float(np.hypot(d[0], d[1]))
    if n < 1e-12:
        return None
    return float(np.arctan2(d[1], d[0]))


def compute_delta_r(char_kp: Keypoints2D, canonical_kp: Keypoints2D,
                    bone_map: BoneMap) -> tuple[np.ndarray, list[str]]:
    """Per-bone front-view angle differences (character minus canonical).

    Both keypoint sets must be indexed per the bone map and share the y-up
    front-view convention. Bones with character confidence below 0.3 or a
    zero-length bone in either set contribute zero; the latter is reported
    in the returned warning list.
    """
    k = len(bone_map)
    if len(char_kp) != k or len(canonical_kp) != k:
        raise InputError(
            f"keypoint sets must have {k} entries, got {len(char_kp)} and {len(canonical_kp)}")
    delta = np.zeros(k)
    warnings_list: list[str] = []
    for i, e in enumerate(bone_map.entries):
        if e.is_anchor:
            continue
        kp_parent = bone_map.keypoint_of_joint(e.parent_joint)
        if kp_parent is None:
            warnings_list.append(
                f"bone map entry {i}: parent joint {e.parent_joint} has no keypoint")
            continue
        conf = min(char_kp.points[e.keypoint, 2], char_kp.points[kp_parent, 2])
        if conf < CONFIDENCE_FLOOR:
            continue
        a_char = _bone_angle(char_kp.points, e.keypoint, kp_parent)
        a_canon = _bone_angle(canonical_kp.points, e.keypoint, kp_parent)
        if a_char is None or a_canon is None:
            warnings_list.append(f"bone map entry {i}: zero-length bone, delta set to 0")
            continue
        delta[i] = wrap_angle(a_char - a_canon)
    return delta, warnings_list


def _entry_order(bone_map: BoneMap, parents: np.ndarray) -> list[int]:
    depths = joint_depths(parents)
    return sorted(range(len(bone_map)), key=lambda i: depths[bone_map.entries[i].joint])


def _residual_rotations(bone_map: BoneMap, delta_r: np.ndarray) -> np.ndarray:
    """Angles to apply per entry given ancestors are corrected first.

    Measured deltas are absolute per bone; subtracting the parent entry's
    absolute delta leaves the residual this entry must apply on top of the
    rotation its subtree already inherited.
    """
    residuals = np.array(delta_r, dtype=np.float64)
    for i, e in enumerate(bone_map.entries):
        if e.is_anchor:
            residuals[i] = 0.0
            continue
        parent_entry = bone_map.entry_for_joint(e.parent_joint)
        if parent_entry is not None and not parent_entry.is_anchor:
            j = bone_map.entries.index(parent_entry)
            residuals[i] = wrap_angle(delta_r[i] - delta_r[j])
    return residuals


def adapt_skeleton(rest_joints: np.ndarray, bone_map: BoneMap, delta_r: np.ndarray,
                   scale: float, parents: np.ndarray | None = None) -> SkeletonAdjustment:
    """Scale rest joints about the root, then rotate each mapped bone's
    subtree about the bone's parent joint around the front-view axis (+Z),
    in topological order.

    parents defaults to the canonical 24-joint hierarchy.
    """
    rest_joints = np.asarray(rest_joints, dtype=np.float64)
    delta_r = np.asarray(delta_r, dtype=np.float64)
    if len(delta_r) != len(bone_map):
        raise InputError(f"expected {len(bone_map)} deltas, got {len(delta_r)}")
    if parents is None:
        from .capsule import PARENTS
        parents = PARENTS
    parents = np.asarray(parents, dtype=np.int64)
    if len(parents) != len(rest_joints):
        raise InputError(
            f"parents ({len(parents)}) and rest joints ({len(rest_joints)}) disagree")
    if scale == 1.0:
        joints = rest_joints.copy()
    else:
        joints = rest_joints[0] + scale * (rest_joints - rest_joints[0])
    residuals = _residual_rotations(bone_map, delta_r)
    for i in _entry_order(bone_map, parents):
        e = bone_map.entries[i]
        if e.is_anchor or residuals[i] == 0.0:
            continue
        pivot = joints[e.parent_joint].copy()
        rz = axis_angle_to_matrix([0.0, 0.0, residuals[i]])
        mask = subtree_mask(parents, e.joint)
        joints[mask] = (joints[mask] - pivot) @ rz.T + pivot
    return SkeletonAdjustment(
        scale=scale, delta_r=delta_r, adjusted_rest_joints=joints,
        parents=parents, bone_map=bone_map, residual_rotations=residuals)


def auto_skin_weights(vertices: np.ndarray, rest_joints: np.ndarray,
                      parents: np.ndarray) -> np.ndarray:
    """Distance-based skinning: inverse-quartic weights over the 4 nearest
    bone segments, attributed to each bone's driving joint.

    The regularizer epsilon is 1e-4 of the skeleton's vertical extent.
    """
    v = np.asarray(vertices, dtype=np.float64)
    joints = np.asarray(rest_joints, dtype=np.float64)
    parents = np.asarray(parents, dtype=np.int64)
    nj = len(joints)
    children = np.arange(1, nj)
    a = joints[parents[children]]            # (B, 3) segment starts
    b = joints[children]                     # (B, 3) segment ends
    ab = b - a
    denom = np.maximum((ab * ab).sum(axis=1), 1e-30)
    # Point-to-segment distances, all vertices x all bones.
    ap = v[:, None, :] - a[None, :, :]
    t = np.clip((ap * ab[None]).sum(axis=2) / denom[None], 0.0, 1.0)
    closest = a[None] + t[:, :, None] * ab[None]
    d = np.linalg.norm(v[:, None, :] - closest, axis=2)

    eps = 1e-4 * max(joints[:, 1].max() - joints[:, 1].min(), 1e-12)
    nb = min(4, d.shape[1])
    near = np.argpartition(d, nb - 1, axis=1)[:, :nb]
    rows = np.arange(len(v))[:, None]
    w_near = 1.0 / (d[rows, near] + eps) ** 4
    w_near /= w_near.sum(axis=1, keepdims=True)

    weights = np.zeros((len(v), nj))
    driving = parents[children]
    for col in range(nb):
        np.add.at(weights, (rows[:, 0], driving[near[:, col]]), w_near[:, col])
    return weights


def _compensated_locals(adjustment: SkeletonAdjustment, frame) -> np.ndarray:
    joints = adjustment.adjusted_rest_joints
    parents = adjustment.parents
    nj = len(parents)
    if frame.local_rotations.shape[0] != nj:
        raise InputError(
            f"frame has {frame.local_rotations.shape[0]} rotations, skeleton has {nj} joints")
    comp = {e.joint: r for e, r in
            zip(adjustment.bone_map.entries, adjustment.residual_rotations)
            if not e.is_anchor and r != 0.0}
    locals_ = np.tile(np.eye(4), (nj, 1, 1))
    for k in range(nj):
        r = axis_angle_to_matrix(frame.local_rotations[k])
        offset = joints[0] + frame.root_translation if k == 0 \
            else joints[k] - joints[parents[k]]
        if k in comp:
            # Undo the rest-pose delta in the bone's rest-local frame so the
            # motion plays back in canonical directions.
            c = axis_angle_to_matrix([0.0, 0.0, -comp[k]])
            locals_[k, :3, :3] = c @ r
            locals_[k, :3, 3] = c @ offset
        else:
            locals_[k, :3, :3] = r
            locals_[k, :3, 3] = offset
    return locals_


def animate(mesh: CharacterMesh, adjustment: SkeletonAdjustment,
            weights: np.ndarray, motion: MotionClip) -> list[np.ndarray]:
    """Pose the character for every motion frame.

    Vertices are pre-scaled by adjustment.scale (plus the fitting offset);
    each mapped bone's local rotation is compensated by the inverse of its
    residual front-view delta before standard FK + LBS.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(mesh.vertices), len(adjustment.parents)):
        raise InputError(
            f"weights shape {w.shape} does not match mesh/skeleton "
            f"({len(mesh.vertices)}, {len(adjustment.parents)})")
    if not np.allclose(w.sum(axis=1), 1.0, atol=1e-6):
        raise InputError("skin weight rows must sum to 1")
    v0 = mesh.vertices * adjustment.scale + adjustment.mesh_offset
    out = []
    for frame in motion.frames:
        locals_ = _compensated_locals(adjustment, frame)
        globals_ = propagate_transforms(adjustment.parents, locals_)
        skinning = skinning_from_globals(globals_, adjustment.adjusted_rest_joints)
        out.append(lbs(v0, w, skinning))
    return out


def animate_joints(adjustment: SkeletonAdjustment, motion: MotionClip) -> list[np.ndarray]:
    """Posed adjusted-skeleton joints per frame (compensated like animate)."""
    out = []
    for frame in motion.frames:
        locals_ = _compensated_locals(adjustment, frame)
        globals_ = propagate_transforms(adjustment.parents, locals_)
        out.append(globals_[:, :3, 3].copy())
    return out


def _bbox_anchor(vertices: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices, dtype=np.float64)
    lo, hi = v.min(axis=0), v.max(axis=0)
    return np.array([(lo[0] + hi[0]) / 2.0, lo[1], (lo[2] + hi[2]) / 2.0])


def fit_character(model, mesh: CharacterMesh, char_keypoints: Keypoints2D,
                  bone_map: BoneMap = DEFAULT_BONE_MAP,
                  ) -> tuple[SkeletonAdjustment, np.ndarray, list[str]]:
    """Full character fitting: scale, angle deltas, placement, skin weights.

    char_keypoints are front-view keypoints in the y-up convention (use
    Keypoints2D.flipped_v for raw detector pixels). Returns the adjustment,
    auto-assigned skin weights and any bone warnings.
    """
    bone_map.validate_against(model.num_joints)
    l_s = measure_height(model.template_vertices)
    l_m = measure_height(mesh.vertices)
    if l_m <= 0.0:
        raise InputError("degenerate character mesh: zero height")
    scale = l_s / l_m
    rest_joints = model.rest_joints()
    canon = canonical_front_keypoints(rest_joints, bone_map)
    delta_r, warns = compute_delta_r(char_keypoints, canon, bone_map)
    adjustment = adapt_skeleton(rest_joints, bone_map, delta_r, scale=1.0,
                                parents=model.parents)
    offset = _bbox_anchor(model.template_vertices) - _bbox_anchor(mesh.vertices * scale)
    adjustment = dataclasses.replace(adjustment, scale=scale, mesh_offset=offset)
    weights = auto_skin_weights(mesh.vertices * scale + offset,
                                adjustment.adjusted_rest_joints, adjustment.parents)
    return adjustment, weights, warns
