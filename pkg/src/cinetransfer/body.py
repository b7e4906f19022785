"""Parametric body model and linear blend skinning.

A posed mesh is produced in four steps: blend-shape the template, regress
rest joints from the shaped vertices, run forward kinematics to get one
skinning transform per joint, and blend those transforms per vertex.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InputError
from .geom import axis_angle_to_matrix


@dataclass(frozen=True)
class BodyModel:
    """Template mesh plus the linear bases and weights that animate it.

    template_vertices : (Nv, 3) rest-shape vertices, meters
    faces             : (F, 3) int triangle indices
    shape_dirs        : (Nv, 3, Nb) shape blend basis
    joint_regressor   : (Nj, Nv) row-stochastic joint regressor
    parents           : (Nj,) parent joint indices, parents[0] == -1
    skin_weights      : (Nv, Nj) non-negative rows summing to 1
    pose_dirs         : (Nv, 3, 3*(Nj-1)) pose-corrective basis, may be empty
    expr_dirs         : (Nv, 3, Ne) expression basis, may be empty
    """

    template_vertices: np.ndarray
    faces: np.ndarray
    shape_dirs: np.ndarray
    joint_regressor: np.ndarray
    parents: np.ndarray
    skin_weights: np.ndarray
    pose_dirs: np.ndarray = field(default=None)  # type: ignore[assignment]
    expr_dirs: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        v = np.asarray(self.template_vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64)
        sd = np.asarray(self.shape_dirs, dtype=np.float64)
        jr = np.asarray(self.joint_regressor, dtype=np.float64)
        par = np.asarray(self.parents, dtype=np.int64)
        w = np.asarray(self.skin_weights, dtype=np.float64)
        nv = v.shape[0]
        nj = par.shape[0]
        if v.ndim != 2 or v.shape[1] != 3:
            raise InputError(f"template_vertices must be (Nv, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise InputError(f"faces must be (F, 3), got {f.shape}")
        if sd.shape[:2] != (nv, 3):
            raise InputError(f"shape_dirs must be (Nv, 3, Nb), got {sd.shape}")
        if jr.shape != (nj, nv):
            raise InputError(f"joint_regressor must be (Nj, Nv), got {jr.shape}")
        if w.shape != (nv, nj):
            raise InputError(f"skin_weights must be (Nv, Nj), got {w.shape}")
        if par[0] != -1:
            raise InputError("parents[0] must be -1 (root)")
        if np.any(par[1:] >= np.arange(1, nj)):
            raise InputError("joints must be topologically ordered (parent < child)")
        if np.any(w < 0.0) or not np.allclose(w.sum(axis=1), 1.0, atol=1e-6):
            raise InputError("skin_weights rows must be non-negative and sum to 1")
        if not np.allclose(jr.sum(axis=1), 1.0, atol=1e-6):
            raise InputError("joint_regressor rows must sum to 1")
        pd = self.pose_dirs
        pd = np.zeros((nv, 3, 0)) if pd is None else np.asarray(pd, dtype=np.float64)
        ed = self.expr_dirs
        ed = np.zeros((nv, 3, 0)) if ed is None else np.asarray(ed, dtype=np.float64)
        if pd.shape[2] not in (0, 3 * (nj - 1)):
            raise InputError(f"pose_dirs width must be 0 or 3*(Nj-1), got {pd.shape[2]}")
        if pd.shape[:2] != (nv, 3) or ed.shape[:2] != (nv, 3):
            raise InputError("pose_dirs/expr_dirs must be (Nv, 3, *)")
        object.__setattr__(self, "template_vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "shape_dirs", sd)
        object.__setattr__(self, "joint_regressor", jr)
        object.__setattr__(self, "parents", par)
        object.__setattr__(self, "skin_weights", w)
        object.__setattr__(self, "pose_dirs", pd)
        object.__setattr__(self, "expr_dirs", ed)

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def num_joints(self) -> int:
        return self.parents.shape[0]

    @property
    def num_shape_coeffs(self) -> int:
        return self.shape_dirs.shape[2]

    def rest_joints(self) -> np.ndarray:
        return regress_joints(self, self.template_vertices)


@dataclass(frozen=True)
class PoseFrame:
    """One frame of pose: root placement plus parent-local joint rotations."""

    root_translation: np.ndarray
    local_rotations: np.ndarray  # (Nj, 3) axis-angle
    shape: np.ndarray = field(default=None)  # type: ignore[assignment]
    expression: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        t = np.asarray(self.root_translation, dtype=np.float64).reshape(3)
        r = np.asarray(self.local_rotations, dtype=np.float64)
        if r.ndim != 2 or r.shape[1] != 3:
            raise InputError(f"local_rotations must be (Nj, 3), got {r.shape}")
        s = self.shape
        s = np.zeros(0) if s is None else np.asarray(s, dtype=np.float64).reshape(-1)
        e = self.expression
        e = np.zeros(0) if e is None else np.asarray(e, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "root_translation", t)
        object.__setattr__(self, "local_rotations", r)
        object.__setattr__(self, "shape", s)
        object.__setattr__(self, "expression", e)

    @staticmethod
    def rest(num_joints: int) -> "PoseFrame":
        return PoseFrame(np.zeros(3), np.zeros((num_joints, 3)))


@dataclass(frozen=True)
class MotionClip:
    """Ordered pose frames for a single performer."""

    frames: tuple
    fps: float

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise InputError("MotionClip must contain at least one frame")
        shape0 = frames[0].shape
        for f in frames[1:]:
            if f.shape.shape != shape0.shape or not np.array_equal(f.shape, shape0):
                raise InputError("all frames of a clip must share one shape vector")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)


class FKResult(NamedTuple):
    skinning: np.ndarray  # (Nj, 4, 4) transforms mapping rest-pose space to posed space
    joints: np.ndarray    # (Nj, 3) posed joint positions


def shaped_template(model: BodyModel, frame: PoseFrame) -> np.ndarray:
    """Rest-shape vertices: template plus shape, pose and expression offsets.

    Missing bases contribute zero. Basis/coefficient length mismatches are
    rejected; empty coefficient vectors stand for all-zero coefficients.
    """
    v = model.template_vertices.copy()
    beta = frame.shape
    if beta.size:
        if beta.size != model.shape_dirs.shape[2]:
            raise InputError(
                f"shape has {beta.size} coefficients, basis expects {model.shape_dirs.shape[2]}")
        v += model.shape_dirs @ beta
    if model.pose_dirs.shape[2]:
        theta = frame.local_rotations[1:].reshape(-1)
        if theta.size != model.pose_dirs.shape[2]:
            raise InputError(
                f"pose vector has {theta.size} entries, basis expects {model.pose_dirs.shape[2]}")
        v += model.pose_dirs @ theta
    psi = frame.expression
    if psi.size:
        if psi.size != model.expr_dirs.shape[2]:
            raise InputError(
                f"expression has {psi.size} coefficients, basis expects {model.expr_dirs.shape[2]}")
        v += model.expr_dirs @ psi
    return v


def regress_joints(model: BodyModel, rest_vertices: np.ndarray) -> np.ndarray:
    """Rest joint positions as the regressor-weighted average of vertices."""
    rest_vertices = np.asarray(rest_vertices, dtype=np.float64)
    if rest_vertices.shape != (model.num_vertices, 3):
        raise InputError(
            f"expected ({model.num_vertices}, 3) vertices, got {rest_vertices.shape}")
    return model.joint_regressor @ rest_vertices


def local_pose_transforms(rest_joints: np.ndarray, parents: np.ndarray,
                          frame: PoseFrame) -> np.ndarray:
    """Per-joint local 4x4 transforms: rotation plus parent-relative offset."""
    rest_joints = np.asarray(rest_joints, dtype=np.float64)
    nj = len(parents)
    if frame.local_rotations.shape[0] != nj:
        raise InputError(
            f"frame has {frame.local_rotations.shape[0]} rotations, model has {nj} joints")
    locals_ = np.tile(np.eye(4), (nj, 1, 1))
    for k in range(nj):
        locals_[k, :3, :3] = axis_angle_to_matrix(frame.local_rotations[k])
        if k == 0:
            locals_[k, :3, 3] = rest_joints[0] + frame.root_translation
        else:
            locals_[k, :3, 3] = rest_joints[k] - rest_joints[parents[k]]
    return locals_


def propagate_transforms(parents: np.ndarray, local_transforms: np.ndarray) -> np.ndarray:
    """Compose local transforms down the kinematic tree."""
    nj = len(parents)
    out = np.empty_like(local_transforms)
    out[0] = local_transforms[0]
    for k in range(1, nj):
        out[k] = out[parents[k]] @ local_transforms[k]
    return out


def skinning_from_globals(global_transforms: np.ndarray,
                          rest_joints: np.ndarray) -> np.ndarray:
    """Bake the inverse rest transform into each global joint transform."""
    out = global_transforms.copy()
    # Rest transform of joint k is a pure translation by the rest joint, so the
    # composition reduces to adjusting the translation column.
    out[:, :3, 3] -= np.einsum("kab,kb->ka", global_transforms[:, :3, :3], rest_joints)
    return out


def forward_kinematics(rest_joints: np.ndarray, parents: np.ndarray,
                       frame: PoseFrame) -> FKResult:
    """Skinning transforms and posed joints for one frame.

    Global transforms follow G_k = G_parent(k) o [R_k | j_k - j_parent(k)];
    the root local transform carries the rest root plus root_translation.
    The returned skinning transforms are G_k composed with the inverse of
    joint k's rest transform.
    """
    rest_joints = np.asarray(rest_joints, dtype=np.float64)
    locals_ = local_pose_transforms(rest_joints, parents, frame)
    globals_ = propagate_transforms(parents, locals_)
    return FKResult(skinning_from_globals(globals_, rest_joints), globals_[:, :3, 3].copy())


def lbs(rest_vertices: np.ndarray, skin_weights: np.ndarray,
        skinning_transforms: np.ndarray) -> np.ndarray:
    """Blend per-joint rigid transforms of each vertex by its skin weights."""
    v = np.asarray(rest_vertices, dtype=np.float64)
    w = np.asarray(skin_weights, dtype=np.float64)
    a = np.asarray(skinning_transforms, dtype=np.float64)
    if w.shape != (v.shape[0], a.shape[0]):
        raise InputError(
            f"skin_weights shape {w.shape} does not match {v.shape[0]} vertices "
            f"and {a.shape[0]} joints")
    rot = np.einsum("vj,jab->vab", w, a[:, :3, :3])
    trans = w @ a[:, :3, 3]
    return np.einsum("vab,vb->va", rot, v) + trans


def pose_mesh(model: BodyModel, frame: PoseFrame) -> tuple[np.ndarray, np.ndarray]:
    """Posed vertices and joints for one frame of the full model pipeline."""
    rest = shaped_template(model, frame)
    joints = regress_joints(model, rest)
    fk = forward_kinematics(joints, model.parents, frame)
    return lbs(rest, model.skin_weights, fk.skinning), fk.joints


def pose_motion(model: BodyModel, motion: MotionClip) -> tuple[list, list]:
    """Posed vertices and joints for every frame of a clip."""
    verts, joints = [], []
    for frame in motion.frames:
        v, j = pose_mesh(model, frame)
        verts.append(v)
        joints.append(j)
    return verts, joints


def joint_depths(parents: Sequence[int]) -> np.ndarray:
    """Depth of each joint in the kinematic tree (root is 0)."""
    depths = np.zeros(len(parents), dtype=np.int64)
    for k in range(1, len(parents)):
        depths[k] = depths[parents[k]] + 1
    return depths


def subtree_mask(parents: Sequence[int], root: int) -> np.ndarray:
    """Boolean mask of `root` and all its descendants."""
    nj = len(parents)
    mask = np.zeros(nj, dtype=bool)
    mask[root] = True
    for k in range(root + 1, nj):
        if parents[k] >= 0 and mask[parents[k]]:
            mask[k] = True
    return mask
