"""Procedural capsule-man body model.

A small articulated tube-man (24 joints in SMPL ordering, ~770 vertices)
generated analytically so every test can run without external model files.
Ring placement is chosen so that the joint regressor reproduces the design
joints exactly:

  * interior joints of straight chains average the two flanking rings, which
    sit at equal insets on either side of the joint
  * the pelvis averages the single rings of the two hip connector bones,
    which are symmetric about it
  * the bent hip joints average one specific vertex from each flanking ring
    (the rings are inset by exactly one tube radius, so the midpoint of the
    two axis-aligned ring vertices lands on the joint)
  * leaf joints average the ring placed exactly at the joint
"""

from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .body import BodyModel

JOINT_NAMES = [
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
]

PARENTS = np.array([-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9,
                    12, 13, 14, 16, 17, 18, 19, 20, 21], dtype=np.int64)

# T-pose design joints, meters. Left is +X, up is +Y, the character faces +Z.
DESIGN_JOINTS = np.array([
    [0.00, 0.95, 0.0],   # pelvis
    [+0.12, 0.95, 0.0],  # left_hip
    [-0.12, 0.95, 0.0],  # right_hip
    [0.00, 1.05, 0.0],   # spine1
    [+0.12, 0.50, 0.0],  # left_knee
    [-0.12, 0.50, 0.0],  # right_knee
    [0.00, 1.15, 0.0],   # spine2
    [+0.12, 0.10, 0.0],  # left_ankle
    [-0.12, 0.10, 0.0],  # right_ankle
    [0.00, 1.25, 0.0],   # spine3
    [+0.12, 0.00, 0.0],  # left_foot
    [-0.12, 0.00, 0.0],  # right_foot
    [0.00, 1.45, 0.0],   # neck
    [+0.08, 1.25, 0.0],  # left_collar
    [-0.08, 1.25, 0.0],  # right_collar
    [0.00, 1.70, 0.0],   # head
    [+0.20, 1.25, 0.0],  # left_shoulder
    [-0.20, 1.25, 0.0],  # right_shoulder
    [+0.45, 1.25, 0.0],  # left_elbow
    [-0.45, 1.25, 0.0],  # right_elbow
    [+0.70, 1.25, 0.0],  # left_wrist
    [-0.70, 1.25, 0.0],  # right_wrist
    [+0.80, 1.25, 0.0],  # left_hand
    [-0.80, 1.25, 0.0],  # right_hand
])

RADIUS = 0.04
RING_SIZE = 12
HEIGHT = 1.70  # head ring sits at y=1.70, foot rings at y=0.0

LEAF_JOINTS = (10, 11, 15, 22, 23)

# Ring stations (arclength from the parent end) per bone, keyed by child joint.
# End stations are inset by RADIUS unless the far end is a leaf joint, where
# the last ring sits exactly on the joint.
_STATIONS = {
    1: [0.08], 2: [0.08],                        # pelvis -> hip connectors
    3: [0.04, 0.06], 6: [0.04, 0.06], 9: [0.04, 0.06],   # spine segments
    4: [0.04, 0.13, 0.22, 0.31, 0.41], 5: [0.04, 0.13, 0.22, 0.31, 0.41],
    7: [0.04, 0.13, 0.22, 0.36], 8: [0.04, 0.13, 0.22, 0.36],
    10: [0.04, 0.10], 11: [0.04, 0.10],          # ankle -> foot
    12: [0.04, 0.10, 0.16],                      # spine3 -> neck
    13: [0.04], 14: [0.04],                      # collar connectors
    15: [0.04, 0.14, 0.25],                      # neck -> head
    16: [0.04, 0.08], 17: [0.04, 0.08],
    18: [0.04, 0.10, 0.16, 0.21], 19: [0.04, 0.10, 0.16, 0.21],
    20: [0.04, 0.10, 0.16, 0.21], 21: [0.04, 0.10, 0.16, 0.21],
    22: [0.04, 0.10], 23: [0.04, 0.10],
}


class CapsuleMan(NamedTuple):
    model: BodyModel
    joints: np.ndarray        # (24, 3) design rest joints
    vertex_bone: np.ndarray   # (Nv,) generating bone (child joint index)
    driving_joint: np.ndarray  # (Nv,) joint whose rotation drives the vertex
    height: float


def _ring_axes(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Vertical bones get (x, z) rings, horizontal +-X bones get (y, z) rings.
    if abs(direction[1]) > 0.5:
        return np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])
    return np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])


def _build() -> CapsuleMan:
    phases = 2.0 * np.pi * np.arange(RING_SIZE) / RING_SIZE
    cosines, sines = np.cos(phases), np.sin(phases)

    vertices: list[np.ndarray] = []
    faces: list[tuple[int, int, int]] = []
    vertex_bone: list[int] = []
    # ring_index[(bone, station_idx)] -> index of the ring's first vertex
    ring_start: dict[tuple[int, int], int] = {}

    for child in range(1, 24):
        parent = PARENTS[child]
        a, b = DESIGN_JOINTS[parent], DESIGN_JOINTS[child]
        direction = (b - a) / np.linalg.norm(b - a)
        e1, e2 = _ring_axes(direction)
        stations = _STATIONS[child]
        for si, s in enumerate(stations):
            center = a + s * direction
            ring_start[(child, si)] = len(vertices)
            for c, sn in zip(cosines, sines):
                vertices.append(center + RADIUS * (c * e1 + sn * e2))
                vertex_bone.append(child)
        # Tube faces between consecutive rings.
        for si in range(len(stations) - 1):
            r0 = ring_start[(child, si)]
            r1 = ring_start[(child, si + 1)]
            for i in range(RING_SIZE):
                j = (i + 1) % RING_SIZE
                faces.append((r0 + i, r1 + i, r1 + j))
                faces.append((r0 + i, r1 + j, r0 + j))

    verts = np.array(vertices)
    faces_arr = np.array(faces, dtype=np.int64)
    bone_of = np.array(vertex_bone, dtype=np.int64)
    nv = len(verts)

    # Joint regressor. Phase 0 points along e1, phase RING_SIZE // 2 along -e1.
    regressor = np.zeros((24, nv))

    def ring(child, si):
        start = ring_start[(child, si)]
        return np.arange(start, start + RING_SIZE)

    def uniform(row, idx):
        regressor[row, idx] = 1.0 / len(idx)

    def half_uniform(row, idx_a, idx_b):
        regressor[row, idx_a] += 0.5 / len(idx_a)
        regressor[row, idx_b] += 0.5 / len(idx_b)

    # Pelvis: symmetric hip connector rings.
    half_uniform(0, ring(1, 0), ring(2, 0))
    # Bent hips: one +y vertex of the connector ring (phase 0 of a horizontal
    # bone) and one +-x vertex of the thigh's first ring.
    for hip, connector, thigh in ((1, 1, 4), (2, 2, 5)):
        v1 = ring_start[(connector, 0)]          # phase 0 = center + R*y
        phase = 0 if hip == 1 else RING_SIZE // 2
        v2 = ring_start[(thigh, 0)] + phase      # center +- R*x
        regressor[hip, v1] = 0.5
        regressor[hip, v2] = 0.5
    # Straight-chain interior joints: (incoming last ring + outgoing first ring) / 2.
    chain_pairs = {
        3: (3, 6), 6: (6, 9), 9: (9, 12), 12: (12, 15),
        4: (4, 7), 5: (5, 8), 7: (7, 10), 8: (8, 11),
        13: (13, 16), 14: (14, 17), 16: (16, 18), 17: (17, 19),
        18: (18, 20), 19: (19, 21), 20: (20, 22), 21: (21, 23),
    }
    for joint, (bone_in, bone_out) in chain_pairs.items():
        half_uniform(joint, ring(bone_in, len(_STATIONS[bone_in]) - 1), ring(bone_out, 0))
    # Leaves: ring placed exactly on the joint.
    for joint in LEAF_JOINTS:
        uniform(joint, ring(joint, len(_STATIONS[joint]) - 1))

    # Rigid binding: each tube follows the joint at its parent end.
    driving = PARENTS[bone_of]
    skin_weights = np.zeros((nv, 24))
    skin_weights[np.arange(nv), driving] = 1.0

    # Two simple shape directions: taller and wider; the rest are zero.
    shape_dirs = np.zeros((nv, 3, 10))
    shape_dirs[:, 1, 0] = 0.1 * verts[:, 1]
    shape_dirs[:, 0, 1] = 0.1 * verts[:, 0]
    shape_dirs[:, 2, 1] = 0.1 * verts[:, 2]

    model = BodyModel(
        template_vertices=verts,
        faces=faces_arr,
        shape_dirs=shape_dirs,
        joint_regressor=regressor,
        parents=PARENTS,
        skin_weights=skin_weights,
    )
    return CapsuleMan(model, DESIGN_JOINTS.copy(), bone_of, driving, HEIGHT)


@lru_cache(maxsize=1)
def capsule_man() -> CapsuleMan:
    """Cached capsule-man bundle (model, joints, per-vertex provenance)."""
    return _build()


def build_capsule_man() -> BodyModel:
    """The built-in test body model."""
    return capsule_man().model
