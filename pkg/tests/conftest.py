import numpy as np
import pytest

from cinetransfer.body import MotionClip, PoseFrame, pose_mesh
from cinetransfer.capsule import capsule_man
from cinetransfer.retarget import CharacterMesh, Keypoints2D, DEFAULT_BONE_MAP


@pytest.fixture(scope="session")
def capsule():
    return capsule_man()


def arm_raise_clip(frames=10, peak=np.deg2rad(75.0), fps=30.0) -> MotionClip:
    """Shoulder rotations ramping from T-pose toward vertical."""
    out = []
    for t in range(frames):
        rots = np.zeros((24, 3))
        a = peak * t / max(frames - 1, 1)
        rots[16, 2] = a    # left arm (along +X) swings up
        rots[17, 2] = -a   # right arm mirrors
        out.append(PoseFrame(np.zeros(3), rots))
    return MotionClip(tuple(out), fps)


def apose_character(info, angle=np.deg2rad(45.0)):
    """Capsule-man reposed with arms hanging toward the legs, plus its
    front-view keypoints, for use as a retargeting test character."""
    rots = np.zeros((24, 3))
    rots[16, 2] = -angle
    rots[17, 2] = angle
    frame = PoseFrame(np.zeros(3), rots)
    verts, joints = pose_mesh(info.model, frame)
    mesh = CharacterMesh(verts, info.model.faces)
    pts = np.zeros((len(DEFAULT_BONE_MAP), 3))
    for e in DEFAULT_BONE_MAP.entries:
        pts[e.keypoint] = [joints[e.joint, 0], joints[e.joint, 1], 1.0]
    return mesh, Keypoints2D(pts)
