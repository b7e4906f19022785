import numpy as np
import pytest

from cinetransfer.body import MotionClip, PoseFrame, pose_mesh, pose_motion
from cinetransfer.errors import InputError
from cinetransfer.retarget import (
    DEFAULT_BONE_MAP,
    BoneMap,
    BoneMapEntry,
    CharacterMesh,
    Keypoints2D,
    adapt_skeleton,
    animate,
    animate_joints,
    auto_skin_weights,
    canonical_front_keypoints,
    compute_delta_r,
    fit_character,
    measure_height,
    wrap_angle,
)

from conftest import apose_character, arm_raise_clip


def test_measure_height_simple():
    verts = np.array([[0.0, 0.0, 0.0], [1.0, 1.8, 0.0], [0.2, 0.5, 0.3]])
    assert measure_height(verts) == pytest.approx(1.8)


def test_measure_height_single_vertex_is_zero():
    assert measure_height(np.array([[1.0, 2.0, 3.0]])) == 0.0


def test_measure_height_empty_rejected():
    with pytest.raises(InputError):
        measure_height(np.zeros((0, 3)))


def test_capsule_height_matches_generator(capsule):
    assert measure_height(capsule.model.template_vertices) == pytest.approx(
        capsule.height, abs=1e-12)


def test_character_mesh_rejects_flat():
    with pytest.raises(InputError):
        CharacterMesh(np.array([[0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0]]),
                      np.array([[0, 1, 2]]))


def test_default_bone_map_is_consistent(capsule):
    assert len(DEFAULT_BONE_MAP) == 14
    DEFAULT_BONE_MAP.validate_against(capsule.model.num_joints)
    # Every measured bone's parent joint is itself mapped so its 2D position exists.
    for e in DEFAULT_BONE_MAP.entries:
        assert DEFAULT_BONE_MAP.keypoint_of_joint(e.parent_joint) is not None


def test_bone_map_rejects_duplicates():
    with pytest.raises(InputError):
        BoneMap((BoneMapEntry(0, 1, 0), BoneMapEntry(1, 1, 0)))


def test_delta_r_identical_layouts_is_zero(capsule):
    canon = canonical_front_keypoints(capsule.joints, DEFAULT_BONE_MAP)
    delta, warns = compute_delta_r(canon, canon, DEFAULT_BONE_MAP)
    np.testing.assert_allclose(delta, 0.0, atol=1e-12)
    assert warns == []


def test_delta_r_apose_arm_is_minus_quarter_pi(capsule):
    canon = canonical_front_keypoints(capsule.joints, DEFAULT_BONE_MAP)
    _, kp = apose_character(capsule)
    delta, _ = compute_delta_r(kp, canon, DEFAULT_BONE_MAP)
    # Left upper arm (elbow entry, keypoint 4) hangs at -45 degrees.
    assert delta[4] == pytest.approx(-np.pi / 4, abs=1e-9)
    assert delta[5] == pytest.approx(np.pi - np.pi / 4, abs=1e-9) or \
        delta[5] == pytest.approx(np.pi / 4 - np.pi, abs=1e-9) or \
        delta[5] == pytest.approx(np.pi / 4, abs=1e-9)


def test_delta_r_in_plane_rotation_invariance(capsule):
    rng = np.random.default_rng(40)
    canon = canonical_front_keypoints(capsule.joints, DEFAULT_BONE_MAP)
    _, kp = apose_character(capsule)
    base, _ = compute_delta_r(kp, canon, DEFAULT_BONE_MAP)
    for _ in range(25):
        a = rng.uniform(-np.pi / 2, np.pi / 2)
        rot = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        kp2 = kp.points.copy()
        kp2[:, :2] = kp2[:, :2] @ rot.T
        canon2 = canon.points.copy()
        canon2[:, :2] = canon2[:, :2] @ rot.T
        delta, _ = compute_delta_r(Keypoints2D(kp2), Keypoints2D(canon2), DEFAULT_BONE_MAP)
        np.testing.assert_allclose(delta, base, atol=1e-9)


def test_delta_r_low_confidence_zeroed(capsule):
    canon = canonical_front_keypoints(capsule.joints, DEFAULT_BONE_MAP)
    _, kp = apose_character(capsule)
    pts = kp.points.copy()
    pts[4, 2] = 0.1  # left elbow keypoint unreliable
    delta, _ = compute_delta_r(Keypoints2D(pts), canon, DEFAULT_BONE_MAP)
    assert delta[4] == 0.0


def test_delta_r_zero_length_bone_warns():
    bm = BoneMap((BoneMapEntry(0, 0, 0), BoneMapEntry(1, 1, 0)))
    pts = Keypoints2D(np.array([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]))
    ref = Keypoints2D(np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 1.0]]))
    delta, warns = compute_delta_r(pts, ref, bm)
    assert delta[1] == 0.0
    assert len(warns) == 1


def test_adapt_skeleton_identity(capsule):
    adj = adapt_skeleton(capsule.joints, DEFAULT_BONE_MAP,
                         np.zeros(14), scale=1.0)
    assert np.array_equal(adj.adjusted_rest_joints, capsule.joints)


def test_adapt_skeleton_scale(capsule):
    adj = adapt_skeleton(capsule.joints, DEFAULT_BONE_MAP, np.zeros(14), scale=0.85)
    d0 = np.linalg.norm(capsule.joints - capsule.joints[0], axis=1)
    d1 = np.linalg.norm(adj.adjusted_rest_joints - capsule.joints[0], axis=1)
    np.testing.assert_allclose(d1, 0.85 * d0, atol=1e-12)


def test_adapt_skeleton_single_arm_bone_hand_computed():
    # Three-joint arm along +X; one mapped bone at the elbow with -45 degrees.
    joints = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    parents = np.array([-1, 0, 1])
    bm = BoneMap((BoneMapEntry(0, 0, 0), BoneMapEntry(1, 1, 0), BoneMapEntry(2, 2, 1)))
    delta = np.array([0.0, -np.pi / 4, -np.pi / 4])
    adj = adapt_skeleton(joints, bm, delta, scale=1.0, parents=parents)
    c, s = np.cos(-np.pi / 4), np.sin(-np.pi / 4)
    np.testing.assert_allclose(adj.adjusted_rest_joints[1], [c, s, 0.0], atol=1e-12)
    # The wrist's absolute delta equals the elbow's, so its residual is zero
    # and it rides along with the rotated subtree.
    np.testing.assert_allclose(adj.adjusted_rest_joints[2], [2 * c, 2 * s, 0.0], atol=1e-12)
    assert adj.residual_rotations[2] == 0.0


def test_auto_skin_vertex_on_bone_dominates():
    joints = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, -1.0, 0.0],
                       [0.0, 5.0, 0.0]])
    parents = np.array([-1, 0, 1, 0])
    v = np.array([[0.5, 0.0, 0.0]])  # exactly on bone 0 -> 1, far from others
    w = auto_skin_weights(v, joints, parents)
    assert w[0, 0] > 0.99


def test_auto_skin_equidistant_bones_share_equally():
    joints = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, -1.0, 0.0]])
    parents = np.array([-1, 0, 0])
    v = np.array([[1.0, 0.0, 0.0]])  # symmetric between the two bones
    w = auto_skin_weights(v, joints, parents)
    # Both bones share the same driving joint here (root), so construct an
    # asymmetric-driver case instead.
    joints = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [2.0, 2.0, 0.0],
                       [1.0, -1.0, 0.0], [2.0, -2.0, 0.0]])
    parents = np.array([-1, 0, 1, 0, 3])
    v = np.array([[1.5, 0.0, 0.0]])
    w = auto_skin_weights(v, joints, parents)
    assert w[0, 1] == pytest.approx(w[0, 3])


def test_auto_skin_rows_sum_to_one(capsule):
    w = auto_skin_weights(capsule.model.template_vertices, capsule.joints,
                          capsule.model.parents)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(w >= 0.0)


def test_auto_skin_capsule_oracle(capsule):
    w = auto_skin_weights(capsule.model.template_vertices, capsule.joints,
                          capsule.model.parents)
    got = np.argmax(w, axis=1)
    match = (got == capsule.driving_joint).mean()
    assert match >= 0.95


def test_fit_canonical_character_is_identity(capsule):
    mesh = CharacterMesh(capsule.model.template_vertices, capsule.model.faces)
    canon = canonical_front_keypoints(capsule.joints, DEFAULT_BONE_MAP)
    adj, weights, warns = fit_character(capsule.model, mesh, canon)
    assert adj.scale == 1.0
    np.testing.assert_allclose(adj.delta_r, 0.0, atol=1e-12)
    np.testing.assert_allclose(adj.mesh_offset, 0.0, atol=1e-12)
    assert warns == []


def test_animate_canonical_equals_direct_lbs(capsule):
    # Compensation vanishes for an identical character: animate must equal
    # the plain model pipeline exactly.
    mesh = CharacterMesh(capsule.model.template_vertices, capsule.model.faces)
    canon = canonical_front_keypoints(capsule.model.rest_joints(), DEFAULT_BONE_MAP)
    adj, _, _ = fit_character(capsule.model, mesh, canon)
    assert np.all(adj.delta_r == 0.0)
    clip = arm_raise_clip(frames=5)
    out = animate(mesh, adj, capsule.model.skin_weights, clip)
    expected, _ = pose_motion(capsule.model, clip)
    for a, b in zip(out, expected):
        assert np.array_equal(a, b)


def test_animate_rest_motion_is_constant(capsule):
    mesh, kp = apose_character(capsule)
    adj, weights, _ = fit_character(capsule.model, mesh, kp)
    clip = MotionClip(tuple(PoseFrame.rest(24) for _ in range(4)), 30.0)
    out = animate(mesh, adj, weights, clip)
    for frame in out[1:]:
        assert np.array_equal(frame, out[0])


def test_animate_height_normalization(capsule):
    mesh, kp = apose_character(capsule)
    adj, weights, _ = fit_character(capsule.model, mesh, kp)
    clip = MotionClip((PoseFrame.rest(24),), 30.0)
    out = animate(mesh, adj, weights, clip)[0]
    l_s = measure_height(capsule.model.template_vertices)
    assert abs(measure_height(out) - l_s) <= 1e-6 * l_s


def test_animate_determinism(capsule):
    mesh, kp = apose_character(capsule)
    adj, weights, _ = fit_character(capsule.model, mesh, kp)
    clip = arm_raise_clip(frames=3)
    a = animate(mesh, adj, weights, clip)
    b = animate(mesh, adj, weights, clip)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_apose_wrist_direction_matches_canonical(capsule):
    # Drive an A-pose character with a T-pose arm raise; the compensated
    # wrist must end up within 5 degrees of the canonical wrist direction.
    mesh, kp = apose_character(capsule)
    adj, weights, _ = fit_character(capsule.model, mesh, kp)
    clip = arm_raise_clip(frames=8)
    joints_out = animate_joints(adj, clip)
    _, canon_joints = pose_mesh(capsule.model, clip.frames[-1])
    for shoulder, wrist in ((16, 20), (17, 21)):
        got = joints_out[-1][wrist] - joints_out[-1][shoulder]
        want = canon_joints[wrist] - canon_joints[shoulder]
        cosang = np.dot(got, want) / (np.linalg.norm(got) * np.linalg.norm(want))
        assert np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))) <= 5.0


def test_wrap_angle():
    assert wrap_angle(np.pi) == pytest.approx(np.pi)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)
    assert wrap_angle(3 * np.pi / 2) == pytest.approx(-np.pi / 2)
    assert wrap_angle(0.1) == pytest.approx(0.1)
