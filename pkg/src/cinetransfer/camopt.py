"""Shape-aware camera movement optimization.

Refines per-frame 6-DoF extrinsics by minimizing instance (silhouette),
semantic (keypoint) and motion (flow) losses against evidence extracted from
the original shot. The objective is evaluated through the deterministic
rasterizer and minimized with central finite differences plus an adaptive
step (13 renders per gradient), so no differentiable renderer is needed.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import distance_transform_edt
from scipy.spatial import cKDTree

from .errors import DegenerateInputWarning, InputError
from .geom import PinholeCamera, RigidTransform, Rotation
from .raster import FlowField, Mask, _rasterize, project_joints
from .retarget import CONFIDENCE_FLOOR, Keypoints2D


@dataclass(frozen=True)
class CameraTrajectory:
    """Shared pinhole intrinsics plus per-frame world-to-camera extrinsics."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsics: tuple

    def __post_init__(self):
        object.__setattr__(self, "extrinsics", tuple(self.extrinsics))
        if not self.extrinsics:
            raise InputError("trajectory must contain at least one frame")

    def __len__(self) -> int:
        return len(self.extrinsics)

    def camera(self, t: int) -> PinholeCamera:
        return PinholeCamera(self.fx, self.fy, self.cx, self.cy,
                             self.width, self.height, self.extrinsics[t])

    def with_extrinsics(self, extrinsics) -> "CameraTrajectory":
        return dataclasses.replace(self, extrinsics=tuple(extrinsics))


@dataclass(frozen=True)
class EvidenceTrack:
    """Per-frame supervision from the original shot: mask, keypoints, and
    flow to the next frame (one fewer flow than frames)."""

    masks: tuple
    keypoints: tuple
    flows: tuple

    def __post_init__(self):
        masks = tuple(self.masks)
        keypoints = tuple(self.keypoints)
        flows = tuple(self.flows)
        if not masks or len(keypoints) != len(masks):
            raise InputError("masks and keypoints must align one per frame")
        if len(flows) != len(masks) - 1:
            raise InputError(
                f"expected {len(masks) - 1} flow fields for {len(masks)} frames, "
                f"got {len(flows)}")
        shape = masks[0].pixels.shape
        for m in masks:
            if m.pixels.shape != shape:
                raise InputError("all evidence frames must share one resolution")
        for f in flows:
            if f is not None and f.vectors.shape[:2] != shape:
                raise InputError("flow resolution must match the masks")
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "keypoints", keypoints)
        object.__setattr__(self, "flows", flows)

    def __len__(self) -> int:
        return len(self.masks)

    def flow_at(self, t: int):
        return self.flows[t] if t < len(self.flows) else None


@dataclass(frozen=True)
class CamOptConfig:
    """Loss weights, finite-difference steps and stopping rules.

    fd_trans_step defaults to 1e-3 of the scene diameter when left None.
    """

    lambda_instance: float = 1.0
    lambda_semantic: float = 1.0
    lambda_motion: float = 0.5
    lambda_smooth: float = 0.0
    fd_rot_step: float = 1e-3
    fd_trans_step: float | None = None
    init_step: float = 8.0
    max_iterations: int = 200
    tolerance: float = 1e-7
    smooth_sweeps: int = 30

    def __post_init__(self):
        lams = (self.lambda_instance, self.lambda_semantic, self.lambda_motion)
        if any(l < 0.0 for l in lams) or self.lambda_smooth < 0.0:
            raise InputError("loss weights must be non-negative")
        if not any(l > 0.0 for l in lams):
            raise InputError("at least one loss weight must be positive")
        if self.max_iterations < 1:
            raise InputError("max_iterations must be at least 1")


@dataclass(frozen=True)
class FrameScene:
    """What the renderer needs for one frame: posed mesh, loss joints, and
    (for the flow comparand) the next frame's mesh and camera."""

    vertices: np.ndarray
    faces: np.ndarray
    joints: np.ndarray
    vertices_next: np.ndarray | None = None
    camera_next: PinholeCamera | None = None


@dataclass(frozen=True)
class FrameEvidence:
    mask: Mask
    keypoints: Keypoints2D
    flow: FlowField | None = None


@dataclass(frozen=True)
class FrameOptResult:
    extrinsics: RigidTransform
    initial_loss: float
    final_loss: float
    iterations: int
    skipped: bool
    loss_history: tuple = ()


def _boundary(pixels: np.ndarray) -> np.ndarray:
    """Set pixels with at least one unset 4-neighbor (image border counts
    as background)."""
    interior = pixels.copy()
    interior[0, :] = False
    interior[-1, :] = False
    interior[:, 0] = False
    interior[:, -1] = False
    inner = pixels[1:-1, 1:-1]
    interior[1:-1, 1:-1] = (inner & pixels[:-2, 1:-1] & pixels[2:, 1:-1]
                            & pixels[1:-1, :-2] & pixels[1:-1, 2:])
    return pixels & ~interior


class InstanceReference:
    """Precomputed structures for repeatedly scoring against one mask."""

    def __init__(self, mask: Mask):
        self.mask = mask
        self.pixels = mask.pixels
        self.area = int(self.pixels.sum())
        b = _boundary(self.pixels)
        ys, xs = np.nonzero(b)
        self.boundary = np.stack([ys, xs], axis=1).astype(np.float64)
        self.boundary_edt = distance_transform_edt(~b) if len(ys) else None
        self.diagonal = float(np.hypot(*self.pixels.shape))


def loss_instance(rendered: Mask, reference: Mask,
                  reference_cache: InstanceReference | None = None) -> float:
    """0.5 * (1 - IoU) plus 0.5 * symmetric mean boundary distance.

    The boundary term is the chamfer of each mask's boundary pixels against
    the other's boundary distance transform, normalized by the image
    diagonal. Two empty masks score 0 with a degenerate-frame warning; one
    empty mask maxes the boundary term at 1.
    """
    if rendered.pixels.shape != reference.pixels.shape:
        raise InputError(
            f"mask sizes differ: {rendered.pixels.shape} vs {reference.pixels.shape}")
    ref = reference_cache if reference_cache is not None else InstanceReference(reference)
    r = rendered.pixels
    inter = int(np.logical_and(r, ref.pixels).sum())
    r_area = int(r.sum())
    union = r_area + ref.area - inter
    if union == 0:
        warnings.warn("both masks empty in instance loss", DegenerateInputWarning)
        return 0.0
    iou_term = 0.5 * (1.0 - inter / union)

    rb = _boundary(r)
    rys, rxs = np.nonzero(rb)
    if len(rys) == 0 or ref.boundary_edt is None:
        return iou_term + 0.5
    fwd = ref.boundary_edt[rys, rxs].mean()
    rev = cKDTree(np.stack([rys, rxs], axis=1)).query(ref.boundary)[0].mean()
    return iou_term + 0.5 * 0.5 * (fwd + rev) / ref.diagonal


def loss_semantic(projected_uv: np.ndarray, visible: np.ndarray,
                  reference: Keypoints2D, image_diagonal: float) -> float:
    """Confidence-weighted mean squared pixel distance over pairs where
    the projection is visible and confidence is at least 0.3, normalized by
    the squared image diagonal. No valid pairs scores 0 with a warning."""
    uv = np.asarray(projected_uv, dtype=np.float64)
    vis = np.asarray(visible, dtype=bool)
    pts = reference.points
    if len(uv) != len(pts):
        raise InputError(
            f"projection count {len(uv)} does not match {len(pts)} keypoints")
    ok = vis & (pts[:, 2] >= CONFIDENCE_FLOOR)
    if not ok.any():
        warnings.warn("no valid keypoint pairs in semantic loss", DegenerateInputWarning)
        return 0.0
    d2 = ((uv[ok] - pts[ok, :2]) ** 2).sum(axis=1)
    conf = pts[ok, 2]
    return float((conf * d2).sum() / conf.sum() / image_diagonal ** 2)


def loss_motion(rendered: FlowField, reference: FlowField, region: Mask) -> float:
    """Mean endpoint error over pixels valid in both fields and inside the
    region, normalized by the image diagonal. Empty overlap scores 0 with a
    warning."""
    if rendered.vectors.shape != reference.vectors.shape:
        raise InputError(
            f"flow sizes differ: {rendered.vectors.shape} vs {reference.vectors.shape}")
    if region.pixels.shape != rendered.vectors.shape[:2]:
        raise InputError("region resolution must match the flow fields")
    ok = rendered.valid & reference.valid & region.pixels
    if not ok.any():
        warnings.warn("no overlapping valid flow pixels in motion loss",
                      DegenerateInputWarning)
        return 0.0
    epe = np.linalg.norm(rendered.vectors[ok] - reference.vectors[ok], axis=1).mean()
    diag = float(np.hypot(*region.pixels.shape))
    return float(epe / diag)


def _flow_from_buffers(buf, vertices_next: np.ndarray, faces: np.ndarray,
                       cam_next: PinholeCamera) -> FlowField:
    """Flow comparand reusing an existing rasterization of frame t."""
    from .geom import project_points
    h, w = buf.mask.shape
    vectors = np.zeros((h, w, 2))
    valid = buf.face >= 0
    ys, xs = np.nonzero(valid)
    if len(ys):
        fidx = buf.face[ys, xs]
        corners = vertices_next[faces[fidx]]
        pts = (buf.bary[ys, xs][:, :, None] * corners).sum(axis=1)
        uv, in_front = project_points(cam_next, pts)
        vectors[ys[in_front], xs[in_front], 0] = uv[in_front, 0] - (xs[in_front] + 0.5)
        vectors[ys[in_front], xs[in_front], 1] = uv[in_front, 1] - (ys[in_front] + 0.5)
        valid[ys[~in_front], xs[~in_front]] = False
    return FlowField(vectors, valid)


class _FrameObjective:
    """Total weighted loss of one frame as a function of the 6-vector."""

    def __init__(self, base: PinholeCamera, scene: FrameScene,
                 evidence: FrameEvidence, cfg: CamOptConfig):
        self.base = base
        self.scene = scene
        self.cfg = cfg
        self.ref_mask = evidence.mask
        self.ref_cache = InstanceReference(evidence.mask) if cfg.lambda_instance > 0 else None
        self.keypoints = evidence.keypoints
        self.use_flow = (cfg.lambda_motion > 0.0 and evidence.flow is not None
                         and scene.vertices_next is not None
                         and scene.camera_next is not None)
        self.ref_flow = evidence.flow
        self.faces = np.asarray(scene.faces, dtype=np.int64)
        self.diagonal = base.diagonal
        self.evals = 0

    def camera(self, x: np.ndarray) -> PinholeCamera:
        return self.base.with_extrinsics(RigidTransform(Rotation(x[:3]), x[3:]))

    def __call__(self, x: np.ndarray) -> float:
        self.evals += 1
        cam = self.camera(x)
        cfg = self.cfg
        total = 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateInputWarning)
            if cfg.lambda_instance > 0.0 or self.use_flow:
                buf = _rasterize(self.scene.vertices, self.faces, cam,
                                 attrs=self.use_flow)
                if cfg.lambda_instance > 0.0:
                    total += cfg.lambda_instance * loss_instance(
                        Mask(buf.mask), self.ref_mask, self.ref_cache)
                if self.use_flow:
                    rendered = _flow_from_buffers(buf, self.scene.vertices_next,
                                                  self.faces, self.scene.camera_next)
                    total += cfg.lambda_motion * loss_motion(
                        rendered, self.ref_flow, self.ref_mask)
            if cfg.lambda_semantic > 0.0:
                uv, vis = project_joints(self.scene.joints, cam)
                total += cfg.lambda_semantic * loss_semantic(
                    uv, vis, self.keypoints, self.diagonal)
        return total


def _is_degenerate(evidence: FrameEvidence) -> bool:
    no_mask = evidence.mask.is_empty()
    no_kp = not (evidence.keypoints.points[:, 2] >= CONFIDENCE_FLOOR).any()
    no_flow = evidence.flow is None or not evidence.flow.valid.any()
    return no_mask and no_kp and no_flow


def optimize_frame(init: PinholeCamera, scene: FrameScene, evidence: FrameEvidence,
                   cfg: CamOptConfig, scene_diameter: float = 1.0,
                   warm_start: RigidTransform | None = None) -> FrameOptResult:
    """Refine one frame's extrinsics by finite-difference descent.

    Central differences over the 6-vector (axis-angle, translation), unit
    steps in a space scaled by the configured FD steps, with a step size
    that halves on non-decrease. The returned loss never exceeds the loss at
    init. Fully degenerate evidence returns init unchanged with the skipped
    flag set.
    """
    if _is_degenerate(evidence):
        warnings.warn("all evidence degenerate, frame skipped", DegenerateInputWarning)
        return FrameOptResult(init.world_to_camera, 0.0, 0.0, 0, True)

    objective = _FrameObjective(init, scene, evidence, cfg)
    trans_step = cfg.fd_trans_step if cfg.fd_trans_step is not None \
        else 1e-3 * scene_diameter
    scale = np.array([cfg.fd_rot_step] * 3 + [trans_step] * 3)

    ext0 = init.world_to_camera
    x = np.concatenate([ext0.rotation.axis_angle, ext0.translation])
    f = objective(x)
    initial_loss = f
    if warm_start is not None:
        xw = np.concatenate([warm_start.rotation.axis_angle, warm_start.translation])
        fw = objective(xw)
        if fw < f:
            x, f = xw, fw
    history = [f]

    step = cfg.init_step
    iterations = 0
    for _ in range(cfg.max_iterations):
        iterations += 1
        f_at_entry = f
        grad = np.zeros(6)
        for i in range(6):
            e = np.zeros(6)
            e[i] = scale[i]
            grad[i] = (objective(x + e) - objective(x - e)) / 2.0
        gnorm = float(np.linalg.norm(grad))
        if gnorm == 0.0:
            break
        direction = -(grad / gnorm) * scale
        # March along the direction while it keeps paying, halving the step
        # on non-decrease; re-derive the gradient once the direction is spent.
        # Each new direction gets a fresh chance at a moderate step so one
        # overly fine step scale cannot end the search in a curved valley.
        step = min(max(step, 4.0), 64.0)
        accepted = False
        while step > 1e-3:
            ftrial = objective(x + step * direction)
            if ftrial < f:
                x = x + step * direction
                f = ftrial
                history.append(f)
                step = min(step * 1.5, 64.0)
                accepted = True
                continue
            step *= 0.5
            if accepted:
                break
        if not accepted or f_at_entry - f < cfg.tolerance:
            break

    return FrameOptResult(
        RigidTransform(Rotation(x[:3]), x[3:]),
        initial_loss, f, iterations, False, tuple(history))


@dataclass(frozen=True)
class TrajectoryResult:
    trajectory: CameraTrajectory
    frames: tuple


def scene_diameter_of(scenes) -> float:
    """Diagonal of the bounding box of all scene joints (scene scale proxy)."""
    pts = np.concatenate([np.asarray(s.joints, dtype=np.float64) for s in scenes])
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))) or 1.0


def _refine_pass(init: CameraTrajectory, scenes, evidence: EvidenceTrack,
                 cfg: CamOptConfig, diameter: float, next_cams,
                 warm_starts) -> list[FrameOptResult]:
    results = []
    prev: RigidTransform | None = None
    for t in range(len(init)):
        scene = scenes[t]
        if scene.vertices_next is not None and scene.camera_next is None \
                and next_cams[t] is not None:
            scene = dataclasses.replace(scene, camera_next=next_cams[t])
        warm = warm_starts[t] if warm_starts is not None else prev
        res = optimize_frame(init.camera(t), scene,
                             FrameEvidence(evidence.masks[t], evidence.keypoints[t],
                                           evidence.flow_at(t)),
                             cfg, scene_diameter=diameter, warm_start=warm)
        results.append(res)
        if not res.skipped:
            prev = res.extrinsics
    return results


def optimize_trajectory(init: CameraTrajectory, scenes, evidence: EvidenceTrack,
                        cfg: CamOptConfig) -> TrajectoryResult:
    """Per-frame refinement with temporal warm starts.

    Each frame starts from the better of its own initial extrinsics and the
    previous frame's refined result. When the motion loss is active, frames
    are refined in two passes: the first aligns silhouettes and keypoints,
    the second adds the flow term with its t+1 comparand reprojected through
    the first pass's refined cameras (the initial t+1 camera may itself be
    badly off, which would bias frame t). With lambda_smooth > 0, a final
    post-pass relaxes squared second differences of the 6-vectors.
    """
    if len(init) != len(evidence) or len(init) != len(scenes):
        raise InputError(
            f"trajectory ({len(init)}), scenes ({len(scenes)}) and evidence "
            f"({len(evidence)}) lengths must agree")
    diameter = scene_diameter_of(scenes)
    n = len(init)
    flow_active = (cfg.lambda_motion > 0.0
                   and any(f is not None for f in evidence.flows)
                   and any(s.vertices_next is not None for s in scenes)
                   and (cfg.lambda_instance > 0.0 or cfg.lambda_semantic > 0.0))
    init_next = [init.camera(t + 1) if t + 1 < n else None for t in range(n)]
    if flow_active:
        pass1_cfg = dataclasses.replace(cfg, lambda_motion=0.0)
        pass1 = _refine_pass(init, scenes, evidence, pass1_cfg, diameter,
                             init_next, None)
        refined_next = [
            init.camera(t + 1).with_extrinsics(pass1[t + 1].extrinsics)
            if t + 1 < n else None for t in range(n)]
        results = _refine_pass(init, scenes, evidence, cfg, diameter,
                               refined_next, [r.extrinsics for r in pass1])
    else:
        results = _refine_pass(init, scenes, evidence, cfg, diameter,
                               init_next, None)
    refined = [r.extrinsics for r in results]
    if cfg.lambda_smooth > 0.0 and len(refined) >= 3:
        refined = _smooth_extrinsics(refined, cfg.lambda_smooth, cfg.smooth_sweeps)
    return TrajectoryResult(init.with_extrinsics(refined), tuple(results))


def _smooth_extrinsics(extrinsics, lam: float, sweeps: int):
    """Damped Jacobi relaxation of ||x - x_opt||^2 + lam * ||D2 x||^2 on the
    stacked 6-vectors. Axis-angle components are assumed far from the +-pi
    wrap, which holds for smooth shot trajectories."""
    x_opt = np.stack([np.concatenate([e.rotation.axis_angle, e.translation])
                      for e in extrinsics])
    x = x_opt.copy()
    diag = 1.0 + 12.0 * lam
    for _ in range(sweeps):
        d2 = np.zeros_like(x)
        d2[1:-1] = x[:-2] - 2.0 * x[1:-1] + x[2:]
        # Gradient of the second-difference penalty: D2^T D2 x.
        g = np.zeros_like(x)
        g[1:-1] += d2[1:-1] * -2.0
        g[:-2] += d2[1:-1]
        g[2:] += d2[1:-1]
        grad = (x - x_opt) + lam * g * 2.0
        x = x - grad / diag
    return [RigidTransform(Rotation(row[:3]), row[3:]) for row in x]
