"""Deterministic software rasterizer.

Produces binary silhouettes, projected joints, and mesh-motion flow fields.
Triangles are filled with a z-buffer and the top-left rule on pixel centers
(px + 0.5, py + 0.5); back-face culling is disabled. Ties in depth resolve
to the lowest face index, so identical inputs give bit-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InputError
from .geom import MIN_DEPTH, PinholeCamera, project_points


@dataclass(frozen=True)
class Mask:
    """Binary occupancy image, row-major, True where the character is."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 2:
            raise InputError(f"mask must be 2-D, got shape {p.shape}")
        object.__setattr__(self, "pixels", p.astype(bool))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def area(self) -> int:
        return int(self.pixels.sum())

    def is_empty(self) -> bool:
        return not self.pixels.any()


@dataclass(frozen=True)
class FlowField:
    """Per-pixel (du, dv) motion vectors with a validity flag.

    Invalid pixels always carry (0, 0).
    """

    vectors: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        ok = np.asarray(self.valid).astype(bool)
        if v.ndim != 3 or v.shape[2] != 2 or ok.shape != v.shape[:2]:
            raise InputError(
                f"flow must be (H, W, 2) with (H, W) validity, got {v.shape} / {ok.shape}")
        v = v.copy()
        v[~ok] = 0.0
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "valid", ok)

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def height(self) -> int:
        return self.vectors.shape[0]


class RasterBuffers(NamedTuple):
    mask: np.ndarray   # (H, W) bool coverage
    depth: np.ndarray  # (H, W) camera-space z, inf where empty
    face: np.ndarray   # (H, W) winning face index, -1 where empty
    bary: np.ndarray   # (H, W, 3) perspective-correct barycentrics of the winner


def _clip_triangle(pc: np.ndarray) -> list[np.ndarray]:
    """Clip one camera-space triangle against z >= MIN_DEPTH.

    Each row of `pc` is (x, y, z, b0, b1, b2) carrying the barycentric
    coordinates of the original face so attribute interpolation survives
    clipping. Returns zero, one or two triangles.
    """
    inside = pc[:, 2] > MIN_DEPTH
    if inside.all():
        return [pc]
    if not inside.any():
        return []
    out = []
    for i in range(3):
        a, b = pc[i], pc[(i + 1) % 3]
        if inside[i]:
            out.append(a)
        if inside[i] != inside[(i + 1) % 3]:
            t = (MIN_DEPTH - a[2]) / (b[2] - a[2])
            out.append(a + t * (b - a))
    tris = []
    for k in range(1, len(out) - 1):
        tris.append(np.stack([out[0], out[k], out[k + 1]]))
    return tris


def _rasterize(vertices: np.ndarray, faces: np.ndarray, cam: PinholeCamera,
               attrs: bool = True) -> RasterBuffers:
    """Rasterize a triangle mesh.

    With attrs=False only the coverage mask is produced (depth/face/bary are
    left empty), which roughly halves the cost of silhouette-only renders.
    """
    h, w = cam.height, cam.width
    mask = np.zeros((h, w), dtype=bool)
    depth = np.full((h, w), np.inf)
    face_buf = np.full((h, w), np.iinfo(np.int64).max, dtype=np.int64)
    bary = np.zeros((h, w, 3))

    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if faces.size == 0 or vertices.size == 0:
        return RasterBuffers(mask, depth, np.full((h, w), -1, dtype=np.int64), bary)
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise InputError(f"faces must be (F, 3) triangles, got {faces.shape}")

    ext = cam.world_to_camera
    pc_all = vertices @ ext.rotation.matrix().T + ext.translation

    # Gather camera-space triangles, near-clipping the few that straddle the
    # plane. Each vertex carries its barycentrics w.r.t. the source face.
    tri_pos = pc_all[faces]                                   # (F, 3, 3)
    tri_ok = tri_pos[:, :, 2] > MIN_DEPTH
    full = tri_ok.all(axis=1)
    eye = np.eye(3)

    tri_list = [np.concatenate([tri_pos[full], np.tile(eye, (int(full.sum()), 1, 1))], axis=2)]
    tri_faces = [np.nonzero(full)[0]]
    partial = np.nonzero(~full & tri_ok.any(axis=1))[0]
    for f in partial:
        pc = np.concatenate([tri_pos[f], eye], axis=1)
        for tri in _clip_triangle(pc):
            tri_list.append(tri[None])
            tri_faces.append(np.array([f]))
    tris = np.concatenate(tri_list, axis=0)                   # (T, 3, 6)
    tri_face = np.concatenate(tri_faces)                      # (T,)
    if len(tris) == 0:
        return RasterBuffers(mask, depth, np.full((h, w), -1, dtype=np.int64), bary)

    z = tris[:, :, 2]
    u = cam.fx * tris[:, :, 0] / z + cam.cx                   # (T, 3)
    v = cam.fy * tris[:, :, 1] / z + cam.cy

    # Canonical winding: make the screen-space signed area positive.
    area2 = (u[:, 1] - u[:, 0]) * (v[:, 2] - v[:, 0]) - (v[:, 1] - v[:, 0]) * (u[:, 2] - u[:, 0])
    flip = area2 < 0.0
    u[flip] = u[flip][:, [0, 2, 1]]
    v[flip] = v[flip][:, [0, 2, 1]]
    z[flip] = z[flip][:, [0, 2, 1]]
    tris[flip] = tris[flip][:, [0, 2, 1], :]
    keep = np.abs(area2) > 0.0
    if not keep.any():
        return RasterBuffers(mask, depth, np.full((h, w), -1, dtype=np.int64), bary)
    u, v, z, tris, tri_face = u[keep], v[keep], z[keep], tris[keep], tri_face[keep]

    # Pixel-center bounding boxes, clipped to the image.
    x0 = np.maximum(np.ceil(u.min(axis=1) - 0.5).astype(np.int64), 0)
    x1 = np.minimum(np.floor(u.max(axis=1) - 0.5).astype(np.int64), w - 1)
    y0 = np.maximum(np.ceil(v.min(axis=1) - 0.5).astype(np.int64), 0)
    y1 = np.minimum(np.floor(v.max(axis=1) - 0.5).astype(np.int64), h - 1)
    bw = x1 - x0 + 1
    bh = y1 - y0 + 1
    nonempty = (bw > 0) & (bh > 0)
    if not nonempty.any():
        return RasterBuffers(mask, depth, np.full((h, w), -1, dtype=np.int64), bary)
    u, v, z, tris, tri_face = (u[nonempty], v[nonempty], z[nonempty],
                               tris[nonempty], tri_face[nonempty])
    x0, y0, bw, bh = x0[nonempty], y0[nonempty], bw[nonempty], bh[nonempty]

    # Ragged candidate expansion: one flat row per (triangle, bbox pixel).
    counts = bw * bh
    offsets = np.concatenate([[0], np.cumsum(counts)])
    total = int(offsets[-1])
    tid = np.repeat(np.arange(len(counts)), counts)
    k = np.arange(total) - offsets[tid]
    px = x0[tid] + k % bw[tid]
    py = y0[tid] + k // bw[tid]
    sx = px + 0.5
    sy = py + 0.5

    ua, ub, uc = u[tid, 0], u[tid, 1], u[tid, 2]
    va, vb, vc = v[tid, 0], v[tid, 1], v[tid, 2]

    def edge(ax, ay, bx, by):
        # w > 0 on the interior side; (ex, ey) classifies top-left edges.
        ex, ey = bx - ax, by - ay
        wv = ex * (sy - ay) - ey * (sx - ax)
        top_left = (ey < 0.0) | ((ey == 0.0) & (ex > 0.0))
        return wv, top_left

    w0, tl0 = edge(ub, vb, uc, vc)
    w1, tl1 = edge(uc, vc, ua, va)
    w2, tl2 = edge(ua, va, ub, vb)
    inside = (((w0 > 0.0) | ((w0 == 0.0) & tl0)) &
              ((w1 > 0.0) | ((w1 == 0.0) & tl1)) &
              ((w2 > 0.0) | ((w2 == 0.0) & tl2)))
    if not inside.any():
        return RasterBuffers(mask, depth, np.full((h, w), -1, dtype=np.int64), bary)

    tid, px, py = tid[inside], px[inside], py[inside]
    if not attrs:
        mask[py, px] = True
        return RasterBuffers(mask, depth, np.full((h, w), -1, dtype=np.int64), bary)
    w0, w1, w2 = w0[inside], w1[inside], w2[inside]
    wsum = w0 + w1 + w2
    l0, l1, l2 = w0 / wsum, w1 / wsum, w2 / wsum
    inv_z = l0 / z[tid, 0] + l1 / z[tid, 1] + l2 / z[tid, 2]
    zpix = 1.0 / inv_z
    b0 = l0 / z[tid, 0] * zpix
    b1 = l1 / z[tid, 1] * zpix
    b2 = l2 / z[tid, 2] * zpix

    cand_face = tri_face[tid]
    lin = py * w + px
    depth_flat = depth.reshape(-1)
    np.minimum.at(depth_flat, lin, zpix)
    front = zpix == depth_flat[lin]
    face_flat = face_buf.reshape(-1)
    np.minimum.at(face_flat, lin[front], cand_face[front])
    win = front & (cand_face == face_flat[lin])

    mask.reshape(-1)[lin] = True
    # Sub-triangles from clipping share a face id; among same-face same-depth
    # duplicates any candidate is geometrically identical, keep the last.
    bary_flat = bary.reshape(-1, 3)
    src_b = tris[tid[win], :, 3:6]
    mixed = (src_b * np.stack([b0[win], b1[win], b2[win]], axis=1)[:, :, None]).sum(axis=1)
    bary_flat[lin[win]] = mixed
    face_out = np.full((h, w), -1, dtype=np.int64)
    face_out.reshape(-1)[lin[win]] = cand_face[win]
    return RasterBuffers(mask, depth, face_out, bary)


def rasterize_silhouette(vertices: np.ndarray, faces: np.ndarray,
                         cam: PinholeCamera) -> Mask:
    """Binary coverage of the mesh: set iff covered by a front-facing-or-not
    triangle in front of the camera. An entirely behind-camera or empty mesh
    gives an all-zero mask."""
    return Mask(_rasterize(vertices, faces, cam, attrs=False).mask)


def project_joints(joints: np.ndarray, cam: PinholeCamera) -> tuple[np.ndarray, np.ndarray]:
    """Project joints to pixels.

    Returns (uv, visible); visible is False behind the camera or outside
    [0, width) x [0, height).
    """
    uv, in_front = project_points(cam, joints)
    visible = (in_front & (uv[:, 0] >= 0.0) & (uv[:, 0] < cam.width)
               & (uv[:, 1] >= 0.0) & (uv[:, 1] < cam.height))
    return uv, visible


def render_flow(vertices_t: np.ndarray, vertices_t1: np.ndarray, faces: np.ndarray,
                cam_t: PinholeCamera, cam_t1: PinholeCamera) -> FlowField:
    """Image-space motion of the visible surface from frame t to t+1.

    The two vertex sets must share topology. Each pixel covered at t tracks
    its barycentric surface point to t+1 and reprojects it through cam_t1;
    pixels whose corresponded point falls behind cam_t1 are marked invalid.
    """
    vertices_t = np.asarray(vertices_t, dtype=np.float64)
    vertices_t1 = np.asarray(vertices_t1, dtype=np.float64)
    if vertices_t.shape != vertices_t1.shape:
        raise InputError(
            f"vertex sets must share topology, got {vertices_t.shape} vs {vertices_t1.shape}")
    buf = _rasterize(vertices_t, faces, cam_t)
    h, w = cam_t.height, cam_t.width
    vectors = np.zeros((h, w, 2))
    valid = buf.face >= 0
    ys, xs = np.nonzero(valid)
    if len(ys):
        fidx = buf.face[ys, xs]
        corners = vertices_t1[np.asarray(faces, dtype=np.int64)[fidx]]   # (N, 3, 3)
        pts = (buf.bary[ys, xs][:, :, None] * corners).sum(axis=1)
        uv, in_front = project_points(cam_t1, pts)
        ok = in_front
        vectors[ys[ok], xs[ok], 0] = uv[ok, 0] - (xs[ok] + 0.5)
        vectors[ys[ok], xs[ok], 1] = uv[ok, 1] - (ys[ok] + 0.5)
        valid[ys[~ok], xs[~ok]] = False
    return FlowField(vectors, valid)
