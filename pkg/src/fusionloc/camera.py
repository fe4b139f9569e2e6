"""Camera-side inputs: detection priors and the angular transport cost.

Detections arrive either as raw 3D anchor points, as pixel coordinates plus
pixel/plane correspondences (projected through a fitted plane homography), or
are derived by projecting the scene's true sources onto the reference plane.
The transport cost between a grid point and an anchor is the angle between
their lines of sight from the camera, so cost is invariant to depth along a
camera ray.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import CameraPose, Grid, Scene, _as_points


@dataclass(frozen=True)
class DetectionPrior:
    """N camera-derived anchor points with uniform weights a_n = 1/N."""

    anchors: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        anchors = _as_points(self.anchors, "anchors")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(anchors) < 1:
            raise ValueError("detection prior needs at least one anchor")
        if len(w) != len(anchors):
            raise ValueError("weights length must match anchors")
        if abs(w.sum() - 1.0) > 1e-12 or np.any(np.abs(w - 1.0 / len(w)) > 1e-12):
            raise ValueError("weights must be uniform 1/N summing to 1")
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_anchors(cls, anchors) -> "DetectionPrior":
        anchors = _as_points(anchors, "anchors")
        n = len(anchors)
        return cls(anchors=anchors, weights=np.full(n, 1.0 / n))

    @property
    def count(self) -> int:
        return len(self.weights)


def _normalize_for_dlt(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hartley normalization: translate to centroid, scale RMS radius to sqrt(2)."""
    centroid = pts.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum((pts - centroid) ** 2, axis=1)))
    s = np.sqrt(2.0) / rms if rms > 0 else 1.0
    t = np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )
    return (pts - centroid) * s, t


def project_pixels_to_plane(pixels, correspondences) -> np.ndarray:
    """Map pixel coordinates onto a 3D reference plane via a DLT homography.

    Parameters
    ----------
    pixels : (Q, 2) array-like
        Pixel coordinates to project.
    correspondences : sequence of (pixel, point3d) pairs, length >= 4
        Known pixel positions of reference points lying on one 3D plane.

    Returns
    -------
    (Q, 3) array of points on the reference plane.

    Raises
    ------
    ValueError
        For fewer than 4 correspondences, non-coplanar reference points, or a
        degenerate (rank-deficient) configuration such as 3 collinear pixels.
    """
    pix_q = np.asarray(pixels, dtype=float).reshape(-1, 2)
    ref_pix = np.asarray([np.asarray(c[0], dtype=float).reshape(2) for c in correspondences])
    ref_pts = np.asarray([np.asarray(c[1], dtype=float).reshape(3) for c in correspondences])
    if len(ref_pix) < 4:
        raise ValueError("need at least 4 pixel/plane correspondences")

    # Plane frame from the reference points; coplanarity is a precondition.
    centroid = ref_pts.mean(axis=0)
    centered = ref_pts - centroid
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    e1, e2, normal = vt[0], vt[1], vt[2]
    scale = max(svals[0], 1e-300)
    if svals[2] / scale > 1e-8:
        raise ValueError("correspondence points are not coplanar")
    if svals[1] / scale < 1e-12:
        raise ValueError("homography rank deficient: reference points are collinear")
    plane_uv = np.column_stack([centered @ e1, centered @ e2])

    pix_n, t_pix = _normalize_for_dlt(ref_pix)
    uv_n, t_uv = _normalize_for_dlt(plane_uv)
    rows = []
    for (x, y), (u, v) in zip(pix_n, uv_n):
        rows.append([-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u])
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v])
    a = np.asarray(rows)
    _, svals, vt = np.linalg.svd(a)
    # A unique DLT solution needs rank 8; sigma_8 ~ 0 means >= 2 null directions.
    if svals[7] / max(svals[0], 1e-300) < 1e-10:
        raise ValueError("homography rank deficient")
    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.solve(t_uv, h_norm @ t_pix)

    mapped = h @ np.column_stack([pix_q, np.ones(len(pix_q))]).T
    w = mapped[2]
    if np.any(np.abs(w) < 1e-12 * np.max(np.abs(mapped), axis=0)):
        raise ValueError("pixel maps to a point at infinity on the plane")
    uv = (mapped[:2] / w).T
    return centroid + uv[:, :1] * e1 + uv[:, 1:2] * e2


def project_onto_reference_plane(camera: CameraPose, points) -> np.ndarray:
    """Intersect camera->point rays with the camera's reference plane."""
    pts = _as_points(points, "points")
    cam = camera.position
    n = camera.plane_normal
    denom = (pts - cam) @ n
    if np.any(np.abs(denom) < 1e-15):
        raise ValueError("ray parallel to the reference plane")
    t = ((camera.plane_point - cam) @ n) / denom
    if np.any(t <= 0.0):
        raise ValueError("reference plane is behind the camera for some point")
    return cam + t[:, None] * (pts - cam)


def angular_cost(grid, anchors, camera_pos) -> np.ndarray:
    """Angular cost matrix C (M x N): C[m, n] is the angle at the camera
    between grid point m and anchor n, computed as atan2(|cross|, dot) for
    stability near 0 and pi. Entries lie in [0, pi]."""
    points = grid.points if isinstance(grid, Grid) else _as_points(grid, "grid points")
    anchor_pts = anchors.anchors if isinstance(anchors, DetectionPrior) else _as_points(anchors, "anchors")
    cam = np.asarray(camera_pos, dtype=float).reshape(3)
    rays_v = points - cam
    norms_v = np.linalg.norm(rays_v, axis=1)
    if np.any(norms_v == 0.0):
        raise ValueError("camera position coincides with a grid point")
    rays_u = anchor_pts - cam
    norms_u = np.linalg.norm(rays_u, axis=1)
    if np.any(norms_u == 0.0):
        raise ValueError("camera position coincides with an anchor")
    cost = np.empty((len(points), len(anchor_pts)))
    for n in range(len(anchor_pts)):
        cross = np.cross(rays_v, rays_u[n])
        sin_part = np.linalg.norm(cross, axis=1)
        cos_part = rays_v @ rays_u[n]
        cost[:, n] = np.arctan2(sin_part, cos_part)
    return cost


def resolve_detections(scene: Scene) -> DetectionPrior:
    """Turn a scene's detection block into a DetectionPrior.

    Supported forms: {"anchors": [[x,y,z],...]}, {"pixels": [...],
    "correspondences": [{"pixel": [u,v], "point": [x,y,z]}, ...]}, or
    {"mode": "project_sources"} which projects the true sources onto the
    camera reference plane (anchors on the true rays at plane depth).
    """
    spec = scene.detections
    if spec is None:
        raise ValueError("empty prior: scene has no detections; use cmf_solve_cd")
    if "anchors" in spec:
        anchors = np.asarray(spec["anchors"], dtype=float)
        if anchors.size == 0:
            raise ValueError("empty prior: no detection anchors; use cmf_solve_cd")
        return DetectionPrior.from_anchors(anchors)
    if "pixels" in spec:
        corr = [(c["pixel"], c["point"]) for c in spec["correspondences"]]
        anchors = project_pixels_to_plane(spec["pixels"], corr)
        return DetectionPrior.from_anchors(anchors)
    if spec.get("mode") == "project_sources":
        if scene.camera is None:
            raise ValueError("project_sources detections need a camera pose")
        anchors = project_onto_reference_plane(scene.camera, scene.sources.positions)
        return DetectionPrior.from_anchors(anchors)
    raise ValueError(f"unrecognized detections block: {sorted(spec)}")
