"""Pose fitting from edge points (ICP) and contact localization from a wrench (CPF)."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .contact import ContactForce
from .errors import ConfigError, NonConvergence, TooFewPoints
from .geometry import ContactPoint, PolygonShape, Pose2, Wrench2, cross2, rot, wrap_angle
from .qp import QpConfig, QpProblem, QueryCounter, solve_batch


@dataclass
class EdgePointCloud:
    points: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
            if self.weights.size != len(self.points):
                raise ConfigError("one weight per point required")

    def __len__(self):
        return len(self.points)


def read_cloud_csv(path) -> EdgePointCloud:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and not {"x", "y"} <= set(rows[0]):
        raise ConfigError(f"{path}: expected columns x,y[,w]")
    try:
        pts = np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)
        w = np.array([float(r["w"]) for r in rows]) if rows and "w" in rows[0] else None
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return EdgePointCloud(pts, w)


def write_cloud_csv(path, cloud: EdgePointCloud) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "w"] if cloud.weights is not None else ["x", "y"])
        for i, p in enumerate(cloud.points):
            row = [repr(float(p[0])), repr(float(p[1]))]
            if cloud.weights is not None:
                row.append(repr(float(cloud.weights[i])))
            w.writerow(row)


# ICP

def _closest_boundary_points(shape: PolygonShape, local: np.ndarray) -> np.ndarray:
    """Closest point on the polygon boundary for each row of `local` (body frame)."""
    a = shape.vertices
    b = np.roll(a, -1, axis=0)
    d = b - a
    dd = np.einsum("ij,ij->i", d, d)
    t = np.clip(np.einsum("pij,ij->pi", local[:, None, :] - a[None], d) / dd, 0.0, 1.0)
    proj = a[None] + t[..., None] * d[None]
    dist = np.linalg.norm(local[:, None, :] - proj, axis=2)
    best = np.argmin(dist, axis=1)
    return proj[np.arange(len(local)), best]


def edge_residual(cloud: EdgePointCloud, shape: PolygonShape, pose: Pose2) -> float:
    """Weighted mean squared point-to-boundary distance."""
    local = (cloud.points - pose.position) @ pose.rotation()
    q = _closest_boundary_points(shape, local)
    d2 = np.sum((local - q) ** 2, axis=1)
    w = np.ones(len(d2)) if cloud.weights is None else cloud.weights
    return float(w @ d2 / w.sum())


def align_se2(body_pts: np.ndarray, world_pts: np.ndarray, weights=None) -> Pose2:
    """Closed-form pose minimizing sum w_i |T(q_i) - p_i|^2."""
    w = np.ones(len(body_pts)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    cq = w @ body_pts
    cp = w @ world_pts
    Q = body_pts - cq
    P = world_pts - cp
    s = np.sum(w * (Q[:, 0] * P[:, 1] - Q[:, 1] * P[:, 0]))
    c = np.sum(w * (Q[:, 0] * P[:, 0] + Q[:, 1] * P[:, 1]))
    th = float(np.arctan2(s, c))
    t = cp - rot(th) @ cq
    return Pose2(float(t[0]), float(t[1]), th)


@dataclass
class FitPoseConfig:
    max_iter: int = 50
    tol: float = 1e-7


def fit_pose(cloud: EdgePointCloud, shape: PolygonShape, init: Pose2,
             config: FitPoseConfig | None = None) -> tuple[Pose2, float]:
    """ICP: nearest-boundary correspondences, then closed-form SE(2) alignment."""
    cfg = config or FitPoseConfig()
    if len(cloud) < 3:
        raise TooFewPoints(f"pose fitting needs at least 3 points, got {len(cloud)}")
    pose = init
    for _ in range(cfg.max_iter):
        local = (cloud.points - pose.position) @ pose.rotation()
        q = _closest_boundary_points(shape, local)
        new = align_se2(q, cloud.points, cloud.weights)
        change = max(np.linalg.norm(new.position - pose.position), abs(wrap_angle(new.theta - pose.theta)))
        pose = new
        if change < cfg.tol:
            return pose, edge_residual(cloud, shape, pose)
    raise NonConvergence(cfg.max_iter, change)


# Contact particle filter (one deterministic sweep over a surface grid)

@dataclass
class ContactHypothesis:
    point: ContactPoint
    force: ContactForce
    residual: float
    face: int
    arc_length: float


@dataclass
class CpfResult:
    best: ContactHypothesis
    ranked: list = field(default_factory=list)
    failures: int = 0


def candidate_points(shape: PolygonShape, n_per_face: int):
    """(face, arc length, body point) at s_j = j L / n on every face."""
    if n_per_face < 1:
        raise ConfigError("n_candidates_per_face must be >= 1")
    out = []
    for e in range(len(shape)):
        L = shape.edge_length(e)
        for j in range(n_per_face):
            s = j * L / n_per_face
            out.append((e, s, shape.point_at(e, s)))
    return out


def contact_wrench_map(shape: PolygonShape, face: int, p) -> np.ndarray:
    """3x2 map from (f_t, f_n) at a body-frame surface point to the body wrench about the origin."""
    n = -shape.edge_normal(face)
    t = np.array([-n[1], n[0]])
    return np.array([[t[0], n[0]], [t[1], n[1]], [cross2(p, t), cross2(p, n)]])


def estimate_contact(w_ext, shape: PolygonShape, pose: Pose2, mu: float, n_candidates_per_face: int = 20,
                     qp_config: QpConfig | None = None, counter: QueryCounter | None = None,
                     tie_tol: float = 1e-12) -> CpfResult:
    """Rank surface candidates by how well a cone-admissible force explains w_ext.

    w_ext is in the grasped-object frame about its origin.  Candidates whose
    residual is within `tie_tol` of the best are ordered by face, then arc length.
    """
    w = w_ext.as_array() if isinstance(w_ext, Wrench2) else np.asarray(w_ext, dtype=float)
    if not np.all(np.isfinite(w)):
        raise ConfigError("w_ext must be finite")
    cands = candidate_points(shape, n_candidates_per_face)
    G = np.array([[-1.0, -mu], [1.0, -mu], [0.0, -1.0]])
    probs, maps = [], []
    for e, s, p in cands:
        B = contact_wrench_map(shape, e, p)
        maps.append(B)
        probs.append(QpProblem(B.T @ B, -B.T @ w, G=G, h=np.zeros(3)))
    sols = solve_batch(probs, qp_config, counter)
    hyps, failures = [], 0
    R = pose.rotation()
    for (e, s, p), B, sol in zip(cands, maps, sols):
        if not sol.optimal:
            failures += 1
            continue
        f = sol.z
        res = float(np.sum((w - B @ f) ** 2))
        n_world = -(R @ shape.edge_normal(e))
        cp = ContactPoint(pose.transform_point(p), n_world, p.copy(), pose.transform_point(p), "a", -1, e,
                          shape.edge_normal(e))
        hyps.append(ContactHypothesis(cp, ContactForce(float(f[0]), float(f[1])), res, e, float(s)))
    if not hyps:
        raise NonConvergence(0, float("nan"))
    rmin = min(h.residual for h in hyps)
    ranked = sorted(hyps, key=lambda h: (h.residual > rmin + tie_tol, h.residual if h.residual > rmin + tie_tol
                                         else 0.0, h.face, h.arc_length))
    return CpfResult(ranked[0], ranked, failures)
