"""Planar rigid-body kinematics: poses, polygons, contacts, Jacobians, gaps.

All wrenches and Jacobians are expressed in the world frame about the body's
world-frame center of mass, so gravity never contributes a torque.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, MultiContact, Penetration

DEFAULT_TOL = 1e-4
GRAVITY = 9.81


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    wrapped = math.remainder(theta, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


def rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def cross2(a, b) -> float:
    return a[0] * b[1] - a[1] * b[0]


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @classmethod
    def from_array(cls, a) -> "Pose2":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def rotation(self) -> np.ndarray:
        return rot(self.theta)

    def compose(self, other: "Pose2") -> "Pose2":
        """Return self * other (other expressed in self's frame)."""
        p = self.rotation() @ other.position + self.position
        return Pose2(p[0], p[1], self.theta + other.theta)

    def inverse(self) -> "Pose2":
        p = -(self.rotation().T @ self.position)
        return Pose2(p[0], p[1], -self.theta)

    def transform_point(self, p) -> np.ndarray:
        return self.rotation() @ np.asarray(p, dtype=float) + self.position

    def inverse_transform_point(self, p) -> np.ndarray:
        return self.rotation().T @ (np.asarray(p, dtype=float) - self.position)


def transform_point(pose: Pose2, p) -> np.ndarray:
    """Map a body-frame point to the world frame."""
    return pose.transform_point(p)


def _segments_intersect(p1, p2, q1, q2) -> bool:
    d1 = cross2(q2 - q1, p1 - q1)
    d2 = cross2(q2 - q1, p2 - q1)
    d3 = cross2(p2 - p1, q1 - p1)
    d4 = cross2(p2 - p1, q2 - p1)
    return (d1 * d2 < 0) and (d3 * d4 < 0)


@dataclass(frozen=True, eq=False)
class PolygonShape:
    """Simple counter-clockwise polygon in its body frame (may be non-convex)."""

    vertices: np.ndarray
    name: str = ""

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ConfigError("polygon needs at least 3 two-dimensional vertices")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        if self.signed_area() <= 0:
            raise ConfigError(f"polygon {self.name!r} is not counter-clockwise")
        n = len(v)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i + 1 or (i == 0 and j == n - 1):
                    continue
                if _segments_intersect(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                    raise ConfigError(f"polygon {self.name!r} self-intersects")

    def __len__(self):
        return len(self.vertices)

    def edge(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        n = len(self.vertices)
        return self.vertices[i % n], self.vertices[(i + 1) % n]

    def edge_normal(self, i: int) -> np.ndarray:
        """Outward unit normal of edge i (body frame)."""
        a, b = self.edge(i)
        d = b - a
        return np.array([d[1], -d[0]]) / np.linalg.norm(d)

    def edge_length(self, i: int) -> float:
        a, b = self.edge(i)
        return float(np.linalg.norm(b - a))

    def signed_area(self) -> float:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        return 0.5 * float(np.sum(v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]))

    def centroid(self) -> np.ndarray:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        c = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        a = 0.5 * c.sum()
        return np.array([((v[:, 0] + w[:, 0]) * c).sum(), ((v[:, 1] + w[:, 1]) * c).sum()]) / (6 * a)

    def radius_of_gyration(self, about=None) -> float:
        """sqrt(I/m) for a uniform lamina, about `about` (defaults to the centroid)."""
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        c = v[:, 0] * w[:, 1] - w[:, 0] * v[:, 1]
        area = 0.5 * c.sum()
        ixx = (c * (v[:, 1] ** 2 + v[:, 1] * w[:, 1] + w[:, 1] ** 2)).sum() / 12.0
        iyy = (c * (v[:, 0] ** 2 + v[:, 0] * w[:, 0] + w[:, 0] ** 2)).sum() / 12.0
        polar = (ixx + iyy) / area
        cen = self.centroid()
        p = cen if about is None else np.asarray(about, dtype=float)
        polar_about = polar - 2.0 * float(p @ cen) + float(p @ p)
        return math.sqrt(polar_about)

    def world_vertices(self, pose: Pose2) -> np.ndarray:
        return self.vertices @ pose.rotation().T + pose.position

    def contains(self, p) -> bool:
        """Strict point-in-polygon test (even-odd rule)."""
        x, y = p
        v = self.vertices
        inside = False
        n = len(v)
        for i in range(n):
            (x1, y1), (x2, y2) = v[i], v[(i + 1) % n]
            if (y1 > y) != (y2 > y):
                xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
                if x < xi:
                    inside = not inside
        return inside

    def boundary_distance(self, p) -> float:
        p = np.asarray(p, dtype=float)
        return min(point_segment_distance(p, *self.edge(i))[0] for i in range(len(self)))

    def point_at(self, edge: int, s: float) -> np.ndarray:
        """Body-frame point at arc-length s along edge."""
        a, b = self.edge(edge)
        d = b - a
        return a + d * (s / np.linalg.norm(d))


@dataclass(frozen=True)
class BodyParams:
    mass: float
    com: tuple = (0.0, 0.0)
    gravity: float = GRAVITY

    def __post_init__(self):
        if not self.mass > 0:
            raise ConfigError("mass must be positive")
        object.__setattr__(self, "com", tuple(float(c) for c in self.com))

    def com_world(self, pose: Pose2) -> np.ndarray:
        return pose.transform_point(self.com)


@dataclass(frozen=True)
class Wrench2:
    fx: float = 0.0
    fy: float = 0.0
    tau: float = 0.0

    @classmethod
    def from_array(cls, a) -> "Wrench2":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.tau])


@dataclass(frozen=True, eq=False)
class ContactPoint:
    """A point contact between body A and body B (or the ground).

    `point` is the world location, `normal` points from B into A and the
    tangent is the normal rotated +90 degrees.  The feature fields record
    which vertex touches which edge so the simulator can track material points.
    """

    point: np.ndarray
    normal: np.ndarray
    body_a_point: np.ndarray
    body_b_point: np.ndarray
    vertex_owner: str = "a"
    vertex: int = -1
    edge: int = -1
    edge_normal_body: Optional[np.ndarray] = field(default=None)

    @property
    def tangent(self) -> np.ndarray:
        return np.array([-self.normal[1], self.normal[0]])


def point_segment_distance(p, a, b) -> tuple[float, float]:
    """Distance from p to segment ab and the clamped parameter along it."""
    d = b - a
    denom = float(d @ d)
    t = 0.0 if denom == 0 else min(1.0, max(0.0, float((p - a) @ d) / denom))
    q = a + t * d
    return float(np.linalg.norm(p - q)), t


def detect_ground_contacts(shape: PolygonShape, pose: Pose2, ground_y: float = 0.0,
                           tol: float = DEFAULT_TOL) -> list[ContactPoint]:
    wv = shape.world_vertices(pose)
    heights = wv[:, 1] - ground_y
    lowest = float(heights.min())
    if lowest < -tol:
        raise Penetration(-lowest)
    idx = [i for i in range(len(wv)) if heights[i] <= tol]
    if len(idx) > 2:
        # collinear vertices on a resting face: keep only the face endpoints
        idx = [min(idx, key=lambda i: wv[i, 0]), max(idx, key=lambda i: wv[i, 0])]
    idx.sort(key=lambda i: (wv[i, 0], i))
    normal = np.array([0.0, 1.0])
    out = []
    for i in idx:
        out.append(ContactPoint(
            point=wv[i].copy(), normal=normal,
            body_a_point=shape.vertices[i].copy(),
            body_b_point=np.array([wv[i, 0], ground_y]),
            vertex_owner="a", vertex=i, edge=-1,
        ))
    return out


def _vertex_edge_pairs(shape_v, pose_v, shape_e, pose_e, tol):
    """Close (vertex of shape_v, edge of shape_e) pairs plus penetration depth."""
    wv = shape_v.world_vertices(pose_v)
    we = shape_e.world_vertices(pose_e)
    n = len(we)
    close = []
    depth = 0.0
    for i, p in enumerate(wv):
        local = pose_e.inverse_transform_point(p)
        dists = []
        for j in range(n):
            d, t = point_segment_distance(p, we[j], we[(j + 1) % n])
            dists.append((d, t, j))
        dmin = min(d for d, _, _ in dists)
        if shape_e.contains(local):
            depth = max(depth, dmin)
        for d, t, j in dists:
            if d <= tol:
                close.append((i, j, t, d))
    return close, depth


def detect_object_contact(shape_a: PolygonShape, pose_a: Pose2, shape_b: PolygonShape,
                          pose_b: Pose2, tol: float = DEFAULT_TOL) -> Optional[ContactPoint]:
    ab, depth_ab = _vertex_edge_pairs(shape_a, pose_a, shape_b, pose_b, tol)
    ba, depth_ba = _vertex_edge_pairs(shape_b, pose_b, shape_a, pose_a, tol)
    depth = max(depth_ab, depth_ba)
    if depth > tol:
        raise Penetration(depth)
    wa = shape_a.world_vertices(pose_a)
    wb = shape_b.world_vertices(pose_b)
    locs = [wa[i] for i, *_ in ab] + [wb[i] for i, *_ in ba]
    if not locs:
        return None
    anchor = locs[0]
    radius = 4.0 * tol + 1e-12
    if any(np.linalg.norm(p - anchor) > radius for p in locs):
        raise MultiContact("more than one feature pair within tolerance")

    eps = 1e-9
    interior_ab = [c for c in ab if eps < c[2] < 1 - eps]
    interior_ba = [c for c in ba if eps < c[2] < 1 - eps]
    if interior_ab:
        i, j, t, _ = min(interior_ab, key=lambda c: c[3])
        point = wa[i].copy()
        n_body = shape_b.edge_normal(j)
        normal = pose_b.rotation() @ n_body
        a0, a1 = shape_b.edge(j)
        return ContactPoint(point, normal, shape_a.vertices[i].copy(), a0 + t * (a1 - a0),
                            "a", i, j, n_body)
    if interior_ba:
        i, j, t, _ = min(interior_ba, key=lambda c: c[3])
        point = wb[i].copy()
        n_body = shape_a.edge_normal(j)
        normal = -(pose_a.rotation() @ n_body)
        a0, a1 = shape_a.edge(j)
        return ContactPoint(point, normal, a0 + t * (a1 - a0), shape_b.vertices[i].copy(),
                            "b", i, j, n_body)
    # vertex-vertex: average the two edge normals adjacent to B's vertex
    nb = len(shape_b)
    if ba:
        jb = min(ba, key=lambda c: c[3])[0]
    else:
        i, j, t, _ = ab[0]
        jb = j if t < 0.5 else (j + 1) % nb
    ia = int(np.argmin(np.linalg.norm(wa - wb[jb], axis=1)))
    n_body = shape_b.edge_normal(jb) + shape_b.edge_normal((jb - 1) % nb)
    n_body = n_body / np.linalg.norm(n_body)
    normal = pose_b.rotation() @ n_body
    return ContactPoint(wa[ia].copy(), normal, shape_a.vertices[ia].copy(),
                        shape_b.vertices[jb].copy(), "a", ia, jb, n_body)


def contact_jacobian(pose: Pose2, body: BodyParams, cp: ContactPoint, point=None) -> np.ndarray:
    """2x3 map from body twist about the world CoM to (tangential, normal) velocity."""
    p = cp.point if point is None else np.asarray(point, dtype=float)
    r = p - body.com_world(pose)
    n = np.asarray(cp.normal, dtype=float)
    t = np.array([-n[1], n[0]])
    return np.array([
        [t[0], t[1], cross2(r, t)],
        [n[0], n[1], cross2(r, n)],
    ])


def gravity_wrench(body: BodyParams, pose: Pose2 | None = None) -> Wrench2:
    return Wrench2(0.0, -body.mass * body.gravity, 0.0)


def _distance_matrix(pts, poly):
    """Distances from each point to each edge of the closed polyline `poly`.

    Leading batch dimensions are broadcast: pts (..., m, 2), poly (..., n, 2).
    """
    b = np.roll(poly, -1, axis=-2)
    d = b - poly
    dd = np.sum(d * d, axis=-1)
    rel = pts[..., :, None, :] - poly[..., None, :, :]
    t = np.clip(np.sum(rel * d[..., None, :, :], axis=-1) / np.where(dd > 0, dd, 1.0)[..., None, :], 0.0, 1.0)
    diff = rel - t[..., None] * d[..., None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _inside(pts, poly):
    """Even-odd point-in-polygon test for many points (same batching as _distance_matrix)."""
    x, y = pts[..., :, None, 0], pts[..., :, None, 1]
    x1, y1 = poly[..., None, :, 0], poly[..., None, :, 1]
    x2, y2 = np.roll(x1, -1, axis=-1), np.roll(y1, -1, axis=-1)
    cross = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
    return (np.sum(cross & (x < xi), axis=-1) % 2) == 1


def signed_gap_batch(verts_a, verts_b, keep_a=None, keep_b=None) -> np.ndarray:
    """signed_gap over stacks of world vertices (B, na, 2) and (B, nb, 2).

    `keep_a` / `keep_b` index the vertices that take part (default all).
    """
    va = np.asarray(verts_a, dtype=float)
    vb = np.asarray(verts_b, dtype=float)
    depth = np.zeros(va.shape[0])
    clearance = np.full(va.shape[0], np.inf)
    for pts, poly in ((va if keep_a is None else va[:, keep_a], vb), (vb if keep_b is None else vb[:, keep_b], va)):
        if pts.shape[1] == 0:
            continue
        dmin = _distance_matrix(pts, poly).min(axis=-1)
        inside = _inside(pts, poly)
        depth = np.maximum(depth, np.where(inside, dmin, 0.0).max(axis=-1))
        clearance = np.minimum(clearance, dmin.min(axis=-1))
    return np.where(depth > 0, depth, -clearance)


def clearance_pairs(shape_a, pose_a, shape_b, pose_b, exclude: Sequence[tuple[str, int]] = ()):
    """Vertex-edge distances between two polygons, skipping excluded vertices."""
    wa = shape_a.world_vertices(pose_a)
    wb = shape_b.world_vertices(pose_b)
    out = []
    for owner, wv, we in (("a", wa, wb), ("b", wb, wa)):
        D = _distance_matrix(wv, we)
        for i in range(len(wv)):
            if (owner, i) in exclude:
                continue
            out.extend((float(D[i, j]), owner, i, j) for j in range(len(we)))
    return out


def signed_gap(shape_a: PolygonShape, pose_a: Pose2, shape_b: PolygonShape, pose_b: Pose2,
               exclude: Sequence[tuple[str, int]] = ()) -> float:
    """Negative clearance between the bodies (positive penetration depth if overlapping).

    `exclude` lists ("a"|"b", vertex) features of a maintained contact whose
    zero distance must not count.
    """
    keep_a = [i for i in range(len(shape_a)) if ("a", i) not in exclude]
    keep_b = [i for i in range(len(shape_b)) if ("b", i) not in exclude]
    return float(signed_gap_batch(shape_a.world_vertices(pose_a)[None], shape_b.world_vertices(pose_b)[None],
                                  keep_a, keep_b)[0])
