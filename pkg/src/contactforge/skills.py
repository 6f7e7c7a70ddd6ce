"""Skill specifications: desired poses, mode schedules and contact placements.

Extrinsic skills (program P1) prescribe extrinsic-object poses; grasped skills
(program P2) prescribe grasped-object poses against the ground.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .geometry import Pose2, PolygonShape
from .scene import ASSETS, SceneConfig

P1_KINDS = ("static", "relative_pivot", "relative_slide", "extrinsic_push", "extrinsic_pivot")
P2_KINDS = ("grasped_static", "grasped_pivot", "grasped_slide")
MODES = ("stick", "slide+", "slide-", "sep")


@dataclass
class SkillSpec:
    kind: str
    desired: list                  # Pose2 per step: extrinsic (P1) or grasped (P2) object
    ground_vertices: list          # vertices of the ground-touching body
    ground_modes: list             # per step, one mode per ground vertex
    go_vertex: int
    object_modes: list = field(default_factory=list)   # per step (P1 only)
    eo_edge: int = -1
    arc_length: list = field(default_factory=list)     # per step, metres along eo_edge
    go_angles: Optional[list] = None                   # pinned grasped-object angles
    go_angle_init: list = field(default_factory=list)
    f_des: tuple = (0.0, 3.0)
    name: str = ""
    scene: str = ""                                    # bundled scene the skill was built for

    def __post_init__(self):
        if self.kind not in P1_KINDS + P2_KINDS:
            raise ConfigError(f"unknown skill kind {self.kind!r}")
        K = len(self.desired)
        if K < 2:
            raise ConfigError("a skill needs at least two steps")
        if len(self.ground_modes) != K:
            raise ConfigError("ground_modes must have one entry per step")
        for row in self.ground_modes:
            if len(row) != len(self.ground_vertices) or any(m not in MODES for m in row):
                raise ConfigError("bad ground mode row")
        if self.program == "p1":
            if len(self.object_modes) != K or len(self.arc_length) != K:
                raise ConfigError("object_modes and arc_length need one entry per step")
            if any(m not in MODES[:3] for m in self.object_modes):
                raise ConfigError("object contact must be sticking or sliding in an extrinsic skill")
        if self.go_angles is not None and len(self.go_angles) != K:
            raise ConfigError("go_angles must have one entry per step")
        if self.go_angle_init and len(self.go_angle_init) != K:
            raise ConfigError("go_angle_init must have one entry per step")
        self.f_des = tuple(float(v) for v in self.f_des)

    @property
    def program(self) -> str:
        return "p1" if self.kind in P1_KINDS else "p2"

    @property
    def steps(self) -> int:
        return len(self.desired)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "name": self.name, "scene": self.scene, "steps": self.steps,
            "desired_poses": [p.as_array().tolist() for p in self.desired],
            "ground_contact": {"vertices": list(self.ground_vertices), "modes": self.ground_modes},
            "object_contact": {"go_vertex": self.go_vertex, "eo_edge": self.eo_edge,
                               "arc_length_m": list(map(float, self.arc_length)), "modes": self.object_modes},
            "go_angles_rad": None if self.go_angles is None else list(map(float, self.go_angles)),
            "go_angle_init_rad": list(map(float, self.go_angle_init)),
            "f_des_N": list(self.f_des),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SkillSpec":
        try:
            oc = doc.get("object_contact", {})
            gc = doc["ground_contact"]
            return cls(
                kind=doc["kind"], name=doc.get("name", ""), scene=doc.get("scene", ""),
                desired=[Pose2.from_array(p) for p in doc["desired_poses"]],
                ground_vertices=[int(v) for v in gc["vertices"]], ground_modes=[list(r) for r in gc["modes"]],
                go_vertex=int(oc.get("go_vertex", doc.get("go_vertex", -1))),
                object_modes=list(oc.get("modes", [])), eo_edge=int(oc.get("eo_edge", -1)),
                arc_length=[float(s) for s in oc.get("arc_length_m", [])],
                go_angles=doc.get("go_angles_rad"), go_angle_init=list(doc.get("go_angle_init_rad") or []),
                f_des=tuple(doc.get("f_des_N", (0.0, 3.0))),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"skill: malformed field ({exc})") from None


def load_skill(path) -> SkillSpec:
    path = Path(path)
    if path.suffix != ".json":
        path = ASSETS / "skills" / f"{path}.json"
    if not path.is_file():
        raise ConfigError(f"skill file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return SkillSpec.from_dict(doc)


def save_skill(skill: SkillSpec, path) -> None:
    Path(path).write_text(json.dumps(skill.to_dict(), indent=1) + "\n")


# Builders.  All extrinsic shapes are bundled with a flat bottom face at zero
# orientation; the grasped object hangs from the gripper above its contact.

def resting_pose(shape: PolygonShape, x: float = 0.0, ground_y: float = 0.0) -> Pose2:
    return Pose2(x, ground_y - float(shape.vertices[:, 1].min()), 0.0)


def bottom_edge(shape: PolygonShape) -> int:
    return int(np.argmin([shape.edge_normal(i)[1] for i in range(len(shape))]))


def top_edge(shape: PolygonShape) -> int:
    return int(np.argmax([shape.edge_normal(i)[1] for i in range(len(shape))]))


def _ground_pair(shape):
    e = bottom_edge(shape)
    return [e, (e + 1) % len(shape)]


def build_skill(kind: str, scene: SceneConfig, steps: Optional[int] = None, **kw) -> SkillSpec:
    """Reference skill instances used by the bundled skill files and tests."""
    if kind in P2_KINDS:
        return _build_grasped(kind, scene, steps or 20, **kw)
    eo = scene.extrinsic
    if eo is None:
        raise ConfigError(f"{kind} needs an extrinsic object")
    shape = eo.shape
    x0 = resting_pose(shape, ground_y=scene.ground_y)
    pair = _ground_pair(shape)
    f_des = kw.get("f_des", (0.0, 3.0))
    if kind in ("static", "relative_pivot", "relative_slide"):
        K = steps or 20
        edge = top_edge(shape)
        L = shape.edge_length(edge)
        s = [0.5 * L] * K
        modes = ["stick"] * K
        angles = None
        init = [0.3] * K
        if kind == "relative_pivot":
            angles = list(np.linspace(0.45, 0.15, K))
            init = angles
        if kind == "relative_slide":
            # grasped object moves +x along a top face running in -x: SlidingNegative
            step = kw.get("slide_step_m", 1e-3)
            s = list(0.5 * L + step * (np.arange(K) - (K - 1) / 2) * -1.0)
            modes = ["slide-"] * K
        return SkillSpec(kind, [x0] * K, pair, [["stick", "stick"]] * K, go_vertex=0,
                         object_modes=modes, eo_edge=edge, arc_length=s, go_angles=angles,
                         go_angle_init=init, f_des=f_des, name=f"{kind}_{shape.name}")
    if kind == "extrinsic_push":
        K = steps or 20
        step = kw.get("push_step_m", 1e-3)
        edge = _left_edge(shape)
        L = shape.edge_length(edge)
        poses = [Pose2(x0.x + step * k, x0.y, 0.0) for k in range(K)]
        push = scene.friction.ground_extrinsic * eo.params.mass * eo.params.gravity
        return SkillSpec(kind, poses, pair, [["slide-", "slide-"]] * K, go_vertex=1,
                         object_modes=["stick"] * K, eo_edge=edge, arc_length=[0.4 * L] * K,
                         go_angle_init=[0.3] * K, f_des=kw.get("f_des", (0.0, push)),
                         name=f"{kind}_{shape.name}")
    if kind == "extrinsic_pivot":
        K = steps or 40
        rate = kw.get("pivot_step_rad", np.deg2rad(0.5))
        edge = kw.get("edge", _left_edge(shape))
        s_frac = kw.get("s_frac", 0.25)
        go_angle = kw.get("go_angle", face_tilt(shape, edge) + 0.3)
        pivot = pair[1]
        p_body = shape.vertices[pivot]
        p_world = x0.transform_point(p_body)
        poses = []
        for k in range(K):
            th = -rate * k
            R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
            pos = p_world - R @ p_body
            poses.append(Pose2(pos[0], pos[1], th))
        L = shape.edge_length(edge)
        return SkillSpec(kind, poses, [pivot], [["stick"]] * K, go_vertex=1,
                         object_modes=["stick"] * K, eo_edge=edge, arc_length=[s_frac * L] * K,
                         go_angle_init=[go_angle + p.theta for p in poses], f_des=f_des,
                         name=f"{kind}_{shape.name}")
    raise ConfigError(f"unknown skill kind {kind!r}")


def face_tilt(shape: PolygonShape, edge: int) -> float:
    """Grasped-object angle that lines its +y axis up with the (upward-running) face."""
    a, b = shape.edge(edge)
    u = b - a if b[1] >= a[1] else a - b
    return float(np.arctan2(-u[0], u[1]))


def _left_edge(shape: PolygonShape) -> int:
    """Edge facing the tool side (-x), preferring the upper of equally good faces."""
    scores = []
    for i in range(len(shape)):
        n = shape.edge_normal(i)
        a, b = shape.edge(i)
        scores.append((-n[0] - 0.2 * abs(n[1]) + 0.5 * (a[1] + b[1]), i))
    return max(scores)[1]


def _build_grasped(kind, scene: SceneConfig, K: int, **kw) -> SkillSpec:
    shape = scene.grasped.shape
    v = 0
    if kind == "grasped_pivot":
        angles = list(np.linspace(0.45, 0.15, K))
    else:
        angles = [0.3] * K
    poses = []
    for k in range(K):
        th = angles[k]
        R = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
        # vertex v rests on the ground at x = 0 (sliding skills translate it)
        x_contact = kw.get("slide_step_m", 1e-3) * k if kind == "grasped_slide" else 0.0
        pos = np.array([x_contact, scene.ground_y]) - R @ shape.vertices[v]
        poses.append(Pose2(pos[0], pos[1], th))
    mode = "slide-" if kind == "grasped_slide" else "stick"
    return SkillSpec(kind, poses, [v], [[mode]] * K, go_vertex=v, go_angles=angles,
                     go_angle_init=angles, f_des=kw.get("f_des", (0.0, 3.0)), name=kind)
