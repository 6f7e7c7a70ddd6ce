"""SVG frames of plans and rollouts: bodies, contacts and force arrows."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Pose2, rot

PX_PER_M = 2000.0           # 1 mm = 2 px
ARROW_M_PER_N = 0.01        # force arrows: 1 N = 1 cm
ZERO_ARROW_N = 1e-9
MODE_COLOURS = {"stick": "#d62728", "slide+": "#2ca02c", "slide-": "#2ca02c", "sep": "#7f7f7f"}
BODY_FILL = {"go": "#9ecae1", "eo": "#fdd0a2"}


@dataclass
class FrameContact:
    mode: str
    point: np.ndarray
    force: np.ndarray        # world force on body A, zero when unknown or separated


@dataclass
class Frame:
    k: int
    x_ee: Pose2
    x_go: Pose2
    x_eo: Pose2 | None
    gripper_force: np.ndarray                  # world force the gripper applies to the grasped object
    contacts: list = field(default_factory=list)


def frames_from_trajectory(scene, traj) -> list[Frame]:
    out = []
    for s in traj.steps:
        cs = []
        for c in s.contacts:
            n = np.array([c[7], c[8]])
            t = np.array([-n[1], n[0]])
            cs.append(FrameContact(c[2], np.array([c[5], c[6]]), c[3] * t + c[4] * n))
        f = rot(s.x_go.theta) @ s.w_ext.as_array()[:2]
        out.append(Frame(s.k, s.x_ee, s.x_go, s.x_eo if scene.extrinsic is not None else None, f, cs))
    return out


def frames_from_plan(scene, plan) -> list[Frame]:
    """Frames of a plan; ground contacts carry no planned force, so they get no arrow."""
    skill = plan.skill
    p1 = skill.program == "p1"
    out = []
    for k in range(skill.steps):
        x_go = plan.variables.x_go[k]
        x_eo = skill.desired[k] if p1 else None
        cs = []
        base = scene.extrinsic if p1 else scene.grasped
        pose = x_eo if p1 else x_go
        for v, mode in zip(skill.ground_vertices, skill.ground_modes[k]):
            cs.append(FrameContact(str(mode), pose.transform_point(base.shape.vertices[v]), np.zeros(2)))
        if p1:
            mode = str(skill.object_modes[k])
            n = rot(x_eo.theta) @ scene.extrinsic.shape.edge_normal(skill.eo_edge)
            t = np.array([-n[1], n[0]])
            f_t, f_n = plan.forces[k]
            f = np.zeros(2) if mode == "sep" else f_t * t + f_n * n
            cs.append(FrameContact(mode, x_go.transform_point(scene.grasped.shape.vertices[skill.go_vertex]), f))
        w = rot(x_go.theta) @ np.asarray(plan.wrenches[k], dtype=float)[:2]
        out.append(Frame(k, plan.variables.x_ee[k], x_go, x_eo, w, cs))
    return out


def _bounds(scene, frames) -> tuple:
    pts = []
    for fr in frames:
        pts.append(scene.grasped.shape.world_vertices(fr.x_go))
        if fr.x_eo is not None:
            pts.append(scene.extrinsic.shape.world_vertices(fr.x_eo))
        pts.append(fr.x_ee.position[None, :])
    pts = np.vstack(pts)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    lo[1] = min(lo[1], scene.ground_y)
    pad = 0.03
    return lo - pad, hi + pad


class _Canvas:
    def __init__(self, lo, hi):
        self.lo, self.hi = lo, hi
        self.w = (hi[0] - lo[0]) * PX_PER_M
        self.h = (hi[1] - lo[1]) * PX_PER_M
        self.items = []

    def xy(self, p):
        return (p[0] - self.lo[0]) * PX_PER_M, (self.hi[1] - p[1]) * PX_PER_M

    def polygon(self, verts, fill):
        pts = " ".join("%.2f,%.2f" % self.xy(v) for v in verts)
        self.items.append(f'<polygon points="{pts}" fill="{fill}" stroke="#333" stroke-width="1"/>')

    def line(self, a, b, colour, width=1.0, cls=""):
        (x0, y0), (x1, y1) = self.xy(a), self.xy(b)
        c = f' class="{cls}"' if cls else ""
        self.items.append(f'<line{c} x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
                          f'stroke="{colour}" stroke-width="{width}"/>')

    def dot(self, p, colour, r=3.0, cls=""):
        x, y = self.xy(p)
        c = f' class="{cls}"' if cls else ""
        self.items.append(f'<circle{c} cx="{x:.2f}" cy="{y:.2f}" r="{r}" fill="{colour}"/>')

    def arrow(self, p, f, colour):
        if np.linalg.norm(f) <= ZERO_ARROW_N:
            return
        q = np.asarray(p) + ARROW_M_PER_N * np.asarray(f)
        (x0, y0), (x1, y1) = self.xy(p), self.xy(q)
        self.items.append(f'<line class="force" x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
                          f'stroke="{colour}" stroke-width="1.5" marker-end="url(#head)"/>')

    def text(self, s):
        self.items.append(f'<text x="4" y="14" font-family="monospace" font-size="12">{s}</text>')

    def svg(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w:.0f}" height="{self.h:.0f}" '
                f'viewBox="0 0 {self.w:.2f} {self.h:.2f}">\n'
                '<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto">'
                '<path d="M0,0 L6,3 L0,6 z" fill="context-stroke"/></marker></defs>\n'
                f'<rect width="{self.w:.2f}" height="{self.h:.2f}" fill="white"/>\n')
        return head + "\n".join(self.items) + "\n</svg>\n"


def render_frame(scene, frame: Frame, bounds) -> str:
    cv = _Canvas(*bounds)
    cv.line((bounds[0][0], scene.ground_y), (bounds[1][0], scene.ground_y), "#000", 2.0, "ground")
    if frame.x_eo is not None:
        cv.polygon(scene.extrinsic.shape.world_vertices(frame.x_eo), BODY_FILL["eo"])
    cv.polygon(scene.grasped.shape.world_vertices(frame.x_go), BODY_FILL["go"])
    cv.dot(frame.x_ee.position, "#1f77b4", 4.0, "ee")
    com = scene.grasped.params.com_world(frame.x_go)
    cv.arrow(com, frame.gripper_force, "#1f77b4")
    for c in frame.contacts:
        colour = MODE_COLOURS.get(c.mode, "#000")
        cv.dot(c.point, colour, 3.0, "contact")
        cv.arrow(c.point, c.force, colour)
    cv.text(f"k={frame.k}")
    return cv.svg()


def render_frames(scene, frames, out_dir, prefix: str = "step") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bounds = _bounds(scene, frames)
    paths = []
    for fr in frames:
        p = out_dir / f"{prefix}_{fr.k:03d}.svg"
        p.write_text(render_frame(scene, fr, bounds))
        paths.append(p)
    return paths
