"""Quasi-static simulator: end-effector commands in, object poses and contact forces out.

Each step enumerates contact-mode assignments over the candidate contacts,
resolves poses and forces for each assignment with a damped Gauss-Newton
solve, and keeps the assignments whose forces (recomputed by the shared
contact-model program) and motions are consistent with the modes.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .compliance import grasp_deflection
from .contact import (Contact, ContactMode, SceneState, check_mode_consistency,
                      solve_contact_forces)
from .errors import ContactForgeError, NoConsistentMode, QuasiStaticViolation
from .estimation import EdgePointCloud
from .geometry import ContactPoint, Pose2, Wrench2, point_segment_distance, signed_gap, wrap_angle
from .scene import SceneConfig

STICK, SLIDE_P, SLIDE_N, SEP = "stick", "slide+", "slide-", "sep"


@dataclass(frozen=True)
class Candidate:
    """A vertex of one body near an edge (or the ground) of another.

    The material points are fixed for the step: `pa` in body A's frame and
    `pb` in body B's frame (world frame for the ground).  `n_body` is the
    normal from B into A, stored in the frame of the edge owner.
    """

    body_a: str
    body_b: str
    owner: str          # "a" if the vertex belongs to A
    vertex: int
    edge: int
    pa: np.ndarray
    pb: np.ndarray
    n_body: np.ndarray
    gap: float
    mu: float
    role: str


@dataclass
class SimConfig:
    margin: float = 1.5e-3        # candidate distance for contacts that may close
    newton_tol: float = 1e-10
    newton_iter: int = 20
    # a resolved pose further than this from the step start is treated as a
    # jump to another equilibrium (e.g. toppling), not quasi-static motion
    max_motion_m: float = 0.01
    max_motion_rad: float = 0.1
    consistency_tol: float = 1e-5
    penetration_tol: float = 1e-4
    fd_step: float = 1e-7
    ambiguity_tol: float = 1e-7
    position_scale: float = 1e3   # residual units per metre in the merit function


@dataclass
class StepResult:
    state: SceneState
    contacts: list
    forces: list
    modes: list
    consistency: list
    feasible: bool
    w_ext: Wrench2
    message: str = ""


def _pose_of(name, x_go, x_eo):
    return x_go if name == "go" else x_eo


def _world(pose: Optional[Pose2], p):
    return p if pose is None else pose.transform_point(p)


def candidate_contacts(scene: SceneConfig, state: SceneState, margin: float) -> list[Candidate]:
    fr = scene.friction
    out = []
    bodies = [("go", scene.grasped, state.x_go)]
    if scene.extrinsic is not None:
        bodies.append(("eo", scene.extrinsic, state.x_eo))
    up = np.array([0.0, 1.0])
    for name, body, pose in bodies:
        wv = body.shape.world_vertices(pose)
        for i, p in enumerate(wv):
            h = p[1] - scene.ground_y
            if h <= margin:
                out.append(Candidate(name, "ground", "a", i, -1, body.shape.vertices[i].copy(),
                                     np.array([p[0], scene.ground_y]), up, float(h),
                                     fr.between(name, "ground"), "ground"))
    if scene.extrinsic is not None:
        mu = fr.grasped_extrinsic
        pairs = (("a", scene.grasped, state.x_go, scene.extrinsic, state.x_eo),
                 ("b", scene.extrinsic, state.x_eo, scene.grasped, state.x_go))
        for owner, sv, pv, se, pe in pairs:
            we = se.shape.world_vertices(pe)
            ne = len(we)
            for i, p in enumerate(sv.shape.world_vertices(pv)):
                best = None
                for j in range(ne):
                    d, t = point_segment_distance(p, we[j], we[(j + 1) % ne])
                    if d <= margin and (best is None or d < best[0] - 1e-12):
                        best = (d, t, j)
                if best is None:
                    continue
                d, t, j = best
                a0, a1 = se.shape.edge(j)
                proj = a0 + t * (a1 - a0)
                n_out = se.shape.edge_normal(j)
                gap = float((pe.inverse_transform_point(p) - proj) @ n_out)
                if owner == "a":
                    # tool vertex on an object edge: normal from the object into the tool
                    out.append(Candidate("go", "eo", "a", i, j, sv.shape.vertices[i].copy(), proj,
                                         n_out, gap, mu, "object"))
                else:
                    out.append(Candidate("go", "eo", "b", i, j, proj, sv.shape.vertices[i].copy(),
                                         -n_out, gap, mu, "object"))
    return out


class _Geometry:
    """World quantities of the candidates for given object poses."""

    def __init__(self, cands, x_go, x_eo):
        self.pa, self.pb, self.n = [], [], []
        for c in cands:
            A = _pose_of(c.body_a, x_go, x_eo)
            B = None if c.body_b == "ground" else _pose_of(c.body_b, x_go, x_eo)
            self.pa.append(A.transform_point(c.pa))
            self.pb.append(_world(B, c.pb))
            edge_pose = B if c.owner == "a" else A
            n = c.n_body if edge_pose is None else edge_pose.rotation() @ c.n_body
            self.n.append(n)

    def gap(self, i):
        return float((self.pa[i] - self.pb[i]) @ self.n[i])

    def slip(self, i):
        t = np.array([-self.n[i][1], self.n[i][0]])
        return float((self.pa[i] - self.pb[i]) @ t)


def _contact_point(c: Candidate, geo: _Geometry, i: int, x_go, x_eo) -> ContactPoint:
    """ContactPoint for the force-model program, located at the vertex."""
    A = _pose_of(c.body_a, x_go, x_eo)
    if c.owner == "a":
        point = geo.pa[i]
    else:
        point = geo.pb[i]
    return ContactPoint(point.copy(), geo.n[i].copy(), A.inverse_transform_point(point),
                        point.copy() if c.body_b == "ground" else
                        _pose_of(c.body_b, x_go, x_eo).inverse_transform_point(point),
                        c.owner, c.vertex, c.edge)


class _ModeSystem:
    """Square residual system for one mode assignment."""

    def __init__(self, scene, cands, modes, x_ee, cfg: SimConfig):
        self.scene, self.cands, self.modes, self.x_ee, self.cfg = scene, cands, modes, x_ee, cfg
        self.has_eo = scene.extrinsic is not None
        self.np = 6 if self.has_eo else 3
        self.nf = 2 * len(cands)
        self.K = scene.plant_model.K
        go = scene.grasped
        self.r_go = go.gyration_radius
        self.r_eo = scene.extrinsic.gyration_radius if self.has_eo else 1.0
        idx = {"go": 0, "eo": 1, "ground": -1}
        self.ia = [idx[c.body_a] for c in cands]
        self.ib = [idx[c.body_b] for c in cands]
        self.ie = [self.ib[i] if c.owner == "a" else self.ia[i] for i, c in enumerate(cands)]
        self.com = [np.asarray(go.params.com), np.asarray(scene.extrinsic.params.com) if self.has_eo else None]
        self.weight = [go.params.mass * go.params.gravity,
                       scene.extrinsic.params.mass * scene.extrinsic.params.gravity if self.has_eo else 0.0]
        nominal = x_ee.compose(scene.grasp)
        self.p_nom = nominal.position
        self.th_nom = nominal.theta

    def poses(self, z):
        x_go = Pose2(z[0], z[1], z[2])
        x_eo = Pose2(z[3], z[4], z[5]) if self.has_eo else Pose2()
        return x_go, x_eo

    def wrench(self, x_go):
        d = grasp_deflection(self.x_ee, x_go, self.scene.grasp)
        return self.K @ d

    def linear_parts(self, zp):
        """Residual as c(x) + M(x) f (torque rows divided by the gyration radius)."""
        ts = [zp[0:2], zp[3:5] if self.has_eo else None]
        Rs = []
        for b in range(2 if self.has_eo else 1):
            ct, st = np.cos(zp[3 * b + 2]), np.sin(zp[3 * b + 2])
            Rs.append(np.array([[ct, -st], [st, ct]]))
        n_bal = self.np
        c = np.zeros(n_bal + self.nf)
        M = np.zeros((n_bal + self.nf, self.nf))
        R = Rs[0]
        d_xy = R.T @ (self.p_nom - ts[0])
        d_th = (self.th_nom - zp[2] + np.pi) % (2 * np.pi) - np.pi
        w = self.K @ np.array([d_xy[0], d_xy[1], d_th])
        f = R @ w[:2]
        arm = -(R @ self.com[0])
        c[0:2] = f
        c[1] -= self.weight[0]
        c[2] = w[2] + arm[0] * f[1] - arm[1] * f[0]
        if self.has_eo:
            c[4] = -self.weight[1]
        coms = [ts[b] + Rs[b] @ self.com[b] for b in range(len(Rs))]
        ps = self.cfg.position_scale
        row = n_bal
        for i, (cand, mode) in enumerate(zip(self.cands, self.modes)):
            a, b, e = self.ia[i], self.ib[i], self.ie[i]
            pa = ts[a] + Rs[a] @ cand.pa
            pb = cand.pb if b < 0 else ts[b] + Rs[b] @ cand.pb
            n = cand.n_body if e < 0 else Rs[e] @ cand.n_body
            t = np.array([-n[1], n[0]])
            point = pa if cand.owner == "a" else pb
            for body, sign in ((a, 1.0), (b, -1.0)):
                if body < 0:
                    continue
                r = point - coms[body]
                r0 = 3 * body
                M[r0:r0 + 2, 2 * i] += sign * t
                M[r0:r0 + 2, 2 * i + 1] += sign * n
                M[r0 + 2, 2 * i] += sign * (r[0] * t[1] - r[1] * t[0])
                M[r0 + 2, 2 * i + 1] += sign * (r[0] * n[1] - r[1] * n[0])
            if mode == STICK:
                c[row:row + 2] = ps * (pa - pb)
            elif mode == SEP:
                M[row, 2 * i] = 1.0
                M[row + 1, 2 * i + 1] = 1.0
            else:
                c[row] = ps * float((pa - pb) @ n)
                M[row + 1, 2 * i] = 1.0
                M[row + 1, 2 * i + 1] = (1.0 if mode == SLIDE_P else -1.0) * cand.mu
            row += 2
        c[2] /= self.r_go
        M[2] /= self.r_go
        if self.has_eo:
            c[5] /= self.r_eo
            M[5] /= self.r_eo
        return c, M, None

    def solve(self, zp0, start=None):
        """Levenberg-Marquardt on (poses, forces); FD pose columns, analytic force columns.

        `zp0` is the pre-step configuration used by the jump guard; `start`
        (default zp0) is the initial iterate.
        """
        cfg = self.cfg
        zp = np.array(zp0 if start is None else start, dtype=float)
        c, M, _ = self.linear_parts(zp)
        f = np.linalg.lstsq(M, -c, rcond=None)[0] if self.nf else np.zeros(0)
        r = c + M @ f
        norm = np.linalg.norm(r)
        lam = None
        for it in range(cfg.newton_iter):
            if norm < cfg.newton_tol:
                return zp, f, True
            Jp = np.zeros((len(r), self.np))
            for k in range(self.np):
                zk = zp.copy()
                zk[k] += cfg.fd_step
                ck, Mk, _ = self.linear_parts(zk)
                Jp[:, k] = (ck + Mk @ f - r) / cfg.fd_step
            Jac = np.hstack([Jp, M])
            H = Jac.T @ Jac
            g = Jac.T @ r
            D = np.maximum(np.diag(H), 1e-12)
            if lam is None:
                lam = 1e-6
            while True:
                try:
                    step = -np.linalg.solve(H + lam * np.diag(D), g)
                except np.linalg.LinAlgError:
                    step = None
                if step is not None:
                    zt = zp + step[:self.np]
                    ft = f + step[self.np:]
                    ct, Mt, _ = self.linear_parts(zt)
                    rt = ct + Mt @ ft
                    nt = np.linalg.norm(rt)
                    if nt < norm:
                        lam = max(lam / 10.0, 1e-12)
                        break
                lam *= 10.0
                if lam > 1e8:
                    return zp, f, False
            zp, f, r, norm, M = zt, ft, rt, nt, Mt
            if self._jumped(zp, zp0):
                return zp, f, False
        return zp, f, norm < cfg.newton_tol

    def _jumped(self, zp, zp0):
        d = np.abs(zp - zp0)
        return bool(d[0:2].max() > self.cfg.max_motion_m or d[2] > self.cfg.max_motion_rad
                    or (self.has_eo and (d[3:5].max() > self.cfg.max_motion_m or d[5] > self.cfg.max_motion_rad)))


def _closing(c: Candidate, tol):
    return c.gap > tol


def _mode_levels(cands, tol):
    """Assignments grouped by (closing contacts, sliding contacts), lowest first."""
    combos = itertools.product((STICK, SLIDE_P, SLIDE_N, SEP), repeat=len(cands))

    def key(modes):
        closing = sum(1 for c, m in zip(cands, modes) if m != SEP and _closing(c, tol))
        sliding = sum(1 for m in modes if m in (SLIDE_P, SLIDE_N))
        return closing, sliding
    levels = {}
    for m in combos:
        levels.setdefault(key(m), []).append(list(m))
    return [levels[k] for k in sorted(levels)]


def _supported(cands, modes, has_eo):
    if not has_eo:
        return True
    return any(m != SEP and "eo" in (c.body_a, c.body_b) for c, m in zip(cands, modes))


def _penetration(scene: SceneConfig, x_go, x_eo) -> float:
    depth = scene.ground_y - scene.grasped.shape.world_vertices(x_go)[:, 1].min()
    if scene.extrinsic is not None:
        depth = max(depth, scene.ground_y - scene.extrinsic.shape.world_vertices(x_eo)[:, 1].min())
        depth = max(depth, signed_gap(scene.grasped.shape, x_go, scene.extrinsic.shape, x_eo))
    return float(depth)


def _evaluate(scene, state, cands, modes, x_ee, cfg, z0):
    """Resolve one assignment; returns (StepResult, objective) or None if inconsistent."""
    sys_ = _ModeSystem(scene, cands, modes, x_ee, cfg)
    # warm start: the grasped object follows the command rigidly, the extrinsic object stays
    carried = x_ee.compose(state.x_ee.inverse().compose(state.x_go)).as_array()
    for start in (np.concatenate([carried, z0[3:]]), z0):
        zp, f_newton, ok = sys_.solve(z0, start)
        if ok:
            break
    else:
        return None
    x_go, x_eo = sys_.poses(zp)
    geo = _Geometry(cands, x_go, x_eo)
    tol = cfg.consistency_tol
    # motion must agree with the modes
    for i, (c, m) in enumerate(zip(cands, modes)):
        if m == SEP and geo.gap(i) < -cfg.penetration_tol:
            return None
        if m == SLIDE_P and geo.slip(i) < -tol * 1e-2:
            return None
        if m == SLIDE_N and geo.slip(i) > tol * 1e-2:
            return None
    if _penetration(scene, x_go, x_eo) > cfg.penetration_tol:
        return None
    keep = [i for i, m in enumerate(modes) if m != SEP]
    contacts = [Contact(_contact_point(cands[i], geo, i, x_go, x_eo), cands[i].body_a, cands[i].body_b,
                        cands[i].mu, cands[i].role) for i in keep]
    kept_modes = [modes[i] for i in keep]
    w_ext = Wrench2.from_array(sys_.wrench(x_go))
    new_state = SceneState(x_ee, x_go, x_eo if scene.extrinsic is not None else state.x_eo)
    bodies = scene.bodies
    program = "p1" if scene.extrinsic is not None else "p2"
    try:
        forces, sol, _ = solve_contact_forces(new_state, contacts, kept_modes, w_ext, bodies, program=program)
    except ContactForgeError:
        return None
    if forces is None:
        return None
    report = check_mode_consistency(forces, kept_modes, [c.mu for c in contacts], tol)
    if not all(r.passed for r in report):
        return None
    obj = float(sum(f.f_t ** 2 + f.f_n ** 2 for f in forces))
    res = StepResult(new_state, contacts, forces, kept_modes, report, True, w_ext)
    return res, obj


def check_step_bound(scene: SceneConfig, prev: Pose2, cmd: Pose2, slack: float = 1e-9) -> None:
    dp = float(np.linalg.norm(cmd.position - prev.position))
    dth = abs(wrap_angle(cmd.theta - prev.theta))
    if dp > scene.step_translation_m * (1 + slack) + 1e-12 or dth > scene.step_rotation_rad * (1 + slack) + 1e-12:
        raise QuasiStaticViolation(f"command step {dp * 1e3:.3f} mm / {np.rad2deg(dth):.3f} deg exceeds the bound")


def step(scene: SceneConfig, state: SceneState, x_ee_cmd: Pose2, config: SimConfig | None = None) -> StepResult:
    """Advance one quasi-static step under a new end-effector command."""
    cfg = config or SimConfig()
    check_step_bound(scene, state.x_ee, x_ee_cmd)
    cands = candidate_contacts(scene, state, cfg.margin)
    has_eo = scene.extrinsic is not None
    z0 = np.concatenate([state.x_go.as_array(), state.x_eo.as_array() if has_eo else []])
    for level in _mode_levels(cands, scene.contact_tol):
        found = []
        for modes in level:
            if not _supported(cands, modes, has_eo):
                continue
            out = _evaluate(scene, state, cands, modes, x_ee_cmd, cfg, z0)
            if out is not None:
                found.append(out)
        if found:
            found.sort(key=lambda o: o[1])
            best = found[0]
            for other in found[1:]:
                if other[1] > best[1] + 1e-9:
                    break
                a = np.concatenate([best[0].state.x_go.as_array(), best[0].state.x_eo.as_array()])
                b = np.concatenate([other[0].state.x_go.as_array(), other[0].state.x_eo.as_array()])
                if np.abs(a - b).max() > cfg.ambiguity_tol:
                    raise NoConsistentMode("two consistent mode assignments with equal force norm "
                                           "lead to different states")
            return best[0]
    raise NoConsistentMode(f"no consistent contact mode among {len(cands)} candidate contacts")


# Rollouts

@dataclass
class StepLog:
    k: int
    x_ee: Pose2
    x_go: Pose2
    x_eo: Pose2
    w_ext: Wrench2
    x_go_meas: Pose2
    w_meas: Wrench2
    contacts: list          # (body_a, body_b, mode, f_t, f_n, x, y, n_x, n_y)
    noise: np.ndarray
    clipped: bool = False

    def object_force(self):
        """Force at the grasped-extrinsic contact, zero if separated."""
        for c in self.contacts:
            if c[1] == "eo":
                return np.array([c[3], c[4]])
        return np.zeros(2)

    def ground_force(self, body="go"):
        for c in self.contacts:
            if c[0] == body and c[1] == "ground":
                return np.array([c[3], c[4]])
        return np.zeros(2)


@dataclass
class Trajectory:
    steps: list = field(default_factory=list)
    failed_at: Optional[int] = None
    error: str = ""

    def __len__(self):
        return len(self.steps)


def measure(scene: SceneConfig, res: StepResult, rng: np.random.Generator):
    """Noisy sensing of the grasped-object pose and gripper wrench."""
    draw = rng.standard_normal(6)
    nz = scene.noise
    s = np.array([nz.pose_sigma_m, nz.pose_sigma_m, nz.angle_sigma_rad] + [nz.wrench_sigma_N] * 3)
    noise = draw * s
    x = res.state.x_go.as_array() + noise[:3]
    w = res.w_ext.as_array() + noise[3:]
    return Pose2(x[0], x[1], x[2]), Wrench2.from_array(w), noise


def _clip_step(scene, prev: Pose2, cmd: Pose2) -> tuple[Pose2, bool]:
    d = cmd.position - prev.position
    dth = wrap_angle(cmd.theta - prev.theta)
    n = float(np.linalg.norm(d))
    clipped = False
    if n > scene.step_translation_m:
        d = d * (scene.step_translation_m / n)
        clipped = True
    if abs(dth) > scene.step_rotation_rad:
        dth = np.sign(dth) * scene.step_rotation_rad
        clipped = True
    return Pose2(prev.x + d[0], prev.y + d[1], prev.theta + dth), clipped


def substeps(scene, prev: Pose2, cmd: Pose2) -> list:
    """Split a command into equal pieces that each respect the step bound."""
    d = cmd.position - prev.position
    dth = wrap_angle(cmd.theta - prev.theta)
    n = max(1, math.ceil(max(float(np.linalg.norm(d)) / scene.step_translation_m,
                             abs(dth) / scene.step_rotation_rad) - 1e-9))
    return [Pose2(prev.x + d[0] * i / n, prev.y + d[1] * i / n, prev.theta + dth * i / n) for i in range(1, n + 1)]


def rollout(scene: SceneConfig, ee_commands, initial: SceneState, controller=None, seed: Optional[int] = None,
            config: SimConfig | None = None, split: bool = True) -> Trajectory:
    """Apply commands step by step.

    With a controller, the command at step k is controller.command(k, nominal,
    last measurement) and is clipped to the quasi-static step bound.  Without
    one, a command beyond the bound is applied in equal sub-steps (`split`),
    and only the final sub-step is logged.  A failed step ends the rollout;
    the log keeps the steps done so far.
    """
    if len(ee_commands) < 1:
        raise ValueError("rollout needs at least one command")
    rng = np.random.default_rng(scene.noise.seed if seed is None else seed)
    traj = Trajectory()
    state = initial
    meas = None
    if controller is not None:
        controller.reset()
    for k, nominal in enumerate(ee_commands):
        cmd, clipped = nominal, False
        if controller is not None:
            cmd = controller.command(k, nominal, meas)
            cmd, clipped = _clip_step(scene, state.x_ee, cmd)
        pieces = substeps(scene, state.x_ee, cmd) if split and controller is None else [cmd]
        try:
            res = None
            for piece in pieces:
                res = step(scene, state if res is None else res.state, piece, config)
        except (NoConsistentMode, QuasiStaticViolation) as exc:
            traj.failed_at = k
            traj.error = f"step {k}: {exc}"
            return traj
        x_meas, w_meas, noise = measure(scene, res, rng)
        meas = (x_meas, w_meas)
        rows = []
        for c, m, f in zip(res.contacts, res.modes, res.forces):
            rows.append((c.body_a, c.body_b, str(ContactMode(m).value), f.f_t, f.f_n,
                         float(c.cp.point[0]), float(c.cp.point[1]),
                         float(c.cp.normal[0]), float(c.cp.normal[1])))
        traj.steps.append(StepLog(k, res.state.x_ee, res.state.x_go, res.state.x_eo, res.w_ext, x_meas, w_meas,
                                  rows, noise, clipped))
        state = res.state
    return traj


def synth_edge_cloud(scene: SceneConfig, state: SceneState, n_points: int, seed: int = 0,
                     sigma: Optional[float] = None, edges=None) -> EdgePointCloud:
    """Points sampled uniformly by length on the sensor-contacted grasped-object edges."""
    shape = scene.grasped.shape
    if edges is None:
        edges = [e for e in range(len(shape)) if abs(shape.edge_normal(e)[0]) > 0.7] or list(range(len(shape)))
    sigma = scene.noise.pose_sigma_m if sigma is None else sigma
    rng = np.random.default_rng(seed)
    if n_points <= 0:
        return EdgePointCloud(np.zeros((0, 2)))
    lengths = np.array([shape.edge_length(e) for e in edges])
    which = rng.choice(len(edges), size=n_points, p=lengths / lengths.sum())
    t = rng.uniform(0.0, 1.0, n_points)
    pts = []
    for e_idx, ti in zip(which, t):
        a, b = shape.edge(edges[e_idx])
        pts.append(state.x_go.transform_point(a + ti * (b - a)))
    pts = np.array(pts) + sigma * rng.standard_normal((n_points, 2))
    return EdgePointCloud(pts)
