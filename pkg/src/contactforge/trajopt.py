"""Trajectory optimization through the mode-fixed contact programs.

Per step k the planner's variables are the arc length s_k of the grasped
object's contact vertex along the scheduled extrinsic edge, the grasped-object
angle theta_k (unless the skill pins it) and the gripper wrench w_k in the
grasped-object frame.  Together they determine x_go,k (vertex on the edge) and
x_ee,k = x_go,k composed with the deflection K^-1 w_k, so they span the same
trajectories as (x_ee, x_go) restricted to the scheduled contact.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .compliance import deflection_from_wrench, ee_from_deflection
from .contact import (Contact, ContactModelConfig, SceneState, assemble_p1, assemble_p2,
                      program_tangent)
from .errors import InfeasibleInit, NoContactPlacement, PenetrationInLoss
from .geometry import ContactPoint, Pose2, Wrench2, rot, signed_gap_batch, wrap_angle
from .qp import QpConfig, QueryCounter, differentiate, solve_batch
from .scene import SceneConfig
from .skills import SkillSpec

S_UNIT = 0.01       # metres per optimizer unit of arc length
ZERO_FORCE = 1e-6   # forces below this (solver round-off) count as zero in the cone term
TH_UNIT = 0.1       # radians per optimizer unit of angle


@dataclass
class LossWeights:
    cone: float = 1.0
    smooth: float = 1.0
    force: float = 1.0
    pen: float = 1.0
    # squared balance slack of the planning programs
    balance: float = 100.0

    def __post_init__(self):
        if min(self.cone, self.smooth, self.force, self.pen, self.balance) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class OptimizerConfig:
    method: str = "grad"            # grad | mppi | icem
    iterations: int = 100
    samples: int = 1
    step_size: float = 0.1          # first gradient step length (optimizer units)
    backtrack: float = 0.5
    max_halvings: int = 20
    memory: int = 8
    sigma: float = 0.3              # sampler noise (optimizer units)
    temperature: Optional[float] = None
    elite_frac: float = 0.3
    decay: float = 0.9
    seed: int = 0
    slack_weight: float = 1e4

    @property
    def budget(self) -> int:
        return self.iterations * self.samples


@dataclass
class DecisionVariables:
    x_ee: list
    x_go: list


@dataclass
class LossBreakdown:
    total: float
    cone: float
    smooth: float
    force: float
    pen: float
    balance: float = 0.0

    def as_dict(self) -> dict:
        return {k: float(v) for k, v in self.__dict__.items()}


@dataclass
class Plan:
    skill: SkillSpec
    variables: DecisionVariables
    params: np.ndarray
    wrenches: np.ndarray            # (K, 3) object-frame gripper wrenches
    forces: np.ndarray              # (K, 2) planned object-contact forces (f_t, f_n)
    loss: LossBreakdown
    history: list = field(default_factory=list)
    queries: int = 0
    method: str = "grad"
    seconds: float = 0.0

    def commands(self) -> list:
        return list(self.variables.x_ee)

    def initial_state(self) -> SceneState:
        k = 0
        x_eo = self.skill.desired[0] if self.skill.program == "p1" else Pose2()
        return SceneState(self.variables.x_ee[k], self.variables.x_go[k], x_eo)


# Loss

def _cone_term(f):
    norm = math.hypot(f[0], f[1])
    if norm < ZERO_FORCE:
        return 0.0, np.zeros(2)
    u = 1.0 - f[1] / norm
    # d(f_n/|f|)/df = (-f_t f_n, f_t^2) / |f|^3
    dratio = np.array([-f[0] * f[1], f[0] * f[0]]) / norm ** 3
    return u * u, -2.0 * u * dratio


def _pen_term(phi):
    if phi >= 0:
        raise PenetrationInLoss(f"gap {phi:.3e} is not negative")
    u = -0.1 * math.log(-phi)
    return u * u, 2.0 * u * (-0.1 / phi)


def loss_total(variables: DecisionVariables, skill: SkillSpec, forces, gaps,
               weights: LossWeights | None = None, slack=None) -> LossBreakdown:
    """Weighted sum of the cone, smoothness, contact-force and penetration terms.

    `forces` are the object-contact forces (f_t, f_n) per step, `gaps` the
    penetration gaps phi_k (must be negative), `slack` optional balance slack
    vectors per step.
    """
    wts = weights or LossWeights()
    K = len(forces)
    f_des = np.asarray(skill.f_des)
    cone = sum(_cone_term(np.asarray(f))[0] for f in forces) / K
    force = sum(float(np.sum((np.asarray(f) - f_des) ** 2)) for f in forces) / K
    pen = sum(_pen_term(float(p))[0] for p in gaps) / K
    xs = [x.as_array() for x in variables.x_go]
    smooth = 0.0
    for a, b in zip(xs[:-1], xs[1:]):
        d = b - a
        d[2] = wrap_angle(d[2])
        smooth += float(d @ d)
    smooth /= max(K - 1, 1)
    bal = 0.0 if slack is None else sum(float(np.sum(np.asarray(s) ** 2)) for s in slack) / K
    total = wts.cone * cone + wts.smooth * smooth + wts.force * force + wts.pen * pen + wts.balance * bal
    return LossBreakdown(total, cone, smooth, force, pen, bal)


# Skill problems

class SkillProblem:
    """Maps a flat optimizer vector to per-step programs, loss and gradient."""

    def __init__(self, skill: SkillSpec, scene: SceneConfig, weights: LossWeights | None = None,
                 config: OptimizerConfig | None = None, qp: QpConfig | None = None):
        self.skill, self.scene = skill, scene
        self.weights = weights or LossWeights()
        cfg = config or OptimizerConfig()
        self.p1 = skill.program == "p1"
        if self.p1 and scene.extrinsic is None:
            raise InfeasibleInit(f"{skill.kind} needs an extrinsic object in the scene")
        self.K = skill.steps
        self.go = scene.grasped
        self.v = self.go.shape.vertices[skill.go_vertex]
        self.free_theta = self.p1 and skill.go_angles is None
        self.nper = (1 + int(self.free_theta) + 3) if self.p1 else 3
        self.model_cfg = ContactModelConfig(relax_object_cone=True, balance_slack=cfg.slack_weight,
                                            qp=qp or QpConfig())
        self.bodies = scene.bodies
        # torque is optimized in units of N times the grasped object's gyration radius
        self.w_unit = np.array([1.0, 1.0, self.go.gyration_radius])
        if self.p1:
            eo = scene.extrinsic.shape
            self.edge_a, self.edge_b = eo.edge(skill.eo_edge)
            self.edge_len = eo.edge_length(skill.eo_edge)
            self.edge_u = (self.edge_b - self.edge_a) / self.edge_len
            self.n_body = eo.edge_normal(skill.eo_edge)
            # a sticking object contact keeps its material point: s repeats the previous step's value
            anchor = []
            for k, m in enumerate(skill.object_modes):
                anchor.append(anchor[-1] if k > 0 and m == "stick" else k)
            self.anchor = np.array(anchor)
            self._eo_R = np.array([x.rotation() for x in skill.desired])
            self._eo_t = np.array([x.position for x in skill.desired])
            self._eo_verts = np.array([eo.world_vertices(x) for x in skill.desired])

    # packing

    def pack(self, s, theta, w) -> np.ndarray:
        cols = []
        if self.p1:
            cols.append(np.asarray(s) / S_UNIT)
            if self.free_theta:
                cols.append(np.asarray(theta) / TH_UNIT)
        cols.extend((np.asarray(w, dtype=float) / self.w_unit).T)
        return np.column_stack(cols).ravel()

    def unpack(self, xi):
        X = np.asarray(xi, dtype=float).reshape(self.K, self.nper)
        if not self.p1:
            return None, np.array([p.theta for p in self.skill.desired]), X[:, 0:3] * self.w_unit
        s = X[self.anchor, 0] * S_UNIT
        if self.free_theta:
            theta = X[:, 1] * TH_UNIT
            w = X[:, 2:5] * self.w_unit
        else:
            theta = np.asarray(self.skill.go_angles, dtype=float)
            w = X[:, 1:4] * self.w_unit
        return s, theta, w

    def scale_vector(self) -> np.ndarray:
        wu = list(self.w_unit)
        per = ([S_UNIT] + ([TH_UNIT] if self.free_theta else []) + wu) if self.p1 else wu
        return np.tile(per, self.K)

    # geometry

    def contact_point(self, k, s):
        x_eo = self.skill.desired[k]
        return x_eo.transform_point(self.edge_a + s * self.edge_u)

    def go_pose(self, k, s, theta) -> Pose2:
        if not self.p1:
            return self.skill.desired[k]
        p = self.contact_point(k, s)
        pos = p - rot(theta) @ self.v
        return Pose2(pos[0], pos[1], theta)

    def gaps(self, s, theta) -> np.ndarray:
        """Penetration gaps phi_k (negative clearance) for all steps, excluding the maintained vertex."""
        sk = self.skill
        th = np.asarray(theta, dtype=float)
        c, sn = np.cos(th), np.sin(th)
        R = np.stack([np.stack([c, -sn], -1), np.stack([sn, c], -1)], -2)
        if self.p1:
            p = self.edge_a + np.asarray(s, dtype=float)[:, None] * self.edge_u
            anchor = np.einsum("kij,kj->ki", self._eo_R, p) + self._eo_t
            verts = anchor[:, None, :] + np.einsum("kij,nj->kni", R, self.go.shape.vertices - self.v)
        else:
            pos = np.array([[x.x, x.y] for x in sk.desired])
            verts = pos[:, None, :] + np.einsum("kij,nj->kni", R, self.go.shape.vertices)
        heights = verts[..., 1] - self.scene.ground_y
        if not self.p1:
            return -np.delete(heights, sk.go_vertex, axis=1).min(axis=1)
        keep = [i for i in range(len(self.go.shape)) if i != sk.go_vertex]
        obj = signed_gap_batch(verts, self._eo_verts, keep_a=keep)
        return np.maximum(-heights.min(axis=1), obj)

    def gap(self, k, s=None, theta=None) -> float:
        """Gap at a single step."""
        s_arr = np.zeros(self.K) if s is None else np.full(self.K, s)
        return float(self.gaps(s_arr, np.full(self.K, theta))[k])

    def geometry_ok(self, xi) -> bool:
        s, theta, _ = self.unpack(xi)
        if self.p1 and (s.min() <= 0.0 or s.max() >= self.edge_len):
            return False
        try:
            return bool(np.all(self.gaps(s, theta) < 0))
        except Exception:
            return False

    # programs

    def programs(self, xi):
        s, theta, w = self.unpack(xi)
        sc = self.scene
        fr = sc.friction
        out = []
        for k in range(self.K):
            x_go = self.go_pose(k, None if s is None else s[k], theta[k])
            contacts, modes = [], []
            if self.p1:
                x_eo = self.skill.desired[k]
                for v, m in zip(self.skill.ground_vertices, self.skill.ground_modes[k]):
                    vb = sc.extrinsic.shape.vertices[v]
                    p = x_eo.transform_point(vb)
                    cp = ContactPoint(p, np.array([0.0, 1.0]), vb.copy(), np.array([p[0], sc.ground_y]), "a", v)
                    contacts.append(Contact(cp, "eo", "ground", fr.ground_extrinsic))
                    modes.append(m)
                p = self.contact_point(k, s[k])
                n = x_eo.rotation() @ self.n_body
                cp = ContactPoint(p, n, self.v.copy(), self.edge_a + s[k] * self.edge_u, "a",
                                  self.skill.go_vertex, self.skill.eo_edge)
                contacts.append(Contact(cp, "go", "eo", fr.grasped_extrinsic, role="object"))
                modes.append(self.skill.object_modes[k])
                state = SceneState(x_go, x_go, x_eo)
                prog = assemble_p1(state, contacts, modes, Wrench2.from_array(w[k]), self.bodies, self.model_cfg)
            else:
                for v, m in zip(self.skill.ground_vertices, self.skill.ground_modes[k]):
                    vb = self.go.shape.vertices[v]
                    p = x_go.transform_point(vb)
                    cp = ContactPoint(p, np.array([0.0, 1.0]), vb.copy(), np.array([p[0], sc.ground_y]), "a", v)
                    contacts.append(Contact(cp, "go", "ground", fr.ground_grasped))
                    modes.append(m)
                state = SceneState(x_go, x_go)
                prog = assemble_p2(state, contacts, modes, Wrench2.from_array(w[k]), self.bodies, self.model_cfg)
            out.append((prog, state))
        return out

    def object_index(self, prog) -> int:
        """Index of the contact whose force the loss tracks."""
        if self.p1:
            return len(prog.contacts) - 1
        return 0

    # evaluation

    def evaluate_batch(self, xis, counter: QueryCounter | None = None, grad: bool = False,
                       check_geometry: bool = True):
        """Loss (and gradient) for several vectors; one planner query per vector."""
        built = [self.programs(xi) for xi in xis]
        flat = [prog.problem for progs in built for prog, _ in progs]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            sols = solve_batch(flat, self.model_cfg.qp, counter, queries=len(xis))
        out = []
        for j, xi in enumerate(xis):
            sj = sols[j * self.K:(j + 1) * self.K]
            ok = all(s.optimal for s in sj) and (not check_geometry or self.geometry_ok(xi))
            if not ok:
                out.append((math.inf, None, None, None))
                continue
            out.append(self._loss_and_grad(xi, built[j], sj, grad))
        return out

    def _loss_and_grad(self, xi, progs, sols, grad):
        wts = self.weights
        K = self.K
        s, theta, w = self.unpack(xi)
        f_des = np.asarray(self.skill.f_des)
        forces = np.zeros((K, 2))
        slack = []
        dz = []
        for k, ((prog, state), sol) in enumerate(zip(progs, sols)):
            i = self.object_index(prog)
            off = prog.offsets[i]
            f = sol.z[off:off + 2] if off is not None else np.zeros(2)
            forces[k] = f
            sl = sol.z[prog.slack_offset:prog.slack_offset + prog.n_slack]
            slack.append(sl)
            if grad:
                g = np.zeros_like(sol.z)
                if off is not None:
                    g[off:off + 2] += wts.cone * _cone_term(f)[1] / K + wts.force * 2.0 * (f - f_des) / K
                g[prog.slack_offset:prog.slack_offset + prog.n_slack] += wts.balance * 2.0 * sl / K
                dz.append(g)
        x_go = [self.go_pose(k, None if s is None else s[k], theta[k]) for k in range(K)]
        gaps = list(self.gaps(s, theta))
        x_ee = [ee_from_deflection(x_go[k], deflection_from_wrench(self.scene.model, w[k]), self.scene.grasp)
                for k in range(K)]
        bd = loss_total(DecisionVariables(x_ee, x_go), self.skill, forces, gaps, wts, slack)
        info = {"forces": forces, "x_go": x_go, "x_ee": x_ee, "w": w, "gaps": gaps, "sols": sols}
        if not grad:
            return bd.total, None, bd, info
        G = np.zeros((K, self.nper))
        for k, ((prog, state), sol) in enumerate(zip(progs, sols)):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                sens = differentiate(prog.problem, sol, dz[k], self.model_cfg.qp)
            w_k = Wrench2.from_array(w[k])
            for col, (d_pose, d_pts, d_w) in self._directions(k, prog, state, s, theta):
                dA, db = program_tangent(prog, state, w_k, self.bodies, d_pose, d_pts, None, d_w)
                G[k, col] += float(np.sum(sens.A * dA) + sens.b @ db)
        if self.p1:
            self._geometry_grad(G, s, theta, x_go, gaps)
            gs = np.zeros(K)
            np.add.at(gs, self.anchor, G[:, 0])
            G[:, 0] = gs
        G *= self.scale_vector().reshape(K, self.nper)
        return bd.total, G.ravel(), bd, info

    def _directions(self, k, prog, state, s, theta):
        """(column, pose tangent, contact-point tangents, wrench tangent) per variable."""
        nc = len(prog.contacts)
        col = 0
        if self.p1:
            du = self.skill.desired[k].rotation() @ self.edge_u
            pts = [np.zeros(2)] * (nc - 1) + [du]
            yield col, ({"go": np.array([du[0], du[1], 0.0])}, pts, None)
            col += 1
            if self.free_theta:
                rv = rot(theta[k]) @ self.v
                yield col, ({"go": np.array([rv[1], -rv[0], 1.0])}, None, None)
                col += 1
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1.0
            yield col + i, ({}, None, e)

    def _geometry_grad(self, G, s, theta, x_go, gaps):
        """Smoothness and penetration terms, which depend on the pose directly."""
        wts = self.weights
        K = self.K
        xs = [x.as_array() for x in x_go]
        dsm = np.zeros((K, 3))
        for k in range(K - 1):
            d = xs[k + 1] - xs[k]
            d[2] = wrap_angle(d[2])
            dsm[k + 1] += 2.0 * d / max(K - 1, 1)
            dsm[k] -= 2.0 * d / max(K - 1, 1)
        h = 1e-7
        dpen = np.array([_pen_term(g)[1] for g in gaps]) / K
        dphi_ds = (self.gaps(s + h, theta) - self.gaps(s - h, theta)) / (2 * h)
        if self.free_theta:
            dphi_dth = (self.gaps(s, theta + h) - self.gaps(s, theta - h)) / (2 * h)
        for k in range(K):
            du = self.skill.desired[k].rotation() @ self.edge_u
            dx_ds = np.array([du[0], du[1], 0.0])
            G[k, 0] += wts.smooth * float(dsm[k] @ dx_ds) + wts.pen * dpen[k] * dphi_ds[k]
            if self.free_theta:
                rv = rot(theta[k]) @ self.v
                dx_dth = np.array([rv[1], -rv[0], 1.0])
                G[k, 1] += wts.smooth * float(dsm[k] @ dx_dth) + wts.pen * dpen[k] * dphi_dth[k]

    def loss(self, xi) -> float:
        return self.evaluate_batch([xi])[0][0]

    def loss_and_grad(self, xi):
        f, g, bd, info = self.evaluate_batch([xi], grad=True)[0]
        return f, g


# Initialization

def init_trajectory(skill: SkillSpec, scene: SceneConfig, problem: SkillProblem | None = None):
    """Contact-maintaining grasped-object poses with zero gripper deflection."""
    prob = problem or SkillProblem(skill, scene)
    K = skill.steps
    if prob.p1:
        s = np.asarray(skill.arc_length, dtype=float)
        theta = np.asarray(skill.go_angles if skill.go_angles is not None else
                           (skill.go_angle_init or [0.0] * K), dtype=float)
    else:
        s = None
        theta = np.array([p.theta for p in skill.desired])
    w = np.zeros((K, 3))
    xi = prob.pack(s if s is not None else np.zeros(K), theta, w)
    try:
        phi = prob.gaps(s if s is not None else np.zeros(K), theta)
    except Exception:
        phi = np.ones(K)
    bad = np.flatnonzero(~(phi < 0))
    if bad.size:
        raise NoContactPlacement(f"step {bad[0]}: the grasped object penetrates at its scheduled placement")
    x_go = [prob.go_pose(k, None if s is None else s[k], theta[k]) for k in range(K)]
    x_ee = [ee_from_deflection(x, np.zeros(3), scene.grasp) for x in x_go]
    return DecisionVariables(x_ee, x_go), xi


# Optimizers

def _lbfgs_direction(g, mem):
    q = g.copy()
    alphas = []
    for s, y in reversed(mem):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append((a, rho, s, y))
        q -= a * y
    if mem:
        s, y = mem[-1]
        q *= (s @ y) / (y @ y)
    for a, rho, s, y in reversed(alphas):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def optimize_gradient(problem: SkillProblem, init, config: OptimizerConfig | None = None) -> Plan:
    """Quasi-Newton descent with backtracking; every loss evaluation is one query."""
    cfg = config or OptimizerConfig()
    budget = cfg.budget
    counter = QueryCounter()
    t0 = time.perf_counter()
    x = np.array(init, dtype=float)
    if not problem.geometry_ok(x):
        raise InfeasibleInit("initial trajectory penetrates")
    f, g, bd, info = problem.evaluate_batch([x], counter, grad=True)[0]
    if not math.isfinite(f):
        raise InfeasibleInit("initial programs are infeasible")
    best = (f, x, bd, info)
    history = [f]
    mem = []
    idle = 0
    while counter.queries < budget and idle < 3:
        d = _lbfgs_direction(g, mem)
        if not g @ d < 0:
            mem.clear()
            d = -g
        gn = np.linalg.norm(d)
        if gn == 0:
            break
        step = 1.0 if mem else min(1.0, cfg.step_size / gn)
        accepted = False
        used = counter.queries
        for _ in range(cfg.max_halvings + 1):
            xt = x + step * d
            if not problem.geometry_ok(xt):
                step *= cfg.backtrack
                continue
            if counter.queries >= budget:
                break
            ft, gt, bdt, infot = problem.evaluate_batch([xt], counter, grad=True)[0]
            if ft < best[0]:
                best = (ft, xt, bdt, infot)
            history.append(best[0])
            if math.isfinite(ft) and ft <= f + 1e-4 * step * float(g @ d):
                accepted = True
                break
            step *= cfg.backtrack
        idle = idle + 1 if counter.queries == used else 0
        if not accepted:
            mem.clear()
            continue
        sv, yv = xt - x, gt - g
        if sv @ yv > 1e-12 * (sv @ sv):
            mem.append((sv, yv))
            if len(mem) > cfg.memory:
                mem.pop(0)
        x, f, g = xt, ft, gt
    return _make_plan(problem, best, history, counter.queries, "grad", time.perf_counter() - t0)


def _sample_losses(problem, X, counter):
    res = problem.evaluate_batch(list(X), counter)
    return np.array([r[0] for r in res]), res


def optimize_mppi(problem: SkillProblem, init, config: OptimizerConfig | None = None) -> Plan:
    """Path-integral update of a nominal trajectory; sample 0 is the nominal itself."""
    cfg = config or OptimizerConfig(method="mppi", iterations=1, samples=100)
    rng = np.random.default_rng(cfg.seed)
    counter = QueryCounter()
    t0 = time.perf_counter()
    nominal = np.array(init, dtype=float)
    T = cfg.temperature
    best = (math.inf, nominal, None, None)
    history = []
    for _ in range(cfg.iterations):
        eps = rng.standard_normal((cfg.samples, nominal.size)) * cfg.sigma
        eps[0] = 0.0
        X = nominal + eps
        L, res = _sample_losses(problem, X, counter)
        finite = np.isfinite(L)
        if T is None:
            ref = L[0] if finite[0] else (np.median(L[finite]) if finite.any() else 1.0)
            T = 0.1 * ref if ref > 0 else 1.0
        for j in range(len(L)):
            if L[j] < best[0]:
                best = (L[j], X[j], res[j][2], res[j][3])
            history.append(best[0])
        if not finite.any():
            continue
        wts = np.zeros(len(L))
        wts[finite] = np.exp(-(L[finite] - L[finite].min()) / T)
        wts /= wts.sum()
        nominal = nominal + wts @ eps
    if not math.isfinite(best[0]):
        raise InfeasibleInit("no sampled trajectory was feasible")
    return _make_plan(problem, best, history, counter.queries, "mppi", time.perf_counter() - t0)


def icem_update(X, L, std, n_elite: int, decay: float):
    """Refit mean and spread to the n_elite lowest-loss samples (spread never grows)."""
    order = np.argsort(np.where(np.isfinite(L), L, np.inf), kind="stable")
    elites = X[order[:n_elite]]
    spread = elites.std(axis=0) if n_elite > 1 else std
    return elites.mean(axis=0), np.minimum(std, decay * 0.5 * (std + spread))


def optimize_icem(problem: SkillProblem, init, config: OptimizerConfig | None = None) -> Plan:
    """Cross-entropy search with elite refit and decaying sampling spread."""
    cfg = config or OptimizerConfig(method="icem", iterations=10, samples=10)
    rng = np.random.default_rng(cfg.seed)
    counter = QueryCounter()
    t0 = time.perf_counter()
    mean = np.array(init, dtype=float)
    std = np.full(mean.size, cfg.sigma)
    n_elite = max(1, int(math.ceil(cfg.elite_frac * cfg.samples)))
    best = (math.inf, mean, None, None)
    history = []
    for _ in range(cfg.iterations):
        X = mean + rng.standard_normal((cfg.samples, mean.size)) * std
        X[0] = mean
        L, res = _sample_losses(problem, X, counter)
        for j in range(len(L)):
            if L[j] < best[0]:
                best = (L[j], X[j], res[j][2], res[j][3])
            history.append(best[0])
        mean, std = icem_update(X, L, std, n_elite, cfg.decay)
    if not math.isfinite(best[0]):
        raise InfeasibleInit("no sampled trajectory was feasible")
    return _make_plan(problem, best, history, counter.queries, "icem", time.perf_counter() - t0)


def _make_plan(problem, best, history, queries, method, seconds) -> Plan:
    f, x, bd, info = best
    if info is None:
        f, _, bd, info = problem.evaluate_batch([x])[0]
    vars_ = DecisionVariables(info["x_ee"], info["x_go"])
    return Plan(problem.skill, vars_, np.array(x), np.array(info["w"]), np.array(info["forces"]), bd,
                history, queries, method, seconds)


OPTIMIZERS = {"grad": optimize_gradient, "mppi": optimize_mppi, "icem": optimize_icem}


def plan_skill(skill: SkillSpec, scene: SceneConfig, config: OptimizerConfig | None = None,
               weights: LossWeights | None = None) -> Plan:
    cfg = config or OptimizerConfig()
    problem = SkillProblem(skill, scene, weights, cfg)
    _, xi = init_trajectory(skill, scene, problem)
    return OPTIMIZERS[cfg.method](problem, xi, cfg)


@dataclass
class ConvergenceThresholds:
    balance: float = 1e-3           # balance loss term (mean squared scaled slack)
    cone_abs_N: float = 1e-6        # allowed |f_t| - mu f_n excess ...
    cone_rel: float = 1e-3          # ... plus this fraction of f_n


def plan_converged(plan: Plan, scene: SceneConfig, thresholds: ConvergenceThresholds | None = None) -> list[str]:
    """Reasons the plan misses the thresholds; empty when converged."""
    thr = thresholds or ConvergenceThresholds()
    reasons = []
    if not math.isfinite(plan.loss.total):
        reasons.append("loss is not finite")
    if plan.loss.balance > thr.balance:
        reasons.append(f"balance term {plan.loss.balance:.3g} > {thr.balance:.3g}")
    skill = plan.skill
    if skill.program == "p1":
        mu = scene.friction.between("go", "eo")
        for k in range(skill.steps):
            f_t, f_n = plan.forces[k]
            excess = abs(f_t) - mu * f_n
            if f_n < -thr.cone_abs_N or excess > thr.cone_abs_N + thr.cone_rel * abs(f_n):
                reasons.append(f"step {k}: object force ({f_t:.4g}, {f_n:.4g}) N outside the friction cone")
                break
    return reasons
