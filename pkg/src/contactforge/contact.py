"""Mode-fixed quasi-static equilibrium programs for grasped and extrinsic objects.

Given the scene poses, the active contacts and one contact mode per contact,
the contact forces are the minimum-norm solution of a QP whose equality rows
are the force balances and whose inequality rows are the Coulomb conditions
implied by the modes.  Both the simulator and the planner build their programs
through this module.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyContactSet, GeometryMismatch
from .geometry import (BodyParams, ContactPoint, PolygonShape, Pose2, Wrench2,
                       contact_jacobian, cross2, rot)
from .qp import QpConfig, QpProblem, QpSolution, solve, solve_batch


class ContactMode(str, enum.Enum):
    STICKING = "stick"
    SLIDING_POSITIVE = "slide+"
    SLIDING_NEGATIVE = "slide-"
    SEPARATED = "sep"

    @property
    def sliding(self) -> bool:
        return self in (ContactMode.SLIDING_POSITIVE, ContactMode.SLIDING_NEGATIVE)


@dataclass(frozen=True)
class ContactForce:
    f_t: float = 0.0
    f_n: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.f_t, self.f_n])


@dataclass(frozen=True, eq=False)
class RigidBody:
    shape: PolygonShape
    params: BodyParams

    @property
    def gyration_radius(self) -> float:
        return self.shape.radius_of_gyration(self.params.com)


@dataclass(frozen=True, eq=False)
class Contact:
    """Contact between body_a ("go"/"eo") and body_b ("eo", "ground" or "env")."""

    cp: ContactPoint
    body_a: str
    body_b: str
    mu: float
    role: str = "ground"


@dataclass(frozen=True)
class SceneState:
    x_ee: Pose2
    x_go: Pose2
    x_eo: Pose2 = Pose2()

    def pose(self, body: str) -> Pose2:
        return {"go": self.x_go, "eo": self.x_eo}[body]


@dataclass
class ContactModelConfig:
    U: np.ndarray = field(default_factory=lambda: np.eye(2))
    relax_object_cone: bool = False
    # weight of a quadratic penalty on balance slack; None keeps balances exact
    balance_slack: Optional[float] = None
    scale_torque: bool = True
    qp: QpConfig = field(default_factory=QpConfig)
    tol: float = 1e-5


@dataclass(eq=False)
class ContactProgram:
    problem: QpProblem
    contacts: list
    modes: list
    offsets: list            # variable offset per contact, None when separated
    balance_bodies: list     # body name per 3-row balance block
    row_scale: np.ndarray    # divisor applied to each balance row
    n_force: int
    slack_offset: int
    n_slack: int


def grasp_wrench_world(w_ext, x_go: Pose2, go: BodyParams) -> np.ndarray:
    """Object-frame gripper wrench expressed in the world about the object CoM."""
    w = w_ext.as_array() if isinstance(w_ext, Wrench2) else np.asarray(w_ext, dtype=float)
    R = rot(x_go.theta)
    f = R @ w[:2]
    arm = x_go.position - go.com_world(x_go)
    return np.array([f[0], f[1], w[2] + cross2(arm, f)])


def grasp_wrench_local(w_world, x_go: Pose2, go: BodyParams) -> np.ndarray:
    """Inverse of grasp_wrench_world."""
    w = np.asarray(w_world, dtype=float)
    arm = x_go.position - go.com_world(x_go)
    tau = w[2] - cross2(arm, w[:2])
    f = rot(x_go.theta).T @ w[:2]
    return np.array([f[0], f[1], tau])


def mode_rows(mode: ContactMode, mu: float, relaxed: bool):
    """Coulomb rows on (f_t, f_n): equality rows (c . f = 0) and inequality rows (g . f <= 0)."""
    plus = np.array([1.0, mu])    # mu f_n + f_t
    minus = np.array([-1.0, mu])  # mu f_n - f_t
    eq, ineq = [], []
    if mode == ContactMode.STICKING:
        if not relaxed:
            ineq += [-plus, -minus]
    elif mode == ContactMode.SLIDING_POSITIVE:
        eq.append(plus)
        if not relaxed:
            ineq.append(-minus)
    elif mode == ContactMode.SLIDING_NEGATIVE:
        eq.append(minus)
        if not relaxed:
            ineq.append(-plus)
    ineq.append(np.array([0.0, -1.0]))
    return eq, ineq


def balance_blocks(state: SceneState, contacts, modes, bodies: dict, movable: Sequence[str]):
    """Per-body (3 x n_force) balance matrices and the active-variable layout."""
    offsets, n = [], 0
    for c, m in zip(contacts, modes):
        if m == ContactMode.SEPARATED:
            offsets.append(None)
        else:
            offsets.append(n)
            n += 2
    blocks = {b: np.zeros((3, n)) for b in movable}
    for c, off in zip(contacts, offsets):
        if off is None:
            continue
        for body, sign in ((c.body_a, 1.0), (c.body_b, -1.0)):
            if body in blocks:
                J = contact_jacobian(state.pose(body), bodies[body].params, c.cp)
                blocks[body][:, off:off + 2] += sign * J.T
    return blocks, offsets, n


def _assemble(state, contacts, modes, w_ext, bodies, config, movable):
    contacts = list(contacts)
    modes = [ContactMode(m) for m in modes]
    if len(modes) != len(contacts):
        raise GeometryMismatch("one mode per contact required")
    for c in contacts:
        pa = state.pose(c.body_a)
        if not np.allclose(pa.transform_point(c.cp.body_a_point), c.cp.point, atol=1e-6):
            raise GeometryMismatch("contact point inconsistent with body pose")
    cfg = config or ContactModelConfig()
    blocks, offsets, n_force = balance_blocks(state, contacts, modes, bodies, movable)

    rows, rhs, scales, owners = [], [], [], []
    for body in movable:
        g = np.array([0.0, -bodies[body].params.mass * bodies[body].params.gravity, 0.0])
        ext = grasp_wrench_world(w_ext, state.x_go, bodies["go"].params) if body == "go" else np.zeros(3)
        r = bodies[body].gyration_radius if cfg.scale_torque else 1.0
        sc = np.array([1.0, 1.0, r])
        rows.append(blocks[body])
        rhs.append(-(g + ext))
        scales.append(sc)
        owners.append(body)
    n_bal = 3 * len(movable)
    n_slack = n_bal if cfg.balance_slack is not None else 0
    nv = n_force + n_slack

    if n_bal == 0:
        raise EmptyContactSet("no balance equations")
    A_bal = np.vstack(rows) / np.concatenate(scales)[:, None]
    b_bal = np.concatenate(rhs) / np.concatenate(scales)
    A_eq = np.zeros((n_bal, nv))
    A_eq[:, :n_force] = A_bal
    if n_slack:
        A_eq[:, n_force:] = np.eye(n_bal)
    b_eq = b_bal

    Q = np.zeros((nv, nv))
    G_rows, extra_eq = [], []
    for c, m, off in zip(contacts, modes, offsets):
        if off is None:
            continue
        Q[off:off + 2, off:off + 2] = cfg.U
        relaxed = cfg.relax_object_cone and c.role == "object"
        eqs, ineqs = mode_rows(m, c.mu, relaxed)
        for e in eqs:
            row = np.zeros(nv)
            row[off:off + 2] = e
            extra_eq.append(row)
        for g in ineqs:
            row = np.zeros(nv)
            row[off:off + 2] = g
            G_rows.append(row)
    if n_slack:
        Q[n_force:, n_force:] = cfg.balance_slack * np.eye(n_slack)
    if extra_eq:
        A_eq = np.vstack([A_eq, np.array(extra_eq)])
        b_eq = np.concatenate([b_eq, np.zeros(len(extra_eq))])
    G = np.array(G_rows) if G_rows else np.zeros((0, nv))
    problem = QpProblem(Q, np.zeros(nv), A_eq, b_eq, G, np.zeros(len(G)))
    return ContactProgram(problem, contacts, modes, offsets, list(movable),
                          np.concatenate(scales), n_force, n_force, n_slack)


def assemble_p1(state: SceneState, contacts, modes, w_ext, bodies: dict,
                config: ContactModelConfig | None = None) -> ContactProgram:
    """Grasped and extrinsic object balances with mode-fixed Coulomb rows."""
    if not contacts:
        raise EmptyContactSet("P1 needs at least one contact")
    return _assemble(state, contacts, modes, w_ext, bodies, config, ("eo", "go"))


def assemble_p2(state: SceneState, contacts, modes, w_ext, bodies: dict,
                config: ContactModelConfig | None = None) -> ContactProgram:
    """Grasped object against a static environment (only its own balance)."""
    return _assemble(state, contacts, modes, w_ext, bodies, config, ("go",))


def assemble_welded_p1(state, contacts, modes, w_ext, bodies, config=None) -> ContactProgram:
    """P1 with the extrinsic object rigidly attached to the world.

    The weld contributes a free, cost-less wrench on the extrinsic object, so
    its balance rows are always satisfiable.
    """
    cfg = config or ContactModelConfig()
    prog = _assemble(state, contacts, modes, w_ext, bodies, cfg, ("eo", "go"))
    p = prog.problem
    nv = p.q.size
    # append three weld variables acting only on the extrinsic-object rows
    Q = np.zeros((nv + 3, nv + 3))
    Q[:nv, :nv] = p.Q
    A = np.zeros((p.A.shape[0], nv + 3))
    A[:, :nv] = p.A
    A[0:3, nv:] = np.diag(1.0 / prog.row_scale[0:3])
    G = np.zeros((p.G.shape[0], nv + 3))
    G[:, :nv] = p.G
    prog.problem = QpProblem(Q, np.zeros(nv + 3), A, p.b, G, p.h)
    return prog


def forces_from_solution(prog: ContactProgram, sol: QpSolution) -> list[ContactForce]:
    out = []
    for off in prog.offsets:
        if off is None:
            out.append(ContactForce(0.0, 0.0))
        else:
            out.append(ContactForce(float(sol.z[off]), float(sol.z[off + 1])))
    return out


def solve_program(prog: ContactProgram, config: ContactModelConfig | None = None):
    cfg = config or ContactModelConfig()
    sol = solve(prog.problem, cfg.qp)
    return sol, forces_from_solution(prog, sol) if sol.optimal else None


def solve_contact_forces(state, contacts, modes, w_ext, bodies, config=None, program="p1"):
    """Forces for a mode assignment; returns (forces or None, solution, program)."""
    assemble = {"p1": assemble_p1, "p2": assemble_p2}[program]
    prog = assemble(state, contacts, modes, w_ext, bodies, config)
    sol, forces = solve_program(prog, config)
    return forces, sol, prog


def balance_residual(state, contacts, forces, w_ext, bodies, movable=("eo", "go")) -> dict:
    """Direct substitution of forces into each body's balance (unscaled units)."""
    modes = [ContactMode.STICKING] * len(contacts)
    blocks, offsets, n = balance_blocks(state, contacts, modes, bodies, movable)
    f = np.concatenate([fc.as_array() for fc in forces]) if forces else np.zeros(0)
    out = {}
    for body in movable:
        g = np.array([0.0, -bodies[body].params.mass * bodies[body].params.gravity, 0.0])
        ext = grasp_wrench_world(w_ext, state.x_go, bodies["go"].params) if body == "go" else 0.0
        out[body] = blocks[body] @ f + g + ext
    return out


@dataclass(frozen=True)
class ConsistencyEntry:
    mode: ContactMode
    margin: float
    passed: bool


def check_mode_consistency(forces, modes, mus, tol: float = 1e-5) -> list[ConsistencyEntry]:
    """Report whether each force is compatible with its declared mode.

    Sticking margin is mu f_n - |f_t|; for sliding it is minus the distance
    from the cone boundary; for separation minus the force magnitude.
    """
    out = []
    for f, m, mu in zip(forces, modes, mus):
        m = ContactMode(m)
        ft, fn = (f.f_t, f.f_n) if isinstance(f, ContactForce) else (float(f[0]), float(f[1]))
        if m == ContactMode.STICKING:
            margin = mu * fn - abs(ft)
            ok = margin >= -tol and fn >= -tol
        elif m == ContactMode.SEPARATED:
            margin = -float(np.hypot(ft, fn))
            ok = margin >= -tol
        else:
            sign = 1.0 if m == ContactMode.SLIDING_POSITIVE else -1.0
            boundary = mu * fn + sign * ft
            other = mu * fn - sign * ft
            margin = -abs(boundary)
            ok = abs(boundary) <= tol and fn >= -tol and other >= -tol
        out.append(ConsistencyEntry(m, float(margin), bool(ok)))
    return out


def solve_programs(programs, config: ContactModelConfig | None = None, counter=None):
    cfg = config or ContactModelConfig()
    sols = solve_batch([p.problem for p in programs], cfg.qp, counter)
    return sols


def program_tangent(prog: ContactProgram, state: SceneState, w_ext, bodies: dict, d_pose: dict,
                    d_points=None, d_angles=None, d_w=None) -> tuple[np.ndarray, np.ndarray]:
    """Directional derivative (dA, db) of an assembled program's constraint rows.

    `d_pose` maps a movable body to the derivative of its (x, y, theta);
    `d_points[i]` is the motion of contact i's point and `d_angles[i]` the
    rotation rate of its normal; `d_w` is the derivative of the object-frame
    gripper wrench.  Mode rows do not depend on the configuration.
    """
    p = prog.problem
    dA = np.zeros_like(p.A)
    db = np.zeros_like(p.b)
    n_bal = 3 * len(prog.balance_bodies)
    zero3 = np.zeros(3)
    for bi, body in enumerate(prog.balance_bodies):
        pose = state.pose(body)
        params = bodies[body].params
        dq = np.asarray(d_pose.get(body, zero3), dtype=float)
        com_arm = pose.rotation() @ np.asarray(params.com)
        dcom = dq[:2] + dq[2] * np.array([-com_arm[1], com_arm[0]])
        rows = slice(3 * bi, 3 * bi + 3)
        for i, (c, off) in enumerate(zip(prog.contacts, prog.offsets)):
            if off is None or body not in (c.body_a, c.body_b):
                continue
            sign = 1.0 if body == c.body_a else -1.0
            n = np.asarray(c.cp.normal, dtype=float)
            t = np.array([-n[1], n[0]])
            dphi = 0.0 if d_angles is None else float(d_angles[i])
            dn, dt = dphi * t, -dphi * n
            dp = np.zeros(2) if d_points is None else np.asarray(d_points[i], dtype=float)
            r = c.cp.point - params.com_world(pose)
            dr = dp - dcom
            for col, (v, dv) in enumerate(((t, dt), (n, dn))):
                dA[rows, off + col] += sign * np.array([dv[0], dv[1], cross2(dr, v) + cross2(r, dv)])
        if body == "go":
            w = w_ext.as_array() if isinstance(w_ext, Wrench2) else np.asarray(w_ext, dtype=float)
            dw = zero3 if d_w is None else np.asarray(d_w, dtype=float)
            R = pose.rotation()
            f = R @ w[:2]
            df = dq[2] * np.array([-f[1], f[0]]) + R @ dw[:2]
            com = np.asarray(params.com)
            dtau = dw[2] - cross2(com, dw[:2])
            db[rows] = -np.array([df[0], df[1], dtau])
    dA[:n_bal] /= prog.row_scale[:, None]
    db[:n_bal] /= prog.row_scale
    return dA, db
