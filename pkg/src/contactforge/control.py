"""Trajectory-execution controllers and their in-sim evaluation.

Feedback works in deflection coordinates: a wrench error becomes a deflection
correction through the model compliance, and a grasped-object pose error
shifts the reference the deflection is measured from.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .compliance import deflection_from_wrench, ee_from_deflection
from .errors import ConfigError
from .geometry import Pose2, Wrench2, wrap_angle
from .scene import SceneConfig


class ControllerKind(str, enum.Enum):
    OPEN = "open"
    CLOSED = "closed"
    PI = "pi"
    RIGID = "rigid"


@dataclass
class ControllerGains:
    k_p: float = 0.5
    k_i: float = 0.1
    clamp: tuple = (5e-3, 5e-3, 0.05)    # per-axis integral bound (m, m, rad)
    pose_weight: float = 0.05

    def __post_init__(self):
        if self.k_p < 0 or self.k_i < 0 or self.pose_weight < 0:
            raise ConfigError("controller gains must be non-negative")
        self.clamp = tuple(float(c) for c in self.clamp)
        if len(self.clamp) != 3 or min(self.clamp) < 0:
            raise ConfigError("integral clamp needs three non-negative bounds")


@dataclass
class IntegratorState:
    p: np.ndarray = field(default_factory=lambda: np.zeros(6))
    i: np.ndarray = field(default_factory=lambda: np.zeros(6))


@dataclass
class PlanStep:
    x_ee: Pose2
    x_go: Pose2
    w: Wrench2


def feedback_error(ref: PlanStep, x_go_meas: Pose2, w_meas: Wrench2, model, pose_weight: float) -> np.ndarray:
    """Six-vector (pose correction, deflection correction)."""
    dp = ref.x_go.as_array() - x_go_meas.as_array()
    dp[2] = wrap_angle(dp[2])
    dd = deflection_from_wrench(model, ref.w.as_array() - w_meas.as_array())
    return np.concatenate([pose_weight * dp, dd])


def control_step(kind, ref: PlanStep, prev_ref: Optional[PlanStep], meas, model, gains: ControllerGains,
                 state: IntegratorState, grasp: Pose2 = Pose2()) -> tuple[Pose2, IntegratorState]:
    """End-effector command for one step.

    `meas` is (x_go, w_ext) measured after the previous step, which was
    commanded against `prev_ref`; None on the first step.
    """
    kind = ControllerKind(kind)
    if kind is ControllerKind.OPEN:
        return ref.x_ee, state
    if kind is ControllerKind.RIGID:
        return ee_from_deflection(ref.x_go, np.zeros(3), grasp), state
    if kind is ControllerKind.CLOSED:
        gains = replace(gains, k_p=1.0, k_i=0.0)
    if meas is None or prev_ref is None:
        e = np.zeros(6)
    else:
        e = feedback_error(prev_ref, meas[0], meas[1], model, gains.pose_weight)
    # the measured error already reflects the last correction, so the
    # proportional part accumulates
    p = gains.k_p * (state.p + e)
    bound = np.tile(gains.clamp, 2)
    i = np.clip(state.i + e, -bound, bound)
    c = p + gains.k_i * i
    new = IntegratorState(p, i)
    if not np.any(c):
        return ref.x_ee, new
    x_ref = Pose2.from_array(ref.x_go.as_array() + c[:3])
    defl = deflection_from_wrench(model, ref.w) + c[3:]
    return ee_from_deflection(x_ref, defl, grasp), new


class Controller:
    """Stateful wrapper used by sim.rollout (reset / command)."""

    def __init__(self, kind, plan_steps: Sequence[PlanStep], model, gains: ControllerGains | None = None,
                 grasp: Pose2 = Pose2()):
        self.kind = ControllerKind(kind)
        self.steps = list(plan_steps)
        self.model = model
        self.gains = gains or ControllerGains()
        self.grasp = grasp
        self.reset()

    def reset(self):
        self.state = IntegratorState()

    def command(self, k, nominal, meas):
        prev = self.steps[k - 1] if k > 0 else None
        cmd, self.state = control_step(self.kind, self.steps[k], prev, meas, self.model, self.gains,
                                       self.state, self.grasp)
        return cmd


def plan_steps(plan) -> list:
    return [PlanStep(plan.variables.x_ee[k], plan.variables.x_go[k], Wrench2.from_array(plan.wrenches[k]))
            for k in range(len(plan.variables.x_ee))]


# Evaluation

@dataclass
class ErrorStats:
    pose_mm: tuple          # (mean, std) of the gyration-radius pose error
    wrench_N: tuple         # (mean, std) of the gyration-radius wrench error
    components: dict        # per-component (mean, std): x_mm, y_mm, theta_deg, fx_N, fy_N, tau_Nm
    per_seed: list          # dicts with the same keys for each seed
    failures: list          # (seed, step, message)

    def as_dict(self) -> dict:
        return {"pose_mm": list(self.pose_mm), "wrench_N": list(self.wrench_N),
                "components": {k: list(v) for k, v in self.components.items()},
                "per_seed": self.per_seed, "failures": [list(f) for f in self.failures]}


def _mean_std(a):
    a = np.asarray(a, dtype=float)
    return (float(a.mean()), float(a.std())) if a.size else (float("nan"), float("nan"))


def trajectory_errors(scene: SceneConfig, plan, traj) -> dict:
    """Per-step errors of a rollout against the plan.

    Pose error is taken on the skill's object (extrinsic for P1, grasped for
    P2) against its desired pose; wrench error is the true gripper wrench
    against the planned one.  Rotations are folded in through the gyration radius.
    """
    skill = plan.skill
    p1 = skill.program == "p1"
    body = scene.extrinsic if p1 else scene.grasped
    r_pose = body.gyration_radius
    r_w = scene.grasped.gyration_radius
    rows = []
    for s in traj.steps:
        x = s.x_eo if p1 else s.x_go
        d = skill.desired[s.k]
        dx, dy, dth = x.x - d.x, x.y - d.y, wrap_angle(x.theta - d.theta)
        dw = s.w_ext.as_array() - np.asarray(plan.wrenches[s.k])
        rows.append((dx, dy, dth, *dw, np.sqrt(dx * dx + dy * dy + (r_pose * dth) ** 2),
                     np.sqrt(dw[0] ** 2 + dw[1] ** 2 + (dw[2] / r_w) ** 2)))
    a = np.array(rows).reshape(-1, 8)
    return {"x_mm": np.abs(a[:, 0]) * 1e3, "y_mm": np.abs(a[:, 1]) * 1e3, "theta_deg": np.rad2deg(np.abs(a[:, 2])),
            "fx_N": np.abs(a[:, 3]), "fy_N": np.abs(a[:, 4]), "tau_Nm": np.abs(a[:, 5]),
            "pose_mm": a[:, 6] * 1e3, "wrench_N": a[:, 7]}


def evaluate_controller(scene: SceneConfig, plan, kind, gains: ControllerGains | None = None,
                        seeds: Sequence[int] = (0,), sim_config=None, logs: list | None = None) -> ErrorStats:
    """Roll the plan out under a controller for each seed and pool the step errors.

    Rollouts are appended to `logs` when a list is given.
    """
    from .sim import rollout

    ctrl = Controller(kind, plan_steps(plan), scene.model, gains, scene.grasp)
    pooled = {}
    per_seed, failures = [], []
    for seed in seeds:
        traj = rollout(scene, plan.commands(), plan.initial_state(), controller=ctrl, seed=seed,
                       config=sim_config)
        if logs is not None:
            logs.append(traj)
        if traj.failed_at is not None:
            failures.append((int(seed), int(traj.failed_at), traj.error))
        errs = trajectory_errors(scene, plan, traj)
        row = {"seed": int(seed), "steps": len(traj), "failed_at": traj.failed_at}
        for key, v in errs.items():
            pooled.setdefault(key, []).append(v)
            row[key] = float(np.mean(v)) if len(v) else float("nan")
        per_seed.append(row)
    cat = {k: np.concatenate(v) for k, v in pooled.items()}
    comp = {k: _mean_std(v) for k, v in cat.items() if k not in ("pose_mm", "wrench_N")}
    return ErrorStats(_mean_std(cat["pose_mm"]), _mean_std(cat["wrench_N"]), comp, per_seed, failures)
