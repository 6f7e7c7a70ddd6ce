"""Plan, rollout-log and report serialization (JSON and CSV)."""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import Pose2, Wrench2
from .skills import SkillSpec
from .trajopt import DecisionVariables, LossBreakdown, Plan

PLAN_FORMAT = "contactforge.plan/1"
LOG_FORMAT = "contactforge.rollout/1"


def dumps(doc) -> str:
    """Canonical JSON text (stable key order, repr floats, trailing newline)."""
    return json.dumps(doc, indent=1, allow_nan=True) + "\n"


def write_json(path, doc) -> None:
    Path(path).write_text(dumps(doc))


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _pose(p: Pose2) -> list:
    return [float(p.x), float(p.y), float(p.theta)]


def _body_doc(body) -> dict:
    return {"shape": {"name": body.shape.name, "vertices_m": body.shape.vertices.tolist()},
            "mass_kg": float(body.params.mass), "com_m": [float(c) for c in body.params.com],
            "gravity_m_s2": float(body.params.gravity)}


def scene_to_dict(scene) -> dict:
    """Self-contained scene document (shapes and stiffness inlined)."""
    fr = scene.friction
    return {
        "grasped": _body_doc(scene.grasped),
        "extrinsic": None if scene.extrinsic is None else _body_doc(scene.extrinsic),
        "mu": {"ground_extrinsic": fr.ground_extrinsic, "ground_grasped": fr.ground_grasped,
               "grasped_extrinsic": fr.grasped_extrinsic},
        "stiffness": {"K": scene.model.K.tolist()},
        "ground_y_m": float(scene.ground_y),
        "grasp_offset": _pose(scene.grasp),
        "noise": {"pose_sigma_m": scene.noise.pose_sigma_m, "angle_sigma_rad": scene.noise.angle_sigma_rad,
                  "wrench_sigma_N": scene.noise.wrench_sigma_N, "seed": scene.noise.seed},
        "plant_stiffness_scale": float(scene.plant_stiffness_scale),
        "step_bound": {"translation_m": float(scene.step_translation_m),
                       "rotation_rad": float(scene.step_rotation_rad)},
    }


# Plans

def plan_to_dict(plan: Plan, scene_doc: dict | None = None) -> dict:
    steps = []
    for k in range(plan.skill.steps):
        steps.append({
            "k": k,
            "x_ee": _pose(plan.variables.x_ee[k]),
            "x_go": _pose(plan.variables.x_go[k]),
            "w_N_Nm": [float(v) for v in plan.wrenches[k]],
            "f_obj_N": [float(v) for v in plan.forces[k]],
        })
    return {
        "format": PLAN_FORMAT,
        "method": plan.method,
        "queries": int(plan.queries),
        "loss": plan.loss.as_dict(),
        "history": [float(h) for h in plan.history],
        "params": [float(v) for v in plan.params],
        "skill": plan.skill.to_dict(),
        "scene": scene_doc,
        "steps": steps,
    }


def plan_from_dict(doc: dict) -> Plan:
    if doc.get("format") != PLAN_FORMAT:
        raise ConfigError(f"not a plan file (format {doc.get('format')!r})")
    try:
        skill = SkillSpec.from_dict(doc["skill"])
        st = doc["steps"]
        variables = DecisionVariables([Pose2.from_array(s["x_ee"]) for s in st],
                                      [Pose2.from_array(s["x_go"]) for s in st])
        return Plan(skill, variables, np.array(doc.get("params", [])),
                    np.array([s["w_N_Nm"] for s in st], dtype=float).reshape(-1, 3),
                    np.array([s["f_obj_N"] for s in st], dtype=float).reshape(-1, 2),
                    LossBreakdown(**doc["loss"]), list(doc.get("history", [])), int(doc.get("queries", 0)),
                    doc.get("method", "grad"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"plan: malformed field ({exc})") from None


def write_plan(path, plan: Plan, scene_doc: dict | None = None) -> None:
    write_json(path, plan_to_dict(plan, scene_doc))


def read_plan(path) -> tuple[Plan, dict | None]:
    doc = read_json(path)
    return plan_from_dict(doc), doc.get("scene")


PLAN_COLUMNS = ["k", "x_ee_x_m", "x_ee_y_m", "x_ee_theta_rad", "x_go_x_m", "x_go_y_m", "x_go_theta_rad",
                "w_x_N", "w_y_N", "w_tau_Nm", "f_t_N", "f_n_N"]


def write_plan_csv(path, plan: Plan) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(PLAN_COLUMNS)
        for k in range(plan.skill.steps):
            row = [k, *_pose(plan.variables.x_ee[k]), *_pose(plan.variables.x_go[k]),
                   *map(float, plan.wrenches[k]), *map(float, plan.forces[k])]
            out.writerow([repr(v) if isinstance(v, float) else v for v in row])


def write_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["evaluation", "best_loss"])
        for i, h in enumerate(history):
            out.writerow([i, repr(float(h))])


# Rollout logs

def trajectory_to_dict(traj, scene_doc: dict | None = None, seed=None, controller: str = "open") -> dict:
    steps = []
    for s in traj.steps:
        steps.append({
            "k": int(s.k),
            "x_ee": _pose(s.x_ee), "x_go": _pose(s.x_go), "x_eo": _pose(s.x_eo),
            "w_ext": [float(v) for v in s.w_ext.as_array()],
            "x_go_meas": _pose(s.x_go_meas), "w_meas": [float(v) for v in s.w_meas.as_array()],
            "noise": [float(v) for v in s.noise],
            "clipped": bool(s.clipped),
            "contacts": [{"body_a": c[0], "body_b": c[1], "mode": c[2], "f_t_N": float(c[3]), "f_n_N": float(c[4]),
                          "point_m": [float(c[5]), float(c[6])],
                          "normal": [float(c[7]), float(c[8])]} for c in s.contacts],
        })
    return {"format": LOG_FORMAT, "controller": controller, "seed": seed, "failed_at": traj.failed_at,
            "error": traj.error, "scene": scene_doc, "steps": steps}


def trajectory_from_dict(doc: dict):
    from .sim import StepLog, Trajectory

    if doc.get("format") != LOG_FORMAT:
        raise ConfigError(f"not a rollout log (format {doc.get('format')!r})")
    try:
        steps = []
        for s in doc["steps"]:
            rows = [(c["body_a"], c["body_b"], c["mode"], c["f_t_N"], c["f_n_N"], *c["point_m"], *c["normal"])
                    for c in s["contacts"]]
            steps.append(StepLog(s["k"], Pose2.from_array(s["x_ee"]), Pose2.from_array(s["x_go"]),
                                 Pose2.from_array(s["x_eo"]), Wrench2.from_array(s["w_ext"]),
                                 Pose2.from_array(s["x_go_meas"]), Wrench2.from_array(s["w_meas"]), rows,
                                 np.array(s["noise"], dtype=float), bool(s.get("clipped", False))))
        return Trajectory(steps, doc.get("failed_at"), doc.get("error", ""))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"rollout log: malformed field ({exc})") from None


LOG_COLUMNS = ["k", "x_ee_x_m", "x_ee_y_m", "x_ee_theta_rad", "x_go_x_m", "x_go_y_m", "x_go_theta_rad",
               "x_eo_x_m", "x_eo_y_m", "x_eo_theta_rad", "w_x_N", "w_y_N", "w_tau_Nm", "modes"]


def write_trajectory_csv(path, traj) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(LOG_COLUMNS)
        for s in traj.steps:
            modes = ";".join(f"{c[0]}-{c[1]}:{c[2]}" for c in s.contacts)
            row = [*_pose(s.x_ee), *_pose(s.x_go), *_pose(s.x_eo), *map(float, s.w_ext.as_array())]
            out.writerow([s.k, *[repr(v) for v in row], modes])
