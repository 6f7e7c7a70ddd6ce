"""Optimizer benchmark: gradient planner against sampling baselines at matched query budgets."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .control import trajectory_errors
from .errors import ContactForgeError
from .geometry import wrap_angle
from .sim import rollout
from .trajopt import OptimizerConfig, plan_skill


@dataclass(frozen=True)
class BenchRow:
    name: str
    method: str
    iterations: int
    samples: int

    @property
    def budget(self) -> int:
        return self.iterations * self.samples


DEFAULT_ROWS = (
    BenchRow("grad-100", "grad", 100, 1),
    BenchRow("mppi-1x100", "mppi", 1, 100),
    BenchRow("mppi-10x100", "mppi", 10, 100),
    BenchRow("icem-10x10", "icem", 10, 10),
    BenchRow("icem-50x20", "icem", 50, 20),
)


@dataclass
class BenchResult:
    row: str
    seed: int
    queries: int
    loss: float
    pose_mm: float          # final extrinsic-object pose error, gyration-radius metric
    pos_mm: float
    angle_deg: float
    wrench_N: float         # mean executed wrench error against the plan
    failed_at: int | None
    seconds: float


def final_pose_error(scene, skill, traj) -> tuple[float, float, float]:
    if traj.failed_at is not None or not traj.steps:
        return float("inf"), float("inf"), float("inf")
    last = traj.steps[-1]
    p1 = skill.program == "p1"
    x = last.x_eo if p1 else last.x_go
    d = skill.desired[-1]
    r = (scene.extrinsic if p1 else scene.grasped).gyration_radius
    dp = float(np.hypot(x.x - d.x, x.y - d.y))
    dth = abs(wrap_angle(x.theta - d.theta))
    return float(np.hypot(dp, r * dth)) * 1e3, dp * 1e3, float(np.rad2deg(dth))


def run_one(scene, skill, row: BenchRow, seed: int, weights=None) -> BenchResult:
    cfg = OptimizerConfig(method=row.method, iterations=row.iterations, samples=row.samples, seed=seed)
    t0 = time.perf_counter()
    plan = plan_skill(skill, scene, cfg, weights)
    seconds = time.perf_counter() - t0
    try:
        traj = rollout(scene, plan.commands(), plan.initial_state(), seed=seed)
    except ContactForgeError:      # a plan the simulator cannot start from
        inf = float("inf")
        return BenchResult(row.name, seed, plan.queries, float(plan.loss.total), inf, inf, inf, inf, 0, seconds)
    pose, pos, ang = final_pose_error(scene, skill, traj)
    werr = trajectory_errors(scene, plan, traj)["wrench_N"]
    return BenchResult(row.name, seed, plan.queries, float(plan.loss.total), pose, pos, ang,
                       float(np.mean(werr)) if len(werr) else float("inf"), traj.failed_at, seconds)


def run_bench(scene, skill, seeds: Sequence[int], rows: Sequence[BenchRow] = DEFAULT_ROWS, weights=None,
              progress=None) -> list[BenchResult]:
    out = []
    for row in rows:
        for seed in seeds:
            res = run_one(scene, skill, row, int(seed), weights)
            if progress:
                progress(res)
            out.append(res)
    return out


def summarize(results: list[BenchResult], rows: Sequence[BenchRow] = DEFAULT_ROWS) -> list[dict]:
    table = []
    for row in rows:
        rs = [r for r in results if r.row == row.name]
        if not rs:
            continue
        col = lambda key: np.array([getattr(r, key) for r in rs], dtype=float)   # noqa: E731
        table.append({
            "row": row.name, "method": row.method, "budget": row.budget, "seeds": len(rs),
            "queries": int(rs[0].queries) if len({r.queries for r in rs}) == 1 else -1,
            "loss_mean": float(col("loss").mean()), "loss_std": float(col("loss").std()),
            "pose_mm_mean": float(col("pose_mm").mean()), "pose_mm_std": float(col("pose_mm").std()),
            "angle_deg_mean": float(col("angle_deg").mean()),
            "wrench_N_mean": float(col("wrench_N").mean()), "wrench_N_std": float(col("wrench_N").std()),
            "failures": sum(r.failed_at is not None for r in rs),
        })
    return table


SUMMARY_COLUMNS = ["row", "method", "budget", "seeds", "queries", "loss_mean", "loss_std", "pose_mm_mean",
                   "pose_mm_std", "angle_deg_mean", "wrench_N_mean", "wrench_N_std", "failures"]
SEED_COLUMNS = ["row", "seed", "queries", "loss", "pose_mm", "pos_mm", "angle_deg", "wrench_N", "failed_at"]


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else ("" if v is None else v)


def write_summary_csv(path, table) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(SUMMARY_COLUMNS)
        for t in table:
            out.writerow([_fmt(t[c]) for c in SUMMARY_COLUMNS])


def write_seed_csv(path, results) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(SEED_COLUMNS)
        for r in results:
            out.writerow([_fmt(getattr(r, c)) for c in SEED_COLUMNS])


def summary_markdown(table) -> str:
    lines = ["| optimizer | queries | final loss | pose error (mm) | angle error (deg) | wrench error (N) | failures |",
             "|---|---|---|---|---|---|---|"]
    for t in table:
        lines.append(f"| {t['row']} | {t['queries']} | {t['loss_mean']:.4g} ± {t['loss_std']:.2g} "
                     f"| {t['pose_mm_mean']:.3f} ± {t['pose_mm_std']:.3f} | {t['angle_deg_mean']:.3f} "
                     f"| {t['wrench_N_mean']:.3f} ± {t['wrench_N_std']:.3f} | {t['failures']} |")
    return "\n".join(lines) + "\n"


def timing(results) -> dict:
    """Wall-clock per row (volatile; kept out of the deterministic outputs)."""
    by = {}
    for r in results:
        by.setdefault(r.row, []).append(r.seconds)
    return {k: {"mean_s": float(np.mean(v)), "per_seed_s": [float(x) for x in v]} for k, v in by.items()}
