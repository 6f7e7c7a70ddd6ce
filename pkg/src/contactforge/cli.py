"""contactforge command line: calibrate, plan, execute, render, bench (and replay).

Exit codes: 0 success, 1 domain failure, 2 usage or configuration error.
Every run that gets past argument parsing writes manifest.json into its
output directory.
"""
from __future__ import annotations

import argparse
import contextlib
import datetime as _dt
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .errors import ConfigError, ContactForgeError

SEED_ENV = "CONTACTFORGE_SEED"
MANIFEST = "manifest.json"
MANIFEST_FORMAT = "contactforge.manifest/1"
EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2

# Table 5 iteration x sample splits for the two standard budgets
BUDGET_SPLITS = {
    "grad": {},
    "mppi": {100: (1, 100), 1000: (10, 100)},
    "icem": {100: (10, 10), 1000: (50, 20)},
}


class UsageError(ConfigError):
    pass


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, out: Path):
        self.out = out
        self.outputs: list[str] = []
        self.volatile: list[str] = []
        self.configs: dict[str, str] = {}

    def path(self, name: str, volatile: bool = False) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        (self.volatile if volatile else self.outputs).append(name)
        return p

    def config(self, role: str, spec) -> None:
        self.configs[role] = str(spec)


def _env_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def parse_seeds(text: str) -> list[int]:
    """'0,1,2' or '0-4' or a mix."""
    seeds = []
    try:
        for part in filter(None, (t.strip() for t in text.split(","))):
            lo, _, hi = part.partition("-")
            seeds.extend(range(int(lo), int(hi) + 1) if hi else [int(lo)])
    except ValueError:
        raise UsageError(f"bad seed list {text!r}") from None
    if not seeds:
        raise UsageError("empty seed list")
    return seeds


def _floats(text: str, n: int, what: str) -> tuple:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"{what}: expected {n} comma-separated numbers") from None
    if len(vals) != n:
        raise UsageError(f"{what}: expected {n} comma-separated numbers")
    return vals


def _dataset(spec: str) -> Path:
    from .scene import ASSETS

    p = Path(spec)
    if p.is_file():
        return p
    bundled = Path(str(ASSETS / "data" / f"{spec}.csv"))
    if p.suffix == "" and bundled.is_file():
        return bundled
    raise ConfigError(f"dataset not found: {spec}")


def _scene_from_file_or_doc(spec, doc):
    from .scene import load_scene, scene_from_dict

    if spec:
        return load_scene(spec)
    if doc is None:
        raise UsageError("no --scene given and the input file embeds no scene")
    return scene_from_dict(doc)


# Commands

def cmd_calibrate(args, run: Run) -> int:
    from .compliance import FitConfig, fit_elasticity, fit_friction, read_deflection_csv, read_friction_csv

    if args.elasticity:
        src = _dataset(args.elasticity)
        run.config("elasticity_csv", src)
        samples = read_deflection_csv(src)
        model, resid = fit_elasticity(samples, FitConfig())
        doc = {"kind": "elasticity", "name": Path(src).stem, "K": model.K.tolist(),
               "residual_mse": resid, "samples": len(samples), "units": "rows N/m, N/m, N*m/rad"}
        io.write_json(run.path("elasticity.json"), doc)
        print("K =", np.array2string(model.K, precision=2, suppress_small=True).replace("\n", ""),
              f"(mse {resid:.3g}, {len(samples)} samples)")
    else:
        src = _dataset(args.friction)
        run.config("friction_csv", src)
        F = read_friction_csv(src)
        if not 0.0 <= args.quantile <= 1.0:
            raise UsageError("--quantile must lie in [0, 1]")
        mu = fit_friction(F, args.quantile)
        ratios = np.abs(F[:, 0]) / F[:, 1]
        doc = {"kind": "friction", "name": Path(src).stem, "mu": mu, "quantile": args.quantile,
               "samples": int(len(F)), "fraction_above": float(np.mean(ratios > mu))}
        io.write_json(run.path("friction.json"), doc)
        print(f"mu = {mu:.6g} (q = {args.quantile}, {len(F)} samples)")
    return EXIT_OK


def optimizer_config(method: str, budget, iterations, samples, seed: int):
    from .trajopt import OptimizerConfig

    if method == "grad":
        if samples not in (None, 1):
            raise UsageError("the gradient planner takes one sample per iteration")
        it = iterations if iterations is not None else (budget if budget is not None else 100)
        if budget is not None and it != budget:
            raise UsageError("--budget and --iterations disagree")
        return OptimizerConfig(method="grad", iterations=it, samples=1, seed=seed)
    if iterations is not None and samples is not None:
        it, n = iterations, samples
        if budget is not None and it * n != budget:
            raise UsageError(f"--iterations x --samples = {it * n} differs from --budget {budget}")
    else:
        budget = 100 if budget is None else budget
        split = BUDGET_SPLITS[method].get(budget)
        if split is None:
            raise UsageError(f"no standard split for {method} at budget {budget}; give --iterations and --samples")
        it, n = split
    if it < 1 or n < 1:
        raise UsageError("iterations and samples must be positive")
    return OptimizerConfig(method=method, iterations=it, samples=n, seed=seed)


def cmd_plan(args, run: Run) -> int:
    from .scene import load_scene
    from .skills import load_skill
    from .trajopt import ConvergenceThresholds, plan_converged, plan_skill

    scene = load_scene(args.scene)
    skill = load_skill(args.skill)
    run.config("scene", args.scene)
    run.config("skill", args.skill)
    cfg = optimizer_config(args.optimizer, args.budget, args.iterations, args.samples, args.seed)
    try:
        plan = plan_skill(skill, scene, cfg)
    except ConfigError:
        raise
    except ContactForgeError as exc:
        raise ContactForgeError(f"skill {skill.name or skill.kind}: {type(exc).__name__}: {exc}") from None
    thr = ConvergenceThresholds(balance=args.balance_tol, cone_rel=args.cone_tol)
    reasons = plan_converged(plan, scene, thr)
    io.write_plan(run.path("plan.json"), plan, io.scene_to_dict(scene))
    io.write_plan_csv(run.path("plan.csv"), plan)
    io.write_history_csv(run.path("loss_history.csv"), plan.history)
    report = {"skill": skill.name, "method": cfg.method, "iterations": cfg.iterations, "samples": cfg.samples,
              "queries": plan.queries, "loss": plan.loss.as_dict(), "converged": not reasons, "reasons": reasons,
              "thresholds": thr.__dict__}
    io.write_json(run.path("loss.json"), report)
    print(f"{skill.name}: {cfg.method} {cfg.iterations}x{cfg.samples}, {plan.queries} queries, "
          f"loss {plan.loss.total:.6g}" + ("" if not reasons else " (not converged: " + "; ".join(reasons) + ")"))
    return EXIT_OK if not reasons else EXIT_DOMAIN


def _controller_scene(scene, args):
    from .scene import NoiseConfig

    n = scene.noise
    noise = NoiseConfig(n.pose_sigma_m if args.noise_pose_m is None else args.noise_pose_m,
                        n.angle_sigma_rad if args.noise_angle_rad is None else args.noise_angle_rad,
                        n.wrench_sigma_N if args.noise_wrench_n is None else args.noise_wrench_n, n.seed)
    if min(noise.pose_sigma_m, noise.angle_sigma_rad, noise.wrench_sigma_N) < 0:
        raise UsageError("noise levels must be non-negative")
    scene = scene.with_noise(noise)
    if args.plant_scale is not None:
        if args.plant_scale <= 0:
            raise UsageError("--plant-scale must be positive")
        scene = replace(scene, plant_stiffness_scale=args.plant_scale)
    return scene


COMPONENTS = ["x_mm", "y_mm", "theta_deg", "fx_N", "fy_N", "tau_Nm"]


def _errors_markdown(kind, stats) -> str:
    head = "| controller | " + " | ".join(COMPONENTS) + " | pose (mm) | wrench (N) |"
    sep = "|" + "---|" * (len(COMPONENTS) + 3)
    cells = [f"{stats.components[c][0]:.4f} ± {stats.components[c][1]:.4f}" for c in COMPONENTS]
    row = (f"| {kind} | " + " | ".join(cells) + f" | {stats.pose_mm[0]:.4f} ± {stats.pose_mm[1]:.4f} "
           f"| {stats.wrench_N[0]:.4f} ± {stats.wrench_N[1]:.4f} |")
    return "\n".join([head, sep, row]) + "\n"


def _write_errors_csv(path, stats) -> None:
    import csv

    cols = ["seed", "steps", "failed_at", *COMPONENTS, "pose_mm", "wrench_N"]
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(cols)
        for r in stats.per_seed:
            out.writerow(["" if r.get(c) is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                          for c in cols])
        for label, idx in (("mean", 0), ("std", 1)):
            vals = [stats.components[c][idx] for c in COMPONENTS]
            out.writerow([label, "", "", *map(repr, vals), repr(stats.pose_mm[idx]), repr(stats.wrench_N[idx])])


def cmd_execute(args, run: Run) -> int:
    from .control import ControllerGains, evaluate_controller

    plan, scene_doc = io.read_plan(args.plan)
    run.config("plan", args.plan)
    if args.scene:
        run.config("scene", args.scene)
    scene = _controller_scene(_scene_from_file_or_doc(args.scene, scene_doc), args)
    gains = ControllerGains(k_p=args.kp, k_i=args.ki, pose_weight=args.pose_weight,
                            clamp=_floats(args.clamp, 3, "--clamp"))
    seeds = parse_seeds(args.seeds) if args.seeds else [args.seed]
    logs = []
    stats = evaluate_controller(scene, plan, args.controller, gains, seeds, logs=logs)
    doc_scene = io.scene_to_dict(scene)
    for seed, traj in zip(seeds, logs):
        io.write_json(run.path(f"rollout_seed{seed}.json"),
                      io.trajectory_to_dict(traj, doc_scene, seed, args.controller))
        io.write_trajectory_csv(run.path(f"rollout_seed{seed}.csv"), traj)
    report = {"controller": args.controller, "gains": {"k_p": gains.k_p, "k_i": gains.k_i,
                                                       "clamp": list(gains.clamp), "pose_weight": gains.pose_weight},
              "seeds": seeds, **stats.as_dict()}
    io.write_json(run.path("report.json"), report)
    _write_errors_csv(run.path("errors.csv"), stats)
    run.path("errors.md").write_text(_errors_markdown(args.controller, stats))
    print(f"{args.controller}: pose {stats.pose_mm[0]:.4f} mm, wrench {stats.wrench_N[0]:.4f} N "
          f"over {len(seeds)} seed(s)")
    for seed, step, msg in stats.failures:
        print(f"seed {seed}: failed at step {step}: {msg}", file=sys.stderr)
    return EXIT_DOMAIN if stats.failures else EXIT_OK


def cmd_render(args, run: Run) -> int:
    from . import render

    doc = io.read_json(args.input)
    run.config("input", args.input)
    fmt = doc.get("format")
    if fmt == io.PLAN_FORMAT:
        plan = io.plan_from_dict(doc)
        scene = _scene_from_file_or_doc(args.scene, doc.get("scene"))
        frames = render.frames_from_plan(scene, plan)
    elif fmt == io.LOG_FORMAT:
        traj = io.trajectory_from_dict(doc)
        scene = _scene_from_file_or_doc(args.scene, doc.get("scene"))
        frames = render.frames_from_trajectory(scene, traj)
    else:
        raise ConfigError(f"{args.input}: neither a plan nor a rollout log (format {fmt!r})")
    bounds = render._bounds(scene, frames) if frames else None
    for fr in frames:
        name = f"step_{fr.k:03d}.svg"
        run.path(name).write_text(render.render_frame(scene, fr, bounds))
    print(f"{len(frames)} frame(s) written to {run.out}")
    return EXIT_OK


def cmd_bench(args, run: Run) -> int:
    from . import bench
    from .scene import load_scene
    from .skills import load_skill

    if args.suite != "table5":
        raise UsageError(f"unknown suite {args.suite!r}")
    scene = load_scene(args.scene)
    skill = load_skill(args.skill)
    run.config("scene", args.scene)
    run.config("skill", args.skill)
    seeds = parse_seeds(args.seeds) if args.seeds else list(range(args.seed, args.seed + args.n_seeds))

    def progress(r):
        print(f"{r.row} seed {r.seed}: {r.queries} queries, loss {r.loss:.4g}, pose {r.pose_mm:.3f} mm, "
              f"{r.seconds:.1f} s", flush=True)

    results = bench.run_bench(scene, skill, seeds, progress=progress if not args.quiet else None)
    table = bench.summarize(results)
    bench.write_summary_csv(run.path("bench.csv"), table)
    bench.write_seed_csv(run.path("bench_seeds.csv"), results)
    run.path("bench.md").write_text(bench.summary_markdown(table))
    tim = bench.timing(results)
    io.write_json(run.path("timing.json", volatile=True), tim)
    lines = ["| optimizer | queries | wall-clock (s) |", "|---|---|---|"]
    lines += [f"| {t['row']} | {t['queries']} | {tim[t['row']]['mean_s']:.2f} |" for t in table]
    run.path("timing.md", volatile=True).write_text("\n".join(lines) + "\n")
    print(bench.summary_markdown(table), end="")
    return EXIT_OK


# Parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contactforge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"contactforge {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="{calibrate,plan,execute,render,bench,replay}")

    def common(sp, name):
        sp.add_argument("--out", type=Path, default=Path("contactforge_out") / name,
                        help="output directory (default: contactforge_out/%(prog)s)")
        sp.add_argument("--seed", type=int, default=None, help=f"random seed (default: ${SEED_ENV} or 0)")

    c = sub.add_parser("calibrate", help="fit the gripper stiffness or a friction coefficient")
    g = c.add_mutually_exclusive_group(required=True)
    g.add_argument("--elasticity", metavar="CSV", help="deflection/wrench samples (or a bundled dataset name)")
    g.add_argument("--friction", metavar="CSV", help="tangential/normal force samples (or a bundled dataset name)")
    c.add_argument("--quantile", type=float, default=0.99, help="friction quantile (default 0.99)")
    common(c, "calibrate")

    pl = sub.add_parser("plan", help="optimize a skill trajectory")
    pl.add_argument("--scene", required=True, help="scene file or bundled scene name")
    pl.add_argument("--skill", required=True, help="skill file or bundled skill name")
    pl.add_argument("--optimizer", choices=["grad", "mppi", "icem"], default="grad")
    pl.add_argument("--budget", type=int, default=None, help="QP query budget (iterations x samples)")
    pl.add_argument("--iterations", type=int, default=None)
    pl.add_argument("--samples", type=int, default=None)
    pl.add_argument("--balance-tol", type=float, default=1e-3, help="max balance loss term for convergence")
    pl.add_argument("--cone-tol", type=float, default=1e-3, help="relative friction-cone slack for convergence")
    common(pl, "plan")

    ex = sub.add_parser("execute", help="run a plan in the simulator under a controller")
    ex.add_argument("--plan", required=True, help="plan.json from `contactforge plan`")
    ex.add_argument("--scene", default=None, help="scene override (default: the scene embedded in the plan)")
    ex.add_argument("--controller", choices=["open", "closed", "pi", "rigid"], default="open")
    ex.add_argument("--seeds", default=None, help="seed list, e.g. 0,1,2 or 0-9 (default: --seed)")
    ex.add_argument("--kp", type=float, default=0.5)
    ex.add_argument("--ki", type=float, default=0.1)
    ex.add_argument("--pose-weight", type=float, default=0.05)
    ex.add_argument("--clamp", default="0.005,0.005,0.05", help="integral bounds x_m,y_m,theta_rad")
    ex.add_argument("--noise-pose-m", type=float, default=None)
    ex.add_argument("--noise-angle-rad", type=float, default=None)
    ex.add_argument("--noise-wrench-n", type=float, default=None)
    ex.add_argument("--plant-scale", type=float, default=None, help="true stiffness / model stiffness")
    common(ex, "execute")

    r = sub.add_parser("render", help="SVG frames of a plan or rollout log")
    r.add_argument("input", help="plan.json or rollout_seed*.json")
    r.add_argument("--scene", default=None, help="scene override (default: the embedded scene)")
    common(r, "render")

    b = sub.add_parser("bench", help="optimizer benchmark at matched query budgets")
    b.add_argument("--scene", default="pentagon")
    b.add_argument("--skill", default="extrinsic_pivot_pentagon")
    b.add_argument("--suite", default="table5", help="benchmark suite (only table5)")
    b.add_argument("--seeds", default=None, help="seed list (default: 5 seeds from --seed)")
    b.add_argument("--n-seeds", type=int, default=5)
    b.add_argument("--quiet", action="store_true")
    common(b, "bench")

    rp = sub.add_parser("replay", help="rerun a command from its manifest and compare outputs")
    rp.add_argument("manifest", type=Path)
    rp.add_argument("--out", type=Path, default=None, help="output directory (default: <run dir>-replay)")
    return p


COMMANDS = {"calibrate": cmd_calibrate, "plan": cmd_plan, "execute": cmd_execute, "render": cmd_render,
            "bench": cmd_bench}


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _strip_options(argv: list[str], names=("--out", "--seed")) -> list[str]:
    out, skip = [], False
    for a in argv:
        if skip:
            skip = False
        elif a in names:
            skip = True
        elif not any(a.startswith(n + "=") for n in names):
            out.append(a)
    return out


def _execute(argv: list[str], args) -> int:
    run = Run(args.out.resolve())
    started, t0 = _now(), time.perf_counter()
    code, error = EXIT_OK, ""
    try:
        run.out.mkdir(parents=True, exist_ok=True)
        code = COMMANDS[args.command](args, run)
    except ConfigError as exc:
        code, error = EXIT_USAGE, str(exc)
    except ContactForgeError as exc:
        code, error = EXIT_DOMAIN, f"{type(exc).__name__}: {exc}"
    except OSError as exc:
        code, error = EXIT_USAGE, str(exc)
    if error:
        print(f"contactforge {args.command}: error: {error}", file=sys.stderr)
    with contextlib.suppress(OSError):
        outputs = {n: io.sha256(run.out / n) for n in sorted(set(run.outputs)) if (run.out / n).is_file()}
        manifest = {
            "format": MANIFEST_FORMAT, "tool": "contactforge", "version": __version__,
            "command": args.command,
            # recorded with the resolved seed so a replay does not depend on the environment
            "argv": _strip_options(argv) + ["--seed", str(args.seed)],
            "cwd": os.getcwd(), "seed": args.seed, "config_paths": run.configs,
            "output_dir": str(run.out), "outputs": outputs, "volatile": sorted(set(run.volatile)),
            "exit_code": code, "error": error,
            "timing": {"started": started, "finished": _now(), "elapsed_s": time.perf_counter() - t0},
        }
        io.write_json(run.out / MANIFEST, manifest)
    return code


def _replay(args) -> int:
    doc = io.read_json(args.manifest)
    if doc.get("format") != MANIFEST_FORMAT:
        raise UsageError(f"{args.manifest}: not a contactforge manifest")
    src = Path(doc["output_dir"])
    out = (args.out or src.with_name(src.name + "-replay")).resolve()
    argv = list(doc["argv"]) + ["--out", str(out)]
    prev = os.getcwd()
    os.chdir(doc["cwd"])
    try:
        code = main(argv)
    finally:
        os.chdir(prev)
    new = io.read_json(out / MANIFEST)
    diff = sorted(n for n in set(doc["outputs"]) | set(new["outputs"])
                  if doc["outputs"].get(n) != new["outputs"].get(n))
    if code != doc["exit_code"]:
        print(f"replay: exit code {code} differs from recorded {doc['exit_code']}", file=sys.stderr)
    for n in diff:
        print(f"replay: {n} differs", file=sys.stderr)
    if diff or code != doc["exit_code"]:
        return EXIT_DOMAIN
    print(f"replay: {len(new['outputs'])} output(s) identical")
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:      # argparse reports usage errors with status 2
        return int(exc.code or 0)
    try:
        if args.command == "replay":
            return _replay(args)
        if args.seed is None:
            args.seed = _env_seed()
    except ConfigError as exc:
        print(f"contactforge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return _execute(argv, args)


if __name__ == "__main__":
    sys.exit(main())
