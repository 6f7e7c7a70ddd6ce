"""Linear elasticity model of the compliant gripper and its calibration fits."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import (ConfigError, NonConvergence, NonPositiveNormal, RankDeficientData,
                     SingularStiffness)
from .geometry import Pose2, Wrench2, rot, wrap_angle

K_BUBBLES = np.array([
    [2208.96, -143.31, 399.86],
    [-143.31, 1875.92, -313.57],
    [399.86, -313.57, 1608.49],
])

K_GELSLIM = np.array([
    [5060.26, -1261.90, -158.71],
    [-1261.90, 9998.16, 334.56],
    [-158.71, 334.56, 37.6311],
])


@dataclass(frozen=True, eq=False)
class ElasticityModel:
    """Stiffness K mapping deflection (m, m, rad) to wrench (N, N, N*m)."""

    K: np.ndarray

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        if K.shape != (3, 3) or not np.all(np.isfinite(K)):
            raise ConfigError("stiffness must be a finite 3x3 matrix")
        scale = np.linalg.norm(K)
        if np.linalg.norm(K - K.T) > 1e-6 * max(scale, 1e-300):
            raise ConfigError("stiffness must be symmetric")
        K = 0.5 * (K + K.T)
        if np.linalg.eigvalsh(K).min() < -1e-9 * scale:
            raise ConfigError("stiffness must be positive semidefinite")
        K.setflags(write=False)
        object.__setattr__(self, "K", K)

    @property
    def eigenvalue_floor(self) -> float:
        return 1e-6 * float(np.trace(self.K)) / 3.0

    def scaled(self, factor: float) -> "ElasticityModel":
        return ElasticityModel(self.K * factor)


@dataclass(frozen=True)
class DeflectionSample:
    deflection: tuple
    wrench: Wrench2


def wrench_from_deflection(model: ElasticityModel, x) -> Wrench2:
    return Wrench2.from_array(model.K @ np.asarray(x, dtype=float))


def deflection_from_wrench(model: ElasticityModel, w) -> np.ndarray:
    if np.linalg.eigvalsh(model.K).min() <= model.eigenvalue_floor:
        raise SingularStiffness("stiffness too close to singular to invert")
    w = w.as_array() if isinstance(w, Wrench2) else np.asarray(w, dtype=float)
    return np.linalg.solve(model.K, w)


# Grasp kinematics.  The deflection is the pose of the nominal (zero-deflection)
# grasp frame relative to the grasped object, expressed in the object frame.

def grasp_deflection(x_ee: Pose2, x_go: Pose2, grasp: Pose2 = Pose2()) -> np.ndarray:
    nominal = x_ee.compose(grasp)
    d = rot(x_go.theta).T @ (nominal.position - x_go.position)
    return np.array([d[0], d[1], wrap_angle(nominal.theta - x_go.theta)])


def ee_from_deflection(x_go: Pose2, deflection, grasp: Pose2 = Pose2()) -> Pose2:
    """Inverse of grasp_deflection: the end-effector pose producing `deflection`."""
    d = np.asarray(deflection, dtype=float)
    p = x_go.position + rot(x_go.theta) @ d[:2]
    nominal = Pose2(p[0], p[1], x_go.theta + d[2])
    return nominal.compose(grasp.inverse())


def gripper_wrench(model: ElasticityModel, x_ee: Pose2, x_go: Pose2,
                   grasp: Pose2 = Pose2()) -> Wrench2:
    """Wrench on the grasped object in its own frame (the compliance output)."""
    return wrench_from_deflection(model, grasp_deflection(x_ee, x_go, grasp))


@dataclass
class FitConfig:
    max_iters: int = 50_000
    rel_tol: float = 1e-10
    step: float = 0.1


def _stack(samples):
    X = np.array([np.asarray(s.deflection, dtype=float) for s in samples])
    W = np.array([s.wrench.as_array() for s in samples])
    return X, W


def fit_elasticity(samples, config: FitConfig | None = None) -> tuple[ElasticityModel, float]:
    """Least-squares K = L^T L by gradient descent on L.

    Returns the model and its mean squared wrench residual.
    """
    cfg = config or FitConfig()
    if len(samples) < 6:
        raise RankDeficientData("need at least 6 samples")
    X, W = _stack(samples)
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] <= 1e-8 * sv[0]:
        raise RankDeficientData("deflections do not span all three axes")

    # scalar normalization keeps the fitted matrix symmetric
    sx = float(np.sqrt(np.mean(X ** 2)))
    sw = float(np.sqrt(np.mean(W ** 2))) or 1.0
    Xn = X / sx
    Wn = W / sw
    L = math.sqrt(np.mean(np.linalg.norm(Wn, axis=1)) / np.mean(np.linalg.norm(Xn, axis=1))) * np.eye(3)

    def loss_grad(L):
        R = Wn - Xn @ (L.T @ L).T
        loss = float(np.sum(R ** 2)) / len(Xn)
        M = R.T @ Xn / len(Xn)
        return loss, -2.0 * L @ (M + M.T)

    loss, g = loss_grad(L)
    step = cfg.step
    zero_loss = float(np.sum(Wn ** 2)) / len(Xn)
    for it in range(1, cfg.max_iters + 1):
        cand = L - step * g
        new_loss, new_g = loss_grad(cand)
        if new_loss > loss:
            step *= 0.5
            if step < 1e-30:
                break
            continue
        change = (loss - new_loss) / max(loss, 1e-300)
        L, loss, g = cand, new_loss, new_g
        step *= 1.2
        if change < cfg.rel_tol or loss < 1e-24 * zero_loss:
            break
    else:
        raise NonConvergence(cfg.max_iters, loss)

    if loss > zero_loss:
        # the gradient vanishes as L -> 0, so a near-zero optimum is reached only
        # asymptotically; L = 0 is itself a member of the family
        L = np.zeros((3, 3))
    model = ElasticityModel((L.T @ L) * (sw / sx))
    resid = float(np.mean(np.sum((W - X @ model.K.T) ** 2, axis=1)))
    return model, resid


def fit_friction(force_samples, q: float = 0.99) -> float:
    """Friction coefficient as the q-quantile of |f_t| / f_n."""
    F = np.asarray(force_samples, dtype=float).reshape(-1, 2)
    if len(F) == 0:
        raise ConfigError("no friction samples")
    if np.any(F[:, 1] <= 0):
        raise NonPositiveNormal("all normal forces must be positive")
    ratios = np.abs(F[:, 0]) / F[:, 1]
    return float(np.quantile(ratios, q, method="inverted_cdf"))


# CSV datasets

DEFLECTION_COLUMNS = ["dx", "dy", "dtheta", "fx", "fy", "tau"]
FRICTION_COLUMNS = ["ft", "fn"]


def _read_csv(path, columns):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:len(columns)]] != columns:
            raise ConfigError(f"{path}:1: expected header {','.join(columns)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(columns):
                raise ConfigError(f"{path}:{lineno}: expected {len(columns)} columns, got {len(row)}")
            try:
                vals = [float(c) for c in row[:len(columns)]]
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: non-numeric value") from None
            if not all(math.isfinite(v) for v in vals):
                raise ConfigError(f"{path}:{lineno}: non-finite value")
            rows.append(vals)
    return rows


def read_deflection_csv(path) -> list[DeflectionSample]:
    return [DeflectionSample(tuple(r[:3]), Wrench2(*r[3:])) for r in _read_csv(path, DEFLECTION_COLUMNS)]


def write_deflection_csv(path, samples) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DEFLECTION_COLUMNS)
        for s in samples:
            w.writerow([repr(float(v)) for v in (*s.deflection, *s.wrench.as_array())])


def read_friction_csv(path) -> np.ndarray:
    return np.array(_read_csv(path, FRICTION_COLUMNS)).reshape(-1, 2)


def write_friction_csv(path, samples) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FRICTION_COLUMNS)
        for ft, fn in samples:
            w.writerow([repr(float(ft)), repr(float(fn))])


def synth_deflection_samples(K, n: int = 200, seed: int = 0, noise: float = 0.0,
                             amplitude=(2e-3, 2e-3, 2e-2)) -> list[DeflectionSample]:
    """Random plus principal-axis motions, as in a calibration sweep."""
    rng = np.random.default_rng(seed)
    amp = np.asarray(amplitude)
    n_axis = min(n // 4, 30)
    X = rng.uniform(-1, 1, size=(n, 3)) * amp
    for i in range(n_axis):
        axis = i % 3
        X[i] = 0.0
        X[i, axis] = rng.uniform(-1, 1) * amp[axis]
    W = X @ np.asarray(K).T + noise * rng.standard_normal((n, 3))
    return [DeflectionSample(tuple(x), Wrench2.from_array(w)) for x, w in zip(X, W)]
