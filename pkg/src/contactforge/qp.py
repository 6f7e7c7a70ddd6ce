"""Dense convex QP solver with implicit-differentiation sensitivities.

    minimize    1/2 z'Qz + q'z
    subject to  A z = b,  G z <= h

Solved by a primal-dual interior point method with Mehrotra predictor-corrector
steps, then polished on the identified active set.  Problems of equal shape are
iterated together as one stacked batch; each problem's arithmetic is unaffected
by its batch mates, so batched and one-by-one solves agree bit for bit.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateActiveSet, NumericalFailure

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass(eq=False)
class QpProblem:
    Q: np.ndarray
    q: np.ndarray
    A: np.ndarray = None
    b: np.ndarray = None
    G: np.ndarray = None
    h: np.ndarray = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        n = self.q.size
        Q = np.asarray(self.Q, dtype=float).reshape(n, n)
        Q = 0.5 * (Q + Q.T)
        if n:
            vals, vecs = np.linalg.eigh(Q)
            scale = max(1.0, float(np.abs(vals).max()))
            if vals.min() < -1e-9 * scale:
                raise ValueError(f"Q is not positive semidefinite (min eigenvalue {vals.min():.3e})")
            if vals.min() < 0:
                Q = (vecs * np.clip(vals, 0, None)) @ vecs.T
        self.Q = Q
        self.b = np.zeros(0) if self.b is None else np.asarray(self.b, dtype=float).reshape(-1)
        self.h = np.zeros(0) if self.h is None else np.asarray(self.h, dtype=float).reshape(-1)
        try:
            self.A = np.zeros((0, n)) if self.A is None else np.asarray(self.A, dtype=float).reshape(self.b.size, n)
            self.G = np.zeros((0, n)) if self.G is None else np.asarray(self.G, dtype=float).reshape(self.h.size, n)
        except ValueError:
            raise ValueError("constraint dimensions are inconsistent") from None

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.q.size, self.b.size, self.h.size

    def objective(self, z) -> float:
        return float(0.5 * z @ self.Q @ z + self.q @ z)

    def dump(self) -> str:
        """Plain-text matrix dump for offline inspection."""
        lines = [f"# qp n={self.shape[0]} me={self.shape[1]} mi={self.shape[2]}"]
        for name in ("Q", "q", "A", "b", "G", "h"):
            arr = np.atleast_2d(getattr(self, name))
            lines.append(f"{name} {arr.shape[0]} {arr.shape[1]}")
            lines.extend(" ".join(repr(float(v)) for v in row) for row in arr)
        return "\n".join(lines) + "\n"


@dataclass(eq=False)
class QpSolution:
    z: np.ndarray
    nu: np.ndarray
    lam: np.ndarray
    status: str
    objective: float
    iterations: int = 0
    residual: float = 0.0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class QpSensitivities:
    Q: np.ndarray
    q: np.ndarray
    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    h: np.ndarray


@dataclass
class QpConfig:
    tol: float = 1e-8
    max_iter: int = 100
    polish: bool = True
    degenerate_tol: float = 1e-7
    strict_degenerate: bool = False
    reg: float = 1e-11


class QueryCounter:
    """Counts QP solves and planner queries (one query = one trajectory's QPs)."""

    def __init__(self):
        self.solves = 0
        self.queries = 0

    def add(self, k: int, queries: int = 0) -> None:
        self.solves += k
        self.queries += queries


def _equality_consistent(p: QpProblem) -> bool:
    if p.b.size == 0:
        return True
    z, *_ = np.linalg.lstsq(p.A, p.b, rcond=None)
    scale = 1.0 + float(np.abs(p.b).max()) + float(np.abs(p.A).max()) * float(np.abs(z).max(initial=0))
    return float(np.abs(p.A @ z - p.b).max()) <= 1e-9 * scale


def _max_step(x, dx):
    """Largest alpha in (0, 1] with x + alpha dx >= 0, per batch row."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dx < 0, -x / dx, np.inf)
    return np.minimum(1.0, ratio.min(axis=1, initial=np.inf))


def _ip_batch(Q, q, A, b, G, h, cfg: QpConfig):
    """Mehrotra predictor-corrector on a stack of equally-shaped problems."""
    B, n = q.shape
    me, mi = b.shape[1], h.shape[1]
    Gt = np.swapaxes(G, 1, 2)
    At = np.swapaxes(A, 1, 2)
    eye_n = np.eye(n)
    reg_e = cfg.reg * np.eye(me)

    def kkt_solve(H, r1, r2):
        K = np.zeros((B, n + me, n + me))
        K[:, :n, :n] = H
        K[:, :n, n:] = At
        K[:, n:, :n] = A
        K[:, n:, n:] = -reg_e
        rhs = np.concatenate([r1, r2], axis=1)[..., None]
        try:
            sol = np.linalg.solve(K, rhs)[..., 0]
        except np.linalg.LinAlgError:
            sol = np.stack([np.linalg.lstsq(K[i], rhs[i, :, 0], rcond=None)[0] for i in range(B)])
        return sol[:, :n], sol[:, n:]

    # initial point: least-squares fit of the constraints
    H0 = Q + Gt @ G + cfg.reg * eye_n
    z, nu = kkt_solve(H0, -q + (Gt @ h[..., None])[..., 0], b)
    s = h - (G @ z[..., None])[..., 0]
    s = np.maximum(s, 1.0)
    lam = np.ones((B, mi))

    scale_d = 1.0 + np.abs(q).max(axis=1, initial=0)
    scale_p = 1.0 + np.maximum(np.abs(b).max(axis=1, initial=0), np.abs(h).max(axis=1, initial=0))
    done = np.zeros(B, dtype=bool)
    status = np.array([""] * B, dtype=object)
    iters = np.zeros(B, dtype=int)

    for it in range(cfg.max_iter + 1):
        rd = (Q @ z[..., None])[..., 0] + q + (Gt @ lam[..., None])[..., 0] + (At @ nu[..., None])[..., 0]
        rpi = (G @ z[..., None])[..., 0] + s - h
        rpe = (A @ z[..., None])[..., 0] - b
        mu = (s * lam).sum(axis=1) / mi if mi else np.zeros(B)
        res_d = np.abs(rd).max(axis=1, initial=0) / scale_d
        res_p = np.maximum(np.abs(rpi).max(axis=1, initial=0), np.abs(rpe).max(axis=1, initial=0)) / scale_p
        conv = (~done) & (res_d <= cfg.tol) & (res_p <= cfg.tol) & (mu <= cfg.tol)
        status[conv] = OPTIMAL
        iters[conv] = it
        done |= conv
        big_lam = (~done) & (lam.max(axis=1, initial=0) > 1e12 * scale_d * scale_p)
        status[big_lam] = INFEASIBLE
        big_z = (~done) & (np.abs(z).max(axis=1, initial=0) > 1e12 * scale_p)
        status[big_z] = UNBOUNDED
        iters[big_lam | big_z] = it
        done |= big_lam | big_z
        if done.all() or it == cfg.max_iter:
            break

        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            w = lam / s
            H = Q + Gt @ (w[..., None] * G) + cfg.reg * eye_n

            def direction(rc):
                # rc: complementarity residual for s*lam
                r1 = -rd - (Gt @ ((-rc + lam * rpi) / s)[..., None])[..., 0]
                dz, dnu = kkt_solve(H, r1, -rpe)
                ds = -rpi - (G @ dz[..., None])[..., 0]
                dlam = (-rc - lam * ds) / s
                return dz, dnu, ds, dlam

            dz_a, dnu_a, ds_a, dlam_a = direction(s * lam)
            a_aff = np.minimum(_max_step(s, ds_a), _max_step(lam, dlam_a))
            if mi:
                mu_aff = ((s + a_aff[:, None] * ds_a) * (lam + a_aff[:, None] * dlam_a)).sum(axis=1) / mi
                sigma = np.where(mu > 0, (mu_aff / np.where(mu > 0, mu, 1)) ** 3, 0.0)
            else:
                sigma = np.zeros(B)
            rc = s * lam + ds_a * dlam_a - (sigma * mu)[:, None]
            dz, dnu, ds, dlam = direction(rc)
            alpha = 0.99 * np.minimum(_max_step(s, ds), _max_step(lam, dlam))
            alpha = np.minimum(alpha, 1.0)
        bad = ~np.isfinite(dz).all(axis=1) | ~np.isfinite(alpha)
        live = (~done) & (~bad)
        a = np.where(live, alpha, 0.0)[:, None]
        z = np.where(live[:, None], z + a * dz, z)
        nu = np.where(live[:, None], nu + a * dnu, nu)
        s = np.where(live[:, None], s + a * ds, s)
        lam = np.where(live[:, None], lam + a * dlam, lam)
        failed = (~done) & bad
        status[failed] = "numerical"
        iters[failed] = it
        done |= failed

    unfinished = status == ""
    iters[unfinished] = cfg.max_iter
    return z, nu, s, lam, status, iters, np.maximum(res_d, res_p)


def _polish(p: QpProblem, z, lam, cfg: QpConfig):
    """Re-solve the KKT system on the active set for a high-accuracy point."""
    n, me, mi = p.shape
    s = p.h - p.G @ z
    active = np.flatnonzero(lam > np.maximum(s, 0)) if mi else np.zeros(0, dtype=int)
    Ga = p.G[active]
    k = me + len(active)
    M = np.zeros((n + k, n + k))
    M[:n, :n] = p.Q
    M[:n, n:n + me] = p.A.T
    M[:n, n + me:] = Ga.T
    M[n:n + me, :n] = p.A
    M[n + me:, :n] = Ga
    rhs = np.concatenate([-p.q, p.b, p.h[active]])
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    zp = sol[:n]
    lam_p = np.zeros(mi)
    lam_p[active] = sol[n + me:]
    scale = 1.0 + float(np.abs(p.h).max(initial=0)) + float(np.abs(p.b).max(initial=0))
    feas = (p.G @ zp - p.h).max(initial=-np.inf) <= 1e-9 * scale
    if me:
        feas = feas and np.abs(p.A @ zp - p.b).max() <= 1e-9 * scale
    if feas and lam_p.min(initial=0) >= -1e-10 * (1 + np.abs(lam_p).max(initial=0)):
        return zp, sol[n:n + me], np.maximum(lam_p, 0.0)
    return None


def solve_batch(problems, config: QpConfig | None = None, counter: QueryCounter | None = None,
                queries: int = 1):
    """Solve many QPs; per-element statuses, order preserved, no batch abort.

    `queries` is how many planner queries the batch represents for the counter.
    """
    cfg = config or QpConfig()
    problems = list(problems)
    if counter is not None:
        counter.add(len(problems), queries)
    out: list[QpSolution | None] = [None] * len(problems)
    groups: dict[tuple, list[int]] = {}
    for i, p in enumerate(problems):
        if p.shape[0] == 0:
            # no variables: feasibility is a direct check of the constant rows
            ok = np.all(np.abs(p.b) <= cfg.tol * 10) and np.all(p.h >= -cfg.tol * 10)
            out[i] = QpSolution(np.zeros(0), np.zeros(p.shape[1]), np.zeros(p.shape[2]),
                                OPTIMAL if ok else INFEASIBLE, 0.0 if ok else np.nan)
            continue
        if not _equality_consistent(p):
            n, me, mi = p.shape
            out[i] = QpSolution(np.full(n, np.nan), np.zeros(me), np.zeros(mi), INFEASIBLE, np.nan)
            continue
        groups.setdefault(p.shape, []).append(i)
    for (n, me, mi), idx in groups.items():
        ps = [problems[i] for i in idx]
        stack = lambda name: np.stack([getattr(p, name) for p in ps])
        z, nu, s, lam, status, iters, res = _ip_batch(
            stack("Q"), stack("q"), stack("A"), stack("b"), stack("G"), stack("h"), cfg)
        for k, i in enumerate(idx):
            p = problems[i]
            st = status[k]
            zk, nuk, lamk = z[k], nu[k], lam[k]
            if st in ("", "numerical") and res[k] <= 1e-6:
                st = OPTIMAL
            if st == OPTIMAL and cfg.polish:
                pol = _polish(p, zk, lamk, cfg)
                if pol is not None:
                    zk, nuk, lamk = pol
            if st == "":
                if res[k] > 1e-6:
                    st = INFEASIBLE
            if st == "numerical":
                st = INFEASIBLE
            obj = p.objective(zk) if st == OPTIMAL else np.nan
            out[i] = QpSolution(zk, nuk, np.maximum(lamk, 0.0), st, obj, int(iters[k]), float(res[k]))
    return out


def solve(problem: QpProblem, config: QpConfig | None = None, counter: QueryCounter | None = None) -> QpSolution:
    return solve_batch([problem], config, counter)[0]


def kkt_residuals(p: QpProblem, sol: QpSolution) -> dict:
    z = sol.z
    out = {
        "eq": float(np.abs(p.A @ z - p.b).max(initial=0)),
        "ineq": float((p.G @ z - p.h).max(initial=0)),
        "stationarity": float(np.abs(p.Q @ z + p.q + p.A.T @ sol.nu + p.G.T @ sol.lam).max(initial=0)),
        "complementarity": float(np.abs(sol.lam * (p.G @ z - p.h)).max(initial=0)),
    }
    out["ineq"] = max(out["ineq"], 0.0)
    return out


def active_set(p: QpProblem, sol: QpSolution, config: QpConfig | None = None) -> tuple[np.ndarray, bool]:
    """Indices treated as active for differentiation, and whether any were degenerate."""
    cfg = config or QpConfig()
    slack = p.h - p.G @ sol.z
    tol = cfg.degenerate_tol
    degenerate = (sol.lam < tol) & (slack < tol)
    active = (sol.lam >= tol) & ~degenerate
    return np.flatnonzero(active), bool(degenerate.any())


def differentiate(problem: QpProblem, solution: QpSolution, dloss_dz, config: QpConfig | None = None) -> QpSensitivities:
    """Gradients of a scalar loss w.r.t. every problem parameter, given dloss/dz."""
    cfg = config or QpConfig()
    if solution.status != OPTIMAL:
        raise ValueError("can only differentiate an optimal solution")
    p = problem
    n, me, mi = p.shape
    act, degenerate = active_set(p, solution, cfg)
    if degenerate:
        if cfg.strict_degenerate:
            raise DegenerateActiveSet("weakly active inequality at the solution")
        warnings.warn("degenerate active set; weakly active rows treated as inactive", stacklevel=2)
    Ga = p.G[act]
    k = me + len(act)
    M = np.zeros((n + k, n + k))
    M[:n, :n] = p.Q
    M[:n, n:n + me] = p.A.T
    M[:n, n + me:] = Ga.T
    M[n:n + me, :n] = p.A
    M[n + me:, :n] = Ga
    rhs = np.zeros(n + k)
    rhs[:n] = np.asarray(dloss_dz, dtype=float)
    sol, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    if not np.all(np.isfinite(sol)):
        raise NumericalFailure(float(np.linalg.cond(M)))
    sz, snu, slam = sol[:n], sol[n:n + me], sol[n + me:]
    z, nu = solution.z, solution.nu
    lam_a = solution.lam[act]
    dQ = -0.5 * (np.outer(sz, z) + np.outer(z, sz))
    dq = -sz
    dA = -(np.outer(nu, sz) + np.outer(snu, z))
    db = snu.copy()
    dG = np.zeros((mi, n))
    dG[act] = -(np.outer(lam_a, sz) + np.outer(slam, z))
    dh = np.zeros(mi)
    dh[act] = slam
    return QpSensitivities(dQ, dq, dA, db, dG, dh)
