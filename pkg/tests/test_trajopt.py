import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contactforge.errors import PenetrationInLoss
from contactforge.geometry import Pose2, rot
from contactforge.scene import load_scene
from contactforge.skills import build_skill
from contactforge.trajopt import (DecisionVariables, LossWeights, OptimizerConfig, SkillProblem, icem_update,
                                  init_trajectory, loss_total, optimize_gradient, optimize_icem, optimize_mppi,
                                  plan_converged, plan_skill)

HBOX = load_scene("hbox")
GRASPED = load_scene("grasped_only")


def _vars(K, x_go=None):
    x_go = x_go or [Pose2(0.0, 0.1, 0.2)] * K
    return DecisionVariables(list(x_go), list(x_go))


def _skill(K=3):
    return build_skill("static", HBOX, steps=K)


def test_loss_terms_vanish_on_their_trivial_inputs():
    sk = _skill()
    f = np.tile(sk.f_des, (3, 1))
    bd = loss_total(_vars(3), sk, f, [-1.0] * 3)
    assert bd.cone == 0 and bd.smooth == 0 and bd.force == 0 and bd.pen == 0
    assert bd.total == 0


def test_loss_terms_examples():
    sk = _skill(2)
    # a 45 degree force: (1 - cos 45)^2
    bd = loss_total(_vars(2), sk, [[1.0, 1.0], [0.0, 3.0]], [-1.0, -1.0])
    assert bd.cone == pytest.approx((1 - math.sqrt(0.5)) ** 2 / 2)
    assert bd.force == pytest.approx((1 + 4) / 2)
    bd = loss_total(_vars(2, [Pose2(0, 0, 0), Pose2(0.003, 0.004, 0)]), sk, [[0, 3.0]] * 2, [-math.e] * 2)
    assert bd.smooth == pytest.approx(25e-6)
    assert bd.pen == pytest.approx(0.01)
    # zero force contributes nothing to the cone term
    assert loss_total(_vars(2), sk, [[0, 0.0]] * 2, [-1.0] * 2).cone == 0


def test_penetration_in_loss():
    with pytest.raises(PenetrationInLoss):
        loss_total(_vars(2), _skill(2), [[0, 3.0]] * 2, [-1e-3, 0.0])


def test_weights_scale_terms():
    sk = _skill(2)
    f = [[1.0, 1.0], [0.0, 2.0]]
    a = loss_total(_vars(2), sk, f, [-0.5] * 2)
    b = loss_total(_vars(2), sk, f, [-0.5] * 2, LossWeights(cone=2, smooth=0, force=3, pen=0.5))
    assert b.total == pytest.approx(2 * a.cone + 3 * a.force + 0.5 * a.pen)
    with pytest.raises(Exception):
        LossWeights(cone=-1)


def test_init_static_is_constant_and_pivot_clears():
    v, _ = init_trajectory(_skill(4), HBOX)
    assert len({x.as_array().tobytes() for x in v.x_go}) == 1
    sk = build_skill("extrinsic_pivot", load_scene("pentagon"))
    pr = SkillProblem(sk, load_scene("pentagon"))
    v, xi = init_trajectory(sk, load_scene("pentagon"), pr)
    s, th, _ = pr.unpack(xi)
    assert np.all(pr.gaps(s, th) < 0)
    # the maintained vertex sits on the scheduled face
    for k in (0, 20, 39):
        p = v.x_go[k].transform_point(pr.v)
        assert np.allclose(p, pr.contact_point(k, sk.arc_length[k]), atol=1e-12)


def test_init_two_identical_steps():
    sk = build_skill("grasped_static", GRASPED, steps=2)
    v, _ = init_trajectory(sk, GRASPED)
    assert v.x_go[0] == v.x_go[1] and v.x_ee[0] == v.x_ee[1]


def _fd_check(kind, scene, seed=1):
    sk = build_skill(kind, scene, steps=3)
    pr = SkillProblem(sk, scene)
    _, xi = init_trajectory(sk, scene, pr)
    xi = xi + 0.05 * np.random.default_rng(seed).standard_normal(xi.size)
    f, g = pr.loss_and_grad(xi)
    h = 1e-6
    fd = np.array([(pr.loss(xi + h * e) - pr.loss(xi - h * e)) / (2 * h) for e in np.eye(xi.size)])
    return np.linalg.norm(g - fd) / np.linalg.norm(fd)


@pytest.mark.parametrize("kind,scene", [("static", HBOX), ("extrinsic_pivot", HBOX), ("relative_pivot", HBOX),
                                        ("grasped_static", GRASPED)])
def test_end_to_end_gradient_matches_fd(kind, scene):
    assert _fd_check(kind, scene) <= 1e-3


def test_grasped_static_reaches_compliance_equilibrium():
    # vertex on the ground, 3 N normal: the gripper carries 3 N minus the weight.
    # A stiff balance slack keeps the planned wrench within 1e-4 N of the exact balance.
    sk = build_skill("grasped_static", GRASPED, steps=2)
    plan = plan_skill(sk, GRASPED, OptimizerConfig(iterations=50, slack_weight=1e6))
    m_g = GRASPED.grasped.params.mass * GRASPED.grasped.params.gravity
    expect = rot(-0.3) @ np.array([0.0, -(3.0 - m_g)])
    for k in range(2):
        assert np.allclose(plan.forces[k], [0.0, 3.0], atol=1e-4)
        assert np.allclose(plan.wrenches[k][:2], expect, atol=1e-4)
    assert not plan_converged(plan, GRASPED)


@pytest.mark.parametrize("method,it,n", [("grad", 12, 1), ("mppi", 1, 12), ("mppi", 3, 4), ("icem", 3, 4)])
def test_query_budget_is_exact(method, it, n):
    sk = _skill(3)
    plan = plan_skill(sk, HBOX, OptimizerConfig(method=method, iterations=it, samples=n))
    assert plan.queries == it * n
    assert len(plan.history) == plan.queries
    assert all(b <= a for a, b in zip(plan.history, plan.history[1:]))


def test_mppi_budget_100():
    plan = plan_skill(_skill(3), HBOX, OptimizerConfig(method="mppi", iterations=1, samples=100))
    assert plan.queries == 100


def test_mppi_zero_noise_keeps_nominal():
    sk = _skill(3)
    pr = SkillProblem(sk, HBOX)
    _, xi = init_trajectory(sk, HBOX, pr)
    plan = optimize_mppi(pr, xi, OptimizerConfig(method="mppi", iterations=3, samples=5, sigma=0.0))
    assert np.array_equal(plan.params, xi)
    assert plan.loss.total == pr.loss(xi)


def test_icem_all_elites_is_plain_mean():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(7, 4))
    L = rng.uniform(size=7)
    mean, _ = icem_update(X, L, np.ones(4), n_elite=7, decay=0.9)
    assert np.allclose(mean, X.mean(axis=0), rtol=0, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 0.99))
def test_icem_spread_never_grows(seed, decay):
    rng = np.random.default_rng(seed)
    std = rng.uniform(0.1, 1.0, 3)
    for _ in range(5):
        X = rng.normal(size=(6, 3)) * std
        _, new = icem_update(X, np.zeros(6), std, 3, decay)
        assert np.all(new <= std)
        std = new


def test_optimizers_are_seeded():
    sk = _skill(3)
    for method in ("mppi", "icem"):
        cfg = OptimizerConfig(method=method, iterations=2, samples=5, seed=4)
        a = plan_skill(sk, HBOX, cfg)
        b = plan_skill(sk, HBOX, cfg)
        assert np.array_equal(a.params, b.params) and a.history == b.history


def test_gradient_plan_keeps_clearance_and_improves():
    sk = build_skill("relative_pivot", HBOX, steps=5)
    pr = SkillProblem(sk, HBOX)
    _, xi = init_trajectory(sk, HBOX, pr)
    plan = optimize_gradient(pr, xi, OptimizerConfig(iterations=30))
    s, th, _ = pr.unpack(plan.params)
    assert np.all(pr.gaps(s, th) < 0)
    assert plan.loss.total < pr.loss(xi)
    assert plan.history[-1] == plan.loss.total


def test_icem_and_mppi_return_feasible_plans():
    sk = _skill(3)
    pr = SkillProblem(sk, HBOX)
    _, xi = init_trajectory(sk, HBOX, pr)
    for opt, method in ((optimize_icem, "icem"), (optimize_mppi, "mppi")):
        plan = opt(pr, xi, OptimizerConfig(method=method, iterations=2, samples=6))
        assert math.isfinite(plan.loss.total) and plan.loss.total <= pr.loss(xi)


def test_p1_needs_extrinsic_object():
    from contactforge.errors import InfeasibleInit

    with pytest.raises(InfeasibleInit):
        SkillProblem(_skill(3), GRASPED)
