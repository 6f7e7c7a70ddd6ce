import math

import numpy as np
import pytest

from contactforge.contact import (Contact, ContactForce, ContactModelConfig, RigidBody, SceneState,
                                  assemble_p1, assemble_welded_p1, balance_residual, check_mode_consistency,
                                  grasp_wrench_local, grasp_wrench_world, solve_contact_forces, solve_program)
from contactforge.errors import EmptyContactSet, GeometryMismatch
from contactforge.geometry import (BodyParams, ContactPoint, PolygonShape, Pose2, Wrench2,
                                   contact_jacobian, detect_ground_contacts)
from contactforge.qp import solve

from helpers import feasible_p1_instances, random_grasped_only_instance

HEX = PolygonShape(np.array([[0.05 * math.cos(a), 0.05 * math.sin(a)]
                             for a in np.arange(6) * math.pi / 3]))
BOX = PolygonShape(np.array([[-0.05, -0.05], [0.05, -0.05], [0.05, 0.05], [-0.05, 0.05]]))
TOOL = RigidBody(PolygonShape(np.array([[-0.01, -0.05], [0.01, -0.05], [0.01, 0.05], [-0.01, 0.05]])),
                 BodyParams(0.2))


def holding_wrench(state, go=TOOL):
    """Gripper wrench that exactly carries the tool's weight."""
    return Wrench2.from_array(grasp_wrench_local([0, go.params.mass * go.params.gravity, 0], state.x_go, go.params))


def test_hexagon_resting_flat():
    eo = RigidBody(HEX, BodyParams(0.7))
    x_eo = Pose2(0.0, 0.05 * math.sin(math.pi / 3), math.pi / 6 + math.pi / 2)
    cps = detect_ground_contacts(HEX, x_eo)
    assert len(cps) == 2
    state = SceneState(Pose2(0.2, 0.3, 0), Pose2(0.2, 0.3, 0), x_eo)
    contacts = [Contact(c, "eo", "ground", 0.4) for c in cps]
    forces, sol, _ = solve_contact_forces(state, contacts, ["stick", "stick"], holding_wrench(state),
                                          {"go": TOOL, "eo": eo})
    assert sol.optimal
    assert sum(f.f_n for f in forces) == pytest.approx(0.7 * 9.81, abs=1e-9)
    assert max(abs(f.f_t) for f in forces) < 1e-9


def _grasped_point_contact(x_go, below=0.05):
    p = x_go.transform_point((0.0, -below))
    return ContactPoint(p, np.array([0.0, 1.0]), np.array([0.0, -below]), p.copy())


def test_sliding_positive_sets_boundary():
    x_go = Pose2(0.0, 0.05, 0.0)
    state = SceneState(x_go, x_go)
    mu = 0.4
    fn = 5 + 0.2 * 9.81
    w = Wrench2(-mu * fn, -5.0, -0.05 * mu * fn)
    c = Contact(_grasped_point_contact(x_go), "go", "ground", mu)
    forces, sol, _ = solve_contact_forces(state, [c], ["slide+"], w, {"go": TOOL}, program="p2")
    assert sol.optimal
    assert forces[0].f_t == pytest.approx(-mu * forces[0].f_n, abs=1e-12)
    assert forces[0].f_n == pytest.approx(fn, abs=1e-9)


def test_grasped_box_pressed_down():
    x_go = Pose2(0.0, 0.05, 0.0)
    state = SceneState(x_go, x_go)
    c = Contact(_grasped_point_contact(x_go), "go", "ground", 0.5)
    forces, sol, _ = solve_contact_forces(state, [c], ["stick"], Wrench2(0, -5, 0), {"go": TOOL},
                                          program="p2")
    assert forces[0].f_n == pytest.approx(6.962, abs=1e-9)
    assert abs(forces[0].f_t) < 1e-12


def test_contact_free_p2_is_trivially_optimal():
    go = RigidBody(TOOL.shape, BodyParams(0.2, gravity=0.0))
    state = SceneState(Pose2(), Pose2())
    forces, sol, prog = solve_contact_forces(state, [], [], Wrench2(), {"go": go}, program="p2")
    assert sol.optimal and forces == [] and prog.problem.shape[0] == 0


def test_lateral_wrench_beyond_budget_is_infeasible():
    x_go = Pose2(0.0, 0.05, 0.0)
    state = SceneState(x_go, x_go)
    c = Contact(_grasped_point_contact(x_go), "go", "ground", 0.5)
    fn = 6.962
    for scale, ok in ((0.9, True), (1.1, False)):
        fx = scale * 0.5 * fn
        w = Wrench2(fx, -5.0, 0.05 * fx)
        forces, sol, _ = solve_contact_forces(state, [c], ["stick"], w, {"go": TOOL}, program="p2")
        assert sol.optimal is ok


def _push_scene(push):
    """Tool pressing horizontally on the left face of a 1 kg box at mid height."""
    eo = RigidBody(BOX, BodyParams(1.0))
    x_eo = Pose2(0.0, 0.05, 0.0)
    x_go = Pose2(-0.06, 0.05, 0.0)
    p = np.array([-0.05, 0.05])
    cp = ContactPoint(p, np.array([-1.0, 0.0]), np.array([0.01, 0.0]), np.array([-0.05, 0.0]), "a", 1, 3)
    contacts = [Contact(c, "eo", "ground", 0.3) for c in detect_ground_contacts(BOX, x_eo)]
    contacts.append(Contact(cp, "go", "eo", 0.5, role="object"))
    state = SceneState(x_go, x_go, x_eo)
    # tool balance: w + g + J^T f = 0 with f = (0, push) along the normal (-1, 0)
    w_world = np.array([push, 0.2 * 9.81, 0.0])
    return state, contacts, Wrench2.from_array(grasp_wrench_local(w_world, x_go, TOOL.params)), \
        {"go": TOOL, "eo": eo}


def test_push_beyond_friction_budget_is_infeasible():
    budget = 0.3 * 9.81
    for push, ok in ((0.8 * budget, True), (1.2 * budget, False)):
        state, contacts, w, bodies = _push_scene(push)
        forces, sol, _ = solve_contact_forces(state, contacts, ["stick"] * 3, w, bodies)
        assert sol.optimal is ok
        if ok:
            assert forces[2].f_n == pytest.approx(push, abs=1e-9)


def test_relaxed_object_cone_allows_outside_force():
    state, contacts, w, bodies = _push_scene(1.0)
    # an object-object force with |f_t| = 2 f_n lies outside the mu = 0.5 cone
    J = contact_jacobian(state.x_go, TOOL.params, contacts[2].cp)
    w_world = -(np.array([0.0, -0.2 * 9.81, 0.0]) + J.T @ np.array([2.0, 1.0]))
    w = Wrench2.from_array(grasp_wrench_local(w_world, state.x_go, TOOL.params))
    strict, sol, _ = solve_contact_forces(state, contacts, ["stick"] * 3, w, bodies)
    assert strict is None
    relaxed, sol, _ = solve_contact_forces(state, contacts, ["stick"] * 3, w, bodies,
                                           ContactModelConfig(relax_object_cone=True))
    assert sol.optimal
    assert relaxed[2].as_array() == pytest.approx([2.0, 1.0], abs=1e-9)


def test_errors():
    state, contacts, w, bodies = _push_scene(1.0)
    with pytest.raises(GeometryMismatch):
        assemble_p1(state, contacts, ["stick"], w, bodies)
    with pytest.raises(EmptyContactSet):
        assemble_p1(state, [], [], w, bodies)
    moved = SceneState(state.x_ee, Pose2(0.3, 0.3, 0.0), state.x_eo)
    with pytest.raises(GeometryMismatch):
        assemble_p1(moved, contacts, ["stick"] * 3, w, bodies)


def test_consistency_examples():
    r = check_mode_consistency([ContactForce(0, 10)], ["stick"], [0.33])[0]
    assert r.passed and r.margin == pytest.approx(3.3)
    r = check_mode_consistency([ContactForce(-3.3, 10)], ["slide+"], [0.33])[0]
    assert r.passed
    r = check_mode_consistency([ContactForce(5, 10)], ["stick"], [0.33])[0]
    assert not r.passed and r.margin == pytest.approx(-1.7)
    r = check_mode_consistency([ContactForce(3.3, 10)], ["slide+"], [0.33])[0]
    assert not r.passed
    assert check_mode_consistency([(0.0, 0.0)], ["sep"], [0.5])[0].passed


def test_wrench_frame_round_trip():
    body = BodyParams(0.3, com=(0.01, -0.02))
    x = Pose2(0.1, 0.2, 0.7)
    w = np.array([1.0, -2.0, 0.03])
    assert np.allclose(grasp_wrench_local(grasp_wrench_world(w, x, body), x, body), w)


def test_balances_by_direct_substitution():
    for (state, contacts, modes, w, bodies), forces, sol, prog in feasible_p1_instances(1, 40):
        res = balance_residual(state, contacts, forces, w, bodies)
        assert np.abs(res["eo"]).max() <= 1e-6 and np.abs(res["go"]).max() <= 1e-6
        mus = [c.mu for c in contacts]
        assert all(r.passed for r in check_mode_consistency(forces, modes, mus, 1e-5))
        assert min(f.f_n for f in forces) >= -1e-7


def test_u_scaling_invariance_all_sticking():
    checked = 0
    for (state, contacts, modes, w, bodies), forces, sol, prog in feasible_p1_instances(2, 60):
        if any(m != "stick" for m in modes):
            continue
        scaled, sol2, _ = solve_contact_forces(state, contacts, modes, w, bodies,
                                               ContactModelConfig(U=7.5 * np.eye(2)))
        assert np.allclose([f.as_array() for f in scaled], [f.as_array() for f in forces], atol=1e-7)
        checked += 1
    assert checked >= 5


def test_removing_separated_contact_changes_nothing():
    checked = 0
    for (state, contacts, modes, w, bodies), forces, sol, prog in feasible_p1_instances(3, 60):
        if "sep" not in modes:
            continue
        keep = [i for i, m in enumerate(modes) if m != "sep"]
        f2, sol2, _ = solve_contact_forces(state, [contacts[i] for i in keep], [modes[i] for i in keep],
                                           w, bodies)
        assert np.allclose([f.as_array() for f in f2], [forces[i].as_array() for i in keep], atol=1e-9)
        checked += 1
    assert checked >= 3


def test_p2_equals_welded_p1():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 20:
        state, contacts, modes, w, bodies = random_grasped_only_instance(rng)
        p2, sol2, _ = solve_contact_forces(state, contacts, modes, w, bodies, program="p2")
        prog = assemble_welded_p1(state, contacts, modes, w, bodies)
        sol1, p1 = solve_program(prog)
        assert sol1.optimal == sol2.optimal
        if p2 is None:
            continue
        assert np.allclose([f.as_array() for f in p1], [f.as_array() for f in p2], atol=1e-6)
        checked += 1


def test_torque_rows_scaled_by_gyration_radius():
    state, contacts, w, bodies = _push_scene(1.0)
    prog = assemble_p1(state, contacts, ["stick"] * 3, w, bodies)
    assert prog.row_scale[2] == pytest.approx(bodies["eo"].gyration_radius)
    assert prog.row_scale[5] == pytest.approx(bodies["go"].gyration_radius)


def test_balance_slack_keeps_program_feasible():
    state, contacts, w, bodies = _push_scene(10.0)
    prog = assemble_p1(state, contacts, ["stick"] * 3, w, bodies, ContactModelConfig(balance_slack=1e4))
    sol = solve(prog.problem)
    assert sol.optimal
    assert np.abs(sol.z[prog.slack_offset:]).max() > 1e-3
