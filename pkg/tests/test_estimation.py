import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contactforge.contact import SceneState
from contactforge.errors import ConfigError, TooFewPoints
from contactforge.estimation import (EdgePointCloud, align_se2, candidate_points, contact_wrench_map,
                                     edge_residual, estimate_contact, fit_pose, read_cloud_csv, write_cloud_csv)
from contactforge.geometry import Pose2, Wrench2
from contactforge.scene import load_scene, load_shape
from contactforge.sim import synth_edge_cloud

SCENE = load_scene("grasped_only")
BOX = SCENE.grasped.shape
PENT = load_shape("pentagon")


def _cloud(pose, n=200, sigma=0.0, seed=0, shape_scene=SCENE):
    edges = list(range(len(shape_scene.grasped.shape)))
    return synth_edge_cloud(shape_scene, SceneState(pose, pose), n, seed=seed, sigma=sigma, edges=edges)


def test_align_se2_exact():
    rng = np.random.default_rng(0)
    body = rng.normal(size=(10, 2))
    pose = Pose2(0.3, -0.1, 0.7)
    got = align_se2(body, np.array([pose.transform_point(p) for p in body]))
    assert np.allclose(got.as_array(), pose.as_array(), atol=1e-12)


def test_fit_pose_fixed_point():
    pose = Pose2(0.01, 0.05, 0.2)
    cloud = _cloud(pose)
    got, res = fit_pose(cloud, BOX, pose)
    assert np.allclose(got.as_array(), pose.as_array(), atol=1e-12)
    assert res < 1e-24


@pytest.mark.parametrize("offset", [(2e-3, 0, 0), (0, -2e-3, 0), (1.4e-3, 1.4e-3, 0.01)])
def test_fit_pose_recovers_offset(offset):
    pose = Pose2(0.01, 0.05, 0.2)
    init = Pose2.from_array(pose.as_array() + np.array(offset))
    got, res = fit_pose(_cloud(pose), BOX, init)
    assert np.linalg.norm(got.position - pose.position) < 1e-5
    assert abs(got.theta - pose.theta) < 1e-4
    assert res < 1e-12


def test_fit_pose_noise_oracle():
    # 0.1 mm noise: residual near the normal-direction variance and pose within 0.5 mm on 95% of seeds
    pose = Pose2(0.0, 0.06, -0.1)
    sigma = 1e-4
    ok, res = 0, []
    for seed in range(100):
        got, r = fit_pose(_cloud(pose, sigma=sigma, seed=seed), BOX, pose)
        ok += np.linalg.norm(got.position - pose.position) < 5e-4
        res.append(r)
    assert ok >= 95
    assert 0.5 * sigma ** 2 < np.mean(res) < 1.5 * sigma ** 2


def test_fit_pose_residual_not_above_start():
    pose = Pose2(0.01, 0.05, 0.2)
    cloud = _cloud(pose, sigma=2e-4, seed=3)
    init = Pose2(0.012, 0.049, 0.21)
    _, res = fit_pose(cloud, BOX, init)
    assert res <= edge_residual(cloud, BOX, init)


def test_fit_pose_errors():
    with pytest.raises(TooFewPoints):
        fit_pose(EdgePointCloud(np.zeros((2, 2))), BOX, Pose2())
    with pytest.raises(ConfigError):
        EdgePointCloud(np.zeros((3, 2)), weights=[1.0, 2.0])


def test_synth_cloud_examples():
    pose = Pose2(0.02, 0.04, 0.3)
    c = synth_edge_cloud(SCENE, SceneState(pose, pose), 50, sigma=0.0)
    assert edge_residual(c, BOX, pose) < 1e-30
    assert len(synth_edge_cloud(SCENE, SceneState(pose, pose), 0)) == 0


def test_cloud_csv_round_trip(tmp_path):
    c = EdgePointCloud(np.random.default_rng(0).normal(size=(5, 2)), np.arange(1.0, 6.0))
    write_cloud_csv(tmp_path / "c.csv", c)
    back = read_cloud_csv(tmp_path / "c.csv")
    assert np.array_equal(back.points, c.points) and np.array_equal(back.weights, c.weights)
    (tmp_path / "bad.csv").write_text("x,y\n1,2\n3,oops\n")
    with pytest.raises(ConfigError):
        read_cloud_csv(tmp_path / "bad.csv")


# CPF

def _wrench(shape, face, s, f):
    p = shape.point_at(face, s)
    return contact_wrench_map(shape, face, p) @ np.asarray(f)


def test_cpf_face_midpoint_normal_force():
    for face in range(len(PENT)):
        L = PENT.edge_length(face)
        w = _wrench(PENT, face, L / 2, (0.0, 2.0))
        r = estimate_contact(Wrench2.from_array(w), PENT, Pose2(), mu=0.5, n_candidates_per_face=20)
        assert r.best.face == face
        assert abs(r.best.arc_length - L / 2) <= L / 20
        assert r.best.residual <= 1e-10
        assert r.best.force.f_n > 0


def test_cpf_zero_wrench_degenerate():
    r = estimate_contact(Wrench2(), PENT, Pose2(), mu=0.5, n_candidates_per_face=5)
    assert r.best.face == 0 and r.best.arc_length == 0.0
    assert all(h.residual == 0 for h in r.ranked)


def test_cpf_outward_pull_reports_residual():
    w = -_wrench(PENT, 2, PENT.edge_length(2) / 2, (0.0, 2.0))
    coarse = estimate_contact(w, PENT, Pose2(), mu=0.3, n_candidates_per_face=10)
    dense = estimate_contact(w, PENT, Pose2(), mu=0.3, n_candidates_per_face=100)
    assert coarse.best.residual > 1e-3
    assert dense.best.residual <= coarse.best.residual


def test_cpf_world_point_follows_pose():
    pose = Pose2(0.1, 0.2, 0.5)
    w = _wrench(PENT, 1, 0.01, (0.1, 1.0))
    r = estimate_contact(w, PENT, pose, mu=0.5, n_candidates_per_face=10)
    assert np.allclose(r.best.point.point, pose.transform_point(PENT.point_at(r.best.face, r.best.arc_length)))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_cpf_residual_non_increasing_in_density(seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=3) * (1, 1, 0.02)
    prev = np.inf
    for n in (2, 4, 8):
        r = estimate_contact(w, PENT, Pose2(), mu=0.4, n_candidates_per_face=n).best.residual
        assert r <= prev + 1e-12
        prev = r


def test_candidate_grid():
    c = candidate_points(PENT, 4)
    assert len(c) == 4 * len(PENT)
    assert c[1][1] == pytest.approx(PENT.edge_length(0) / 4)
    with pytest.raises(ConfigError):
        candidate_points(PENT, 0)
    with pytest.raises(ConfigError):
        estimate_contact([np.nan, 0, 0], PENT, Pose2(), 0.5)
