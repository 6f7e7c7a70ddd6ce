import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from contactforge.compliance import (K_BUBBLES, K_GELSLIM, DeflectionSample, ElasticityModel,
                                     deflection_from_wrench, ee_from_deflection, fit_elasticity,
                                     fit_friction, grasp_deflection, read_deflection_csv,
                                     read_friction_csv, synth_deflection_samples, wrench_from_deflection,
                                     write_deflection_csv)
from contactforge.errors import (ConfigError, NonPositiveNormal, RankDeficientData,
                                 SingularStiffness)
from contactforge.geometry import Pose2, Wrench2

KB = ElasticityModel(K_BUBBLES)


def frob_rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_published_matrices_are_psd():
    for K in (K_BUBBLES, K_GELSLIM):
        assert np.linalg.eigvalsh(K).min() > 0
        ElasticityModel(K)


def test_forward_map_bubbles():
    w = wrench_from_deflection(KB, (0.001, 0, 0)).as_array()
    assert np.allclose(w, (2.20896, -0.14331, 0.39986), atol=1e-9, rtol=0)
    assert np.all(wrench_from_deflection(KB, (0, 0, 0)).as_array() == 0)
    D = ElasticityModel(np.diag([1.0, 2.0, 3.0]))
    assert wrench_from_deflection(D, (0, 0.5, 0)).as_array() == pytest.approx((0, 1.0, 0))


def test_model_validation():
    with pytest.raises(ConfigError):
        ElasticityModel(np.array([[1, 2, 0], [0, 1, 0], [0, 0, 1.0]]))
    with pytest.raises(ConfigError):
        ElasticityModel(np.diag([1.0, -1.0, 1.0]))


def test_inverse_map():
    x = deflection_from_wrench(KB, Wrench2(1, 0, 0))
    assert np.allclose(x, np.linalg.solve(K_BUBBLES, [1, 0, 0]), rtol=1e-12)
    assert np.all(deflection_from_wrench(KB, Wrench2()) == 0)
    with pytest.raises(SingularStiffness):
        deflection_from_wrench(ElasticityModel(np.diag([1.0, 1.0, 0.0])), Wrench2(1, 0, 0))


def test_round_trip_random():
    rng = np.random.default_rng(0)
    for K in (K_BUBBLES, K_GELSLIM):
        m = ElasticityModel(K)
        for w in rng.normal(size=(100, 3)) * 5:
            back = wrench_from_deflection(m, deflection_from_wrench(m, w)).as_array()
            assert np.linalg.norm(back - w) <= 1e-9 * np.linalg.norm(w)


@given(st.lists(st.floats(-1e-2, 1e-2), min_size=3, max_size=3),
       st.lists(st.floats(-1e-2, 1e-2), min_size=3, max_size=3),
       st.floats(-10, 10), st.floats(-10, 10))
def test_linearity(x, y, a, b):
    x, y = np.array(x), np.array(y)
    lhs = wrench_from_deflection(KB, a * x + b * y).as_array()
    rhs = a * wrench_from_deflection(KB, x).as_array() + b * wrench_from_deflection(KB, y).as_array()
    assert np.allclose(lhs, rhs, atol=1e-12 * (1 + np.abs(rhs).max()))


@pytest.mark.parametrize("K", [np.diag([2000.0, 1800.0, 1600.0]), K_BUBBLES, K_GELSLIM])
def test_fit_recovers_known_matrix(K):
    model, resid = fit_elasticity(synth_deflection_samples(K, seed=1))
    assert frob_rel(model.K, K) < 0.01
    assert np.linalg.eigvalsh(model.K).min() >= -1e-9 * np.linalg.norm(model.K)


def test_fit_rank_deficient():
    samples = [DeflectionSample((1e-3 * i, 0, 0), Wrench2(2.0 * i, 0, 0)) for i in range(1, 10)]
    with pytest.raises(RankDeficientData):
        fit_elasticity(samples)
    with pytest.raises(RankDeficientData):
        fit_elasticity(samples[:3])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_fit_psd_and_not_worse_than_zero(seed):
    # arbitrary (even non-PSD) data still yields a PSD fit no worse than K = 0
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1e-3, 1e-3, (20, 3))
    W = rng.normal(size=(20, 3))
    samples = [DeflectionSample(tuple(x), Wrench2.from_array(w)) for x, w in zip(X, W)]
    model, resid = fit_elasticity(samples)
    assert np.linalg.eigvalsh(model.K).min() >= -1e-9 * max(1.0, np.linalg.norm(model.K))
    assert resid <= np.mean(np.sum(W ** 2, axis=1)) + 1e-12


def test_friction_examples():
    rng = np.random.default_rng(0)
    # power-of-two normals keep the boundary ratio exact in floating point
    fn = 2.0 ** rng.integers(0, 5, 50)
    ratio = rng.uniform(-0.33, 0.33, 50)
    ratio[7] = 0.33
    ratio[11] = -0.33
    assert fit_friction(np.c_[ratio * fn, fn], q=1.0) == 0.33
    assert fit_friction([(0, 1), (0, 3)]) == 0.0
    assert fit_friction([(1, 10), (-2, 10), (3, 10)], q=1.0) == pytest.approx(0.3)
    with pytest.raises(NonPositiveNormal):
        fit_friction([(1, 0)])


@given(st.lists(st.tuples(st.floats(-5, 5), st.floats(0.1, 10)), min_size=1, max_size=30),
       st.floats(0.01, 100))
def test_friction_scale_invariant_and_coverage(samples, lam):
    F = np.array(samples)
    mu = fit_friction(F)
    assert fit_friction(F * lam) == pytest.approx(mu, rel=1e-12, abs=1e-15)
    inside = np.abs(F[:, 0]) / F[:, 1] <= mu + 1e-15
    assert inside.mean() >= 0.99 or len(F) < 100


def test_grasp_deflection_round_trip():
    x_go = Pose2(0.1, 0.2, 0.3)
    grasp = Pose2(0.0, 0.03, 0.1)
    d = np.array([1e-3, -2e-3, 0.01])
    x_ee = ee_from_deflection(x_go, d, grasp)
    assert np.allclose(grasp_deflection(x_ee, x_go, grasp), d, atol=1e-14)


def test_csv_round_trip(tmp_path):
    samples = synth_deflection_samples(K_BUBBLES, n=12, seed=4)
    p = tmp_path / "d.csv"
    write_deflection_csv(p, samples)
    back = read_deflection_csv(p)
    assert [s.deflection for s in back] == [s.deflection for s in samples]


def test_csv_errors_have_line_numbers(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("dx,dy,dtheta,fx,fy,tau\n0,0,0,0,0,0\n1,2,x,0,0,0\n")
    with pytest.raises(ConfigError, match=":3:"):
        read_deflection_csv(p)
    p.write_text("a,b\n")
    with pytest.raises(ConfigError, match=":1:"):
        read_friction_csv(p)
