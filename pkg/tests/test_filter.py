import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chi2

from conftest import R_NATIVE, make_bs
from disac.filter import (
    BirthComponent,
    FilterConfig,
    TpmbmFilter,
    default_birth,
    extract_estimates,
    gate,
    linearize_at_mean,
    predict,
    update,
)
from disac.geometry import MEAS_SCALE, MeasurementSet, measurement_fn, measurement_jacobian, wrap_angle
from disac.motion import MotionConfig, process_noise_cov, sample_transition, transition_matrix
from disac.trajectory import (
    GlobalHypothesis,
    TpmbmDensity,
    TrajectoryBernoulli,
    TrajectoryGaussian,
    check_density,
)


def one_bernoulli(r, mean, cov=None, step=1):
    g = TrajectoryGaussian.single(step, mean, np.eye(6) if cov is None else cov, 5)
    return TpmbmDensity(step, [], [GlobalHypothesis(1.0, (0,))], {0: TrajectoryBernoulli(r, g, 0)}, 1, 1)


def test_predict_empty_adds_birth():
    birth = BirthComponent(0.05, np.arange(6.0), np.eye(6))
    d = predict(TpmbmDensity(), MotionConfig(), FilterConfig(birth=[birth]))
    assert d.time_step == 1 and len(d.ppp) == 1
    c = d.ppp[0]
    assert c.weight == 0.05
    np.testing.assert_array_equal(c.density.mean, birth.mean)
    np.testing.assert_array_equal(c.density.cov, birth.cov)


def test_predict_static_target():
    motion = MotionConfig(accel_std=(0, 0, 0), survival_prob=1.0)
    d = one_bernoulli(0.8, np.array([1.0, 2, 3, 0, 0, 0]))
    out = predict(d, motion, FilterConfig())
    g = out.pool[0].density
    assert g.window_size == 2
    np.testing.assert_array_equal(g.mean, np.tile([1.0, 2, 3, 0, 0, 0], 2))
    assert out.pool[0].existence == 0.8


def test_predict_matches_kalman_prediction():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(6, 6))
    P = A @ A.T + np.eye(6)
    m = rng.normal(size=6)
    motion = MotionConfig()
    g = predict(one_bernoulli(0.8, m, P), motion, FilterConfig()).pool[0].density
    F, Q = transition_matrix(motion), process_noise_cov(motion)
    np.testing.assert_allclose(g.newest_mean, F @ m, atol=1e-12)
    np.testing.assert_allclose(g.newest_cov, F @ P @ F.T + Q, atol=1e-12)


def test_misdetection_existence():
    bs = make_bs(pd=0.9)
    d = one_bernoulli(0.5, np.array([10.0, 0, 0, 0, 0, 0]))
    out = update(d, MeasurementSet(1), bs, FilterConfig())
    [b] = [out.pool[i] for i in out.hypotheses[0].bernoulli_refs]
    assert b.existence == pytest.approx(0.5 * 0.1 / (1 - 0.45), rel=1e-12)
    assert b.existence == pytest.approx(0.0909, abs=1e-4)


def test_misdetection_outside_fov_keeps_existence():
    d = one_bernoulli(0.5, np.array([100.0, 0, 0, 0, 0, 0]))
    out = update(d, MeasurementSet(1), make_bs(), FilterConfig())
    assert out.pool[out.hypotheses[0].bernoulli_refs[0]].existence == 0.5


def _ekf_oracle_step(m, P, z, bs, motion):
    F, Q = transition_matrix(motion), process_noise_cov(motion)
    m = F @ m
    P = F @ P @ F.T + Q
    H = measurement_jacobian(bs, m[:3])
    v = np.asarray(z) - np.array(measurement_fn(bs, m[:3]))
    v[1] = wrap_angle(v[1])
    S = H @ P @ H.T + bs.measurement_noise_cov
    K = np.linalg.solve(S.T, (P @ H.T).T).T
    return m + K @ v, P - K @ S @ K.T


def test_ekf_equivalence_single_target():
    bs = make_bs(pd=1.0, clutter=0.0)
    motion = MotionConfig()
    cfg = FilterConfig(birth=default_birth(bs))
    f = TpmbmFilter(bs, motion, cfg)
    rng = np.random.default_rng(11)
    x = np.array([20.0, 5.0, 2.0, 1.0, 0.5, 0.0])
    chol = np.linalg.cholesky(R_NATIVE)
    m = P = None
    worst_mean = worst_cov = 0.0
    for k in range(1, 101):
        if k > 1:
            x = sample_transition(x, motion, rng)
        z = np.array(measurement_fn(bs, x[:3])) + chol @ rng.normal(size=3)
        f.predict()
        d = f.update(MeasurementSet(k, z[None, :]))
        assert len(d.hypotheses) == 1 and d.hypotheses[0].weight == 1.0
        [b] = d.hypothesis_bernoullis(0)
        g = b.density
        if k == 1:
            m, P = g.newest_mean.copy(), g.newest_cov.copy()
            continue
        m, P = _ekf_oracle_step(m, P, z, bs, motion)
        worst_mean = max(worst_mean, float(np.abs(g.newest_mean - m).max()))
        worst_cov = max(worst_cov, float(np.abs(g.newest_cov - P).max()))
    assert worst_mean <= 1e-9
    assert worst_cov <= 1e-9


def test_gate_contract():
    bs = make_bs()
    d = one_bernoulli(0.9, np.array([30.0, 5, 2, 0, 0, 0]), np.eye(6) * 0.5)
    b = d.pool[0]
    cfg = FilterConfig()
    z0 = np.array(measurement_fn(bs, b.density.newest_mean[:3]))
    assert gate(b, z0, bs, cfg)
    lin = linearize_at_mean(b.density, bs)
    # move along the first axis of S to a chosen Mahalanobis distance
    S = np.linalg.inv(lin.S_inv)
    direction = np.array([0.0, 1.0, 0.0])
    scale = np.sqrt(direction @ lin.S_inv @ direction)
    for d2, expected in [(cfg.gate_threshold * (1 - 1e-9), True), (cfg.gate_threshold * (1 + 1e-9), False)]:
        zs = z0 * MEAS_SCALE + direction * np.sqrt(d2) / scale
        assert gate(b, zs / MEAS_SCALE, bs, cfg) is expected
    assert S.shape == (3, 3)


def test_gate_acceptance_rate():
    bs = make_bs()
    cfg = FilterConfig()
    assert cfg.gate_threshold == pytest.approx(16.266, abs=1e-3)
    assert cfg.gate_threshold == pytest.approx(chi2.ppf(0.999, 3), rel=1e-12)
    d = one_bernoulli(0.9, np.array([30.0, 5, 2, 0, 0, 0]), np.eye(6) * 0.5)
    b = d.pool[0]
    lin = linearize_at_mean(b.density, bs)
    S = np.linalg.inv(lin.S_inv)
    rng = np.random.default_rng(3)
    zhat = lin.zhat
    hits = 0
    for v in rng.multivariate_normal(np.zeros(3), S, size=10_000):
        hits += gate(b, (zhat + v) / MEAS_SCALE, bs, cfg)
    assert hits / 10_000 >= 0.998


def test_far_measurement_not_associated():
    bs = make_bs(clutter=3.0)
    d = one_bernoulli(0.9, np.array([30.0, 0, 0, 0, 0, 0]), np.eye(6) * 0.1)
    far = np.array(measurement_fn(bs, [-30.0, 10.0, 0.0]))
    out = update(d, MeasurementSet(1, far[None, :]), bs, FilterConfig())
    for h in out.hypotheses:
        for i in h.bernoulli_refs:
            b = out.pool[i]
            if b.track_uid == 0:
                assert b.existence < 0.9
                np.testing.assert_array_equal(b.density.mean, d.pool[0].density.mean)


def test_newborn_existence_decreases_with_clutter():
    z = np.array(measurement_fn(make_bs(), [20.0, 10.0, 0.0]))
    existences = []
    for rate in [0.1, 1.0, 3.0, 10.0]:
        bs = make_bs(clutter=rate)
        d = predict(TpmbmDensity(), MotionConfig(), FilterConfig(birth=default_birth(bs)))
        out = update(d, MeasurementSet(1, z[None, :]), bs, FilterConfig())
        existences.append(max(b.existence for b in out.pool.values()))
    assert all(a > b for a, b in zip(existences, existences[1:]))


def _scenario_measurements(seed, steps=6):
    bs = make_bs(clutter=3.0)
    rng = np.random.default_rng(seed)
    from disac.geometry import sample_detections_and_clutter
    x = [np.array([20.0, 5, 1, -3, 1, 0]), np.array([-10.0, -30, 3, 2, 2, 0])]
    sets = []
    for k in range(1, steps + 1):
        sets.append(sample_detections_and_clutter(bs, [s[:3] for s in x], rng, k))
        x = [sample_transition(s, MotionConfig(), rng) for s in x]
    return bs, sets


def _run(bs, sets, check=False):
    cfg = FilterConfig(birth=default_birth(bs), initial_birth_weight=1.0)
    f = TpmbmFilter(bs, MotionConfig(), cfg)
    for mset in sets:
        f.predict()
        if check:
            check_density(f.density)
        f.update(mset)
        if check:
            check_density(f.density)
    return f


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_density_invariants_hold(seed):
    bs, sets = _scenario_measurements(seed)
    _run(bs, sets, check=True)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.randoms(use_true_random=False))
def test_measurement_order_irrelevant(seed, rnd):
    bs, sets = _scenario_measurements(seed, steps=4)
    shuffled = []
    for m in sets:
        idx = list(range(len(m)))
        rnd.shuffle(idx)
        shuffled.append(MeasurementSet(m.time_step, m.z[idx]))
    a, b = _run(bs, sets), _run(bs, shuffled)
    wa = sorted(h.weight for h in a.density.hypotheses)
    wb = sorted(h.weight for h in b.density.hypotheses)
    np.testing.assert_allclose(wa, wb, rtol=1e-8, atol=1e-12)
    ea = sorted(tuple(np.round(t.states[-1, :3], 6)) for t in a.estimates())
    eb = sorted(tuple(np.round(t.states[-1, :3], 6)) for t in b.estimates())
    assert ea == eb


def test_extract_rules():
    cfg = FilterConfig()
    assert extract_estimates(TpmbmDensity(), cfg) == []
    assert extract_estimates(one_bernoulli(0.3, np.zeros(6)), cfg) == []
    [est] = extract_estimates(one_bernoulli(0.9, np.arange(6.0)), cfg)
    np.testing.assert_array_equal(est.states[0], np.arange(6.0))
    g = TrajectoryGaussian.single(1, np.zeros(6), np.eye(6), 5)
    d = TpmbmDensity(1, [], [GlobalHypothesis(0.3, (0,)), GlobalHypothesis(0.7, (1,))],
                     {0: TrajectoryBernoulli(0.9, g, 0),
                      1: TrajectoryBernoulli(0.9, TrajectoryGaussian.single(1, np.ones(6), np.eye(6), 5), 1)})
    [est] = extract_estimates(d, cfg)
    np.testing.assert_array_equal(est.states[0], np.ones(6))
