import numpy as np
import pytest
from hypothesis import given, strategies as st

from disac.motion import MotionConfig, process_noise_cov, transition_matrix
from disac.trajectory import (
    GlobalHypothesis,
    PppComponent,
    TpmbmDensity,
    TrajectoryBernoulli,
    TrajectoryGaussian,
    TrajectoryState,
    lscan_slide,
    map_trajectory_estimate,
    normalize_hypotheses,
    prune,
)


def gaussian(step=1, mean=None, window_len=5):
    mean = np.arange(6.0) if mean is None else mean
    return TrajectoryGaussian.single(step, mean, np.eye(6), window_len)


def density_with_weights(weights):
    d = TpmbmDensity(time_step=1)
    d.pool = {0: TrajectoryBernoulli(0.9, gaussian())}
    d.hypotheses = [GlobalHypothesis(w, (0,) if n % 2 else ()) for n, w in enumerate(weights)]
    return d


@pytest.mark.parametrize("weights, expected", [((2, 2), (0.5, 0.5)), ((0.3,), (1.0,)), ((1, 3), (0.25, 0.75))])
def test_normalize_examples(weights, expected):
    d = normalize_hypotheses(density_with_weights(weights))
    assert tuple(h.weight for h in d.hypotheses) == pytest.approx(expected, abs=1e-15)


def test_prune_ppp_threshold():
    d = TpmbmDensity(ppp=[PppComponent(1e-6, gaussian()), PppComponent(0.5, gaussian())])
    assert [c.weight for c in prune(d, 1e-5, 1e-5, 200).ppp] == [0.5]


def test_prune_caps_hypotheses_keeping_best():
    d = TpmbmDensity(time_step=1)
    d.pool = {i: TrajectoryBernoulli(0.9, gaussian(), track_uid=i) for i in range(250)}
    d.hypotheses = [GlobalHypothesis(float(i + 1), (i,)) for i in range(250)]
    out = prune(d, 1e-5, 1e-5, 200)
    assert len(out.hypotheses) == 200
    assert {h.bernoulli_refs[0] for h in out.hypotheses} == set(range(50, 250))
    assert set(out.pool) == set(range(50, 250))
    assert sum(h.weight for h in out.hypotheses) == pytest.approx(1.0, abs=1e-12)


def test_prune_idempotent_when_nothing_below():
    d = normalize_hypotheses(TpmbmDensity(
        1, [PppComponent(0.2, gaussian())], [GlobalHypothesis(0.4, (0,)), GlobalHypothesis(0.6, (1,))],
        {0: TrajectoryBernoulli(0.9, gaussian()), 1: TrajectoryBernoulli(0.7, gaussian())}))
    out = prune(d, 1e-5, 1e-5, 200)
    assert [(h.weight, h.bernoulli_refs) for h in out.hypotheses] == [(0.6, (1,)), (0.4, (0,))]
    assert out.pool == d.pool and len(out.ppp) == 1


def test_prune_drops_low_existence_and_merges():
    d = TpmbmDensity(1, [], [GlobalHypothesis(0.5, (0, 1)), GlobalHypothesis(0.5, (0,))],
                     {0: TrajectoryBernoulli(0.9, gaussian()), 1: TrajectoryBernoulli(1e-7, gaussian())})
    out = prune(d, 1e-5, 1e-5, 200)
    assert [(h.weight, h.bernoulli_refs) for h in out.hypotheses] == [(1.0, (0,))]
    assert set(out.pool) == {0}


def test_slide_noop_below_window():
    g = gaussian(window_len=5)
    assert lscan_slide(g) is g
    F, Q = transition_matrix(MotionConfig()), process_noise_cov(MotionConfig())
    g2 = g.predict(F, Q, 0.99)
    assert g2.window_size == 2 and len(g2.frozen) == 0


def test_slide_block_diagonal():
    blocks = [np.diag(np.full(6, i + 1.0)) for i in range(3)]
    cov = np.zeros((18, 18))
    for i, b in enumerate(blocks):
        cov[6 * i:6 * i + 6, 6 * i:6 * i + 6] = b
    mean = np.arange(18.0)
    g = TrajectoryGaussian(1, 3, 3, mean, cov)
    s = lscan_slide(g)
    np.testing.assert_array_equal(s.frozen, [mean[:6]])
    np.testing.assert_array_equal(s.mean, mean[6:])
    np.testing.assert_array_equal(s.cov, cov[6:, 6:])


def _linear_update(mean, cov, H, R, z):
    S = H @ cov @ H.T + R
    K = cov @ H.T @ np.linalg.inv(S)
    return mean + K @ (z - H @ mean), cov - K @ S @ K.T


def test_lscan_matches_full_joint_reference():
    rng = np.random.default_rng(0)
    F, Q = transition_matrix(MotionConfig()), process_noise_cov(MotionConfig(accel_std=(1, 1, 1)))
    L = 5
    A = rng.normal(size=(6, 6))
    P0 = A @ A.T + np.eye(6)
    m0 = rng.normal(size=6)
    g = TrajectoryGaussian.single(1, m0, P0, L)
    ref_m, ref_P = m0.copy(), P0.copy()
    H = rng.normal(size=(3, 6))
    R = np.eye(3) * 0.5
    frozen_at_slide = []
    for _ in range(10):
        if g.window_size == L:
            frozen_at_slide.append(ref_m[len(ref_m) - 6 * L:len(ref_m) - 6 * (L - 1)].copy())
        g = g.predict(F, Q, 1.0)
        n = len(ref_m)
        m = np.concatenate([ref_m, F @ ref_m[n - 6:]])
        P = np.zeros((n + 6, n + 6))
        P[:n, :n] = ref_P
        P[:n, n:] = ref_P[:, n - 6:] @ F.T
        P[n:, :n] = P[:n, n:].T
        P[n:, n:] = F @ ref_P[n - 6:, n - 6:] @ F.T + Q
        ref_m, ref_P = m, P
        z = rng.normal(size=3)
        Hw = np.zeros((3, len(g.mean)))
        Hw[:, -6:] = H
        gm, gP = _linear_update(g.mean, g.cov, Hw, R, z)
        g = g.with_newest(gm, gP)
        Hf = np.zeros((3, len(ref_m)))
        Hf[:, -6:] = H
        ref_m, ref_P = _linear_update(ref_m, ref_P, Hf, R, z)
    w = 6 * L
    np.testing.assert_allclose(g.mean, ref_m[-w:], atol=1e-10)
    np.testing.assert_allclose(g.cov, ref_P[-w:, -w:], atol=1e-10)
    np.testing.assert_allclose(g.frozen, np.array(frozen_at_slide), atol=1e-10)


def test_map_estimate_single():
    g = gaussian(step=4)
    est = map_trajectory_estimate(TrajectoryBernoulli(0.9, g))
    assert (est.birth_step, est.end_step) == (4, 4)
    np.testing.assert_array_equal(est.states[0], g.mean)


def test_map_estimate_length_with_frozen():
    F, Q = transition_matrix(MotionConfig()), process_noise_cov(MotionConfig())
    g = gaussian(step=3)
    for _ in range(7):
        g = g.predict(F, Q, 1.0)
    assert g.window_size == 5 and len(g.frozen) == 3
    est = map_trajectory_estimate(TrajectoryBernoulli(1.0, g))
    assert (est.birth_step, est.end_step, len(est.states)) == (3, 10, 8)


@given(st.integers(1, 20), st.integers(1, 12))
def test_map_estimate_zero_noise_identity(birth, length):
    states = np.cumsum(np.ones((length, 6)), axis=0) + birth
    truth = TrajectoryState(birth, birth + length - 1, states)
    L = 5
    frozen = states[:-L] if length > L else np.zeros((0, 6))
    window = states[-L:]
    g = TrajectoryGaussian(birth, truth.end_step, L, window.ravel(), np.zeros((6 * len(window),) * 2), frozen)
    est = map_trajectory_estimate(TrajectoryBernoulli(1.0, g))
    assert (est.birth_step, est.end_step) == (truth.birth_step, truth.end_step)
    np.testing.assert_array_equal(est.states, truth.states)


def test_map_estimate_follows_end_time():
    F, Q = transition_matrix(MotionConfig()), process_noise_cov(MotionConfig())
    g = gaussian(step=1).predict(F, Q, 0.99).predict(F, Q, 0.99)
    g = TrajectoryGaussian(g.birth_step, g.end_step, g.window_len, g.mean, g.cov, g.frozen,
                           np.array([0.1, 0.6, 0.3]))
    assert map_trajectory_estimate(TrajectoryBernoulli(1.0, g)).end_step == 2


def test_predict_end_probs():
    F, Q = transition_matrix(MotionConfig()), process_noise_cov(MotionConfig())
    g = gaussian().predict(F, Q, 0.99)
    np.testing.assert_allclose(g.end_probs, [0.01, 0.99])
    assert g.alive_prob == pytest.approx(0.99)
