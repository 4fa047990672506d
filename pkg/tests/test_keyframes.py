import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from preffuse.keyframes import (
    KeyframeConfig,
    KeyframeExtractor,
    change_points_pelt,
    extract_keyframes,
    near_zero_velocity,
    smoothing_residual_peaks,
)

from conftest import make_traj


def exhaustive_segmentation_cost(x: np.ndarray, beta: float):
    """O(T^2) dynamic program over all segmentations; the PELT oracle."""
    T = x.shape[0]

    def seg_cost(i, j):
        seg = x[i:j]
        mu = seg.mean(axis=0)
        return float(((seg - mu) ** 2).sum())

    F = np.full(T + 1, np.inf)
    F[0] = -beta
    prev = np.zeros(T + 1, dtype=int)
    for t in range(1, T + 1):
        for s in range(t):
            val = F[s] + seg_cost(s, t) + beta
            if val < F[t]:
                F[t], prev[t] = val, s
    breaks = set()
    t = T
    while t > 0:
        s = prev[t]
        if s > 0:
            breaks.add(s + 1)
        t = s
    return breaks, F[T]


# --- near-zero velocity


def test_constant_trajectory_selects_all():
    t = make_traj(np.ones((8, 2)), np.zeros((8, 1)))
    assert near_zero_velocity(t, 0.005) == set(range(2, 9))


def test_uniform_motion_selects_none():
    t = make_traj(np.arange(8, dtype=float).reshape(8, 1))
    assert near_zero_velocity(t, 0.005) == set()


def test_planted_pause():
    # steps of norm 0.001 between t=4..6 (velocities v_4, v_5, v_6), norm 1 elsewhere
    steps = [1, 1, 1, 0.001, 0.001, 0.001, 1, 1, 1]
    x = np.concatenate([[0.0], np.cumsum(steps)])
    t = make_traj(x.reshape(-1, 1))
    assert near_zero_velocity(t, 0.005) == {5, 6, 7}


def test_velocity_monotone_in_threshold(rng):
    t = make_traj(rng.normal(size=(30, 2)) * 0.01, rng.normal(size=(30, 1)) * 0.01)
    small = near_zero_velocity(t, 0.01)
    large = near_zero_velocity(t, 0.05)
    assert small <= large


# --- smoothing residual peaks


def test_residuals_constant_is_empty():
    t = make_traj(np.ones((10, 1)))
    assert smoothing_residual_peaks(t, k=2, K=5, delta_e=0.01) == set()


def test_residuals_single_spike():
    x = np.zeros(11)
    x[4] = 10.0  # 1-based t=5
    t = make_traj(x.reshape(-1, 1))
    result = smoothing_residual_peaks(t, k=2, K=5, delta_e=0.01)
    assert 5 in result
    # residual at the spike: 10 - 10/5 = 8, the global max
    smoothed = np.convolve(x, np.ones(5) / 5, mode="same")
    assert abs((x - smoothed)[4] - 8.0) < 1e-12


def test_residuals_k1_is_argmax():
    x = np.zeros(11)
    x[3] = 2.0
    x[7] = 5.0
    t = make_traj(x.reshape(-1, 1))
    res = smoothing_residual_peaks(t, k=2, K=1, delta_e=0.01)
    full = smoothing_residual_peaks(t, k=2, K=100, delta_e=0.01)
    assert len(res) == 1
    assert res == {8}
    assert res <= full


def test_residuals_cap(rng):
    t = make_traj(rng.normal(size=(40, 1)))
    assert len(smoothing_residual_peaks(t, k=2, K=3, delta_e=0.0)) <= 3


def test_residuals_window_too_short():
    t = make_traj(np.zeros((4, 1)))
    with pytest.raises(ValueError, match="too short"):
        smoothing_residual_peaks(t, k=2, K=5, delta_e=0.01)


# --- PELT


def test_pelt_single_jump():
    x = np.concatenate([np.zeros(10), np.full(10, 5.0)])
    t = make_traj(x.reshape(-1, 1))
    assert change_points_pelt(t, beta=1.0) == {11}


def test_pelt_huge_penalty(rng):
    t = make_traj(rng.normal(size=(25, 1)))
    assert change_points_pelt(t, beta=1e9) == set()


def test_pelt_constant_signal():
    t = make_traj(np.ones((15, 1)))
    assert change_points_pelt(t, beta=0.5) == set()


@pytest.mark.parametrize("seed", range(10))
def test_pelt_matches_exhaustive_dp(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(8, 31))
    n_jumps = int(rng.integers(0, 3))
    x = rng.normal(size=(T, 1)) * 0.3
    for _ in range(n_jumps):
        at = int(rng.integers(2, T))
        x[at:] += rng.normal() * 4.0
    beta = float(rng.uniform(0.5, 10.0))
    t = make_traj(x)
    expected, _ = exhaustive_segmentation_cost(np.hstack([x, np.zeros((T, 1))]), beta)
    assert change_points_pelt(t, beta) == expected


# --- union


def test_extract_constant_selects_everything():
    t = make_traj(np.ones((9, 1)))
    keys = extract_keyframes(t, KeyframeConfig())
    assert keys.indices == tuple(range(1, 10))


def test_extract_endpoints_always_present():
    t = make_traj(np.arange(20, dtype=float).reshape(-1, 1) * 0.5)
    keys = extract_keyframes(t, KeyframeConfig(delta_v=1e-9, delta_e=100.0, beta=1e9))
    assert keys.indices == (1, 20)


def test_extract_union_of_fixtures():
    # planted pause at steps 4..6 plus a level jump at index 16
    steps = [1.0] * 3 + [0.001] * 3 + [1.0] * 14
    x = np.concatenate([[0.0], np.cumsum(steps)])
    x[15:] += 30.0
    t = make_traj(x.reshape(-1, 1))
    cfg = KeyframeConfig(delta_v=0.005, k=2, K=5, delta_e=0.01, beta=1.0)
    union = (
        near_zero_velocity(t, cfg.delta_v)
        | smoothing_residual_peaks(t, cfg.k, cfg.K, cfg.delta_e)
        | change_points_pelt(t, cfg.beta)
        | {1, t.T}
    )
    assert set(extract_keyframes(t, cfg).indices) == union
    assert {5, 6, 7} <= union  # pause
    assert 16 in change_points_pelt(t, cfg.beta)  # jump


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_extract_bounds_property(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(6, 40))
    t = make_traj(rng.normal(size=(T, 2)), rng.normal(size=(T, 1)))
    keys = extract_keyframes(t, KeyframeConfig(k=1))
    assert keys.indices[0] == 1 and keys.indices[-1] == T
    assert all(1 <= i <= T for i in keys.indices)
    assert list(keys.indices) == sorted(set(keys.indices))


def test_env_defaults():
    assert KeyframeConfig.for_env("metaworld-like") == KeyframeConfig(0.005, 2, 5, 0.01, 20.0)
    assert KeyframeConfig.for_env("maniskill-like") == KeyframeConfig(0.025, 4, 8, 0.02, 30.0)
    assert KeyframeConfig.for_env("dmc-like") == KeyframeConfig(0.065, 6, 10, 0.04, 40.0)


def test_transformer_api(rng):
    trajs = [make_traj(rng.normal(size=(20, 2)), rng.normal(size=(20, 1)))
             for _ in range(3)]
    extractor = KeyframeExtractor(beta=5.0)
    sets = extractor.fit_transform(trajs)
    assert len(sets) == 3
    params = extractor.get_params()
    assert params["beta"] == 5.0
