"""Keyframe extraction from the combined state-action sequence.

Three complementary detectors (near-zero velocity, smoothing-residual
peaks, PELT change points) are unioned with the trajectory endpoints.
All indices are 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .trajectory import Trajectory

# (delta_v, k, K, delta_e, beta) per environment family
_ENV_DEFAULTS = {
    "metaworld-like": (0.005, 2, 5, 0.01, 20.0),
    "maniskill-like": (0.025, 4, 8, 0.02, 30.0),
    "dmc-like": (0.065, 6, 10, 0.04, 40.0),
    "custom": (0.005, 2, 5, 0.01, 20.0),
}


@dataclass(frozen=True)
class KeyframeConfig:
    delta_v: float = 0.005
    k: int = 2
    K: int = 5
    delta_e: float = 0.01
    beta: float = 20.0

    def __post_init__(self):
        if self.delta_v < 0 or self.delta_e < 0 or self.beta < 0:
            raise ValueError("thresholds must be nonnegative")
        if self.k < 1 or self.K < 1:
            raise ValueError("k and K must be >= 1")

    @classmethod
    def for_env(cls, env_tag: str) -> "KeyframeConfig":
        if env_tag not in _ENV_DEFAULTS:
            raise ValueError(f"unknown env_tag {env_tag!r}")
        return cls(*_ENV_DEFAULTS[env_tag])


@dataclass(frozen=True)
class KeyframeSet:
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.indices)))
        if not idx or idx[0] < 1:
            raise ValueError("keyframe indices must be within [1, T] and nonempty")
        object.__setattr__(self, "indices", idx)

    def __contains__(self, i) -> bool:
        return i in self.indices

    def __len__(self) -> int:
        return len(self.indices)


def near_zero_velocity(traj: Trajectory, delta_v: float) -> set[int]:
    """Steps t+1 where the combined-vector velocity ||x_{t+1} - x_t|| < delta_v."""
    x = traj.combined()
    v = np.linalg.norm(np.diff(x, axis=0), axis=1)
    return {t + 2 for t in np.nonzero(v < delta_v)[0]}


def smoothing_residual_peaks(traj: Trajectory, k: int, K: int, delta_e: float) -> set[int]:
    """Up to K steps with the largest residual against a (2k+1) moving average.

    The window is truncated at the boundaries rather than padded.
    """
    x = traj.combined()
    T = x.shape[0]
    if T < 2 * k + 1:
        raise ValueError(f"T={T} too short for smoothing window 2*{k}+1")
    smoothed = np.empty_like(x)
    for t in range(T):
        lo, hi = max(0, t - k), min(T, t + k + 1)
        smoothed[t] = x[lo:hi].mean(axis=0)
    residuals = np.linalg.norm(x - smoothed, axis=1)
    above = [(residuals[t], t + 1) for t in range(T) if residuals[t] > delta_e]
    above.sort(key=lambda p: (-p[0], p[1]))
    return {t for _, t in above[:K]}


def _segment_costs(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # prefix sums enabling O(1) within-segment squared-error cost
    csum = np.vstack([np.zeros(x.shape[1]), np.cumsum(x, axis=0)])
    csum2 = np.concatenate([[0.0], np.cumsum((x * x).sum(axis=1))])
    return csum, csum2


def _cost(csum, csum2, i: int, j: int) -> float:
    # cost of segment covering rows i..j-1 (0-based, half-open)
    n = j - i
    s = csum[j] - csum[i]
    return float(csum2[j] - csum2[i] - (s @ s) / n)


def change_points_pelt(traj: Trajectory, beta: float) -> set[int]:
    """Exact penalized least-squares change points via PELT.

    Returns the 1-based start indices of each new segment. The pruning
    keeps the solution identical to exhaustive dynamic programming.
    """
    x = traj.combined()
    T = x.shape[0]
    csum, csum2 = _segment_costs(x)

    # F[t] = optimal cost of rows 0..t-1; candidates are last-segment starts
    F = np.full(T + 1, np.inf)
    F[0] = -beta
    prev = np.zeros(T + 1, dtype=int)
    candidates = [0]
    for t in range(1, T + 1):
        best, best_s = np.inf, 0
        for s in candidates:
            val = F[s] + _cost(csum, csum2, s, t) + beta
            if val < best:
                best, best_s = val, s
        F[t] = best
        prev[t] = best_s
        candidates = [s for s in candidates if F[s] + _cost(csum, csum2, s, t) <= F[t]]
        candidates.append(t)

    # backtrack segment starts; drop the trivial start at row 0
    breaks = set()
    t = T
    while t > 0:
        s = prev[t]
        if s > 0:
            breaks.add(s + 1)  # 1-based first index of the segment starting at row s
        t = s
    return breaks


def extract_keyframes(traj: Trajectory, cfg: KeyframeConfig | None = None) -> KeyframeSet:
    """Union of the three detectors plus the trajectory endpoints."""
    if cfg is None:
        cfg = KeyframeConfig.for_env(traj.env_tag)
    indices = near_zero_velocity(traj, cfg.delta_v)
    indices |= smoothing_residual_peaks(traj, cfg.k, cfg.K, cfg.delta_e)
    indices |= change_points_pelt(traj, cfg.beta)
    indices |= {1, traj.T}
    return KeyframeSet(tuple(sorted(indices)))


class KeyframeExtractor(BaseEstimator, TransformerMixin):
    """Stateless transformer mapping trajectories to keyframe sets.

    When ``use_env_defaults`` is true, per-trajectory defaults are chosen
    from each trajectory's env_tag and the explicit parameters are ignored.
    """

    def __init__(self, delta_v=0.005, k=2, K=5, delta_e=0.01, beta=20.0,
                 use_env_defaults=False):
        self.delta_v = delta_v
        self.k = k
        self.K = K
        self.delta_e = delta_e
        self.beta = beta
        self.use_env_defaults = use_env_defaults

    def fit(self, X, y=None):
        KeyframeConfig(self.delta_v, self.k, self.K, self.delta_e, self.beta)
        return self

    def transform(self, X) -> list[KeyframeSet]:
        cfg = None if self.use_env_defaults else KeyframeConfig(
            self.delta_v, self.k, self.K, self.delta_e, self.beta)
        return [extract_keyframes(traj, cfg) for traj in X]
