"""Bidirectional trajectory synthesis on deterministic kinematic toy
environments: foresight buffer warm-start via scripted parametric
generators, and hindsight counterfactual generation (abduction, action,
prediction) with minimal-edit filtering and verification.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .keyframes import KeyframeSet
from .trajectory import Trajectory, TrajectoryPair


class ToyEnv:
    """Deterministic kinematic environment: s_{t+1} = s_t + a_t with
    actions clipped to [-a_max, a_max] and states bounded by state_bound."""

    name = "toy"
    d_s = 2
    d_a = 2
    a_max = 0.2
    state_bound = 10.0

    def reward(self, s: np.ndarray, a: np.ndarray) -> float:
        raise NotImplementedError

    def rollout(self, s0: np.ndarray, actions: np.ndarray, traj_id: str = "rollout") -> Trajectory:
        actions = np.clip(np.asarray(actions, dtype=float), -self.a_max, self.a_max)
        T = actions.shape[0]
        states = np.empty((T, self.d_s))
        s = np.asarray(s0, dtype=float).copy()
        for t in range(T):
            states[t] = s
            s = s + actions[t]
            if np.linalg.norm(s) > self.state_bound:
                raise RuntimeError(
                    f"re-simulation diverged at step {t + 1}: |s|={np.linalg.norm(s):.3f}"
                )
        return Trajectory(id=traj_id, states=states, actions=actions, env_tag="custom")

    def returns(self, traj: Trajectory) -> float:
        return sum(
            self.reward(traj.states[t], traj.actions[t]) for t in range(traj.T)
        )


class ReachEnv(ToyEnv):
    """2-D point mass reaching a fixed goal.

    Reward mixes a dense shaping term with a sparse in-goal bonus, so
    trajectory-level preferences alone under-determine per-step credit.
    """

    name = "reach"
    goal = np.array([1.0, 1.0])
    radius = 0.1
    shaping = 0.05

    def reward(self, s: np.ndarray, a: np.ndarray) -> float:
        dist = float(np.linalg.norm(s - self.goal))
        bonus = 1.0 if dist < self.radius else 0.0
        return self.shaping * (1.0 - min(dist, 2.0) / 2.0) + bonus


class PickEnv(ToyEnv):
    """1-D pick task: state (gripper position, object height); the object
    lifts with the gripper once contact is made at the pick site."""

    name = "pick"
    d_s = 2
    d_a = 1
    a_max = 0.2
    pick_x = 1.0
    lift_target = 0.5

    def rollout(self, s0, actions, traj_id="rollout"):
        actions = np.clip(np.asarray(actions, dtype=float), -self.a_max, self.a_max)
        T = actions.shape[0]
        states = np.empty((T, 2))
        x, h = float(s0[0]), float(s0[1])
        attached = False
        for t in range(T):
            states[t] = (x, h)
            x = x + float(actions[t, 0])
            if not attached and abs(x - self.pick_x) < 0.05:
                attached = True
            if attached:
                h = min(self.lift_target, h + abs(float(actions[t, 0])))
            if abs(x) > self.state_bound:
                raise RuntimeError(f"re-simulation diverged at step {t + 1}")
        return Trajectory(id=traj_id, states=states, actions=actions, env_tag="custom")

    def reward(self, s, a):
        return float(s[1]) + 0.1 * (1.0 - min(abs(float(s[0]) - self.pick_x), 2.0) / 2.0)


ENVS = {"reach": ReachEnv, "pick": PickEnv}


@dataclass(frozen=True)
class Intervention:
    kind: str  # "hold-delay" | "position-offset"
    t_star: int
    magnitude: float

    def __post_init__(self):
        if self.kind not in ("hold-delay", "position-offset"):
            raise ValueError(f"unknown intervention kind {self.kind!r}")


@dataclass(frozen=True)
class CounterfactualSample:
    original: Trajectory
    edited: Trajectory
    mask: np.ndarray
    intervention: Intervention

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=int)
        if self.original.T != self.edited.T or mask.shape[0] != self.original.T:
            raise ValueError("original, edited, and mask must share length T")
        if mask.sum() < 1:
            raise ValueError("mask must flag at least one step")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)


def foresight_generate(
    generator: Callable[[dict, np.random.Generator], Trajectory],
    n: int,
    seed: int = 0,
    param_grid: Sequence[dict] | None = None,
) -> tuple[list[Trajectory], int]:
    """Generate n bootstrapped trajectories from varied start conditions
    and strategy parameters. Returns (trajectories, failure_count)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    if param_grid is None:
        param_grid = [{}]
    out, failures = [], 0
    i = 0
    while len(out) < n and i < 4 * n:
        params = dict(param_grid[i % len(param_grid)])
        params["index"] = i
        try:
            out.append(generator(params, rng))
        except Exception:
            failures += 1
        i += 1
    return out, failures + max(0, n - len(out))


def make_reach_generator(env: ReachEnv, T: int = 60):
    """Scripted parametric generator for the reach task: varied start
    positions, approach speeds, detours, and pause phases."""
    starts = [np.array([-1.0, -1.0]), np.array([0.0, -1.5]),
              np.array([-1.5, 0.5]), np.array([0.5, -0.5])]
    strategies = ["direct", "detour", "pause"]

    def generate(params: dict, rng: np.random.Generator) -> Trajectory:
        i = params.get("index", 0)
        start = starts[i % len(starts)] + rng.normal(0, 0.05, 2)
        strategy = params.get("strategy", strategies[(i // len(starts)) % len(strategies)])
        speed = 0.5 + 0.5 * rng.random()
        actions = np.zeros((T, 2))
        s = start.copy()
        for t in range(T):
            to_goal = env.goal - s
            a = speed * env.a_max * to_goal / max(np.linalg.norm(to_goal), 1e-9)
            if strategy == "detour" and t < T // 3:
                a = a + 0.5 * env.a_max * np.array([-to_goal[1], to_goal[0]]) / max(
                    np.linalg.norm(to_goal), 1e-9
                )
            if strategy == "pause" and T // 3 <= t < T // 3 + 5:
                a = np.zeros(2)
            a = np.clip(a, -env.a_max, env.a_max)
            actions[t] = a
            s = s + a
        return env.rollout(start, actions, traj_id=f"foresight-{i}")

    return generate


def random_exploration(env: ToyEnv, n: int, T: int = 60, seed: int = 0) -> list[Trajectory]:
    """Unstructured random-policy rollouts, the early-training analog."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        start = rng.uniform(-1.5, 0.5, env.d_s)
        actions = rng.uniform(-env.a_max, env.a_max, (T, env.d_a)) * 0.5
        out.append(env.rollout(start, actions, traj_id=f"random-{i}"))
    return out


def identify_causal_steps(
    preferred: Trajectory,
    keyframes: KeyframeSet,
    env: ToyEnv,
    k: int = 3,
) -> list[int]:
    """Scripted abduction oracle: top-k steps by absolute ground-truth
    reward change. Keyframes are candidates but not a restriction."""
    rewards = np.array(
        [env.reward(preferred.states[t], preferred.actions[t]) for t in range(preferred.T)]
    )
    deltas = np.abs(np.diff(rewards))
    candidates = [(deltas[t], t + 2) for t in range(deltas.size) if deltas[t] > 0]
    # prefer keyframe candidates on equal magnitude
    candidates.sort(key=lambda p: (-p[0], p[1] not in keyframes, p[1]))
    return [t for _, t in candidates[:k]]


def _blend_window(T: int, t_star: int, d: int) -> tuple[int, int]:
    lo = max(1, t_star - 2)
    hi = min(T, t_star + d + 2)
    return lo, hi


def generate_counterfactual(
    preferred: Trajectory,
    t_star: int,
    kind: str,
    magnitude: float,
    env: ToyEnv,
    seed: int = 0,
    delay: int = 3,
) -> CounterfactualSample:
    """Minimal local intervention on the preferred trajectory.

    The edit is expressed in state space (hold the state, or offset it
    with a linear blend over +/-2 neighbors), actions are recomputed as
    state differences, and the edited action sequence is re-simulated to
    confirm dynamics consistency. States outside the mask window are
    bit-identical to the original.
    """
    T = preferred.T
    if not 1 <= t_star <= T:
        raise IndexError(f"t_star={t_star} out of range [1, {T}]")
    rng = np.random.default_rng(seed)
    states = preferred.states.copy()

    if kind == "hold-delay":
        d = delay
        hold = states[t_star - 1].copy()
        end = min(T, t_star + d - 1)  # steps t_star..t_star+d-1 held
        for t in range(t_star, end + 1):
            states[t - 1] = hold
        # blend back to the original path over the trailing neighbors
        lo, hi = _blend_window(T, t_star, d)
        back = range(end + 1, hi + 1)
        nb = len(list(back))
        for j, t in enumerate(range(end + 1, hi + 1), start=1):
            w = j / (nb + 1)
            states[t - 1] = (1 - w) * hold + w * preferred.states[t - 1]
        intervention = Intervention("hold-delay", t_star, float(d))
    elif kind == "position-offset":
        d = 0
        lo, hi = _blend_window(T, t_star, 0)
        # the edit must worsen the trajectory, so among candidate
        # directions pick the one that hurts masked-step rewards the most
        best_states, best_score = None, np.inf
        for _ in range(8):
            direction = rng.normal(0, 1, preferred.d_s)
            direction /= max(np.linalg.norm(direction), 1e-9)
            offset = magnitude * direction
            cand = preferred.states.copy()
            for t in range(lo, hi + 1):
                w = 1.0 - abs(t - t_star) / 3.0
                cand[t - 1] = preferred.states[t - 1] + w * offset
            score = sum(env.reward(cand[t - 1], preferred.actions[t - 1])
                        for t in range(lo, hi + 1))
            if score < best_score:
                best_states, best_score = cand, score
        states = best_states
        intervention = Intervention("position-offset", t_star, float(magnitude))
    else:
        raise ValueError(f"unknown intervention kind {kind!r}")

    # recompute actions from state differences; trailing action unchanged
    actions = preferred.actions.copy()
    for t in range(T - 1):
        delta = states[t + 1] - states[t]
        if not np.allclose(delta, preferred.states[t + 1] - preferred.states[t]):
            if np.abs(delta).max() > env.a_max + 1e-12:
                raise RuntimeError(
                    f"intervention at step {t + 1} needs action beyond bound {env.a_max}"
                )
            actions[t] = delta[: preferred.d_a] if preferred.d_a < preferred.d_s else delta

    edited = Trajectory(
        id=f"{preferred.id}-cf-{kind}-{t_star}",
        states=states,
        actions=actions,
        env_tag=preferred.env_tag,
    )
    lo, hi = _blend_window(T, t_star, d if kind == "hold-delay" else 0)
    mask = np.zeros(T, dtype=int)
    mask[lo - 1:hi] = 1
    return CounterfactualSample(preferred, edited, mask, intervention)


def default_l1_threshold(traj: Trajectory, fraction: float = 0.05) -> float:
    """5% of the trajectory's mean per-step combined L1 norm."""
    x = traj.combined()
    return fraction * float(np.abs(x).sum(axis=1).mean())


def minimal_edit_filter(sample: CounterfactualSample, threshold: float) -> bool:
    """Accept iff the L1 edit distance over masked steps is within budget."""
    xo = sample.original.combined()
    xe = sample.edited.combined()
    masked = sample.mask.astype(bool)
    dist = float(np.abs(xe[masked] - xo[masked]).sum())
    return dist <= threshold


def verify_counterfactual(
    original: Trajectory,
    sample: CounterfactualSample,
    fuser: Callable[[TrajectoryPair], int],
) -> bool:
    """True iff the fused label over (original, edited) prefers the
    original; only verified samples are stored."""
    return fuser(TrajectoryPair(original, sample.edited)) == 1


def augment(
    preferred: Trajectory,
    env: ToyEnv,
    fuser: Callable[[TrajectoryPair], int],
    keyframes: KeyframeSet,
    max_cf: int = 5,
    threshold: float | None = None,
    seed: int = 0,
) -> list[CounterfactualSample]:
    """identify -> generate -> filter -> verify, until max_cf verified
    samples or the intervention budget (4x max_cf) is exhausted."""
    if threshold is None:
        threshold = default_l1_threshold(preferred)
    causal = identify_causal_steps(preferred, keyframes, env, k=max(3, max_cf))
    if not causal:
        return []
    rng = np.random.default_rng(seed)
    kinds = ("hold-delay", "position-offset")
    out: list[CounterfactualSample] = []
    budget = 4 * max_cf
    attempt = 0
    while len(out) < max_cf and attempt < budget:
        t_star = causal[attempt % len(causal)]
        kind = kinds[(attempt // len(causal)) % 2]
        magnitude = 0.05 + 0.1 * rng.random()
        attempt += 1
        try:
            sample = generate_counterfactual(
                preferred, t_star, kind, magnitude, env, seed=seed + attempt
            )
        except (RuntimeError, IndexError):
            continue
        if not minimal_edit_filter(sample, threshold):
            continue
        if not verify_counterfactual(preferred, sample, fuser):
            continue
        out.append(sample)
    return out
