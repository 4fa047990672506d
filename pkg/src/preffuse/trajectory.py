"""Trajectory data model, JSONL I/O, segmentation, and textual projection.

Time indices are 1-based throughout the public API. Trajectories are
immutable after construction; every operation returns a new value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np

ENV_TAGS = ("metaworld-like", "maniskill-like", "dmc-like", "custom")


class PreferenceLabel(IntEnum):
    A_PREFERRED = 1
    B_PREFERRED = 0
    INDECISION = -1


class SchemaError(ValueError):
    """Raised when a trajectory record violates the JSONL schema."""


@dataclass(frozen=True)
class Trajectory:
    """A length-T sequence of state and action vectors.

    ``states`` is T x d_s, ``actions`` is T x d_a. ``frames`` holds opaque
    image references (one per step) consumed only by embedding providers.
    """

    id: str
    states: np.ndarray
    actions: np.ndarray
    frames: Optional[tuple[str, ...]] = None
    env_tag: str = "custom"

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        actions = np.asarray(self.actions, dtype=float)
        if states.ndim != 2 or actions.ndim != 2:
            raise SchemaError(f"trajectory {self.id!r}: states and actions must be 2-D")
        if states.shape[0] != actions.shape[0]:
            raise SchemaError(
                f"trajectory {self.id!r}: states have T={states.shape[0]} but "
                f"actions have T={actions.shape[0]}"
            )
        if states.shape[0] < 3:
            raise SchemaError(f"trajectory {self.id!r}: T must be >= 3, got {states.shape[0]}")
        if not (np.isfinite(states).all() and np.isfinite(actions).all()):
            raise SchemaError(f"trajectory {self.id!r}: non-finite entries")
        if self.frames is not None and len(self.frames) != states.shape[0]:
            raise SchemaError(
                f"trajectory {self.id!r}: {len(self.frames)} frames for T={states.shape[0]}"
            )
        if self.env_tag not in ENV_TAGS:
            raise SchemaError(f"trajectory {self.id!r}: unknown env_tag {self.env_tag!r}")
        states.setflags(write=False)
        actions.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        if self.frames is not None:
            object.__setattr__(self, "frames", tuple(self.frames))

    @property
    def T(self) -> int:
        return self.states.shape[0]

    @property
    def d_s(self) -> int:
        return self.states.shape[1]

    @property
    def d_a(self) -> int:
        return self.actions.shape[1]

    def combined(self) -> np.ndarray:
        """All combined state-action vectors as a T x (d_s + d_a) matrix."""
        return np.hstack([self.states, self.actions])


@dataclass(frozen=True)
class TrajectoryPair:
    a: Trajectory
    b: Trajectory

    def __post_init__(self):
        if self.a.T != self.b.T:
            raise ValueError(
                f"pair ({self.a.id!r}, {self.b.id!r}): lengths differ "
                f"({self.a.T} vs {self.b.T})"
            )

    def swapped(self) -> "TrajectoryPair":
        return TrajectoryPair(self.b, self.a)


def combined_vector(traj: Trajectory, t: int) -> np.ndarray:
    """Concatenated [s_t, a_t] at 1-based step t."""
    if not 1 <= t <= traj.T:
        raise IndexError(f"t={t} out of range [1, {traj.T}]")
    return np.concatenate([traj.states[t - 1], traj.actions[t - 1]])


def textual_projection(traj: Trajectory, dim_names: Sequence[str]) -> str:
    """Dimension-wise text rendering: one `<name>: [v1, v2, ...]` line per
    state/action dimension, values rounded to 3 decimals. Deterministic."""
    d = traj.d_s + traj.d_a
    if len(dim_names) != d:
        raise ValueError(f"expected {d} dimension names, got {len(dim_names)}")
    x = traj.combined()
    lines = []
    for j, name in enumerate(dim_names):
        vals = ", ".join(f"{v:.3f}" for v in x[:, j])
        lines.append(f"{name}: [{vals}]")
    return "\n".join(lines)


def segment(traj: Trajectory, start: int, length: int) -> Trajectory:
    """Contiguous 1-based slice of ``length`` steps beginning at ``start``."""
    if length < 1:
        raise ValueError(f"length must be positive, got {length}")
    if start < 1 or start + length > traj.T + 1:
        raise IndexError(
            f"slice [{start}, {start + length}) out of range for T={traj.T}"
        )
    lo, hi = start - 1, start - 1 + length
    frames = traj.frames[lo:hi] if traj.frames is not None else None
    return Trajectory(
        id=f"{traj.id}[{start}:{start + length - 1}]",
        states=traj.states[lo:hi].copy(),
        actions=traj.actions[lo:hi].copy(),
        frames=frames,
        env_tag=traj.env_tag,
    )


def _record_to_trajectory(obj: dict, lineno: int) -> Trajectory:
    for key in ("id", "states", "actions"):
        if key not in obj:
            raise SchemaError(f"line {lineno}: missing field {key!r}")
    try:
        return Trajectory(
            id=obj["id"],
            states=np.asarray(obj["states"], dtype=float),
            actions=np.asarray(obj["actions"], dtype=float),
            frames=tuple(obj["frames"]) if obj.get("frames") is not None else None,
            env_tag=obj.get("env_tag", "custom"),
        )
    except SchemaError as e:
        raise SchemaError(f"line {lineno}: {e}") from e
    except (TypeError, ValueError) as e:
        raise SchemaError(f"line {lineno}: malformed record: {e}") from e


def load_dataset(path) -> list[Trajectory]:
    """Read a trajectory JSONL file, preserving record order."""
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise SchemaError(f"line {lineno}: invalid JSON: {e}") from e
            out.append(_record_to_trajectory(obj, lineno))
    return out


def save_dataset(trajectories: Sequence[Trajectory], path) -> None:
    """Write trajectories as JSONL (UTF-8, LF line endings)."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for traj in trajectories:
            obj = {
                "id": traj.id,
                "env_tag": traj.env_tag,
                "states": traj.states.tolist(),
                "actions": traj.actions.tolist(),
            }
            if traj.frames is not None:
                obj["frames"] = list(traj.frames)
            f.write(json.dumps(obj) + "\n")
