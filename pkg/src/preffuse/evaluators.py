"""Sources of per-query preference judgments.

Three kinds: a scripted ground-truth teacher, a seeded noisy evaluator
whose accuracy tracks a discriminability atom, and a remote
foundation-model client that parses structured responses.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .discriminability import DiscriminabilityScores
from .trajectory import PreferenceLabel, Trajectory, TrajectoryPair

LABELS = (-1, 0, 1)


@dataclass(frozen=True)
class Judgment:
    label: int
    confidence: float

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"label must be in {{-1,0,1}}, got {self.label}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0,1], got {self.confidence}")


@dataclass(frozen=True)
class EvaluatorProfile:
    base_accuracy: float = 0.7
    context_sensitivity: float = 0.4
    confidence_noise: float = 0.0
    modality: str = "vision-like"
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.base_accuracy <= 1.0:
            raise ValueError("base_accuracy must lie in [0,1]")
        if self.modality not in ("vision-like", "language-like"):
            raise ValueError(f"unknown modality {self.modality!r}")


def trajectory_return(traj: Trajectory, gt_reward: Callable) -> float:
    """Cumulative ground-truth reward, summed step by step."""
    total = 0.0
    for t in range(traj.T):
        r = gt_reward(traj.states[t], traj.actions[t])
        if not np.isfinite(r):
            raise ValueError(f"reward function returned non-finite value at step {t + 1}")
        total += float(r)
    return total


def scripted_teacher(
    pair: TrajectoryPair, gt_reward: Callable, margin_confidence: bool = False
) -> Judgment:
    """Oracle labeler: prefers the segment with the higher return.

    Equality is exact; ties yield indecision. Confidence is 1.0 unless
    ``margin_confidence`` enables the logistic-of-margin variant.
    """
    ra = trajectory_return(pair.a, gt_reward)
    rb = trajectory_return(pair.b, gt_reward)
    if ra > rb:
        label = PreferenceLabel.A_PREFERRED
    elif ra < rb:
        label = PreferenceLabel.B_PREFERRED
    else:
        label = PreferenceLabel.INDECISION
    if margin_confidence:
        conf = float(2.0 / (1.0 + np.exp(-abs(ra - rb))) - 1.0)
    else:
        conf = 1.0
    return Judgment(int(label), conf)


def noisy_evaluator(
    pair: TrajectoryPair,
    profile: EvaluatorProfile,
    context: DiscriminabilityScores,
    gt: int,
    rng: np.random.Generator | None = None,
) -> Judgment:
    """Synthetic evaluator whose accuracy scales with trajectory context.

    Emits the ground-truth label with probability
    clamp(base_accuracy + sensitivity * (atom - 0.5)), where the atom is vd
    for vision-like and td for language-like profiles; otherwise emits a
    uniformly random wrong label.
    """
    if gt not in LABELS:
        raise ValueError(f"gt must be in {{-1,0,1}}, got {gt}")
    if rng is None:
        rng = np.random.default_rng(profile.rng_seed)
    atom = context.vd if profile.modality == "vision-like" else context.td
    p = float(np.clip(profile.base_accuracy + profile.context_sensitivity * (atom - 0.5), 0.0, 1.0))
    if rng.random() < p:
        label = gt
    else:
        label = int(rng.choice([l for l in LABELS if l != gt]))
    conf = p
    if profile.confidence_noise > 0:
        conf += float(rng.normal(0.0, profile.confidence_noise))
    return Judgment(label, float(np.clip(conf, 0.0, 1.0)))


class ResponseParseError(ValueError):
    """Raised when a model response lacks the required answer fields."""

    def __init__(self, message: str, raw: str):
        super().__init__(f"{message}; raw response: {raw!r}")
        self.raw = raw


_PREF_RE = re.compile(r"preference\s*[:=]\s*(A|B|equal)", re.IGNORECASE)
_CONF_RE = re.compile(r"confidence\s*[:=]\s*([0-9]*\.?[0-9]+)", re.IGNORECASE)


def parse_fm_response(text: str) -> Judgment:
    """Extract `preference:`/`confidence:` fields from a model response."""
    m = _PREF_RE.search(text)
    if m is None:
        raise ResponseParseError("no preference field found", text)
    token = m.group(1).upper()
    label = {"A": 1, "B": 0, "EQUAL": -1}[token if token != "EQUAL" else "EQUAL"]
    c = _CONF_RE.search(text)
    if c is None:
        raise ResponseParseError("no confidence field found", text)
    conf = float(c.group(1))
    if not 0.0 <= conf <= 1.0:
        import warnings

        warnings.warn(f"confidence {conf} out of [0,1]; clamping")
        conf = float(np.clip(conf, 0.0, 1.0))
    return Judgment(label, conf)


class TransportError(ConnectionError):
    """Retryable transport failure talking to the remote model."""


class RemoteFMEvaluator:
    """Remote foundation-model preference client.

    Sends the task description plus either the textual projection
    (language modality) or the keyframe image list (vision modality), and
    parses the structured answer. Never fabricates a label: parse failures
    surface the raw response.
    """

    def __init__(self, endpoint: str, model: str, modality: str = "language-like",
                 timeout: float = 60.0, retries: int = 2,
                 token_env: str = "PREFFUSE_FM_TOKEN"):
        self.endpoint = endpoint
        self.model = model
        self.modality = modality
        self.timeout = timeout
        self.retries = retries
        self.token_env = token_env

    def query(self, payload: dict) -> Judgment:
        import requests

        headers = {}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {"model": self.model, **payload}
        last_err = None
        for _ in range(self.retries + 1):
            try:
                resp = requests.post(self.endpoint, json=body, headers=headers,
                                     timeout=self.timeout)
                resp.raise_for_status()
                return parse_fm_response(resp.json()["text"])
            except requests.RequestException as e:
                last_err = e
        raise TransportError(f"remote evaluator failed after {self.retries + 1} attempts: {last_err}")
