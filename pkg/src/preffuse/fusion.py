"""Intra-modal fusion: aggregate K crowd-check judgments from one modality
into a majority label and a calibrated confidence."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .evaluators import Judgment
from .trajectory import TrajectoryPair

_SWAP = {1: 0, 0: 1, -1: -1}


@dataclass(frozen=True)
class ModalResult:
    label: int
    confidence: float
    modality: str
    raw: tuple[Judgment, ...]

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0,1], got {self.confidence}")


def crowd_check(
    evaluator: Callable[[TrajectoryPair], Judgment],
    pair: TrajectoryPair,
    k: int = 5,
    seed: int = 0,
) -> list[Judgment]:
    """Query the evaluator K times with randomly permuted pair orderings.

    Labels from swapped queries are canonicalized back (1 <-> 0) before
    return. Failed draws are dropped; if every draw fails, raises.
    """
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    out: list[Judgment] = []
    last_err = None
    for _ in range(k):
        swap = bool(rng.random() < 0.5)
        try:
            j = evaluator(pair.swapped() if swap else pair)
        except Exception as e:
            last_err = e
            continue
        if swap:
            j = Judgment(_SWAP[j.label], j.confidence)
        out.append(j)
    if not out:
        raise RuntimeError(f"all {k} crowd-check queries failed; last error: {last_err}")
    return out


def majority_vote(judgments: Sequence[Judgment]) -> int:
    """Most frequent label; count ties broken by higher mean confidence
    among the tied labels, remaining ties resolve to indecision (-1)."""
    if not judgments:
        raise ValueError("empty judgment list")
    counts = {l: 0 for l in (-1, 0, 1)}
    confs = {l: [] for l in (-1, 0, 1)}
    for j in judgments:
        counts[j.label] += 1
        confs[j.label].append(j.confidence)
    top = max(counts.values())
    tied = [l for l in (-1, 0, 1) if counts[l] == top]
    if len(tied) == 1:
        return tied[0]
    means = {l: float(np.mean(confs[l])) for l in tied}
    best = max(means.values())
    tied = [l for l in tied if means[l] == best]
    return tied[0] if len(tied) == 1 else -1


def calibrated_confidence(
    judgments: Sequence[Judgment], final_label: int, alpha: float = 0.5
) -> float:
    """alpha * mean confidence of agreeing judgments + (1-alpha) * vote
    agreement ratio; 0 when nothing agrees."""
    if not judgments:
        raise ValueError("empty judgment list")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0,1], got {alpha}")
    agree = [j.confidence for j in judgments if j.label == final_label]
    if not agree:
        return 0.0
    # exact mean for identical confidences; np.mean would round (3c/3 != c)
    c_bar = agree[0] if len(set(agree)) == 1 else float(np.mean(agree))
    c_dot = len(agree) / len(judgments)
    return alpha * c_bar + (1.0 - alpha) * c_dot


def fuse_intra(
    evaluator: Callable[[TrajectoryPair], Judgment],
    pair: TrajectoryPair,
    k: int = 5,
    alpha: float = 0.5,
    seed: int = 0,
    modality: str = "LLM",
) -> ModalResult:
    """crowd_check -> majority_vote -> calibrated_confidence."""
    judgments = crowd_check(evaluator, pair, k, seed)
    label = majority_vote(judgments)
    conf = calibrated_confidence(judgments, label, alpha)
    return ModalResult(label, conf, modality, tuple(judgments))
