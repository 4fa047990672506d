"""Trajectory-context scores: visual discriminability from optimal
transport over keyframe embeddings, and temporal discriminability from
trajectory volatility.

The normalizer rho(x) = 2*sigmoid(x/tau) - 1 maps 0 to 0 (identical
trajectories get zero discriminability) and saturates toward 1.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np
from scipy.optimize import linprog

from .keyframes import KeyframeSet
from .trajectory import Trajectory


class EmbeddingProvider(Protocol):
    """Maps an image reference or raw state row to a fixed-dim vector."""

    thread_safe: bool

    def embed(self, item) -> np.ndarray: ...


class StateEmbedding:
    """Reference provider: identity on state rows."""

    thread_safe = True

    def embed(self, item) -> np.ndarray:
        return np.asarray(item, dtype=float)


class ImageEmbedding:
    """Deterministic pixel-feature provider: grayscale, downsampled to
    ``size`` x ``size``, mean-normalized, flattened."""

    thread_safe = True

    def __init__(self, size: int = 8):
        self.size = size

    def embed(self, item) -> np.ndarray:
        from PIL import Image

        img = Image.open(item).convert("L").resize((self.size, self.size))
        v = np.asarray(img, dtype=float).ravel()
        return v - v.mean()


class HTTPEmbedding:
    """Client for a remote embedding service.

    POSTs ``{"inputs": [...]}`` (base64 for file payloads, float arrays
    otherwise) and expects ``{"embeddings": [[...]]}``.
    """

    thread_safe = False

    def __init__(self, endpoint: str, timeout: float = 30.0, retries: int = 2):
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries

    def embed(self, item) -> np.ndarray:
        import requests

        if isinstance(item, (str, bytes)):
            with open(item, "rb") as f:
                payload = base64.b64encode(f.read()).decode("ascii")
        else:
            payload = np.asarray(item, dtype=float).tolist()
        last_err = None
        for _ in range(self.retries + 1):
            try:
                resp = requests.post(
                    self.endpoint, json={"inputs": [payload]}, timeout=self.timeout
                )
                resp.raise_for_status()
                return np.asarray(resp.json()["embeddings"][0], dtype=float)
            except requests.RequestException as e:
                last_err = e
        raise ConnectionError(f"embedding service failed after retries: {last_err}")


@dataclass(frozen=True)
class DiscriminabilityScores:
    vd: float
    td: float

    def __post_init__(self):
        if not (0.0 <= self.vd <= 1.0 and 0.0 <= self.td <= 1.0):
            raise ValueError(f"scores must lie in [0,1], got vd={self.vd}, td={self.td}")


def rho(x: float, tau: float = 1.0) -> float:
    """Rescaled logistic: 2*sigmoid(x/tau) - 1, with rho(0) = 0."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    return float(2.0 / (1.0 + np.exp(-x / tau)) - 1.0)


def trj_vol(traj: Trajectory) -> float:
    """Mean L2 norm of second-order finite differences of the combined
    state-action sequence."""
    x = traj.combined()
    if x.shape[0] < 3:
        raise ValueError(f"T={x.shape[0]} < 3: second differences undefined")
    dd = x[2:] - 2.0 * x[1:-1] + x[:-2]
    return float(np.linalg.norm(dd, axis=1).mean())


def td_high(a: Trajectory, b: Trajectory, tau_t: float = 1.0) -> float:
    """Temporal discriminability from the absolute volatility gap."""
    return rho(abs(trj_vol(a) - trj_vol(b)), tau_t)


def wasserstein(set_a: Sequence[np.ndarray], set_b: Sequence[np.ndarray]) -> float:
    """Exact 1-Wasserstein distance between uniform discrete distributions,
    Euclidean ground cost, solved as a transportation LP."""
    A = np.atleast_2d(np.asarray(set_a, dtype=float))
    B = np.atleast_2d(np.asarray(set_b, dtype=float))
    if A.size == 0 or B.size == 0:
        raise ValueError("point sets must be nonempty")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    n, m = A.shape[0], B.shape[0]
    cost = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=2)

    # marginal equality constraints on the n*m transport plan
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([np.full(n, 1.0 / n), np.full(m, 1.0 / m)])
    res = linprog(cost.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def keyframe_embeddings(
    traj: Trajectory, keys: KeyframeSet, embed: EmbeddingProvider
) -> list[np.ndarray]:
    out = []
    for t in keys.indices:
        if t < 1 or t > traj.T:
            raise IndexError(f"keyframe {t} out of range for T={traj.T}")
        item = traj.frames[t - 1] if traj.frames is not None else traj.states[t - 1]
        try:
            out.append(embed.embed(item))
        except Exception as e:
            raise RuntimeError(f"embedding failed at keyframe {t}: {e}") from e
    return out


def vd_high(
    a: Trajectory,
    b: Trajectory,
    keys_a: KeyframeSet,
    keys_b: KeyframeSet,
    embed: EmbeddingProvider | None = None,
    tau_v: float = 1.0,
) -> float:
    """Visual discriminability: rho of the Wasserstein distance between the
    embedded keyframe sets."""
    if embed is None:
        embed = StateEmbedding()
    ea = keyframe_embeddings(a, keys_a, embed)
    eb = keyframe_embeddings(b, keys_b, embed)
    return rho(wasserstein(ea, eb), tau_v)


def calibrate_tau(raw_values: Sequence[float]) -> float:
    """Median-based scale for rho; falls back to 1.0 on degenerate samples."""
    vals = np.asarray([v for v in raw_values if np.isfinite(v)], dtype=float)
    if vals.size == 0:
        return 1.0
    med = float(np.median(vals))
    return med if med > 0 else 1.0
