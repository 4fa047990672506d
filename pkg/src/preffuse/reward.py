"""Ensemble reward model with pairwise preference loss, causal auxiliary
loss, combined objective, uncertainty-based query selection, and training.

The networks are small feed-forward models; forward and reverse-mode
gradient passes are implemented here directly in numpy so the loss
gradients are exact and fully inspectable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .synthesis import CounterfactualSample
from .trajectory import Trajectory, TrajectoryPair


@dataclass(frozen=True)
class PreferenceRecord:
    pair: TrajectoryPair
    label: int
    source: str = "fused"  # fused | scripted | counterfactual
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.label not in (-1, 0, 1):
            raise ValueError(f"label must be in {{-1,0,1}}, got {self.label}")
        if self.source == "counterfactual" and self.mask is None:
            raise ValueError("counterfactual records must carry a mask")


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 32
    epochs: int = 20
    lambda_cf: float | None = None  # None selects auto-ratio mode
    feedback_frequency: int = 5000
    max_feedback: int = 20000
    n_query: int = 50
    ensemble_size: int = 3
    hidden: tuple[int, ...] = (256, 256, 256)

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.epochs, self.n_query) <= 0:
            raise ValueError("config values must be positive")
        if self.ensemble_size < 2:
            raise ValueError("ensemble needs >= 2 members for variance")


class RewardNet:
    """Feed-forward net mapping combined state-action vectors to scalar
    rewards: tanh hidden layers, linear output."""

    def __init__(self, input_dim: int, hidden: Sequence[int] = (256, 256, 256),
                 seed: int = 0):
        rng = np.random.default_rng(seed)
        dims = [input_dim, *hidden, 1]
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            self.weights.append(rng.normal(0.0, scale, (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))
        self.input_dim = input_dim

    @property
    def params(self) -> list[np.ndarray]:
        return self.weights + self.biases

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for p in self.params:
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, list]:
        """Per-row rewards plus the activation cache for backprop."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        cache = [X]
        h = X
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W + b)
            cache.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out[:, 0], cache

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X)[0]

    def backward(self, cache: list, d_out: np.ndarray) -> list[np.ndarray]:
        """Reverse pass: gradients of sum(d_out * output) w.r.t. params,
        ordered like ``params``."""
        d = np.atleast_1d(np.asarray(d_out, dtype=float))[:, None]
        gw = [None] * len(self.weights)
        gb = [None] * len(self.biases)
        gw[-1] = cache[-1].T @ d
        gb[-1] = d.sum(axis=0)
        delta = d @ self.weights[-1].T
        for layer in range(len(self.weights) - 2, -1, -1):
            delta = delta * (1.0 - cache[layer + 1] ** 2)
            gw[layer] = cache[layer].T @ delta
            gb[layer] = delta.sum(axis=0)
            delta = delta @ self.weights[layer].T
        return gw + gb


def preference_prob(sum_a: float, sum_b: float) -> float:
    """Pairwise win probability: logistic of the return difference,
    computed in shifted form for stability."""
    if not (np.isfinite(sum_a) and np.isfinite(sum_b)):
        raise ValueError("reward sums must be finite")
    d = sum_b - sum_a
    if d >= 0:
        e = np.exp(-d)
        return float(e / (1.0 + e))
    return float(1.0 / (1.0 + np.exp(d)))


def preference_loss_from_sums(sum_a: float, sum_b: float, label: int) -> float:
    """NLL of the preferred segment; indecision records must be filtered
    upstream."""
    p = preference_prob(sum_a, sum_b) if label == 1 else preference_prob(sum_b, sum_a)
    return float(-np.log(max(p, 1e-300)))


def preference_loss(records: Sequence[PreferenceRecord], net: RewardNet) -> float:
    vals = _preference_loss_and_grad(records, net, want_grad=False)
    return vals[0]


def _preference_loss_and_grad(records, net: RewardNet, want_grad=True):
    kept = [r for r in records if r.label != -1]
    if not kept:
        raise ValueError("batch contains only indecision records; filter before calling")
    total = 0.0
    grads = [np.zeros_like(p) for p in net.params] if want_grad else None
    for rec in kept:
        xa, xb = rec.pair.a.combined(), rec.pair.b.combined()
        ra, cache_a = net.forward(xa)
        rb, cache_b = net.forward(xb)
        sa, sb = float(ra.sum()), float(rb.sum())
        p_pref = preference_prob(sa, sb) if rec.label == 1 else preference_prob(sb, sa)
        total += -np.log(max(p_pref, 1e-300))
        if want_grad:
            # d(-log p)/d(sum of preferred) = -(1 - p); opposite sign for the other
            coeff = (1.0 - p_pref)
            da = -coeff if rec.label == 1 else coeff
            db = coeff if rec.label == 1 else -coeff
            for g, gr in zip(grads, net.backward(cache_a, np.full(xa.shape[0], da))):
                g += gr
            for g, gr in zip(grads, net.backward(cache_b, np.full(xb.shape[0], db))):
                g += gr
    n = len(kept)
    total /= n
    if want_grad:
        for g in grads:
            g /= n
    return total, grads


def causal_aux_loss(preferred_rewards: np.ndarray, cf_rewards: np.ndarray,
                    mask: np.ndarray) -> float:
    """Contrast term on masked steps plus squared consistency term on
    unmasked steps."""
    r_star = np.asarray(preferred_rewards, dtype=float)
    r_cf = np.asarray(cf_rewards, dtype=float)
    h = np.asarray(mask, dtype=float)
    if not (r_star.shape == r_cf.shape == h.shape):
        raise ValueError("reward sequences and mask must share length")
    contrast = h * np.logaddexp(0.0, r_cf - r_star)
    consistency = (1.0 - h) * (r_star - r_cf) ** 2
    return float(contrast.sum() + consistency.sum())


def _causal_aux_loss_and_grad(sample: CounterfactualSample, net: RewardNet):
    x_star = sample.original.combined()
    x_cf = sample.edited.combined()
    r_star, cache_star = net.forward(x_star)
    r_cf, cache_cf = net.forward(x_cf)
    h = sample.mask.astype(float)
    loss = causal_aux_loss(r_star, r_cf, h)
    # contrast: d/dr_cf = h*sigmoid(r_cf - r_star), d/dr_star = -that
    sig = 1.0 / (1.0 + np.exp(-(r_cf - r_star)))
    d_cf = h * sig + (1.0 - h) * 2.0 * (r_cf - r_star)
    d_star = -d_cf
    grads = [np.zeros_like(p) for p in net.params]
    for g, gr in zip(grads, net.backward(cache_star, d_star)):
        g += gr
    for g, gr in zip(grads, net.backward(cache_cf, d_cf)):
        g += gr
    return loss, grads


class LambdaScheduler:
    """Auto-ratio weight for the auxiliary loss: EMA (decay 0.9) of
    pref / max(aux, eps), clamped to [0.01, 100]. A fixed value disables
    the schedule."""

    def __init__(self, fixed: float | None = None, decay: float = 0.9,
                 eps: float = 1e-8):
        self.fixed = fixed
        self.decay = decay
        self.eps = eps
        self._ema: float | None = None

    def update(self, pref: float, aux: float) -> float:
        if self.fixed is not None:
            return self.fixed
        ratio = float(np.clip(pref / max(aux, self.eps), 0.01, 100.0))
        self._ema = ratio if self._ema is None else self.decay * self._ema + (1 - self.decay) * ratio
        return float(np.clip(self._ema, 0.01, 100.0))

    @property
    def value(self) -> float:
        if self.fixed is not None:
            return self.fixed
        return 1.0 if self._ema is None else float(np.clip(self._ema, 0.01, 100.0))


def total_loss(pref: float, aux: float, lambda_cf: float) -> float:
    if not (np.isfinite(pref) and np.isfinite(aux)):
        raise ValueError("loss terms must be finite")
    return pref + lambda_cf * aux


class AdamOptimizer:
    """Adaptive moment estimation over a parameter list."""

    def __init__(self, params: list[np.ndarray], lr: float = 3e-4,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m[...] = self.b1 * m + (1 - self.b1) * g
            v[...] = self.b2 * v + (1 - self.b2) * g * g
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


class RewardEnsemble(BaseEstimator):
    """Small ensemble of reward networks with a shared training setup.

    sklearn-style: ``fit`` trains on preference records (plus optional
    counterfactual samples), ``predict`` averages member rewards over an
    array of combined state-action vectors.
    """

    def __init__(self, input_dim=None, learning_rate=3e-4, batch_size=32,
                 epochs=20, lambda_cf=None, ensemble_size=3,
                 hidden=(256, 256, 256), seed=0):
        self.input_dim = input_dim
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.lambda_cf = lambda_cf
        self.ensemble_size = ensemble_size
        self.hidden = hidden
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            epochs=self.epochs, lambda_cf=self.lambda_cf,
            ensemble_size=self.ensemble_size, hidden=tuple(self.hidden),
        )

    def fit(self, records: Sequence[PreferenceRecord],
            cf_store: Sequence[CounterfactualSample] = ()) -> "RewardEnsemble":
        usable = [r for r in records if r.label != -1]
        if not usable:
            raise ValueError("no decisive preference records to train on")
        dim = self.input_dim
        if dim is None:
            dim = usable[0].pair.a.d_s + usable[0].pair.a.d_a
        self.members_, self.history_ = train_reward(
            usable, cf_store, self._config(), seed=self.seed, input_dim=dim,
        )
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.mean([m.predict(X) for m in self.members_], axis=0)

    def member_rewards(self, X: np.ndarray) -> np.ndarray:
        return np.stack([m.predict(X) for m in self.members_])

    def save(self, path) -> None:
        blob = {
            "input_dim": self.members_[0].input_dim,
            "hidden": list(self.hidden),
            "seed": self.seed,
            "members": [m.get_flat().tolist() for m in self.members_],
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(blob, f)

    @classmethod
    def load(cls, path) -> "RewardEnsemble":
        with open(path, "r", encoding="utf-8") as f:
            blob = json.load(f)
        obj = cls(input_dim=blob["input_dim"], hidden=tuple(blob["hidden"]),
                  ensemble_size=max(2, len(blob["members"])), seed=blob["seed"])
        obj.members_ = []
        for flat in blob["members"]:
            net = RewardNet(blob["input_dim"], blob["hidden"])
            net.set_flat(np.asarray(flat))
            obj.members_.append(net)
        obj.history_ = []
        return obj


def uncertainty_select(candidates: Sequence[TrajectoryPair],
                       ensemble: RewardEnsemble, n: int) -> list[TrajectoryPair]:
    """Top-n pairs by variance of the pairwise win probability across
    ensemble members; ties keep input order."""
    if not candidates:
        raise ValueError("no candidate pairs")
    if n > len(candidates):
        raise ValueError(f"n={n} exceeds candidate count {len(candidates)}")
    scores = []
    for pair in candidates:
        probs = []
        for member in ensemble.members_:
            sa = float(member.predict(pair.a.combined()).sum())
            sb = float(member.predict(pair.b.combined()).sum())
            probs.append(preference_prob(sa, sb))
        scores.append(float(np.var(probs)))
    order = sorted(range(len(candidates)), key=lambda i: (-scores[i], i))
    return [candidates[i] for i in order[:n]]


def train_reward(records: Sequence[PreferenceRecord],
                 cf_store: Sequence[CounterfactualSample],
                 cfg: TrainConfig, seed: int = 0,
                 input_dim: int | None = None) -> tuple[list[RewardNet], list[dict]]:
    """Train each ensemble member by Adam on the combined objective.

    Counterfactual samples contribute both the pairwise term (original
    preferred over edited) and the causal auxiliary term. Deterministic
    given the seed.
    """
    decisive = [r for r in records if r.label != -1]
    if not decisive:
        raise ValueError("dataset contains no decisive preference records")
    if input_dim is None:
        input_dim = decisive[0].pair.a.d_s + decisive[0].pair.a.d_a

    cf_records = [
        PreferenceRecord(TrajectoryPair(s.original, s.edited), 1,
                         source="counterfactual", mask=s.mask)
        for s in cf_store
    ]
    all_records = decisive + cf_records

    members: list[RewardNet] = []
    history: list[dict] = []
    for m in range(cfg.ensemble_size):
        net = RewardNet(input_dim, cfg.hidden, seed=seed * 1000 + m)
        opt = AdamOptimizer(net.params, lr=cfg.learning_rate)
        sched = LambdaScheduler(fixed=cfg.lambda_cf)
        rng = np.random.default_rng(seed * 1000 + m + 7)
        for epoch in range(cfg.epochs):
            order = rng.permutation(len(all_records))
            cf_order = list(rng.permutation(len(cf_store))) if cf_store else []
            epoch_pref, epoch_aux, batches = 0.0, 0.0, 0
            for start in range(0, len(order), cfg.batch_size):
                batch = [all_records[i] for i in order[start:start + cfg.batch_size]]
                pref, grads = _preference_loss_and_grad(batch, net)
                aux = 0.0
                if cf_store:
                    n_aux = max(1, len(cf_store) * cfg.batch_size // max(1, len(all_records)))
                    picks = [cf_order[(batches * n_aux + j) % len(cf_order)]
                             for j in range(n_aux)]
                    aux_grads = [np.zeros_like(p) for p in net.params]
                    for idx in picks:
                        li, gi = _causal_aux_loss_and_grad(cf_store[idx], net)
                        aux += li
                        for g, gr in zip(aux_grads, gi):
                            g += gr
                    aux /= len(picks)
                    lam = sched.update(pref, aux)
                    for g, ga in zip(grads, aux_grads):
                        g += lam * ga / len(picks)
                total = total_loss(pref, aux, sched.value)
                if not np.isfinite(total):
                    raise FloatingPointError(
                        f"non-finite loss in member {m}, epoch {epoch}, batch {batches}"
                    )
                opt.step(net.params, grads)
                epoch_pref += pref
                epoch_aux += aux
                batches += 1
            history.append({
                "member": m, "epoch": epoch,
                "pref_loss": epoch_pref / batches,
                "aux_loss": epoch_aux / batches,
                "lambda_cf": sched.value,
            })
        members.append(net)
    return members, history
