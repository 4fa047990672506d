"""Hinge-loss Markov random field engine for inter-modal preference fusion.

Four weighted rule templates (agreement, two conflict-resolution rules,
indecision) are grounded over labels {-1, 0, 1} and modalities
{VLM, LLM}, relaxed to hinge potentials with Lukasiewicz semantics, and
solved by projected gradient descent over the probability simplex spanned
by the three FinalLabel atoms.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .discriminability import DiscriminabilityScores
from .fusion import ModalResult

LABELS = (-1, 0, 1)
MODALITIES = ("VLM", "LLM")
# fixed target ordering: FinalLabel(-1), FinalLabel(0), FinalLabel(1)
TARGET_INDEX = {-1: 0, 0: 1, 1: 2}


@dataclass(frozen=True)
class Literal:
    predicate: str
    args: tuple = ()
    negated: bool = False


@dataclass(frozen=True)
class RuleTemplate:
    """Weighted implication body_1 ^ ... ^ body_n -> head, with free
    variables Y (label) and M (modality) written as the placeholders
    "Y" / "M" in literal args."""

    body: tuple[Literal, ...]
    head: Literal
    weight: float = 1.0
    exponent: int = 1

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("rule weight must be nonnegative")
        if self.exponent not in (1, 2):
            raise ValueError("exponent must be 1 or 2")


@dataclass(frozen=True)
class GroundRule:
    body: tuple[Literal, ...]
    head: Literal
    weight: float
    exponent: int


@dataclass(frozen=True)
class HingePotential:
    """Potential [max(0, offset + coeffs . y)]^p scaled by weight, with y
    the FinalLabel target vector."""

    coeffs: np.ndarray
    offset: float
    weight: float
    exponent: int

    def value(self, y: np.ndarray) -> float:
        ell = self.offset + float(self.coeffs @ y)
        return self.weight * max(0.0, ell) ** self.exponent

    def subgradient(self, y: np.ndarray) -> np.ndarray:
        ell = self.offset + float(self.coeffs @ y)
        if ell <= 0.0:
            return np.zeros(3)
        if self.exponent == 1:
            return self.weight * self.coeffs
        return 2.0 * self.weight * ell * self.coeffs


@dataclass(frozen=True)
class FusionProblem:
    potentials: tuple[HingePotential, ...]

    def objective(self, y: np.ndarray) -> float:
        return sum(p.value(y) for p in self.potentials)

    def subgradient(self, y: np.ndarray) -> np.ndarray:
        g = np.zeros(3)
        for p in self.potentials:
            g += p.subgradient(y)
        return g


@dataclass(frozen=True)
class FusedPreference:
    label: int
    soft_scores: dict = field(default_factory=dict)


def default_templates(
    w_agree: float = 1.0, w_vlm: float = 0.8, w_llm: float = 0.8,
    w_indecision: float = 0.6, p: int = 1,
) -> list[RuleTemplate]:
    """The four fusion rule templates with configurable weights."""
    return [
        RuleTemplate(
            body=(Literal("IsAgree", ("Y",)), Literal("ConfHigh", ("M",))),
            head=Literal("FinalLabel", ("Y",)),
            weight=w_agree, exponent=p,
        ),
        RuleTemplate(
            body=(
                Literal("IsAgree", ("Y",), negated=True),
                Literal("VLMLabel", ("Y",)),
                Literal("ConfHigh", ("VLM",)),
                Literal("VDHigh"),
            ),
            head=Literal("FinalLabel", ("Y",)),
            weight=w_vlm, exponent=p,
        ),
        RuleTemplate(
            body=(
                Literal("IsAgree", ("Y",), negated=True),
                Literal("LLMLabel", ("Y",)),
                Literal("ConfHigh", ("LLM",)),
                Literal("TDHigh"),
            ),
            head=Literal("FinalLabel", ("Y",)),
            weight=w_llm, exponent=p,
        ),
        RuleTemplate(
            body=(
                Literal("ConfHigh", ("VLM",), negated=True),
                Literal("ConfHigh", ("LLM",), negated=True),
            ),
            head=Literal("FinalLabel", (-1,)),
            weight=w_indecision, exponent=p,
        ),
    ]


def _substitutions(template: RuleTemplate):
    literals = list(template.body) + [template.head]
    uses_y = any("Y" in lit.args for lit in literals)
    uses_m = any("M" in lit.args for lit in literals)
    labels = LABELS if uses_y else (None,)
    mods = MODALITIES if uses_m else (None,)
    for y in labels:
        for m in mods:
            yield y, m


def _bind(lit: Literal, y, m) -> Literal:
    args = tuple(y if a == "Y" else m if a == "M" else a for a in lit.args)
    return Literal(lit.predicate, args, lit.negated)


def ground_rules(
    templates: Sequence[RuleTemplate], observations: dict[tuple, float]
) -> list[GroundRule]:
    """Expand templates over all label/modality substitutions.

    ``observations`` maps (predicate, args) to a value in [0,1]. Every
    grounded body literal must be observed; heads must be FinalLabel.
    """
    out = []
    for template in templates:
        for y, m in _substitutions(template):
            body = tuple(_bind(lit, y, m) for lit in template.body)
            head = _bind(template.head, y, m)
            if head.predicate != "FinalLabel":
                raise ValueError(f"unsupported head predicate {head.predicate!r}")
            for lit in body:
                if (lit.predicate, lit.args) not in observations:
                    raise KeyError(
                        f"unmatched observed atom {lit.predicate}{lit.args}"
                    )
            out.append(GroundRule(body, head, template.weight, template.exponent))
    return out


def lukasiewicz_potential(
    rule: GroundRule, observations: dict[tuple, float]
) -> HingePotential:
    """Distance to satisfaction of body -> head under Lukasiewicz
    semantics: ell = sum(body values) - (n - 1) - head, negated literals
    contributing (1 - value)."""
    n = len(rule.body)
    offset = -(n - 1)
    for lit in rule.body:
        v = observations[(lit.predicate, lit.args)]
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"atom {lit.predicate}{lit.args} value {v} outside [0,1]")
        offset += (1.0 - v) if lit.negated else v
    coeffs = np.zeros(3)
    target = TARGET_INDEX[rule.head.args[0]]
    if rule.head.negated:
        coeffs[target] = 1.0
        offset -= 1.0  # head contributes -(1 - y)
    else:
        coeffs[target] = -1.0
    return HingePotential(coeffs, float(offset), rule.weight, rule.exponent)


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, v.size + 1)
    cond = u - (css - 1.0) / idx > 0
    k = idx[cond][-1]
    tau = (css[k - 1] - 1.0) / k
    return np.maximum(v - tau, 0.0)


def map_inference(
    problem: FusionProblem, tolerance: float = 1e-6, max_iters: int = 10_000
) -> np.ndarray:
    """Projected subgradient descent over the 2-simplex.

    Returns the best iterate found; raises if the objective has not
    stabilized within ``max_iters``.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    y = np.full(3, 1.0 / 3.0)
    if not problem.potentials:
        return y
    best_y, best_f = y.copy(), problem.objective(y)
    stall = 0
    for it in range(1, max_iters + 1):
        g = problem.subgradient(y)
        step = 0.5 / np.sqrt(it)
        y = project_to_simplex(y - step * g)
        f = problem.objective(y)
        if f < best_f - tolerance:
            best_f, best_y = f, y.copy()
            stall = 0
        else:
            if f < best_f:
                best_f, best_y = f, y.copy()
            stall += 1
        if stall >= 200:
            return best_y
    # diminishing steps guarantee convergence for this convex objective;
    # report the best iterate with its residual step size as the gap proxy
    import warnings

    warnings.warn(
        f"map_inference hit max_iters={max_iters}; best objective {best_f:.6g}, "
        f"final step {0.5 / np.sqrt(max_iters):.2g}"
    )
    return best_y


def build_observations(
    vlm: ModalResult, llm: ModalResult, ctx: DiscriminabilityScores
) -> dict[tuple, float]:
    obs: dict[tuple, float] = {}
    for label in LABELS:
        agree = 1.0 if (vlm.label == label and llm.label == label) else 0.0
        obs[("IsAgree", (label,))] = agree
        obs[("VLMLabel", (label,))] = 1.0 if vlm.label == label else 0.0
        obs[("LLMLabel", (label,))] = 1.0 if llm.label == label else 0.0
    obs[("ConfHigh", ("VLM",))] = vlm.confidence
    obs[("ConfHigh", ("LLM",))] = llm.confidence
    obs[("VDHigh", ())] = ctx.vd
    obs[("TDHigh", ())] = ctx.td
    return obs


def build_problem(
    vlm: ModalResult, llm: ModalResult, ctx: DiscriminabilityScores,
    templates: Sequence[RuleTemplate] | None = None,
) -> FusionProblem:
    if templates is None:
        templates = default_templates()
    obs = build_observations(vlm, llm, ctx)
    grounded = ground_rules(templates, obs)
    return FusionProblem(tuple(lukasiewicz_potential(r, obs) for r in grounded))


def fuse_inter(
    vlm: ModalResult, llm: ModalResult, ctx: DiscriminabilityScores,
    templates: Sequence[RuleTemplate] | None = None,
    tolerance: float = 1e-6, tie_eps: float = 1e-9,
) -> FusedPreference:
    """Ground, relax, and solve; hard label is the argmax FinalLabel atom,
    with ties resolving to indecision."""
    problem = build_problem(vlm, llm, ctx, templates)
    y = map_inference(problem, tolerance)
    scores = {label: float(y[TARGET_INDEX[label]]) for label in LABELS}
    ranked = sorted(LABELS, key=lambda l: scores[l], reverse=True)
    if scores[ranked[0]] - scores[ranked[1]] <= tie_eps:
        hard = -1
    else:
        hard = ranked[0]
    return FusedPreference(hard, scores)
