"""Two-level Thompson sampling with depth-guided widening control.

Every decision point keeps Beta posteriors over observed scores in [0, 1].
Agent choice draws one sample per agent from its run-level posterior; the
widen-vs-deepen choice at a node compares one draw for the chosen agent's
"generate new child" posterior against one draw per existing child's
"descend" posterior. A depth schedule can damp the generate draw
geometrically in the number of nodes already sitting at the prospective
child depth, which is what pushes search deeper on hard tasks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional

import numpy as np


class BanditError(Exception):
    pass


class InvalidScoreError(BanditError):
    """Score outside [0, 1] or not a number."""


class NoAgentsError(BanditError):
    """Agent selection was asked to choose from an empty map."""


@dataclass(frozen=True)
class BetaPosterior:
    """Beta(alpha, beta) belief over a score in [0, 1]."""

    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise BanditError(f"Beta parameters must be positive, got "
                              f"({self.alpha}, {self.beta})")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)


def update_posterior(post: BetaPosterior, score: float) -> BetaPosterior:
    """Absorb one score: alpha += score, beta += 1 - score."""
    s = float(score)
    if not np.isfinite(s) or s < 0.0 or s > 1.0:
        raise InvalidScoreError(f"score must lie in [0, 1], got {score!r}")
    return BetaPosterior(post.alpha + s, post.beta + (1.0 - s))


def sample(post: BetaPosterior, rng: np.random.Generator) -> float:
    return float(rng.beta(post.alpha, post.beta))


def select_agent(stats: Mapping[int, BetaPosterior],
                 rng: np.random.Generator) -> int:
    """Thompson choice over agents; ties break to the lowest agent id."""
    if not stats:
        raise NoAgentsError("no agents to select from")
    best_id, best_draw = None, -1.0
    for agent_id in sorted(stats):
        draw = sample(stats[agent_id], rng)
        if draw > best_draw:
            best_id, best_draw = agent_id, draw
    return best_id


@dataclass(frozen=True)
class DepthSchedule:
    """Per-depth damping base gamma(d) = max(gamma_min, gamma1 * decay^(d-1)).

    gamma1 may be exactly 1.0 so that an all-ones schedule (a behavioral
    no-op) stays expressible for identity checks.
    """

    gamma1: float = 0.98
    decay: float = 0.9
    gamma_min: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.gamma1 <= 1.0):
            raise BanditError(f"gamma1 must be in (0, 1], got {self.gamma1}")
        if not (0.0 < self.decay <= 1.0):
            raise BanditError(f"decay must be in (0, 1], got {self.decay}")
        if not (0.0 < self.gamma_min <= self.gamma1):
            raise BanditError(f"gamma_min must be in (0, gamma1], got {self.gamma_min}")

    def gamma(self, depth: int) -> float:
        if depth < 1:
            raise BanditError(f"depth must be >= 1, got {depth}")
        return max(self.gamma_min, self.gamma1 * self.decay ** (depth - 1))


def depth_weight(sched: DepthSchedule, depth: int, count: int) -> float:
    """gamma(depth) ** count, the multiplier applied to the generate draw."""
    if count < 0:
        raise BanditError(f"depth count must be >= 0, got {count}")
    return sched.gamma(depth) ** count


GEN = "gen"
CON = "con"


@dataclass(frozen=True)
class Action:
    """Outcome of one widen-vs-deepen decision."""

    kind: str  # GEN or CON
    child_id: Optional[int] = None


def select_action(node, agent_id: int, depth_counts: Mapping[int, int],
                  sched: Optional[DepthSchedule],
                  rng: np.random.Generator) -> Action:
    """Choose between generating a new child of `node` and descending.

    Draw order is fixed (generate draw first, then children in id order) so
    runs are reproducible. Only the generate draw is depth-weighted; with
    sched=None, or whenever the weight is 1, the comparison is plain
    Thompson sampling. Ties go to generate, then to the lowest child id.
    """
    gen_draw = sample(node.gen_posteriors[agent_id], rng)
    if sched is not None:
        child_depth = node.depth + 1
        gen_draw *= depth_weight(sched, child_depth,
                                 depth_counts.get(child_depth, 0))
    best = Action(GEN)
    best_draw = gen_draw
    for child in node.children:
        draw = sample(child.con_posterior, rng)
        if draw > best_draw:
            best = Action(CON, child.node_id)
            best_draw = draw
    return best
