"""Policy-optimization kernels over search-tree records.

Advantages are z-scores of rewards over a whole tree (population std, with a
floor guard that zeroes degenerate groups). Two assembled objectives share
the clipped-surrogate-minus-KL shape and are summed per agent buffer with a
per-buffer token normalizer:

* token_objective: per-token probability ratios.
* sequence_objective: one length-normalized sequence ratio per record, an
  inference-mismatch prefactor (truncated probability ratio between the
  inference-engine and training-engine views, treated as a constant), and
  overlong reward shaping applied upstream of the advantages.

The KL penalty uses the k3 estimator against the frozen reference trace.
Gradients with respect to logp_new are computed analytically so agent
updates can chain them to their own parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .core import NodeRecord, ShapeError, StateError


@dataclass(frozen=True)
class LossParams:
    """Knobs shared by the objectives.

    l_max <= 0 disables overlong shaping. tis_mode selects how the
    inference-mismatch prefactor enters: "ratio" (truncated probability
    ratio, the default) or "log" (the raw log-ratio, capped consistently).
    """

    eps_low: float = 0.2
    eps_high: float = 0.28
    kl_coef: float = 1e-3
    l_max: int = 0
    l_cache: int = 0
    tis_clip: float = 2.0
    tis_mode: str = "ratio"
    std_floor: float = 1e-6

    def __post_init__(self):
        if self.eps_low < 0 or self.eps_high < 0:
            raise ShapeError("clip widths must be non-negative")
        if self.eps_low >= 1.0:
            raise ShapeError("eps_low must be < 1 so the lower clip stays positive")
        if self.tis_clip <= 0:
            raise ShapeError("tis_clip must be positive")
        if self.tis_mode not in ("ratio", "log"):
            raise ShapeError(f"unknown tis_mode {self.tis_mode!r}")
        if self.l_max > 0 and not (0 < self.l_cache < self.l_max):
            raise ShapeError("overlong shaping needs 0 < l_cache < l_max")


def _zscores(rewards: np.ndarray, std_floor: float) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1 or r.size == 0:
        raise ShapeError("rewards must be a non-empty 1-d vector")
    std = float(r.std())  # population std
    if std < std_floor:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def tree_advantages(rewards, std_floor: float = 1e-6) -> np.ndarray:
    """Group-relative advantages over every node of one tree."""
    return _zscores(rewards, std_floor)


def grpo_advantages(rewards, std_floor: float = 1e-6) -> np.ndarray:
    """Flat-group z-score advantages (baseline sampling, no tree)."""
    return _zscores(rewards, std_floor)


def overlong_penalty(length: int, params: LossParams) -> float:
    """Soft penalty for long outputs: 0 up to l_max - l_cache, then linear
    down to -1 at l_max, and -1 beyond."""
    if params.l_max <= 0:
        return 0.0
    soft = params.l_max - params.l_cache
    if length <= soft:
        return 0.0
    if length > params.l_max:
        return -1.0
    return (soft - length) / params.l_cache


def shaped_rewards(records: Sequence[NodeRecord], params: LossParams) -> np.ndarray:
    """Rewards plus overlong shaping, in record order."""
    return np.array([rec.reward + overlong_penalty(rec.trace.token_count, params)
                     for rec in records], dtype=np.float64)


def assign_advantages(records: Sequence[NodeRecord], params: LossParams,
                      shaped: bool = True) -> np.ndarray:
    """Set each record's advantage from the group z-scores, exactly once."""
    for rec in records:
        if rec.advantage is not None:
            raise StateError(f"record for node {rec.node_id} already has an advantage")
    rewards = shaped_rewards(records, params) if shaped else \
        np.array([rec.reward for rec in records], dtype=np.float64)
    adv = tree_advantages(rewards, params.std_floor)
    for rec, a in zip(records, adv):
        rec.advantage = float(a)
    return adv


def token_ratio(trace, t: int) -> float:
    return float(np.exp(trace.logp_new[t] - trace.logp_old[t]))


def gspo_ratio(trace) -> float:
    """Length-normalized sequence ratio exp(mean_t(logp_new - logp_old))."""
    mask = trace.action_mask
    n = int(mask.sum())
    if n == 0:
        raise ShapeError("trace has no active tokens")
    diff = (trace.logp_new - trace.logp_old)[mask]
    return float(np.exp(diff.mean()))


def tis_log_ratio(trace) -> float:
    """Log of the inference/training sequence probability ratio."""
    mask = trace.action_mask
    return float((trace.logp_infer - trace.logp_old)[mask].sum())


def tis_factor(trace, tis_clip: float, mode: str = "ratio") -> float:
    """Inference-mismatch prefactor, truncated at tis_clip."""
    llr = tis_log_ratio(trace)
    if mode == "log":
        return min(llr, math.log(tis_clip))
    return min(math.exp(llr), tis_clip)


def kl_k3(trace) -> float:
    """k3 estimate of KL(new || ref): mean_t(e^d - d - 1), d = ref - new."""
    mask = trace.action_mask
    d = (trace.logp_ref - trace.logp_new)[mask]
    return float(np.mean(np.exp(d) - d - 1.0))


@dataclass
class RecordTerms:
    """Per-record diagnostics emitted alongside an objective value."""

    node_id: int
    agent_id: int
    advantage: float
    ratio: float        # sequence ratio, or mean token ratio for the token form
    surrogate: float    # clipped surrogate contribution, pre-normalizer
    kl: float           # KL contribution, pre-normalizer and pre-beta
    tokens: int


@dataclass
class ObjectiveResult:
    value: float
    per_record: List[RecordTerms] = field(default_factory=list)
    # dJ/dlogp_new per active token, zeros where masked; keyed like the input
    token_grads: Optional[Dict[int, List[np.ndarray]]] = None


def _check_batch(buffers: Mapping[int, Sequence[NodeRecord]]) -> None:
    if not buffers:
        raise ShapeError("objective needs at least one agent buffer")
    for agent_id, records in buffers.items():
        if len(records) == 0:
            raise ShapeError(f"agent {agent_id} buffer is empty")
        for rec in records:
            if rec.advantage is None:
                raise StateError(
                    f"record for node {rec.node_id} has no advantage assigned")


def _clip_active(ratio: float, adv: float, lo: float, hi: float) -> bool:
    """Whether the unclipped branch of min(r*A, clip(r)*A) is live at r."""
    if adv >= 0:
        return ratio < hi
    return ratio > lo


def token_objective(buffers: Mapping[int, Sequence[NodeRecord]],
                    params: LossParams,
                    with_grad: bool = False) -> ObjectiveResult:
    """Per-token clipped surrogate with k3 KL, summed over agent buffers."""
    _check_batch(buffers)
    lo, hi = 1.0 - params.eps_low, 1.0 + params.eps_high
    beta = params.kl_coef
    total = 0.0
    terms: List[RecordTerms] = []
    grads: Dict[int, List[np.ndarray]] = {} if with_grad else None
    for agent_id in sorted(buffers):
        records = buffers[agent_id]
        norm = float(sum(rec.trace.active_count for rec in records))
        agent_grads = []
        for rec in records:
            tr, adv = rec.trace, rec.advantage
            mask = tr.action_mask
            w = np.exp(tr.logp_new - tr.logp_old)
            clipped = np.minimum(w * adv, np.clip(w, lo, hi) * adv)
            d = tr.logp_ref - tr.logp_new
            kl_t = np.exp(d) - d - 1.0
            surr = float(clipped[mask].sum())
            kl = float(kl_t[mask].sum())
            total += (surr - beta * kl) / norm
            terms.append(RecordTerms(rec.node_id, agent_id, float(adv),
                                     float(w[mask].mean()), surr, kl,
                                     int(mask.sum())))
            if with_grad:
                live = (w < hi) if adv >= 0 else (w > lo)
                g = (adv * w * live + beta * (np.exp(d) - 1.0)) / norm
                g[~mask] = 0.0
                agent_grads.append(g)
        if with_grad:
            grads[agent_id] = agent_grads
    return ObjectiveResult(value=total, per_record=terms, token_grads=grads)


def sequence_objective(buffers: Mapping[int, Sequence[NodeRecord]],
                       params: LossParams,
                       with_grad: bool = False) -> ObjectiveResult:
    """Sequence-ratio surrogate with mismatch prefactor and k3 KL.

    Reduces to token_objective when every record has one token, no
    inference mismatch, and kl_coef = 0.
    """
    _check_batch(buffers)
    lo, hi = 1.0 - params.eps_low, 1.0 + params.eps_high
    beta = params.kl_coef
    total = 0.0
    terms: List[RecordTerms] = []
    grads: Dict[int, List[np.ndarray]] = {} if with_grad else None
    for agent_id in sorted(buffers):
        records = buffers[agent_id]
        norm = float(sum(rec.trace.active_count for rec in records))
        agent_grads = []
        for rec in records:
            tr, adv = rec.trace, rec.advantage
            mask = tr.action_mask
            n = int(mask.sum())
            s = gspo_ratio(tr)
            pref = tis_factor(tr, params.tis_clip, params.tis_mode)
            min_part = min(s * adv, float(np.clip(s, lo, hi)) * adv)
            d = (tr.logp_ref - tr.logp_new)
            kl_t = np.exp(d) - d - 1.0
            kl = float(kl_t[mask].sum())
            surr = pref * n * min_part
            total += (surr - pref * beta * kl) / norm
            terms.append(RecordTerms(rec.node_id, agent_id, float(adv), s,
                                     surr, kl, n))
            if with_grad:
                live = _clip_active(s, adv, lo, hi)
                g = np.full(tr.token_count,
                            pref * (adv * s if live else 0.0) / norm)
                g += pref * beta * (np.exp(d) - 1.0) / norm
                g[~mask] = 0.0
                agent_grads.append(g)
        if with_grad:
            grads[agent_id] = agent_grads
    return ObjectiveResult(value=total, per_record=terms, token_grads=grads)
