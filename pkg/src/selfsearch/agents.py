"""Pluggable solvers: simulated belief agents and a remote HTTP adapter.

A simulated agent holds, per task, a vector of Bernoulli beliefs over bit
values. Proposing samples every bit from the beliefs; refining edits the
parent's bits using the feedback (correct a named failure with probability
fix_prob, flip any other bit with probability drift_prob). Either way the
trace records the belief policy's log-probabilities of the emitted bits,
which is what the trainer differentiates. The fix/drift coins are the
mechanics of how a refinement comes about, not the policy law.

Belief state is created by orienting a fixed skill profile against each
task's target (skill_i = probability the emitted bit is correct), a
harness-side step; the sampling paths below never read targets or private
outcomes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import requests

from .core import (AgentId, LogProbTrace, NodeRecord, SelfSearchError,
                   ShapeError, Solution, StateError, bits_to_hex, hex_to_bits)
from .environment import FeedbackReport, Task

BELIEF_LO = 1e-6
BELIEF_HI = 1.0 - 1e-6


class RemoteError(SelfSearchError):
    """The remote agent endpoint failed (non-2xx, transport error)."""


class ProtocolError(RemoteError):
    """The remote agent answered with missing or malformed fields."""


class RemoteTimeoutError(RemoteError, TimeoutError):
    """The remote agent did not answer within the configured deadline."""


@dataclass(frozen=True)
class SimAgentParams:
    """Static configuration of a simulated agent.

    skill: per-bit correctness probabilities, oriented into bit-value beliefs
    when the agent first meets a task. fix_prob and drift_prob drive the
    refinement mechanics. trace_len is how many pseudo-tokens a proposal is
    chunked into. logit_scale multiplies this agent's ascent step.
    """

    skill: np.ndarray
    fix_prob: float
    drift_prob: float
    trace_len: int = 4
    logit_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "skill", np.asarray(self.skill, dtype=np.float64))
        if self.skill.ndim != 1:
            raise ShapeError("skill profile must be a 1-d vector")
        if ((self.skill < 0) | (self.skill > 1)).any():
            raise ShapeError("skill entries must lie in [0, 1]")
        for name in ("fix_prob", "drift_prob"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ShapeError(f"{name} must lie in [0, 1], got {v}")
        if self.trace_len < 1:
            raise ShapeError(f"trace_len must be >= 1, got {self.trace_len}")
        if not (self.logit_scale > 0):
            raise ShapeError(f"logit_scale must be positive, got {self.logit_scale}")


@dataclass(frozen=True)
class Proposal:
    solution: Solution
    trace: LogProbTrace


def token_spans(m: int, trace_len: int) -> List[np.ndarray]:
    """Split bit positions 0..m-1 into min(trace_len, m) contiguous chunks."""
    return np.array_split(np.arange(m), max(1, min(trace_len, m)))


def orient_skill(skill: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Turn a correctness profile into bit-value beliefs for one target."""
    skill = np.asarray(skill, dtype=np.float64)
    if skill.shape != np.asarray(target).shape:
        raise ShapeError("skill profile length does not match task length")
    theta = np.where(np.asarray(target) == 1, skill, 1.0 - skill)
    return np.clip(theta, BELIEF_LO, BELIEF_HI)


def _bit_logps(belief: np.ndarray, bits: np.ndarray) -> np.ndarray:
    return np.where(bits == 1, np.log(belief), np.log1p(-belief))


def _token_logps(belief: np.ndarray, bits: np.ndarray,
                 spans: Sequence[np.ndarray]) -> np.ndarray:
    starts = np.array([s[0] for s in spans], dtype=int)
    return np.add.reduceat(_bit_logps(belief, bits), starts)


class _ParamCell:
    """Shared, swappable belief store. Homogeneous roles point at one cell."""

    def __init__(self):
        self.beliefs: Dict[int, np.ndarray] = {}
        self.ref_beliefs: Dict[int, np.ndarray] = {}


class SimAgent:
    """A simulated agent bound lazily to tasks as it meets them."""

    def __init__(self, agent_id: AgentId, params: SimAgentParams,
                 infer_noise: float = 0.0, cell: Optional[_ParamCell] = None):
        self.agent_id = agent_id
        self.params = params
        self.infer_noise = float(infer_noise)
        self.cell = cell if cell is not None else _ParamCell()

    # -- belief state ------------------------------------------------------

    def bind(self, task: Task) -> None:
        """Create this agent's belief vector for a task on first contact.

        The reference snapshot (KL anchor) is frozen here and never moves,
        even as training updates the live beliefs.
        """
        if task.id in self.cell.beliefs:
            return
        theta = orient_skill(self.params.skill, task.target)
        self.cell.beliefs[task.id] = theta
        self.cell.ref_beliefs[task.id] = theta.copy()

    def set_belief(self, task_id: int, theta: np.ndarray) -> None:
        """Install an explicit belief vector (tests, handcrafted setups)."""
        theta = np.clip(np.asarray(theta, dtype=np.float64), BELIEF_LO, BELIEF_HI)
        self.cell.beliefs[task_id] = theta
        self.cell.ref_beliefs.setdefault(task_id, theta.copy())

    def belief(self, task_id: int) -> np.ndarray:
        if task_id not in self.cell.beliefs:
            raise StateError(f"agent {self.agent_id} is not bound to task {task_id}")
        return self.cell.beliefs[task_id]

    # -- generation --------------------------------------------------------

    def _build_trace(self, task_id: int, bits: np.ndarray,
                     rng: Optional[np.random.Generator]) -> LogProbTrace:
        theta = self.belief(task_id)
        spans = token_spans(bits.shape[0], self.params.trace_len)
        tok = _token_logps(theta, bits, spans)
        ref = _token_logps(self.cell.ref_beliefs[task_id], bits, spans)
        infer = tok.copy()
        if self.infer_noise > 0 and rng is not None:
            infer = np.minimum(0.0, tok + self.infer_noise
                               * rng.standard_normal(tok.shape[0]))
        return LogProbTrace(logp_new=tok.copy(), logp_old=tok, logp_ref=ref,
                            logp_infer=infer,
                            action_mask=np.ones(tok.shape[0], dtype=bool))

    def propose(self, task: Task, rng: np.random.Generator) -> Proposal:
        """Sample a fresh solution, every bit Bernoulli under the beliefs."""
        self.bind(task)
        theta = self.belief(task.id)
        bits = (rng.random(task.length) < theta).astype(np.uint8)
        sol = Solution(bits=bits, source_agent=self.agent_id)
        return Proposal(sol, self._build_trace(task.id, bits, rng))

    def refine(self, task: Task, parent: Solution, feedback: FeedbackReport,
               rng: np.random.Generator) -> Proposal:
        """Edit the parent: fix named failures w.p. fix_prob, drift the rest.

        Draw order is fixed (one uniform per named failure, then one per
        remaining bit) so refinements replay deterministically.
        """
        self.bind(task)
        m = task.length
        if parent.bits.shape[0] != m:
            raise ShapeError("parent solution length does not match task")
        bits = parent.bits.copy()
        failed = np.array([f.index for f in feedback.failures], dtype=int)
        if failed.size:
            fixed = rng.random(failed.size) < self.params.fix_prob
            expected = np.array([f.expected for f in feedback.failures],
                                dtype=np.uint8)
            bits[failed[fixed]] = expected[fixed]
        others = np.ones(m, dtype=bool)
        others[failed] = False
        flips = rng.random(int(others.sum())) < self.params.drift_prob
        idx = np.flatnonzero(others)[flips]
        bits[idx] ^= 1
        sol = Solution(bits=bits, source_agent=self.agent_id)
        return Proposal(sol, self._build_trace(task.id, bits, rng))

    # -- training support ---------------------------------------------------

    def loss_records(self, records: Sequence[NodeRecord]) -> List[NodeRecord]:
        """Shallow copies with logp_new recomputed against current beliefs."""
        out = []
        for rec in records:
            theta = self.belief(rec.task_id)
            spans = token_spans(rec.solution.bits.shape[0], self.params.trace_len)
            tok = _token_logps(theta, rec.solution.bits, spans)
            trace = LogProbTrace(
                logp_new=tok, logp_old=rec.trace.logp_old,
                logp_ref=rec.trace.logp_ref, logp_infer=rec.trace.logp_infer,
                action_mask=rec.trace.action_mask)
            out.append(replace(rec, trace=trace))
        return out

    def belief_grad(self, records: Sequence[NodeRecord],
                    token_grads: Sequence[np.ndarray]) -> Dict[int, np.ndarray]:
        """Chain per-token objective gradients down to per-bit beliefs."""
        grads: Dict[int, np.ndarray] = {}
        for rec, tg in zip(records, token_grads):
            theta = self.belief(rec.task_id)
            bits = rec.solution.bits
            spans = token_spans(bits.shape[0], self.params.trace_len)
            sizes = np.array([s.size for s in spans], dtype=int)
            g_bit = np.repeat(tg, sizes)
            dlogp = np.where(bits == 1, 1.0 / theta, -1.0 / (1.0 - theta))
            acc = grads.setdefault(rec.task_id, np.zeros(bits.shape[0]))
            acc += g_bit * dlogp
        return grads

    def ascend(self, grads: Mapping[int, np.ndarray], step_size: float) -> None:
        """One ascent step in probability space; swap the store atomically."""
        scaled = step_size * self.params.logit_scale
        fresh = dict(self.cell.beliefs)
        for task_id, g in grads.items():
            fresh[task_id] = np.clip(self.belief(task_id) + scaled * g,
                                     BELIEF_LO, BELIEF_HI)
        self.cell.beliefs = fresh

    def pass1_probability(self, task: Task, private_only: bool = True) -> float:
        """Exact chance a single fresh proposal passes the (private) tests."""
        self.bind(task)
        theta = self.belief(task.id)
        p_correct = np.where(task.target == 1, theta, 1.0 - theta)
        lo = task.public_count if private_only else 0
        return float(np.prod(p_correct[lo:]))


class RemoteAgent:
    """HTTP adapter speaking the propose/refine JSON protocol.

    POST body: {task_id, m, mode: "fresh"|"refine", parent_bits_hex?,
    feedback?}; expected reply: {bits_hex, token_logprobs}. Failures map to
    RemoteTimeoutError / ProtocolError / RemoteError and leave the node
    unexpanded; search records them and moves on.
    """

    def __init__(self, agent_id: AgentId, endpoint: str, m: int,
                 timeout_ms: int = 2000, retries: int = 0, session=None):
        self.agent_id = agent_id
        self.endpoint = endpoint
        self.m = int(m)
        self.timeout_ms = int(timeout_ms)
        self.retries = int(retries)
        self._session = session if session is not None else requests.Session()

    def _call(self, payload: dict) -> dict:
        last_exc = None
        for _ in range(self.retries + 1):
            try:
                resp = self._session.post(self.endpoint, json=payload,
                                          timeout=self.timeout_ms / 1000.0)
            except requests.Timeout as exc:
                last_exc = RemoteTimeoutError(
                    f"remote agent timed out after {self.timeout_ms} ms")
                last_exc.__cause__ = exc
                continue
            except requests.RequestException as exc:
                last_exc = RemoteError(f"remote agent transport failure: {exc}")
                continue
            if not (200 <= resp.status_code < 300):
                raise RemoteError(
                    f"remote agent returned status {resp.status_code}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError("remote agent reply is not JSON") from exc
        raise last_exc

    def _parse(self, data: dict) -> Proposal:
        if not isinstance(data, dict) or "bits_hex" not in data \
                or "token_logprobs" not in data:
            raise ProtocolError("remote reply missing bits_hex/token_logprobs")
        try:
            bits = hex_to_bits(data["bits_hex"], self.m)
        except (ValueError, ShapeError) as exc:
            raise ProtocolError(f"remote reply bits malformed: {exc}") from exc
        logps = np.asarray(data["token_logprobs"], dtype=np.float64)
        if logps.ndim != 1 or logps.size == 0:
            raise ProtocolError("token_logprobs must be a non-empty list")
        if not np.isfinite(logps).all() or (logps > 0).any():
            raise ProtocolError("token_logprobs must be finite and <= 0")
        trace = LogProbTrace(
            logp_new=logps.copy(), logp_old=logps.copy(),
            logp_ref=logps.copy(), logp_infer=logps.copy(),
            action_mask=np.ones(logps.size, dtype=bool))
        return Proposal(Solution(bits=bits, source_agent=self.agent_id), trace)

    def propose(self, task: Task, rng=None) -> Proposal:
        return self._parse(self._call(
            {"task_id": task.id, "m": task.length, "mode": "fresh"}))

    def refine(self, task: Task, parent: Solution, feedback: FeedbackReport,
               rng=None) -> Proposal:
        payload = {
            "task_id": task.id, "m": task.length, "mode": "refine",
            "parent_bits_hex": bits_to_hex(parent.bits),
            "feedback": {
                "passed": feedback.passed, "total": feedback.total,
                "pass_rate": feedback.pass_rate,
                "failures": [{"index": f.index, "produced": f.produced,
                              "expected": f.expected}
                             for f in feedback.failures],
            },
        }
        return self._parse(self._call(payload))
