"""Per-agent training buffers with threshold-triggered asynchronous updates.

Records from finished trees are filtered (trees whose raw reward vector is
all-0 or all-1 carry no learning signal and are dropped whole) and routed to
the buffer of the agent that produced them. Whenever a buffer holds at least
`threshold` records, the oldest `threshold` are drained into a batch and an
update runs for that agent alone. Updates for different agents may run
concurrently; a slow agent never blocks dispatch or the other agents.
"""

from __future__ import annotations

import threading
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .core import NodeRecord, SelfSearchError, StateError
from .rl import LossParams, sequence_objective


class RoutingError(SelfSearchError):
    """A record names an agent with no buffer."""


@dataclass
class TrainBatch:
    agent_id: int
    records: List[NodeRecord]


class AgentBuffer:
    """FIFO record buffer for one agent. Thread-safe."""

    def __init__(self, agent_id: int, threshold: int):
        if threshold < 1:
            raise StateError(f"threshold must be >= 1, got {threshold}")
        self.agent_id = agent_id
        self.threshold = threshold
        self._records: deque = deque()
        self._lock = threading.Lock()
        self.appended_total = 0
        self.trained_total = 0

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def append(self, record: NodeRecord) -> None:
        with self._lock:
            self._records.append(record)
            self.appended_total += 1

    def maybe_trigger(self) -> Optional[TrainBatch]:
        """Atomically drain the oldest `threshold` records, if available."""
        with self._lock:
            if len(self._records) < self.threshold:
                return None
            batch = [self._records.popleft() for _ in range(self.threshold)]
            self.trained_total += self.threshold
            return TrainBatch(self.agent_id, batch)


def degenerate_rewards(records: Sequence[NodeRecord]) -> bool:
    """True when a tree's raw rewards are all-0 or all-1 (nothing to learn)."""
    rewards = [rec.reward for rec in records]
    return all(r == 0 for r in rewards) or all(r == 1 for r in rewards)


def dispatch(records: Sequence[NodeRecord],
             buffers: Mapping[int, AgentBuffer],
             apply_filter: bool = True) -> Dict[int, int]:
    """Route one tree's records to the per-agent buffers.

    Returns how many records each buffer received; an empty dict means the
    whole tree was filtered out. Advantages must be assigned before records
    may leave their tree.
    """
    if not records:
        return {}
    for rec in records:
        if rec.advantage is None:
            raise StateError(
                f"record for node {rec.node_id} dispatched without an advantage")
        if rec.agent_id not in buffers:
            raise RoutingError(f"no buffer for agent {rec.agent_id}")
    if apply_filter and degenerate_rewards(records):
        return {}
    counts: Dict[int, int] = {}
    for rec in records:
        buffers[rec.agent_id].append(rec)
        counts[rec.agent_id] = counts.get(rec.agent_id, 0) + 1
    return counts


@dataclass
class UpdateResult:
    agent_id: int
    batch_size: int
    objective_before: float
    objective_after: float
    grad_norm: float


def apply_update(agent, batch: TrainBatch, step_size: float,
                 params: LossParams) -> UpdateResult:
    """One ascent step of the sequence objective on the agent's parameters.

    logp_new is recomputed against the agent's current beliefs, the analytic
    per-token gradients are chained to per-bit belief gradients, and the
    beliefs take one clamped step. For small step sizes the objective at the
    new parameters is at least the old value.
    """
    fresh = agent.loss_records(batch.records)
    before = sequence_objective({batch.agent_id: fresh}, params, with_grad=True)
    grads = agent.belief_grad(fresh, before.token_grads[batch.agent_id])
    norm = float(np.sqrt(sum(float(np.dot(g, g)) for g in grads.values())))
    agent.ascend(grads, step_size)
    after = sequence_objective(
        {batch.agent_id: agent.loss_records(batch.records)}, params)
    return UpdateResult(agent_id=batch.agent_id, batch_size=len(batch.records),
                        objective_before=before.value,
                        objective_after=after.value, grad_norm=norm)


@dataclass
class UpdateLogRow:
    wall_step: int
    agent_id: int
    batch_size: int
    objective_before: float
    objective_after: float


class Trainer:
    """Buffer manager running updates inline (sync) or on worker threads.

    The sync path is fully deterministic: after each dispatch, agents are
    pumped in id order until no buffer can trigger. The async path submits
    one update at a time per agent to a thread pool, so updates for distinct
    agents overlap and dispatch never waits; it exists for throughput and
    for exercising the concurrency contract, not for byte-reproducibility.
    """

    def __init__(self, agents: Mapping[int, object], threshold: int,
                 step_size: float, params: LossParams,
                 async_workers: int = 0,
                 update_fn: Optional[Callable[[object, TrainBatch], UpdateResult]] = None,
                 record_cap: Optional[int] = None):
        self.agents = dict(agents)
        self.buffers = {a: AgentBuffer(a, threshold) for a in sorted(self.agents)}
        self.threshold = threshold
        self.step_size = step_size
        self.params = params
        self.update_fn = update_fn
        self.record_cap = record_cap
        self.log: List[UpdateLogRow] = []
        self.updates_applied = 0
        self._log_lock = threading.Lock()
        self._busy: Dict[int, bool] = {a: False for a in self.buffers}
        self._busy_lock = threading.Lock()
        self._executor = (ThreadPoolExecutor(max_workers=async_workers)
                          if async_workers > 0 else None)
        self._inflight: List[Future] = []

    @property
    def trained_total(self) -> int:
        return sum(b.trained_total for b in self.buffers.values())

    @property
    def buffered_total(self) -> int:
        return sum(len(b) for b in self.buffers.values())

    def _run_update(self, batch: TrainBatch) -> UpdateResult:
        agent = self.agents[batch.agent_id]
        if self.update_fn is not None:
            result = self.update_fn(agent, batch)
        else:
            result = apply_update(agent, batch, self.step_size, self.params)
        with self._log_lock:
            self.updates_applied += 1
            self.log.append(UpdateLogRow(
                wall_step=self.updates_applied, agent_id=batch.agent_id,
                batch_size=result.batch_size,
                objective_before=result.objective_before,
                objective_after=result.objective_after))
        return result

    def _async_update(self, batch: TrainBatch) -> None:
        try:
            self._run_update(batch)
        finally:
            with self._busy_lock:
                self._busy[batch.agent_id] = False
        self._pump()

    def _cap_reached(self) -> bool:
        if self.record_cap is None:
            return False
        return self.trained_total + self.threshold > self.record_cap

    def _pump(self) -> None:
        for agent_id in sorted(self.buffers):
            if self._executor is None:
                while not self._cap_reached():
                    batch = self.buffers[agent_id].maybe_trigger()
                    if batch is None:
                        break
                    self._run_update(batch)
            else:
                if self._cap_reached():
                    continue
                with self._busy_lock:
                    if self._busy[agent_id]:
                        continue
                    batch = self.buffers[agent_id].maybe_trigger()
                    if batch is None:
                        continue
                    self._busy[agent_id] = True
                self._inflight.append(
                    self._executor.submit(self._async_update, batch))

    def submit(self, records: Sequence[NodeRecord],
               apply_filter: bool = True) -> Dict[int, int]:
        """Dispatch one tree's records and trigger any ready updates."""
        counts = dispatch(records, self.buffers, apply_filter)
        if counts:
            self._pump()
        return counts

    def drain(self, timeout: Optional[float] = None) -> None:
        """Wait for in-flight async updates to finish (sync mode: no-op)."""
        if self._executor is None:
            return
        while self._inflight:
            fut = self._inflight.pop()
            fut.result(timeout=timeout)

    def close(self) -> None:
        if self._executor is not None:
            self.drain()
            self._executor.shutdown(wait=True)
