"""Adaptive branching tree search over pluggable agents.

Each expansion draws an agent by Thompson sampling over run-level score
posteriors, descends from the root while "descend" draws beat the agent's
"generate" draw, then asks the agent for a fresh proposal (at the root) or a
refinement of the stopped-at node (below it, with feedback shaped by the
feedback mode). The new node's public reward is backed up into the generate
posterior that fired, the descend posteriors along the path, and the agent's
run-level posterior.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .agents import RemoteError
from .bandit import (GEN, Action, BetaPosterior, DepthSchedule, select_action,
                     select_agent, update_posterior)
from .core import (ConfigError, EmptyTreeError, FreshContext, NodeRecord,
                   RefinementContext, SearchTree, Solution, bits_to_hex,
                   collect_records, passing_nodes)
from .environment import SyntheticEvaluator, Task, public_reward


@dataclass(frozen=True)
class SearchConfig:
    budget: int = 16
    feedback_mode: str = "structured"  # or "binary"
    training_mode: bool = False
    depth_guidance: bool = True
    prior_alpha: float = 1.0
    prior_beta: float = 1.0
    schedule: DepthSchedule = field(default_factory=DepthSchedule)

    def __post_init__(self):
        if self.budget < 1:
            raise ConfigError(f"budget must be >= 1, got {self.budget}")
        if self.feedback_mode not in ("structured", "binary"):
            raise ConfigError(f"unknown feedback_mode {self.feedback_mode!r}")


@dataclass(frozen=True)
class RemoteFailure:
    step: int
    agent_id: int
    parent_id: int
    error: str


@dataclass
class SearchTrace:
    """Everything one run produced: the tree, its records, and any failures."""

    task: Task
    tree: SearchTree
    budget: int
    failures: List[RemoteFailure] = field(default_factory=list)

    @property
    def records(self) -> List[NodeRecord]:
        return collect_records(self.tree)

    @property
    def final_vanilla(self) -> Optional[int]:
        passing = passing_nodes(self.tree)
        return passing[-1] if passing else None


def run_search(task: Task, agents: Sequence, config: SearchConfig,
               rng: np.random.Generator, evaluator=None) -> SearchTrace:
    """Run one budget-limited search on a task.

    Exactly config.budget expansions are attempted; remote agent failures
    consume their step, are recorded, and leave no node and no posterior
    evidence. Agent sampling streams are spawned per agent from `rng` in
    agent-id order, so a run is reproducible from its generator state.
    """
    if not agents:
        raise ConfigError("run_search needs at least one agent")
    pool = list(agents.values()) if isinstance(agents, Mapping) else list(agents)
    agent_map = {a.agent_id: a for a in pool}
    if len(agent_map) != len(pool):
        raise ConfigError("agent ids must be unique")
    ids = sorted(agent_map)
    evaluator = evaluator if evaluator is not None else SyntheticEvaluator()
    tree = SearchTree(task.id, ids, config.prior_alpha, config.prior_beta)
    stats = {a: BetaPosterior(config.prior_alpha, config.prior_beta) for a in ids}
    agent_rngs = dict(zip(ids, rng.spawn(len(ids))))
    sched: Optional[DepthSchedule] = \
        config.schedule if config.depth_guidance else None
    failures: List[RemoteFailure] = []

    for step in range(config.budget):
        agent_id = select_agent(stats, rng)
        node = tree.root
        while True:
            action = select_action(node, agent_id, tree.depth_counts, sched, rng)
            if action.kind == GEN:
                break
            node = tree.node(action.child_id)
        agent = agent_map[agent_id]
        try:
            if node.parent_id is None and node.node_id == 0:
                feedback = None
                proposal = agent.propose(task, agent_rngs[agent_id])
            else:
                feedback = evaluator.make_feedback(node.report)
                if config.feedback_mode == "binary":
                    feedback = replace(feedback, failures=())
                proposal = agent.refine(task, node.solution, feedback,
                                        agent_rngs[agent_id])
        except RemoteError as exc:
            failures.append(RemoteFailure(step, agent_id, node.node_id, str(exc)))
            continue
        solution = replace(proposal.solution, born_at=step)
        report = evaluator.evaluate(task, solution)
        reward = public_reward(report, training=config.training_mode)
        new_node = tree.add_node(node.node_id, solution, reward, report)
        if feedback is None:
            context = FreshContext(task_id=task.id)
        else:
            context = RefinementContext(task_id=task.id, parent_id=node.node_id,
                                        feedback=feedback)
        tree.attach_record(NodeRecord(
            node_id=new_node.node_id, task_id=task.id, agent_id=agent_id,
            prompt_context=context, solution=solution, trace=proposal.trace,
            reward=float(reward)))
        node.gen_posteriors[agent_id] = \
            update_posterior(node.gen_posteriors[agent_id], reward)
        for path_node in tree.path_to(new_node.node_id):
            path_node.con_posterior = \
                update_posterior(path_node.con_posterior, reward)
        stats[agent_id] = update_posterior(stats[agent_id], reward)

    return SearchTrace(task=task, tree=tree, budget=config.budget,
                       failures=failures)


def final_vanilla(trace: SearchTrace) -> Optional[int]:
    """Baseline answer selection: the newest node passing the public tests."""
    passing = passing_nodes(trace.tree)
    return passing[-1] if passing else None


def depth_stats(trace: SearchTrace) -> Dict[int, float]:
    """Fraction of expanded nodes at each depth; fractions sum to 1."""
    size = trace.tree.size
    if size == 0:
        raise EmptyTreeError("search produced no nodes")
    return {d: c / size for d, c in sorted(trace.tree.depth_counts.items())}


def trace_rows(trace: SearchTrace) -> List[dict]:
    """Node rows in id order, ready for line-delimited serialization."""
    rows = []
    for node_id in sorted(trace.tree.nodes):
        if node_id == 0:
            continue
        node = trace.tree.node(node_id)
        rep = node.report
        rows.append({
            "task": trace.task.id,
            "id": node.node_id,
            "parent": node.parent_id,
            "depth": node.depth,
            "agent": node.solution.source_agent,
            "reward": node.reward,
            "bits_hex": bits_to_hex(node.solution.bits),
            "passed_public": rep.passed_public,
            "total_public": rep.total_public,
            "passed_private": rep.passed_private,
            "total_private": rep.total_private,
        })
    return rows


def write_trace_rows(rows: Sequence[dict], path) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def write_trace(trace: SearchTrace, path) -> None:
    write_trace_rows(trace_rows(trace), path)


def read_trace(path) -> List[dict]:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows
