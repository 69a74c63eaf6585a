"""Core data model: tasks, solutions, log-prob traces, search trees, records.

Everything downstream (search, training, reward models, metrics) speaks in the
types defined here. The tree is a plain in-memory structure; nodes carry their
bandit posteriors so selection logic never needs a side table.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .bandit import BetaPosterior

AgentId = int

ROOT_ID = 0


class SelfSearchError(Exception):
    """Base class for all package errors."""


class EmptyTreeError(SelfSearchError):
    """An operation required at least one expanded node."""


class ShapeError(SelfSearchError):
    """Parallel arrays disagree on length, or values fall outside their domain."""


class StateError(SelfSearchError):
    """A record or tree was used in the wrong lifecycle state."""


class ConfigError(SelfSearchError):
    """A configuration value or key is invalid."""


def bits_to_hex(bits: np.ndarray) -> str:
    """Pack a 0/1 bit vector into a hex string (big-endian within bytes)."""
    arr = np.asarray(bits, dtype=np.uint8)
    if arr.ndim != 1:
        raise ShapeError(f"bit vector must be 1-d, got shape {arr.shape}")
    return np.packbits(arr).tobytes().hex()


def hex_to_bits(s: str, n: int) -> np.ndarray:
    """Inverse of bits_to_hex for a vector of known length n."""
    raw = np.frombuffer(bytes.fromhex(s), dtype=np.uint8)
    bits = np.unpackbits(raw)
    if bits.size < n:
        raise ShapeError(f"hex payload holds {bits.size} bits, need {n}")
    return bits[:n].copy()


@dataclass(frozen=True)
class Solution:
    """A candidate answer: the emitted bit vector plus provenance."""

    bits: np.ndarray
    source_agent: AgentId
    born_at: int = -1  # expansion step that produced it; -1 until stamped

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.uint8))
        if self.bits.ndim != 1:
            raise ShapeError("solution bits must be a 1-d vector")
        if not np.isin(self.bits, (0, 1)).all():
            raise ShapeError("solution bits must be 0/1")


@dataclass(frozen=True)
class FreshContext:
    """Prompt context for a from-scratch generation."""

    task_id: int


@dataclass(frozen=True)
class RefinementContext:
    """Prompt context for a refinement: parent node plus the feedback shown."""

    task_id: int
    parent_id: int
    feedback: object  # FeedbackReport; binary mode strips the failure list


PromptContext = Union[FreshContext, RefinementContext]


@dataclass
class LogProbTrace:
    """Per-token log-probabilities of one emitted solution.

    Four parallel views of the same token sequence: logp_old at sampling time,
    logp_new recomputed against current parameters at loss time, logp_ref
    against the run-start snapshot, logp_infer as the inference engine saw it.
    action_mask marks tokens that participate in losses.
    """

    logp_new: np.ndarray
    logp_old: np.ndarray
    logp_ref: np.ndarray
    logp_infer: np.ndarray
    action_mask: np.ndarray

    def __post_init__(self):
        self.logp_new = np.asarray(self.logp_new, dtype=np.float64)
        self.logp_old = np.asarray(self.logp_old, dtype=np.float64)
        self.logp_ref = np.asarray(self.logp_ref, dtype=np.float64)
        self.logp_infer = np.asarray(self.logp_infer, dtype=np.float64)
        self.action_mask = np.asarray(self.action_mask, dtype=bool)
        n = self.logp_new.shape[0]
        for name in ("logp_old", "logp_ref", "logp_infer", "action_mask"):
            if getattr(self, name).shape != (n,):
                raise ShapeError(f"trace field {name} does not match token count {n}")
        for name in ("logp_new", "logp_old", "logp_ref", "logp_infer"):
            vals = getattr(self, name)
            if not np.isfinite(vals).all():
                raise ShapeError(f"trace field {name} holds non-finite values")
            if (vals > 0).any():
                raise ShapeError(f"trace field {name} holds positive log-probs")

    @property
    def token_count(self) -> int:
        return int(self.logp_new.shape[0])

    @property
    def active_count(self) -> int:
        return int(self.action_mask.sum())


@dataclass
class NodeRecord:
    """One expansion's training tuple.

    Carries the prompt context, the emitted solution, its trace, the scalar
    reward, and (once assigned) the group-relative advantage. task_id and the
    solution ride along so losses can recompute logp_new after the record has
    left its tree.
    """

    node_id: int
    task_id: int
    agent_id: AgentId
    prompt_context: PromptContext
    solution: Solution
    trace: LogProbTrace
    reward: float
    advantage: Optional[float] = None


@dataclass
class SearchNode:
    node_id: int
    parent_id: Optional[int]
    depth: int
    solution: Optional[Solution]
    reward: Optional[float]
    report: Optional[object]  # environment.EvalReport for expanded nodes
    con_posterior: BetaPosterior
    gen_posteriors: Dict[AgentId, BetaPosterior]
    children: List["SearchNode"] = field(default_factory=list)

    @property
    def child_ids(self) -> List[int]:
        return [c.node_id for c in self.children]


class SearchTree:
    """Search tree with a virtual root (id 0, depth 0, no solution).

    Node ids are assigned in expansion order starting at 1, so id order is
    creation order. The tree also tracks a live depth histogram (used by the
    depth-guided exploration weight) and the per-node training records.
    """

    def __init__(self, task_id: int, agent_ids, prior_alpha: float = 1.0,
                 prior_beta: float = 1.0):
        self.task_id = task_id
        self.agent_ids = sorted(agent_ids)
        self.prior_alpha = float(prior_alpha)
        self.prior_beta = float(prior_beta)
        root = SearchNode(
            node_id=ROOT_ID, parent_id=None, depth=0, solution=None,
            reward=None, report=None,
            con_posterior=BetaPosterior(prior_alpha, prior_beta),
            gen_posteriors=self._fresh_gen_posteriors(),
        )
        self.nodes: Dict[int, SearchNode] = {ROOT_ID: root}
        self.records: Dict[int, NodeRecord] = {}
        self.depth_counts: Dict[int, int] = {}
        self._next_id = 1

    def _fresh_gen_posteriors(self) -> Dict[AgentId, BetaPosterior]:
        return {a: BetaPosterior(self.prior_alpha, self.prior_beta)
                for a in self.agent_ids}

    @property
    def root(self) -> SearchNode:
        return self.nodes[ROOT_ID]

    @property
    def size(self) -> int:
        """Number of expanded nodes (the virtual root does not count)."""
        return len(self.nodes) - 1

    def node(self, node_id: int) -> SearchNode:
        return self.nodes[node_id]

    def expanded(self) -> List["SearchNode"]:
        """The real (non-root) nodes in creation order."""
        return [self.nodes[i] for i in sorted(self.nodes) if i != ROOT_ID]

    def add_node(self, parent_id: int, solution: Solution, reward: float,
                 report) -> SearchNode:
        if parent_id not in self.nodes:
            raise StateError(f"unknown parent node {parent_id}")
        parent = self.nodes[parent_id]
        node = SearchNode(
            node_id=self._next_id, parent_id=parent_id, depth=parent.depth + 1,
            solution=solution, reward=float(reward), report=report,
            con_posterior=BetaPosterior(self.prior_alpha, self.prior_beta),
            gen_posteriors=self._fresh_gen_posteriors(),
        )
        self.nodes[node.node_id] = node
        parent.children.append(node)
        self.depth_counts[node.depth] = self.depth_counts.get(node.depth, 0) + 1
        self._next_id += 1
        return node

    def attach_record(self, record: NodeRecord) -> None:
        if record.node_id not in self.nodes:
            raise StateError(f"record references unknown node {record.node_id}")
        self.records[record.node_id] = record

    def path_to(self, node_id: int) -> List[SearchNode]:
        """Nodes from the root's first descendant down to node_id, inclusive."""
        path = []
        node = self.nodes[node_id]
        while node.parent_id is not None:
            path.append(node)
            node = self.nodes[node.parent_id]
        path.reverse()
        return path


def collect_records(tree: SearchTree) -> List[NodeRecord]:
    """All training records of a finished tree, ordered by node id."""
    if tree.size == 0:
        raise EmptyTreeError("tree has no expanded nodes")
    return [tree.records[i] for i in sorted(tree.records)]


def passing_nodes(tree: SearchTree) -> List[int]:
    """Ids of nodes whose recorded reward is 1, in id order. May be empty."""
    return [n.node_id for n in (tree.nodes[i] for i in sorted(tree.nodes))
            if n.node_id != ROOT_ID and n.reward == 1]
