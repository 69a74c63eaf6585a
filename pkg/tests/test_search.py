"""Search-loop behavior: budgets, determinism, feedback modes, backup."""

import numpy as np
import pytest

from selfsearch.agents import RemoteError, SimAgent, SimAgentParams
from selfsearch.bandit import DepthSchedule
from selfsearch.core import ConfigError, EmptyTreeError, RefinementContext
from selfsearch.environment import generate_task
from selfsearch.search import (SearchConfig, depth_stats, final_vanilla,
                               read_trace, run_search, trace_rows, write_trace)

from conftest import make_task


def _agent(skill_value, m, agent_id=1, fix=0.8, drift=0.1, trace_len=4):
    params = SimAgentParams(skill=np.full(m, skill_value), fix_prob=fix,
                            drift_prob=drift, trace_len=trace_len)
    return SimAgent(agent_id, params)


def test_config_validation():
    with pytest.raises(ConfigError):
        SearchConfig(budget=0)
    with pytest.raises(ConfigError):
        SearchConfig(feedback_mode="chatty")


def test_budget_one():
    task = generate_task(0, 8, 4, np.random.default_rng(0))
    trace = run_search(task, [_agent(0.6, 8)], SearchConfig(budget=1),
                       np.random.default_rng(1))
    assert trace.tree.size == 1
    node = trace.tree.node(1)
    assert node.depth == 1
    assert node.reward in (0.0, 1.0)
    assert depth_stats(trace) == {1: 1.0}


def test_exact_budget_and_record_per_expansion():
    task = generate_task(0, 8, 4, np.random.default_rng(0))
    cfg = SearchConfig(budget=24)
    trace = run_search(task, [_agent(0.6, 8)], cfg, np.random.default_rng(2))
    assert trace.tree.size == 24
    assert len(trace.records) == 24
    assert sum(trace.tree.depth_counts.values()) == 24
    fractions = depth_stats(trace)
    assert abs(sum(fractions.values()) - 1.0) < 1e-12


def test_determinism_same_seed():
    task = generate_task(0, 10, 5, np.random.default_rng(0))
    agents = [_agent(0.7, 10, agent_id=1), _agent(0.5, 10, agent_id=2)]
    cfg = SearchConfig(budget=20)
    a = run_search(task, agents, cfg, np.random.default_rng(3))
    fresh = [_agent(0.7, 10, agent_id=1), _agent(0.5, 10, agent_id=2)]
    b = run_search(task, fresh, cfg, np.random.default_rng(3))
    assert trace_rows(a) == trace_rows(b)


def test_agents_accepted_as_mapping_or_sequence():
    task = generate_task(0, 8, 4, np.random.default_rng(0))
    cfg = SearchConfig(budget=10)
    a = run_search(task, [_agent(0.6, 8)], cfg, np.random.default_rng(4))
    b = run_search(task, {1: _agent(0.6, 8)}, cfg, np.random.default_rng(4))
    assert trace_rows(a) == trace_rows(b)


def test_agent_pool_validation():
    task = generate_task(0, 8, 4, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        run_search(task, [], SearchConfig(budget=1), np.random.default_rng(0))
    dupes = [_agent(0.6, 8, agent_id=1), _agent(0.7, 8, agent_id=1)]
    with pytest.raises(ConfigError):
        run_search(task, dupes, SearchConfig(budget=1),
                   np.random.default_rng(0))


def test_perfect_repair_chain_converges():
    """With certain repair, no drift, and every test public, refinements pass."""
    task = generate_task(0, 6, 6, np.random.default_rng(1))
    agent = _agent(0.5, 6, fix=1.0, drift=0.0)
    cfg = SearchConfig(budget=30, feedback_mode="structured")
    trace = run_search(task, [agent], cfg, np.random.default_rng(5))
    for node in trace.tree.expanded():
        if node.depth >= 2:
            assert node.reward == 1.0


def test_final_vanilla_recount():
    task = generate_task(0, 8, 4, np.random.default_rng(2))
    trace = run_search(task, [_agent(0.8, 8)], SearchConfig(budget=16),
                       np.random.default_rng(6))
    passing = [n.node_id for n in trace.tree.expanded() if n.reward == 1]
    expected = max(passing) if passing else None
    assert final_vanilla(trace) == expected
    assert trace.final_vanilla == expected


def test_final_vanilla_none_when_hopeless():
    task = make_task(0, np.ones(6, dtype=np.uint8), p=3)
    hopeless = _agent(0.0, 6, fix=0.0, drift=0.0)
    trace = run_search(task, [hopeless], SearchConfig(budget=8),
                       np.random.default_rng(7))
    assert final_vanilla(trace) is None


def test_binary_feedback_strips_failure_lists():
    task = generate_task(0, 8, 4, np.random.default_rng(3))
    cfg = SearchConfig(budget=30, feedback_mode="binary")
    trace = run_search(task, [_agent(0.5, 8)], cfg, np.random.default_rng(8))
    contexts = [r.prompt_context for r in trace.records
                if isinstance(r.prompt_context, RefinementContext)]
    assert contexts, "expected at least one refinement at this budget"
    for ctx in contexts:
        assert ctx.feedback.failures == ()


def test_structured_feedback_carries_failures():
    task = make_task(0, np.ones(8, dtype=np.uint8), p=8)
    weak = _agent(0.1, 8, fix=0.5, drift=0.0)
    cfg = SearchConfig(budget=30, feedback_mode="structured")
    trace = run_search(task, [weak], cfg, np.random.default_rng(9))
    contexts = [r.prompt_context for r in trace.records
                if isinstance(r.prompt_context, RefinementContext)]
    assert any(ctx.feedback.failures for ctx in contexts)


def test_all_ones_gamma_matches_guidance_off():
    task = generate_task(0, 8, 4, np.random.default_rng(4))
    flat = DepthSchedule(gamma1=1.0, decay=1.0, gamma_min=1.0)
    on = SearchConfig(budget=25, depth_guidance=True, schedule=flat)
    off = SearchConfig(budget=25, depth_guidance=False)
    a = run_search(task, [_agent(0.6, 8)], on, np.random.default_rng(10))
    b = run_search(task, [_agent(0.6, 8)], off, np.random.default_rng(10))
    assert trace_rows(a) == trace_rows(b)


def test_unguided_search_stays_shallow():
    """Without depth weighting most nodes sit in the first three levels."""
    rng = np.random.default_rng(11)
    shallow = 0
    total = 0
    for i in range(20):
        task = generate_task(i, 10, 6, rng)
        agent = _agent(0.55, 10, fix=0.9, drift=0.1)
        trace = run_search(task, [agent],
                           SearchConfig(budget=30, depth_guidance=False),
                           np.random.default_rng(100 + i))
        for depth, count in trace.tree.depth_counts.items():
            total += count
            if depth <= 3:
                shallow += count
    assert shallow / total > 0.6


def test_posterior_backup_recount():
    """Root GEN and per-node CON posteriors recount subtree rewards."""
    task = generate_task(0, 8, 4, np.random.default_rng(5))
    agents = [_agent(0.7, 8, agent_id=1), _agent(0.4, 8, agent_id=2)]
    trace = run_search(task, agents, SearchConfig(budget=40),
                       np.random.default_rng(12))
    tree = trace.tree

    for agent_id in (1, 2):
        mine = [c for c in tree.root.children
                if c.solution.source_agent == agent_id]
        post = tree.root.gen_posteriors[agent_id]
        assert np.isclose(post.alpha - 1.0, sum(c.reward for c in mine))
        assert np.isclose(post.beta - 1.0,
                          len(mine) - sum(c.reward for c in mine))

    def subtree_rewards(node):
        out = [node.reward]
        for child in node.children:
            out.extend(subtree_rewards(child))
        return out

    for node in tree.expanded():
        rewards = subtree_rewards(node)
        assert np.isclose(node.con_posterior.alpha - 1.0, sum(rewards))
        assert np.isclose(node.con_posterior.beta - 1.0,
                          len(rewards) - sum(rewards))


class _DeadAgent:
    """Remote-flavored agent that always fails."""

    def __init__(self, agent_id):
        self.agent_id = agent_id

    def propose(self, task, rng=None):
        raise RemoteError("endpoint unreachable")

    def refine(self, task, parent, feedback, rng=None):
        raise RemoteError("endpoint unreachable")


def test_remote_failures_consume_steps_without_nodes():
    task = generate_task(0, 8, 4, np.random.default_rng(6))
    trace = run_search(task, [_DeadAgent(1)], SearchConfig(budget=5),
                       np.random.default_rng(13))
    assert trace.tree.size == 0
    assert len(trace.failures) == 5
    assert [f.step for f in trace.failures] == list(range(5))
    assert all(f.agent_id == 1 for f in trace.failures)
    with pytest.raises(EmptyTreeError):
        trace.records


def test_search_survives_partial_remote_failures():
    task = generate_task(0, 8, 4, np.random.default_rng(7))
    agents = [_DeadAgent(1), _agent(0.6, 8, agent_id=2)]
    trace = run_search(task, agents, SearchConfig(budget=30),
                       np.random.default_rng(14))
    assert trace.tree.size + len(trace.failures) == 30
    assert trace.tree.size > 0
    assert all(f.agent_id == 1 for f in trace.failures)
    assert all(n.solution.source_agent == 2 for n in trace.tree.expanded())


def test_trace_rows_round_trip(tmp_path):
    task = generate_task(0, 8, 4, np.random.default_rng(8))
    trace = run_search(task, [_agent(0.6, 8)], SearchConfig(budget=12),
                       np.random.default_rng(15))
    rows = trace_rows(trace)
    assert [r["id"] for r in rows] == list(range(1, 13))
    path = tmp_path / "trace.jsonl"
    write_trace(trace, path)
    assert read_trace(path) == rows
