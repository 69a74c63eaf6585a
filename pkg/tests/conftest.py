"""Shared builders for the test suite."""

import numpy as np

from selfsearch.core import (FreshContext, LogProbTrace, NodeRecord, Solution)
from selfsearch.environment import Task, TestCase


def make_trace(rng, n, mask=None):
    """Random well-formed trace of n tokens, all channels independent."""
    def draw():
        return -rng.uniform(0.05, 2.0, size=n)
    if mask is None:
        mask = np.ones(n, dtype=bool)
    return LogProbTrace(logp_new=draw(), logp_old=draw(), logp_ref=draw(),
                        logp_infer=draw(), action_mask=np.asarray(mask, bool))


def make_record(node_id, agent_id, trace, reward, advantage=None, task_id=0):
    sol = Solution(bits=np.zeros(4, dtype=np.uint8), source_agent=agent_id)
    return NodeRecord(node_id=node_id, task_id=task_id, agent_id=agent_id,
                      prompt_context=FreshContext(task_id=task_id),
                      solution=sol, trace=trace, reward=float(reward),
                      advantage=advantage)


def make_task(task_id, target, p):
    """Task with an explicit target bit vector, first p tests public."""
    target = np.asarray(target, dtype=np.uint8)
    tests = tuple(TestCase(i, i < p, int(target[i]))
                  for i in range(target.shape[0]))
    return Task(id=task_id, target=target, tests=tests, public_count=p)
