"""Synthetic verifiable-task environment: bit-vector targets with split tests.

A task hides a target bit vector of length M behind M single-bit test cases,
the first P of them public. Search only ever sees public outcomes; private
outcomes exist for final reporting and for building reward-model labels.
During training the reward uses every test, which is exactly what makes
public-only feedback at inference time hackable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from .core import ConfigError, ShapeError, Solution, bits_to_hex, hex_to_bits


@dataclass(frozen=True)
class TestCase:
    index: int
    public: bool
    expected: int


@dataclass(frozen=True)
class Task:
    """A bit-vector task. tests are ordered by index; the first P are public."""

    id: int
    target: np.ndarray
    tests: Tuple[TestCase, ...]
    public_count: int

    def __post_init__(self):
        object.__setattr__(self, "target", np.asarray(self.target, dtype=np.uint8))

    @property
    def length(self) -> int:
        return int(self.target.shape[0])


@dataclass(frozen=True)
class EvalReport:
    """Per-test outcomes of one solution, split by visibility."""

    task_id: int
    produced: np.ndarray
    expected: np.ndarray
    public_count: int
    results: Tuple[bool, ...]
    passed_public: int
    total_public: int
    passed_private: int
    total_private: int


@dataclass(frozen=True)
class Failure:
    index: int
    produced: int
    expected: int


@dataclass(frozen=True)
class FeedbackReport:
    """What a refining agent is allowed to see: public outcomes only."""

    passed: int
    total: int
    pass_rate: float
    failures: Tuple[Failure, ...]


def generate_task(task_id: int, m: int, p: int, rng: np.random.Generator) -> Task:
    """Draw a task with a uniformly random target of length m, first p public."""
    if m < 1:
        raise ConfigError(f"task length must be >= 1, got {m}")
    if not (0 <= p <= m):
        raise ConfigError(f"public count must lie in [0, {m}], got {p}")
    target = rng.integers(0, 2, size=m, dtype=np.uint8)
    tests = tuple(TestCase(i, i < p, int(target[i])) for i in range(m))
    return Task(id=task_id, target=target, tests=tests, public_count=p)


def evaluate(task: Task, solution: Solution) -> EvalReport:
    """Run every test case against the solution bits."""
    bits = solution.bits
    if bits.shape != task.target.shape:
        raise ShapeError(
            f"solution has {bits.shape[0]} bits, task {task.id} expects "
            f"{task.target.shape[0]}")
    results = bits == task.target
    p = task.public_count
    return EvalReport(
        task_id=task.id,
        produced=bits,
        expected=task.target,
        public_count=p,
        results=tuple(bool(r) for r in results),
        passed_public=int(results[:p].sum()),
        total_public=p,
        passed_private=int(results[p:].sum()),
        total_private=task.length - p,
    )


def public_reward(report: EvalReport, training: bool = False) -> int:
    """1 iff all public tests pass; in training mode, iff every test passes."""
    ok = report.passed_public == report.total_public
    if training:
        ok = ok and report.passed_private == report.total_private
    return int(ok)


def make_feedback(report: EvalReport) -> FeedbackReport:
    """Structured feedback derived from the public slice only."""
    p = report.public_count
    failures = tuple(
        Failure(i, int(report.produced[i]), int(report.expected[i]))
        for i in range(p) if not report.results[i])
    rate = report.passed_public / p if p else 1.0
    return FeedbackReport(
        passed=report.passed_public, total=p, pass_rate=rate, failures=failures)


def binary_feedback(report: EvalReport) -> FeedbackReport:
    """Pass/fail summary with the failure list stripped (vanilla information set)."""
    return replace(make_feedback(report), failures=())


class Evaluator(Protocol):
    """Boundary for swapping in an external grader."""

    def evaluate(self, task: Task, solution: Solution) -> EvalReport: ...

    def make_feedback(self, report: EvalReport) -> FeedbackReport: ...


class SyntheticEvaluator:
    """Default evaluator: the module-level bit-comparison semantics."""

    def evaluate(self, task, solution):
        return evaluate(task, solution)

    def make_feedback(self, report):
        return make_feedback(report)


_EVALUATORS: Dict[str, Callable[[], Evaluator]] = {}


def register_evaluator(name: str, factory: Callable[[], Evaluator]) -> None:
    _EVALUATORS[name] = factory


def get_evaluator(backend: str = "synthetic") -> Evaluator:
    """Resolve "synthetic" or "external:<name>" to an evaluator instance."""
    if backend == "synthetic":
        return SyntheticEvaluator()
    if backend.startswith("external:"):
        name = backend.split(":", 1)[1]
        if name not in _EVALUATORS:
            raise ConfigError(f"unknown external evaluator {name!r}")
        return _EVALUATORS[name]()
    raise ConfigError(f"unknown environment backend {backend!r}")


def write_tasks(tasks: Sequence[Task], path, seed: Optional[int] = None) -> None:
    """One JSON record per line: {id, m, p, target_hex, seed}."""
    with open(path, "w") as fh:
        for t in tasks:
            row = {"id": t.id, "m": t.length, "p": t.public_count,
                   "target_hex": bits_to_hex(t.target), "seed": seed}
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")


def read_tasks(path) -> List[Task]:
    tasks = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            target = hex_to_bits(row["target_hex"], row["m"])
            tests = tuple(TestCase(i, i < row["p"], int(target[i]))
                          for i in range(row["m"]))
            tasks.append(Task(id=row["id"], target=target, tests=tests,
                              public_count=row["p"]))
    return tasks
