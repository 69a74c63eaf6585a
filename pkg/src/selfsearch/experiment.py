"""Experiment orchestration: training runs, checkpoint evaluation, mode comparison.

Three wiring modes are supported:

  * ``single``: one agent trained on flat groups of independent samples
    (no tree structure, group-relative advantages over the batch).
  * ``homo``: several search roles that share one parameter cell, trained
    on tree-group records.
  * ``heter``: independent agents with their own parameters, trained on
    tree-group records.

All modes consume the same trained-record budget and are evaluated with
the same search budget on the same task set, so checkpoint curves are
comparable at equal compute.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .agents import SimAgent, SimAgentParams, _ParamCell
from .core import ConfigError, FreshContext, NodeRecord, StateError
from .diversity import (
    cluster_by_equivalence,
    cluster_count,
    da_at_k,
    dbscan,
    ea,
    exact_bits_oracle,
    g_vendi,
    naudc,
)
from .dispatch import Trainer
from .environment import Task, evaluate, generate_task, public_reward
from .reward_model import RmModel, build_rm_dataset, select_final, train_bt, train_mse
from .rl import LossParams, assign_advantages
from .search import SearchConfig, SearchTrace, run_search

MODES = ("single", "homo", "heter")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one training-and-evaluation run."""

    mode: str
    agent_params: Sequence[SimAgentParams]
    num_roles: int = 2
    m: int = 8
    p: int = 4
    num_tasks: int = 16
    seed: int = 0
    search: SearchConfig = field(default_factory=SearchConfig)
    loss: LossParams = field(default_factory=LossParams)
    threshold: int = 32
    step_size: float = 0.05
    records_budget: int = 0
    checkpoint_every: int = 1
    infer_noise: float = 0.0
    eval_budget: int = 16
    eval_final: str = "vanilla"
    rm_train_tasks: int = 0
    rm_hint_noise: float = 0.1
    rm_loss: str = "mse"
    rm_lr: float = 0.5
    rm_epochs: int = 200
    da_k: int = 5
    gvendi_dim: int = 32

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not self.agent_params:
            raise ConfigError("at least one agent parameter set is required")
        if self.mode == "homo" and self.num_roles < 1:
            raise ConfigError("homo mode needs num_roles >= 1")
        if self.records_budget < 0:
            raise ConfigError("records_budget must be >= 0")
        if self.records_budget and self.records_budget % self.threshold != 0:
            raise ConfigError(
                "records_budget must be a multiple of the dispatch threshold "
                f"({self.records_budget} % {self.threshold} != 0)")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.eval_final not in ("vanilla", "rm"):
            raise ConfigError(f"unknown final selection {self.eval_final!r}")
        if self.eval_final == "rm" and self.rm_train_tasks < 1:
            raise ConfigError("rm final selection needs rm_train_tasks >= 1")
        if self.rm_loss not in ("mse", "bt"):
            raise ConfigError(f"unknown rm loss {self.rm_loss!r}")


@dataclass(frozen=True)
class CheckpointRow:
    """One evaluated checkpoint; the unit the result CSV is made of."""

    mode: str
    agents: int
    checkpoint: int
    updates: int
    trained_records: int
    pass1: float
    pass1_mcts: float
    pass_n: float
    depth_hist: str
    da_k: float
    ea: float
    naudc: float
    aec: float
    g_vendi: float


CSV_COLUMNS = (
    "mode", "agents", "checkpoint", "updates", "trained_records",
    "pass1", "pass1_mcts", "pass_n", "depth_hist",
    "da_k", "ea", "naudc", "aec", "g_vendi",
)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: List[CheckpointRow]
    trained_records: int
    eval_expansions: int
    rollouts: int
    rollout_expansions: int
    update_log: List = field(default_factory=list)

    @property
    def final_row(self) -> CheckpointRow:
        return self.rows[-1]

    def best_row(self, key: str = "pass1_mcts") -> CheckpointRow:
        return max(self.rows, key=lambda r: (getattr(r, key), -r.checkpoint))


def build_agents(config: ExperimentConfig) -> Dict[int, SimAgent]:
    """Instantiate the agent pool for a mode.

    single: agent 1 with the first parameter set.
    homo:   num_roles agents sharing one parameter cell (first set).
    heter:  one agent per parameter set, independent cells.
    """
    params = list(config.agent_params)
    if config.mode == "single":
        return {1: SimAgent(1, params[0], infer_noise=config.infer_noise)}
    if config.mode == "homo":
        cell = _ParamCell()
        return {
            i: SimAgent(i, params[0], infer_noise=config.infer_noise, cell=cell)
            for i in range(1, config.num_roles + 1)
        }
    return {
        i: SimAgent(i, params[i - 1], infer_noise=config.infer_noise)
        for i in range(1, len(params) + 1)
    }


def make_tasks(config: ExperimentConfig) -> List[Task]:
    return [
        generate_task(i, config.m, config.p,
                      np.random.default_rng([config.seed, i]))
        for i in range(config.num_tasks)
    ]


def _rm_tasks(config: ExperimentConfig) -> List[Task]:
    base = config.num_tasks
    return [
        generate_task(base + j, config.m, config.p,
                      np.random.default_rng([config.seed, base + j]))
        for j in range(config.rm_train_tasks)
    ]


def flat_group_records(agent: SimAgent, task: Task, group_size: int,
                       rng: np.random.Generator) -> List[NodeRecord]:
    """Sample an independent group from one agent; the flat-RL analogue of a tree."""
    records = []
    for i in range(group_size):
        proposal = agent.propose(task, rng)
        solution = replace(proposal.solution, born_at=i)
        report = evaluate(task, solution)
        reward = public_reward(report, training=True)
        records.append(NodeRecord(
            node_id=i + 1,
            task_id=task.id,
            agent_id=agent.agent_id,
            prompt_context=FreshContext(task_id=task.id),
            solution=solution,
            trace=proposal.trace,
            reward=float(reward),
        ))
    return records


def _depth_hist(traces: Sequence[SearchTrace]) -> str:
    total = 0
    counts: Dict[int, int] = {}
    for trace in traces:
        for node in trace.tree.expanded():
            counts[node.depth] = counts.get(node.depth, 0) + 1
            total += 1
    if total == 0:
        return "{}"
    hist = {str(d): counts[d] / total for d in sorted(counts)}
    return json.dumps(hist, sort_keys=True)


def _diversity_block(traces: Sequence[SearchTrace], config: ExperimentConfig):
    """Aggregate diversity metrics over per-task correct-solution sets.

    Every metric sees only functionally correct solutions (public and
    private tests both passed); tasks that produced none are skipped. Bits
    are mapped to +-1 for the embedding metrics so no vector is ever zero.
    """
    da_vals, ea_vals, naudc_vals = [], [], []
    aec_vals, gv_vals = [], []
    for trace in traces:
        nodes = trace.tree.expanded()
        correct = [n.solution.bits for n in nodes
                   if n.report.passed_private == n.report.total_private
                   and n.report.passed_public == n.report.total_public]
        if not correct:
            continue
        profile = cluster_by_equivalence(correct, exact_bits_oracle)
        da_vals.append(da_at_k(profile, min(config.da_k, profile.total)))
        ea_vals.append(ea(profile))
        k_max = min(config.eval_budget, profile.total)
        if k_max >= 2:
            naudc_vals.append(naudc(profile, k_max))
        points = np.asarray(correct, dtype=float)
        labels = dbscan(points, eps=0.5, min_pts=2)
        aec_vals.append(float(cluster_count(labels)))
        signed = points * 2.0 - 1.0
        gv_vals.append(g_vendi(signed, proj_dim=config.gvendi_dim,
                               seed=config.seed))

    def _mean(vals: List[float]) -> float:
        return float(np.mean(vals)) if vals else float("nan")

    return _mean(da_vals), _mean(ea_vals), _mean(naudc_vals), \
        _mean(aec_vals), _mean(gv_vals)


def _train_rm(traces: Sequence[SearchTrace], config: ExperimentConfig,
              agent_ids: Sequence[int]) -> Optional[RmModel]:
    examples, pairs = build_rm_dataset(
        traces, agent_ids=agent_ids, hint_noise=config.rm_hint_noise)
    if config.rm_loss == "bt":
        if not pairs:
            return None
        model, _ = train_bt(examples, pairs, epochs=config.rm_epochs,
                            lr=config.rm_lr)
        return model
    if not examples:
        return None
    model, _ = train_mse(examples, epochs=config.rm_epochs, lr=config.rm_lr)
    return model


@dataclass
class _EvalOutcome:
    pass1: float
    pass1_mcts: float
    pass_n: float
    depth_hist: str
    da_k: float
    ea: float
    naudc: float
    aec: float
    g_vendi: float
    expansions: int


def _evaluate_checkpoint(agents: Dict[int, SimAgent], tasks: Sequence[Task],
                         config: ExperimentConfig, checkpoint: int) -> _EvalOutcome:
    agent_ids = sorted(agents)
    eval_cfg = replace(config.search, budget=config.eval_budget,
                       training_mode=False)

    exact = [agents[a].pass1_probability(task, private_only=False)
             for task in tasks for a in agent_ids]
    pass1 = float(np.mean(exact))

    rm_model: Optional[RmModel] = None
    expansions = 0
    if config.eval_final == "rm":
        rm_traces = []
        for task in _rm_tasks(config):
            rng = np.random.default_rng(
                [config.seed, 0x524D, checkpoint, task.id])
            trace = run_search(task, agents, eval_cfg, rng)
            rm_traces.append(trace)
            expansions += trace.tree.size
        rm_model = _train_rm(rm_traces, config, agent_ids)

    traces: List[SearchTrace] = []
    solved_final = 0
    solved_any = 0
    for task in tasks:
        rng = np.random.default_rng(
            [config.seed, 0x4556, checkpoint, task.id])
        trace = run_search(task, agents, eval_cfg, rng)
        traces.append(trace)
        expansions += trace.tree.size
        if rm_model is not None:
            choice = select_final(trace, rm_model, agent_ids=agent_ids,
                                  hint_noise=config.rm_hint_noise)
        else:
            choice = trace.final_vanilla
        if choice is not None:
            report = trace.tree.nodes[choice].report
            if report.passed_private == report.total_private and \
                    report.passed_public == report.total_public:
                solved_final += 1
        for node in trace.tree.expanded():
            if node.report.passed_private == node.report.total_private and \
                    node.report.passed_public == node.report.total_public:
                solved_any += 1
                break

    da_v, ea_v, naudc_v, aec_v, gv_v = _diversity_block(traces, config)
    return _EvalOutcome(
        pass1=pass1,
        pass1_mcts=solved_final / len(tasks),
        pass_n=solved_any / len(tasks),
        depth_hist=_depth_hist(traces),
        da_k=da_v, ea=ea_v, naudc=naudc_v, aec=aec_v, g_vendi=gv_v,
        expansions=expansions,
    )


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Train one mode under its record budget, evaluating at checkpoints.

    Checkpoint 0 is always evaluated before any update. Afterwards a row is
    emitted whenever the applied-update count crosses another multiple of
    ``checkpoint_every``, and once more at the end if updates happened since
    the last row.
    """
    agents = build_agents(config)
    tasks = make_tasks(config)
    train_cfg = replace(config.search, training_mode=True)
    trainer = Trainer(agents, config.threshold, config.step_size, config.loss,
                      async_workers=0, record_cap=config.records_budget or None)

    rows: List[CheckpointRow] = []
    eval_expansions = 0
    rollouts = 0
    rollout_expansions = 0

    def _emit(checkpoint: int) -> None:
        nonlocal eval_expansions
        outcome = _evaluate_checkpoint(agents, tasks, config, checkpoint)
        eval_expansions += outcome.expansions
        rows.append(CheckpointRow(
            mode=config.mode,
            agents=len(agents),
            checkpoint=checkpoint,
            updates=len(trainer.log),
            trained_records=trainer.trained_total,
            pass1=outcome.pass1,
            pass1_mcts=outcome.pass1_mcts,
            pass_n=outcome.pass_n,
            depth_hist=outcome.depth_hist,
            da_k=outcome.da_k,
            ea=outcome.ea,
            naudc=outcome.naudc,
            aec=outcome.aec,
            g_vendi=outcome.g_vendi,
        ))

    _emit(0)
    if config.records_budget > 0:
        task_cycle = itertools.cycle(tasks)
        next_checkpoint = 1
        rollout_idx = 0
        max_rollouts = 1000 * (config.records_budget // config.threshold + 1)
        while trainer.trained_total < config.records_budget:
            if rollout_idx >= max_rollouts:
                raise StateError(
                    "record budget unreachable: rollouts keep being filtered "
                    f"({rollout_idx} rollouts, {trainer.trained_total} trained)")
            task = next(task_cycle)
            rng = np.random.default_rng(
                [config.seed, 0x545241494E, rollout_idx])
            if config.mode == "single":
                records = flat_group_records(
                    agents[1], task, config.search.budget, rng)
                rollout_expansions += len(records)
            else:
                trace = run_search(task, agents, train_cfg, rng)
                records = list(trace.records)
                rollout_expansions += trace.tree.size
            assign_advantages(records, config.loss)
            trainer.submit(records)
            rollouts += 1
            rollout_idx += 1
            while len(trainer.log) >= next_checkpoint * config.checkpoint_every:
                _emit(next_checkpoint)
                next_checkpoint += 1
        if rows[-1].updates < len(trainer.log):
            _emit(next_checkpoint)
    trainer.close()

    return ExperimentResult(
        config=config,
        rows=rows,
        trained_records=trainer.trained_total,
        eval_expansions=eval_expansions,
        rollouts=rollouts,
        rollout_expansions=rollout_expansions,
        update_log=list(trainer.log),
    )


def _row_values(row: CheckpointRow) -> List[str]:
    out = []
    for col in CSV_COLUMNS:
        val = getattr(row, col)
        if isinstance(val, float):
            out.append(repr(val))
        else:
            out.append(str(val))
    return out


def write_rows(rows: Sequence[CheckpointRow], path: str) -> None:
    """Write checkpoint rows as CSV with repr-formatted floats."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            writer.writerow(_row_values(row))


PLOT_METRICS = ("pass1", "pass1_mcts", "pass_n")


def write_plot_data(rows: Sequence[CheckpointRow], path: str) -> None:
    """Write curve data as (series, x, y) rows, one series per mode/metric.

    x is the applied-update count, so curves from different modes line up
    on a shared compute axis.
    """
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["series", "x", "y"])
        for metric in PLOT_METRICS:
            for row in rows:
                writer.writerow([f"{row.mode}:{metric}", row.updates,
                                 repr(getattr(row, metric))])


def read_rows(path: str) -> List[CheckpointRow]:
    import csv

    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(CheckpointRow(
                mode=rec["mode"],
                agents=int(rec["agents"]),
                checkpoint=int(rec["checkpoint"]),
                updates=int(rec["updates"]),
                trained_records=int(rec["trained_records"]),
                pass1=float(rec["pass1"]),
                pass1_mcts=float(rec["pass1_mcts"]),
                pass_n=float(rec["pass_n"]),
                depth_hist=rec["depth_hist"],
                da_k=float(rec["da_k"]),
                ea=float(rec["ea"]),
                naudc=float(rec["naudc"]),
                aec=float(rec["aec"]),
                g_vendi=float(rec["g_vendi"]),
            ))
    return rows


@dataclass
class CompareResult:
    results: Dict[str, ExperimentResult]
    summary: List[CheckpointRow]


def compare_modes(configs: Sequence[ExperimentConfig]) -> CompareResult:
    """Run several modes at matched compute and summarize one row per mode.

    All configs must agree on the task distribution (seed, m, p, num_tasks)
    and on the compute knobs (records_budget, threshold, eval_budget,
    checkpoint_every). After running, the trained-record totals and
    evaluation expansions must match exactly across modes; a mismatch is an
    accounting bug and raises StateError before any row is produced.
    The homo summary row is its best checkpoint by final-answer solve rate;
    other modes report their last checkpoint.
    """
    if not configs:
        raise ConfigError("compare_modes needs at least one config")
    base = configs[0]
    shared = ("seed", "m", "p", "num_tasks", "records_budget", "threshold",
              "eval_budget", "checkpoint_every", "da_k")
    for cfg in configs[1:]:
        for name in shared:
            if getattr(cfg, name) != getattr(base, name):
                raise ConfigError(
                    f"compared configs disagree on {name}: "
                    f"{getattr(cfg, name)!r} vs {getattr(base, name)!r}")
    seen = set()
    for cfg in configs:
        if cfg.mode in seen:
            raise ConfigError(f"duplicate mode {cfg.mode!r}")
        seen.add(cfg.mode)

    results = {cfg.mode: run_experiment(cfg) for cfg in configs}

    totals = {m: r.trained_records for m, r in results.items()}
    if len(set(totals.values())) > 1:
        raise StateError(f"trained-record totals diverge: {totals}")
    evals = {m: r.eval_expansions for m, r in results.items()}
    if len(set(evals.values())) > 1:
        raise StateError(f"evaluation expansion totals diverge: {evals}")

    summary = []
    for cfg in configs:
        result = results[cfg.mode]
        if cfg.mode == "homo":
            summary.append(result.best_row())
        else:
            summary.append(result.final_row)
    return CompareResult(results=results, summary=summary)
