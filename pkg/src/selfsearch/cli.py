"""Command-line entry points.

Exit codes: 0 on success, 2 for configuration problems (unknown keys, bad
values, malformed files), 3 for runtime failures.
"""

from __future__ import annotations

import csv
import functools
import json
from typing import List, Optional

import click
import numpy as np

from .config import AppConfig, experiment_config, load_config, search_config
from .core import ConfigError, SelfSearchError
from .diversity import (
    ClusterProfile,
    aec,
    da_at_k,
    ea,
    g_vendi,
    naudc,
    pass_at_k,
    read_vectors,
)
from .experiment import (
    build_agents,
    compare_modes,
    make_tasks,
    run_experiment,
    write_plot_data,
    write_rows,
)
from .reward_model import (
    build_rm_dataset,
    eval_rm,
    feature_names,
    load_model,
    read_rm_dataset,
    read_rm_pairs,
    save_model,
    select_final,
    train_bt,
    train_mse,
    write_rm_dataset,
    write_rm_pairs,
)
from .search import run_search, trace_rows, write_trace_rows


class RuntimeFailure(click.ClickException):
    exit_code = 3


def guarded(fn):
    """Map engine exceptions onto the CLI exit-code contract."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            raise click.UsageError(str(exc))
        except SelfSearchError as exc:
            raise RuntimeFailure(str(exc))
        except OSError as exc:
            raise RuntimeFailure(str(exc))

    return wrapper


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config file with flat dotted keys.")
@click.option("--seed", type=int, default=None,
              help="Override experiment.seed.")
@click.option("--workers", type=int, default=None,
              help="Override dispatch.async_workers.")
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[str], seed: Optional[int],
        workers: Optional[int]) -> None:
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["seed"] = seed
    ctx.obj["workers"] = workers


def _load(ctx_obj: dict) -> AppConfig:
    cfg = load_config(ctx_obj.get("config_path"))
    overrides = {}
    if ctx_obj.get("workers") is not None:
        overrides["dispatch.async_workers"] = ctx_obj["workers"]
    if overrides:
        cfg = AppConfig(values={**dict(cfg.values), **overrides})
    return cfg


def _seed(ctx_obj: dict, cfg: AppConfig) -> int:
    if ctx_obj.get("seed") is not None:
        return int(ctx_obj["seed"])
    return int(cfg["experiment.seed"])


def _eval_traces(cfg: AppConfig, seed: int, stream: int, budget: int = 0):
    """Run one inference search per configured task; shared by rm/search."""
    ecfg = experiment_config(cfg, seed=seed)
    agents = build_agents(ecfg)
    tasks = make_tasks(ecfg)
    scfg = search_config(cfg)
    if budget > 0:
        from dataclasses import replace
        scfg = replace(scfg, budget=budget)
    traces = []
    for task in tasks:
        rng = np.random.default_rng([seed, stream, task.id])
        traces.append(run_search(task, agents, scfg, rng))
    return ecfg, traces


@cli.command()
@click.option("--out", type=click.Path(), default="trace.jsonl",
              help="Trace output path (JSON lines).")
@click.pass_context
@guarded
def search(ctx: click.Context, out: str) -> None:
    """Run the tree search on the configured tasks and dump node rows."""
    cfg = _load(ctx.obj)
    seed = _seed(ctx.obj, cfg)
    _, traces = _eval_traces(cfg, seed, stream=0x534243)
    rows: List[dict] = []
    solved = 0
    for trace in traces:
        rows.extend(trace_rows(trace))
        if trace.final_vanilla is not None:
            solved += 1
    write_trace_rows(rows, out)
    click.echo(f"tasks={len(traces)} nodes={len(rows)} "
               f"public_solved={solved} out={out}")


@cli.command()
@click.option("--out", type=click.Path(), default="updates.csv",
              help="Update log output path (CSV).")
@click.pass_context
@guarded
def train(ctx: click.Context, out: str) -> None:
    """Train under the configured record budget; write the update log."""
    cfg = _load(ctx.obj)
    seed = _seed(ctx.obj, cfg)
    ecfg = experiment_config(cfg, seed=seed)
    result = run_experiment(ecfg)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wall_step", "agent_id", "batch_size",
                         "objective_before", "objective_after"])
        for row in result.update_log:
            writer.writerow([row.wall_step, row.agent_id, row.batch_size,
                             repr(row.objective_before),
                             repr(row.objective_after)])
    last = result.rows[-1]
    click.echo(f"updates={len(result.update_log)} "
               f"trained={result.trained_records} "
               f"pass1={last.pass1!r} pass1_mcts={last.pass1_mcts!r} out={out}")


@cli.group()
def rm() -> None:
    """Reward-model dataset, training, evaluation, and final selection."""


@rm.command("build")
@click.option("--out", type=click.Path(), default="rm_dataset.csv")
@click.option("--pairs-out", type=click.Path(), default="rm_pairs.csv")
@click.pass_context
@guarded
def rm_build(ctx: click.Context, out: str, pairs_out: str) -> None:
    """Search the configured tasks and write labeled feature rows and pairs."""
    cfg = _load(ctx.obj)
    seed = _seed(ctx.obj, cfg)
    ecfg, traces = _eval_traces(cfg, seed, stream=0x524D42)
    agent_ids = sorted(build_agents(ecfg))
    examples, pairs = build_rm_dataset(
        traces, agent_ids=agent_ids,
        hint_noise=float(cfg["rm.hint_noise"]))
    write_rm_dataset(examples, feature_names(agent_ids), out)
    write_rm_pairs(pairs, pairs_out)
    click.echo(f"examples={len(examples)} pairs={len(pairs)} "
               f"out={out} pairs_out={pairs_out}")


@rm.command("train")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--pairs", "pairs_path", type=click.Path(exists=True),
              default=None, help="Pair file, required for bt/both.")
@click.option("--loss", type=click.Choice(["mse", "bt", "both"]),
              default="mse")
@click.option("--out", type=click.Path(), default="rm_model.json")
@click.pass_context
@guarded
def rm_train(ctx: click.Context, data: str, pairs_path: Optional[str],
             loss: str, out: str) -> None:
    """Fit the linear reward model on a dataset file."""
    cfg = _load(ctx.obj)
    epochs = int(cfg["rm.epochs"])
    lr = float(cfg["rm.lr"])
    examples, _ = read_rm_dataset(data)
    if loss in ("bt", "both") and pairs_path is None:
        raise ConfigError("--pairs is required for bt training")
    wrote = []
    if loss in ("mse", "both"):
        model, hist = train_mse(examples, epochs=epochs, lr=lr)
        path = out if loss == "mse" else _suffixed(out, "mse")
        save_model(model, path)
        wrote.append(f"mse:{path} loss={hist[-1]!r}")
    if loss in ("bt", "both"):
        pairs = read_rm_pairs(pairs_path)
        model, hist = train_bt(examples, pairs, epochs=epochs, lr=lr)
        path = out if loss == "bt" else _suffixed(out, "bt")
        save_model(model, path)
        wrote.append(f"bt:{path} loss={hist[-1]!r}")
    click.echo(" ".join(wrote))


def _suffixed(path: str, tag: str) -> str:
    if path.endswith(".json"):
        return path[:-5] + f".{tag}.json"
    return f"{path}.{tag}"


@rm.command("eval")
@click.option("--data", type=click.Path(exists=True), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True),
              required=True)
@guarded
def rm_eval(data: str, model_path: str) -> None:
    """Score a dataset with a saved model and print the metric block."""
    examples, _ = read_rm_dataset(data)
    model = load_model(model_path)
    metrics = eval_rm(model, examples)
    click.echo(json.dumps({
        "adaptive_accuracy": metrics.adaptive_accuracy,
        "auc_roc": metrics.auc_roc,
        "auc_defined": metrics.auc_defined,
        "spearman": metrics.spearman,
        "n_pos": metrics.n_pos,
        "n_neg": metrics.n_neg,
    }, sort_keys=True))


@rm.command("select")
@click.option("--model", "model_path", type=click.Path(exists=True),
              required=True)
@click.option("--out", type=click.Path(), default="selections.jsonl")
@click.pass_context
@guarded
def rm_select(ctx: click.Context, model_path: str, out: str) -> None:
    """Run searches and pick one final node per task with the model."""
    cfg = _load(ctx.obj)
    seed = _seed(ctx.obj, cfg)
    ecfg, traces = _eval_traces(cfg, seed, stream=0x524D53)
    agent_ids = sorted(build_agents(ecfg))
    model = load_model(model_path)
    with open(out, "w") as fh:
        for trace in traces:
            node = select_final(trace, model, agent_ids=agent_ids,
                                hint_noise=float(cfg["rm.hint_noise"]))
            fh.write(json.dumps(
                {"task": trace.task.id, "node": node}, sort_keys=True) + "\n")
    click.echo(f"tasks={len(traces)} out={out}")


@cli.command()
@click.option("--metric",
              type=click.Choice(["passk", "dak", "ea", "naudc", "aec",
                                 "gvendi"]),
              required=True)
@click.option("--n", type=int, default=None, help="passk: samples drawn.")
@click.option("--c", type=int, default=None, help="passk: correct samples.")
@click.option("--k", type=int, default=None, help="passk/dak/naudc k.")
@click.option("--sizes", type=str, default=None,
              help="Cluster sizes, comma separated (dak/ea/naudc).")
@click.option("--vectors", "vectors_path", type=click.Path(exists=True),
              default=None, help="Vector file (aec/gvendi).")
@click.option("--eps", type=float, default=0.5, help="aec: dbscan radius.")
@click.option("--min-pts", type=int, default=2, help="aec: dbscan min points.")
@click.option("--proj-dim", type=int, default=32, help="gvendi projection.")
@click.option("--seed", "metric_seed", type=int, default=0,
              help="gvendi projection seed.")
@guarded
def diversity(metric: str, n: Optional[int], c: Optional[int],
              k: Optional[int], sizes: Optional[str],
              vectors_path: Optional[str], eps: float, min_pts: int,
              proj_dim: int, metric_seed: int) -> None:
    """Compute one diversity metric and print its value."""
    if metric == "passk":
        if n is None or c is None or k is None:
            raise ConfigError("passk needs --n, --c and --k")
        click.echo(repr(pass_at_k(n, c, k)))
        return
    if metric in ("dak", "ea", "naudc"):
        if sizes is None:
            raise ConfigError(f"{metric} needs --sizes")
        profile = ClusterProfile(
            sizes=tuple(int(s) for s in sizes.split(",") if s.strip()))
        if metric == "dak":
            if k is None:
                raise ConfigError("dak needs --k")
            click.echo(repr(da_at_k(profile, k)))
        elif metric == "ea":
            click.echo(repr(ea(profile)))
        else:
            if k is None:
                raise ConfigError("naudc needs --k (the budget K_max)")
            click.echo(repr(naudc(profile, k)))
        return
    if vectors_path is None:
        raise ConfigError(f"{metric} needs --vectors")
    groups = read_vectors(vectors_path)
    if metric == "aec":
        by_task: dict = {}
        for task_id, _, vecs in groups:
            by_task.setdefault(task_id, []).append(vecs)
        point_sets = [np.vstack(v) for _, v in sorted(by_task.items())]
        click.echo(repr(aec(point_sets, eps=eps, min_pts=min_pts)))
    else:
        stacked = np.vstack([vecs for _, _, vecs in groups])
        click.echo(repr(g_vendi(stacked, proj_dim=proj_dim, seed=metric_seed)))


def _plot_path(out: str) -> str:
    if out.endswith(".csv"):
        return out[:-4] + ".plot.csv"
    return out + ".plot.csv"


@cli.command()
@click.option("--mode", type=click.Choice(["single", "homo", "heter"]),
              default=None, help="Override experiment.mode.")
@click.option("--out", type=click.Path(), default="results.csv")
@click.pass_context
@guarded
def experiment(ctx: click.Context, mode: Optional[str], out: str) -> None:
    """Run one mode end to end and write its checkpoint rows."""
    cfg = _load(ctx.obj)
    seed = _seed(ctx.obj, cfg)
    ecfg = experiment_config(cfg, seed=seed, mode=mode)
    result = run_experiment(ecfg)
    write_rows(result.rows, out)
    write_plot_data(result.rows, _plot_path(out))
    last = result.rows[-1]
    click.echo(f"mode={ecfg.mode} checkpoints={len(result.rows)} "
               f"updates={last.updates} pass1={last.pass1!r} "
               f"pass1_mcts={last.pass1_mcts!r} out={out}")


@cli.command()
@click.option("--modes", type=str, default="single,homo,heter",
              help="Comma separated mode list.")
@click.option("--out", type=click.Path(), default="compare.csv")
@click.option("--curves", type=click.Path(), default=None,
              help="Optional path for the full per-checkpoint rows.")
@click.pass_context
@guarded
def compare(ctx: click.Context, modes: str, out: str,
            curves: Optional[str]) -> None:
    """Run several modes at matched compute and write the summary table."""
    cfg = _load(ctx.obj)
    seed = _seed(ctx.obj, cfg)
    mode_list = [m.strip() for m in modes.split(",") if m.strip()]
    configs = [experiment_config(cfg, seed=seed, mode=m) for m in mode_list]
    result = compare_modes(configs)
    write_rows(result.summary, out)
    all_rows = []
    for m in mode_list:
        all_rows.extend(result.results[m].rows)
    write_plot_data(all_rows, _plot_path(out))
    if curves is not None:
        write_rows(all_rows, curves)
    for row in result.summary:
        click.echo(f"mode={row.mode} checkpoint={row.checkpoint} "
                   f"pass1={row.pass1!r} pass1_mcts={row.pass1_mcts!r} "
                   f"pass_n={row.pass_n!r}")


def main() -> None:
    cli(prog_name="selfsearch")


if __name__ == "__main__":
    main()
