"""Linear reward model over engineered features, for final answer selection.

Features deliberately include a noisy per-bit hint channel (the target with
each bit flipped with probability hint_noise, fixed per task) so the model
can see past public-test agreement; that is what lets it steer away from
reward hacking. Two trainers are provided: pointwise sigmoid-MSE and
pairwise Bradley-Terry. Selection scores only the public-passing nodes and
never reads private outcomes.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata, spearmanr

from .core import ShapeError, Solution
from .environment import EvalReport, Task

_HINT_SALT = 0x48494E54


class DegenerateDataWarning(UserWarning):
    """Training data carries a single label class."""


def task_hints(task: Task, hint_noise: float) -> np.ndarray:
    """The per-task hint bits: target with iid flips at rate hint_noise."""
    rng = np.random.default_rng([_HINT_SALT, task.id])
    flips = rng.random(task.length) < hint_noise
    return (task.target ^ flips.astype(np.uint8)).astype(np.uint8)


def feature_names(agent_ids: Sequence[int]) -> List[str]:
    return (["pub_pass", "hint_agree", "density", "depth"]
            + [f"agent_{a}" for a in agent_ids])


def featurize(task: Task, solution: Solution, report: EvalReport, *,
              depth: int, agent_ids: Sequence[int],
              hint_noise: float = 0.1) -> np.ndarray:
    """Feature vector for one candidate. Reads only public report fields."""
    pub = report.passed_public / report.total_public if report.total_public else 1.0
    hints = task_hints(task, hint_noise)
    agree = float((solution.bits == hints).mean())
    density = float(solution.bits.mean())
    onehot = [1.0 if solution.source_agent == a else 0.0 for a in agent_ids]
    return np.array([pub, agree, density, float(depth)] + onehot,
                    dtype=np.float64)


@dataclass(frozen=True)
class RmExample:
    task_id: int
    node_id: int
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class RmPair:
    task_id: int
    winner_row: int
    loser_row: int


@dataclass
class RmModel:
    w: np.ndarray
    b: float
    names: Tuple[str, ...]

    def score(self, features: np.ndarray) -> float:
        return float(features @ self.w + self.b)

    def scores(self, matrix: np.ndarray) -> np.ndarray:
        return matrix @ self.w + self.b


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _stack(examples: Sequence[RmExample]) -> Tuple[np.ndarray, np.ndarray]:
    if not examples:
        raise ShapeError("no examples to train on")
    X = np.stack([e.features for e in examples])
    r = np.array([e.label for e in examples], dtype=np.float64)
    return X, r


def train_mse(examples: Sequence[RmExample], epochs: int = 300,
              lr: float = 0.5) -> Tuple[RmModel, List[float]]:
    """Pointwise trainer: full-batch descent on mean (sigmoid(score)-r)^2.

    The step is backtracked (halved) whenever it would raise the loss, so the
    recorded loss history is non-increasing.
    """
    X, r = _stack(examples)
    if len(set(int(v) for v in r)) < 2:
        warnings.warn("training labels are single-class", DegenerateDataWarning)
    n = X.shape[0]
    w = np.zeros(X.shape[1])
    b = 0.0

    def loss_at(wv, bv):
        p = _sigmoid(X @ wv + bv)
        return float(np.mean((p - r) ** 2))

    history = [loss_at(w, b)]
    for _ in range(epochs):
        p = _sigmoid(X @ w + b)
        gs = 2.0 * (p - r) * p * (1.0 - p) / n
        gw, gb = X.T @ gs, float(gs.sum())
        step = lr
        for _ in range(40):
            cand_loss = loss_at(w - step * gw, b - step * gb)
            if cand_loss <= history[-1]:
                break
            step *= 0.5
        else:
            history.append(history[-1])
            continue
        w, b = w - step * gw, b - step * gb
        history.append(cand_loss)
    names = tuple(f"f{i}" for i in range(X.shape[1]))
    return RmModel(w=w, b=b, names=names), history


def train_bt(examples: Sequence[RmExample], pairs: Sequence[RmPair],
             epochs: int = 300, lr: float = 0.5) -> Tuple[RmModel, List[float]]:
    """Pairwise trainer: descent on mean -log sigmoid(score_w - score_l)."""
    X, _ = _stack(examples)
    if not pairs:
        raise ShapeError("no pairs to train on")
    D = np.stack([X[p.winner_row] - X[p.loser_row] for p in pairs])
    n = D.shape[0]
    w = np.zeros(X.shape[1])

    def loss_at(wv):
        return float(np.mean(np.logaddexp(0.0, -(D @ wv))))

    history = [loss_at(w)]
    for _ in range(epochs):
        m = D @ w
        gw = D.T @ (-_sigmoid(-m)) / n
        step = lr
        for _ in range(40):
            cand = loss_at(w - step * gw)
            if cand <= history[-1]:
                break
            step *= 0.5
        else:
            history.append(history[-1])
            continue
        w = w - step * gw
        history.append(cand)
    names = tuple(f"f{i}" for i in range(X.shape[1]))
    return RmModel(w=w, b=0.0, names=names), history


def select_final(trace, model: RmModel, *, agent_ids: Sequence[int],
                 hint_noise: float = 0.1) -> Optional[int]:
    """Highest-scoring public-passing node id, ties to the lowest id.

    Returns None when nothing passes the public tests; the caller falls back
    to the vanilla rule (which would also return None then).
    """
    task = trace.task
    best_id, best_score = None, -math.inf
    for node_id in sorted(trace.tree.nodes):
        if node_id == 0:
            continue
        node = trace.tree.node(node_id)
        if node.reward != 1:
            continue
        feats = featurize(task, node.solution, node.report, depth=node.depth,
                          agent_ids=agent_ids, hint_noise=hint_noise)
        s = model.score(feats)
        if s > best_score:
            best_id, best_score = node_id, s
    return best_id


@dataclass
class RmMetrics:
    adaptive_accuracy: float
    auc_roc: float
    auc_defined: bool
    spearman: float
    n_pos: int
    n_neg: int


def eval_rm(model: RmModel, examples: Sequence[RmExample]) -> RmMetrics:
    """Adaptive (median-threshold) accuracy, midrank AUC, tie-aware Spearman."""
    X, r = _stack(examples)
    scores = model.scores(X)
    thr = float(np.median(scores))
    preds = (scores > thr).astype(np.float64)
    acc = float((preds == r).mean())
    n_pos = int(r.sum())
    n_neg = int(r.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        auc, defined = float("nan"), False
    else:
        ranks = rankdata(scores)  # midranks under ties
        auc = float((ranks[r == 1].sum() - n_pos * (n_pos + 1) / 2.0)
                    / (n_pos * n_neg))
        defined = True
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rho = spearmanr(scores, r).statistic
    rho = float(rho) if rho is not None else float("nan")
    return RmMetrics(adaptive_accuracy=acc, auc_roc=auc, auc_defined=defined,
                     spearman=rho, n_pos=n_pos, n_neg=n_neg)


def build_rm_dataset(traces: Sequence, *, agent_ids: Sequence[int],
                     hint_noise: float = 0.1, balance: bool = True,
                     ) -> Tuple[List[RmExample], List[RmPair]]:
    """Examples and preference pairs from finished searches.

    Labels come from private outcomes (this runs in the training harness,
    which is allowed to see them). With balancing, each task contributes
    min(#pass, #fail) examples of each class, lowest node ids first; pairs
    match the i-th passing to the i-th failing node, so no failure is used
    twice.
    """
    examples: List[RmExample] = []
    pairs: List[RmPair] = []
    for trace in traces:
        task = trace.task
        pos, neg = [], []
        for node_id in sorted(trace.tree.nodes):
            if node_id == 0:
                continue
            node = trace.tree.node(node_id)
            rep = node.report
            label = int(rep.passed_private == rep.total_private)
            feats = featurize(task, node.solution, rep, depth=node.depth,
                              agent_ids=agent_ids, hint_noise=hint_noise)
            (pos if label else neg).append(
                RmExample(task.id, node_id, feats, label))
        if balance:
            k = min(len(pos), len(neg))
            pos, neg = pos[:k], neg[:k]
        base = len(examples)
        examples.extend(pos)
        examples.extend(neg)
        for i in range(min(len(pos), len(neg))):
            pairs.append(RmPair(task.id, base + i, base + len(pos) + i))
    return examples, pairs


def write_rm_dataset(examples: Sequence[RmExample], names: Sequence[str],
                     path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_id", "node_id"] + list(names) + ["label"])
        for ex in examples:
            writer.writerow([ex.task_id, ex.node_id]
                            + [repr(float(v)) for v in ex.features]
                            + [ex.label])


def read_rm_dataset(path) -> Tuple[List[RmExample], List[str]]:
    examples = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = header[2:-1]
        for row in reader:
            feats = np.array([float(v) for v in row[2:-1]], dtype=np.float64)
            examples.append(RmExample(int(row[0]), int(row[1]), feats,
                                      int(row[-1])))
    return examples, names


def write_rm_pairs(pairs: Sequence[RmPair], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_id", "winner_row", "loser_row"])
        for p in pairs:
            writer.writerow([p.task_id, p.winner_row, p.loser_row])


def read_rm_pairs(path) -> List[RmPair]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            out.append(RmPair(int(row[0]), int(row[1]), int(row[2])))
    return out


def save_model(model: RmModel, path) -> None:
    with open(path, "w") as fh:
        json.dump({"w": [repr(float(v)) for v in model.w],
                   "b": repr(float(model.b)),
                   "names": list(model.names)}, fh)


def load_model(path) -> RmModel:
    with open(path) as fh:
        data = json.load(fh)
    return RmModel(w=np.array([float(v) for v in data["w"]]),
                   b=float(data["b"]), names=tuple(data["names"]))
