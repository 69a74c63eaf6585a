"""Multi-agent self-search engine: adaptive tree search over pluggable
agents, tree-group policy objectives, buffered per-agent training, learned
final-answer selection, and diversity measurement, with a synthetic
bit-vector environment for desk-scale verification."""

from .agents import (
    Proposal,
    ProtocolError,
    RemoteAgent,
    RemoteError,
    RemoteTimeoutError,
    SimAgent,
    SimAgentParams,
)
from .bandit import (
    Action,
    BetaPosterior,
    CON,
    DepthSchedule,
    GEN,
    select_action,
    select_agent,
    update_posterior,
)
from .core import (
    ConfigError,
    EmptyTreeError,
    FreshContext,
    LogProbTrace,
    NodeRecord,
    RefinementContext,
    SearchNode,
    SearchTree,
    SelfSearchError,
    ShapeError,
    Solution,
    StateError,
    bits_to_hex,
    hex_to_bits,
)
from .diversity import (
    ClusterProfile,
    MetricError,
    OracleError,
    aec,
    cluster_by_equivalence,
    da_at_k,
    dbscan,
    ea,
    exact_bits_oracle,
    g_vendi,
    naudc,
    pass_at_k,
)
from .dispatch import (
    AgentBuffer,
    RoutingError,
    TrainBatch,
    Trainer,
    UpdateResult,
    apply_update,
    dispatch,
)
from .environment import (
    EvalReport,
    Failure,
    FeedbackReport,
    SyntheticEvaluator,
    Task,
    TestCase,
    binary_feedback,
    evaluate,
    generate_task,
    get_evaluator,
    make_feedback,
    public_reward,
    register_evaluator,
)
from .experiment import (
    CheckpointRow,
    CompareResult,
    ExperimentConfig,
    ExperimentResult,
    build_agents,
    compare_modes,
    flat_group_records,
    make_tasks,
    run_experiment,
    write_plot_data,
    write_rows,
)
from .reward_model import (
    RmExample,
    RmMetrics,
    RmModel,
    RmPair,
    build_rm_dataset,
    eval_rm,
    featurize,
    select_final,
    task_hints,
    train_bt,
    train_mse,
)
from .rl import (
    LossParams,
    ObjectiveResult,
    assign_advantages,
    grpo_advantages,
    gspo_ratio,
    kl_k3,
    overlong_penalty,
    sequence_objective,
    shaped_rewards,
    token_objective,
    token_ratio,
    tree_advantages,
)
from .search import (
    SearchConfig,
    SearchTrace,
    depth_stats,
    run_search,
    trace_rows,
    write_trace,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AgentBuffer",
    "BetaPosterior",
    "CON",
    "CheckpointRow",
    "ClusterProfile",
    "CompareResult",
    "ConfigError",
    "DepthSchedule",
    "EmptyTreeError",
    "EvalReport",
    "ExperimentConfig",
    "ExperimentResult",
    "Failure",
    "FeedbackReport",
    "FreshContext",
    "GEN",
    "LogProbTrace",
    "LossParams",
    "MetricError",
    "NodeRecord",
    "ObjectiveResult",
    "OracleError",
    "Proposal",
    "ProtocolError",
    "RefinementContext",
    "RemoteAgent",
    "RemoteError",
    "RemoteTimeoutError",
    "RmExample",
    "RmMetrics",
    "RmModel",
    "RmPair",
    "RoutingError",
    "SearchConfig",
    "SearchNode",
    "SearchTrace",
    "SearchTree",
    "SelfSearchError",
    "ShapeError",
    "SimAgent",
    "SimAgentParams",
    "Solution",
    "StateError",
    "SyntheticEvaluator",
    "Task",
    "TestCase",
    "TrainBatch",
    "Trainer",
    "UpdateResult",
    "aec",
    "apply_update",
    "assign_advantages",
    "binary_feedback",
    "bits_to_hex",
    "build_agents",
    "build_rm_dataset",
    "cluster_by_equivalence",
    "compare_modes",
    "da_at_k",
    "dbscan",
    "depth_stats",
    "dispatch",
    "ea",
    "eval_rm",
    "evaluate",
    "exact_bits_oracle",
    "featurize",
    "flat_group_records",
    "g_vendi",
    "generate_task",
    "get_evaluator",
    "grpo_advantages",
    "gspo_ratio",
    "hex_to_bits",
    "kl_k3",
    "make_feedback",
    "make_tasks",
    "naudc",
    "overlong_penalty",
    "pass_at_k",
    "public_reward",
    "register_evaluator",
    "run_experiment",
    "run_search",
    "select_action",
    "select_agent",
    "select_final",
    "sequence_objective",
    "shaped_rewards",
    "task_hints",
    "token_objective",
    "token_ratio",
    "trace_rows",
    "train_bt",
    "train_mse",
    "tree_advantages",
    "update_posterior",
    "write_plot_data",
    "write_rows",
    "write_trace",
]
