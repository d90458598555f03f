"""Stability-aware prompt orchestration: measure how much a prompt's outputs
drift, refine the prompt until the drift is below a gate, and run planned
multi-step tasks with feedback-driven plan updates."""

from .errors import (
    BackendError,
    ConfigError,
    DimensionMismatchError,
    EmptyOutputError,
    EncodeError,
    InsufficientSamplesError,
    InvalidComponentError,
    MalformedTraceError,
    MetricError,
    PlanningFailure,
    PromptorError,
    ReviewFailure,
    StateError,
    TransportError,
    UndefinedCorrelationError,
    UnknownPromptError,
    ZeroVectorError,
)
from .metrics import (
    EmbeddingVector,
    StabilityScore,
    TokenDistribution,
    cosine_distance,
    kl_stability,
    kl_stability_score,
    pearson_correlation,
    semantic_stability,
    symmetrized_kl,
    tokenize,
)
from .deviation import (
    AgentOutputModel,
    AggregationSpec,
    DeviationReport,
    EmbeddingProjection,
    NumericParse,
    TokenLength,
    aggregate,
    deviation_bound,
    encode_output,
    simulate_deviation_tail,
    simulate_deviation_tails,
)
from .prompt import (
    IoSpec,
    ModularPrompt,
    PromptComponentKind,
    ValidationResult,
    render_prompt,
    replace_component,
    validate_output,
)
from .plan import (
    Plan,
    Subtask,
    SubtaskStatus,
    estimate_granularity,
    with_status,
    with_subtask,
)
from .backends import (
    BackendDescriptor,
    GenerationRequest,
    HashEmbedder,
    HttpEmbedder,
    HttpGenerator,
    ScriptedBehavior,
    ScriptedGenerator,
    prompt_fingerprint,
)
from .trace import (
    ExecutionTrace,
    ReplayState,
    TraceEvent,
    TraceWriter,
    canonical_trace_bytes,
    canonicalize,
    parse_trace_lines,
    read_trace,
    replay_trace,
    write_trace,
)
from .orchestrator import (
    ContextStore,
    ExecutionResult,
    Orchestrator,
    OrchestratorSettings,
    PlanUpdate,
    RefinementConfig,
    RefinementHistory,
    RefinementStep,
    Summary,
)
from .config import PipelineConfig, build_embedder, build_generator
from .reports import (
    CorrelationReport,
    RunReport,
    SubtaskDigest,
    TraceDigest,
    compute_run_metrics,
    correlate_traces,
    digest_trace,
    reference_check,
    render_correlation_report,
    render_run_report,
    stability_success_pairs,
)

__version__ = "0.1.0"

__all__ = [
    "AgentOutputModel",
    "AggregationSpec",
    "BackendDescriptor",
    "BackendError",
    "ConfigError",
    "ContextStore",
    "CorrelationReport",
    "DeviationReport",
    "DimensionMismatchError",
    "EmbeddingProjection",
    "EmbeddingVector",
    "EmptyOutputError",
    "EncodeError",
    "ExecutionResult",
    "ExecutionTrace",
    "GenerationRequest",
    "HashEmbedder",
    "HttpEmbedder",
    "HttpGenerator",
    "InsufficientSamplesError",
    "InvalidComponentError",
    "IoSpec",
    "MalformedTraceError",
    "MetricError",
    "ModularPrompt",
    "NumericParse",
    "Orchestrator",
    "OrchestratorSettings",
    "PipelineConfig",
    "Plan",
    "PlanUpdate",
    "PlanningFailure",
    "PromptComponentKind",
    "PromptorError",
    "RefinementConfig",
    "RefinementHistory",
    "RefinementStep",
    "ReplayState",
    "ReviewFailure",
    "RunReport",
    "ScriptedBehavior",
    "ScriptedGenerator",
    "StabilityScore",
    "StateError",
    "Subtask",
    "SubtaskDigest",
    "SubtaskStatus",
    "Summary",
    "TokenDistribution",
    "TokenLength",
    "TraceDigest",
    "TraceEvent",
    "TraceWriter",
    "TransportError",
    "UndefinedCorrelationError",
    "UnknownPromptError",
    "ValidationResult",
    "ZeroVectorError",
    "aggregate",
    "build_embedder",
    "build_generator",
    "canonical_trace_bytes",
    "canonicalize",
    "compute_run_metrics",
    "correlate_traces",
    "cosine_distance",
    "deviation_bound",
    "digest_trace",
    "encode_output",
    "estimate_granularity",
    "kl_stability",
    "kl_stability_score",
    "parse_trace_lines",
    "pearson_correlation",
    "prompt_fingerprint",
    "read_trace",
    "reference_check",
    "render_correlation_report",
    "render_prompt",
    "render_run_report",
    "replace_component",
    "replay_trace",
    "semantic_stability",
    "stability_success_pairs",
    "simulate_deviation_tail",
    "simulate_deviation_tails",
    "symmetrized_kl",
    "tokenize",
    "validate_output",
    "with_status",
    "with_subtask",
    "write_trace",
]
