"""Retrieval-augmented synthesis of daily activity chains.

The package generates one day of activities per person from socio-demographic
profiles, steers chain lengths toward a reference distribution with a feedback
loop, reconciles joint activities across household members, and scores the
result against reference statistics with Jensen-Shannon divergence.
"""

from .domain import (
    Activity,
    ActivityChain,
    ActivityType,
    Household,
    SocioProfile,
    Violation,
    validate_chain,
)
from .evaluation import AblationResult, EvalReport, emit_plot_data, evaluate, run_ablation
from .feedback import FeedbackState, Guidance, next_guidance, record_chain
from .gateway import (
    BackendConfig,
    GatewayError,
    MockConfig,
    ParseError,
    RawCompletion,
    complete,
    encode_chain,
    mock_complete,
    parse_completion,
)
from .household import (
    ChainStore,
    ConsistencyAudit,
    HouseholdContext,
    audit_consistency,
    build_context,
    match_claim,
    reconcile,
)
from .pipeline import RunConfig, RunManifest, run_generation, sample_agents
from .prompts import PromptBundle, build_prompt, select_few_shot
from .stats import ReferenceStats, bernoulli_jsd, chains_to_stats, ingest_diary, jsd

__version__ = "0.1.0"

__all__ = [
    "Activity",
    "ActivityChain",
    "ActivityType",
    "Household",
    "SocioProfile",
    "Violation",
    "validate_chain",
    "AblationResult",
    "EvalReport",
    "emit_plot_data",
    "evaluate",
    "run_ablation",
    "FeedbackState",
    "Guidance",
    "next_guidance",
    "record_chain",
    "BackendConfig",
    "GatewayError",
    "MockConfig",
    "ParseError",
    "RawCompletion",
    "complete",
    "encode_chain",
    "mock_complete",
    "parse_completion",
    "ChainStore",
    "ConsistencyAudit",
    "HouseholdContext",
    "audit_consistency",
    "build_context",
    "match_claim",
    "reconcile",
    "RunConfig",
    "RunManifest",
    "run_generation",
    "sample_agents",
    "PromptBundle",
    "build_prompt",
    "select_few_shot",
    "ReferenceStats",
    "bernoulli_jsd",
    "chains_to_stats",
    "ingest_diary",
    "jsd",
    "__version__",
]
