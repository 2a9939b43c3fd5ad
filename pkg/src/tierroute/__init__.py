"""Cost-aware routing of verifiable code tasks across model tiers."""

from .backends import (
    CompletionRequest,
    CompletionResponse,
    ModelTier,
    PromptProfile,
    ReplayBackend,
    TierSet,
    extract_code,
    render_prompt,
)
from .classifier import ConfusionMatrix, FineTuneExample, Prediction, evaluate, export_finetune
from .corpus import Corpus, SplitSpec, Task, clean, ingest, split
from .costs import CostReport, UsageDistribution, compute_report, distribution_from_routes
from .errors import ConfigError, TierRouteError
from .labeling import (
    ComplexityLabel,
    LabeledTask,
    MappingTable,
    SuccessProfile,
    TrialOutcome,
    collect_profiles,
    label,
    label_single_trial,
)
from .router import RouteRecord, RoutingPolicy, default_policy, route, route_batch
from .verifier import RunnerHandle, RunnerPool, StubVerifier, Verdict, VerifyRequest, verify

__version__ = "0.1.0"
