"""Experience-memory engine for multi-step tool-using agents.

Extracts structured experience records from finished episodes, recalls the
most relevant past trajectories at every agent step through a weighted
three-component score, and keeps growing its bounded pool with
evaluator-approved successes.
"""

from .embedding import (
    CachedEmbedder,
    EmbeddingProvider,
    EmbeddingVector,
    HashingEmbedder,
    RemoteEmbedder,
    cosine_similarity,
    trajectory_similarity,
)
from .harness import (
    BatchReport,
    EpisodeOutcome,
    SimTool,
    parse_action,
    run_episode,
    run_self_improvement,
)
from .metrics import accuracy, macro_accuracy, moving_average_3, pass_k, pass_k_exact
from .pool import (
    ExperiencePool,
    ExperienceRecord,
    extract_experience,
    insert_if_match,
    load_pool,
    save_pool,
    update_pool,
)
from .providers import (
    ChatIntentRecognizer,
    ChatJudgeEvaluator,
    ChatMessage,
    ChatProvider,
    IntentCatalog,
    IntentLabel,
    Judgment,
    KeywordIntentRecognizer,
    LenientEvaluator,
    RemoteChatProvider,
    ScriptedChatProvider,
    Verdict,
    infer_intent,
    judge_success,
    lenient_match,
)
from .recall import (
    RecallConfig,
    ScoredCandidate,
    ScoringWeights,
    StepFeatures,
    Variant,
    extract_step_features,
    intent_match,
    recall_top_k,
    relevance_score,
    toolchain_coverage,
)
from .trajectory import (
    Action,
    InteractionHistory,
    Observation,
    TaskSpec,
    ToolChain,
    Trajectory,
    append_step,
    extract_toolchain,
    first_query,
    read_trajectories,
    render_transcript,
    write_trajectories,
)

__version__ = "0.1.0"
