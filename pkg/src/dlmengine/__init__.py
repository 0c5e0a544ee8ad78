"""Decoding engine for masked-diffusion language models.

Strategies: greedy static, confidence-threshold parallel, low-confidence
ablation variants, and plan-verify-fill (verified planning anchors plus a
speculative AR fallback). Models plug in through the oracle interface:
exact enumeration over explicit distributions, deterministic table replay,
or the bridge wire protocol.
"""

from .core import (
    Canvas,
    CommitRecord,
    ConfigError,
    DecodeConfig,
    EngineError,
    MaskWriteError,
    NfeMode,
    OverwriteError,
    Prediction,
    Route,
    Vocabulary,
    apply_commits,
    canvas_fingerprint,
    masked_set,
)
from .decoders import (
    AblationMode,
    CandidateTrajectory,
    StepContext,
    StepLimitError,
    ar_candidates,
    ar_verify,
    compute_base,
    decode_ablation,
    decode_pvf,
    decode_static,
    decode_threshold,
    filter1_consistency,
    filter2_total_confidence,
    plan_candidates,
)
from .metrics import RunReport, Summary, aggregate, speedup
from .oracle import (
    BridgeOracle,
    EnumerationOracle,
    ExplicitDistribution,
    InconsistentStateError,
    MissingEntryError,
    Oracle,
    OracleError,
    OracleRequest,
    OracleResponse,
    ProtocolError,
    TableOracle,
    bridge_connect,
    load_table_oracle,
)
from .sched import BlockPlan, NoMaskError, Termination, TerminationKind, check_termination, working_set
from .vocabplan import PlanningSet, PlanningSource, build_planning_set, default_static_list, is_planning

__version__ = "0.1.0"
