"""searchtune: multi-objective hyperparameter optimization for retrieval
ranking, validated on a built-in deterministic search simulator."""

from .config import StudyConfig, assemble_study, load_study_config
from .datagen import FunnelSpec, GeneratedData, GeneratorSpec, OracleResult, generate, oracle_best
from .errors import (
    BuildError,
    ConfigError,
    GridExhausted,
    MultiSearchError,
    OracleRefusal,
    StudyError,
)
from .meta import (
    WEIGHTED_SUM,
    CumulativeSettings,
    MetaScore,
    StudyReport,
    StudySetup,
    TopSet,
    VoteTally,
    extract_top_configs,
    meta_evaluate,
    run_cumulative_pipeline,
    seed_next_stage,
    vote_select,
)
from .objectives import (
    Interaction,
    InteractionLog,
    Label,
    LabelSet,
    MetricSpec,
    ObjectiveSpec,
    Smoothing,
    derive_labels,
    evaluate_objectives,
    map_at_k,
    ndcg_at_k,
    precision_at_k,
    recall_at_k,
)
from .pipeline import Evaluator, optimize_stage
from .retrieval import (
    Document,
    Query,
    QueryRequest,
    RankedList,
    SearchIndex,
    TransformSpec,
    bm25_score,
    index_build,
    multi_search,
    search,
    transform,
)
from .samplers import (
    GridSampler,
    ObjectiveMode,
    RandomSampler,
    Sampler,
    TPESampler,
    TPESettings,
    make_sampler,
    parzen_fit,
    register_sampler,
    tpe_split,
    weighted_sum_reduce,
)
from .space import (
    HPConfig,
    ObservationDataset,
    ParamSpec,
    SearchSpace,
    Trial,
    as_grid,
    pareto_front,
    sample_uniform,
    validate_space,
)

__version__ = "0.1.0"
