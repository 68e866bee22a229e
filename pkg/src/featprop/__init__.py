"""Graph-based imputation of missing multimodal item features."""

from featprop.errors import (
    DataError,
    EmptyGraphError,
    FeatPropError,
    FormatError,
    ParameterError,
    ParseError,
    ShapeError,
    StageError,
    SweepCellError,
    TruncatedFileError,
)
from featprop.features import (
    FeatureBundle,
    MissingMask,
    ModalityFeatureSet,
    blank_missing,
    known_mean,
    sample_missing,
)
from featprop.graph import (
    InteractionMatrix,
    ItemItemGraph,
    Stage,
    build_item_graph,
    degree_vector,
    normalize_symmetric,
    project_item_item,
    propagate_step,
    sparsify_topn,
    unreachable_items,
)
from featprop.impute import (
    Fallback,
    ImputationResult,
    Method,
    PropagationConfig,
    dirichlet_energy,
    featprop_impute,
    harmonic_residual,
    impute,
    impute_mean,
    impute_random,
    impute_zeros,
    propagate_features,
    propagate_masked,
)
from featprop.evaluation import (
    Dataset,
    InteractionSplit,
    MetricReport,
    SweepConfig,
    SweepReport,
    knn_recommend,
    recall_at_k,
    reconstruction_cosine,
    run_sweep,
    split_interactions,
)
from featprop.synthetic import generate_synthetic

__version__ = "0.1.0"
