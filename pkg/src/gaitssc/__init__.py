"""Sparse subspace clustering features for multichannel gait cycles."""
from .baselines import correlation_features, pca_features, statistical_features
from .errors import (
    ConfigError,
    DegenerateChannelError,
    DivergenceError,
    DomainError,
    GaitSSCError,
    ParseError,
    SchemaError,
    SolverError,
    SpecError,
)
from .evaluate import (
    CvReport,
    FeatureSource,
    comparison_report,
    hit_rate,
    loso_split,
    majority_vote,
    prediction_grid,
    run_loso,
)
from .features import (
    FeatureVector,
    cm1_features,
    cm2_features,
    consensus_clusters,
    dbscan_channels,
    symmetrize,
)
from .ingest import GaitCycle, RawCycle, load_dataset, preprocess, preprocess_cycle
from .solver import (
    AdmmConfig,
    CoefficientMatrix,
    KernelSpec,
    gram_matrix,
    reconstruction_r2,
    soft_threshold,
    solve_kssc,
    solve_ssc,
)
from .svm import LabeledSample, SvmModel, predict, train, weights_report
from .synth import GroundTruth, SynthSpec, generate, oracle_affinity, subspace_recovery_score

__version__ = "0.1.0"
