"""embaudit: audit embedding datasets for hidden biases.

Quantifies how strongly protected and nuisance variables are encoded in
embeddings (SVM/regression probes), lays out the space in 2-D (t-SNE),
supports human cluster delineation with downstream consistency statistics,
and detects framing anomalies from image edge profiles.
"""

from .cluster_tools import (
    ClusterLabeling,
    ConsistencyCounts,
    Polygon,
    assign_clusters,
    cluster_composition,
    cross_region_consistency,
    independence_expectation,
    point_in_polygon,
)
from .data_model import (
    Dataset,
    EmbeddingRecord,
    Region,
    SplitAssignment,
    SubjectMetadata,
    concat_slices,
    ingest_embeddings,
    split_dataset,
    split_slices,
    validate_metadata,
)
from .errors import FormatError, JobCancelled, ValidationError
from .image_analysis import (
    EdgeProfile,
    Image,
    aggregate_profiles,
    edge_profile,
    estimate_shift,
    load_and_normalize,
    mean_image,
)
from .probes import (
    LagReport,
    Metrics,
    RegModel,
    SvmModel,
    evaluate_metrics,
    predict_svm,
    rebalance_classification,
    rebalance_regression,
    train_lag_curves,
    train_regressor,
    train_svm,
)
from .synth import (
    SynthEmbeddingSpec,
    SynthImageSpec,
    generate_embeddings,
    generate_neck_images,
)
from .tsne import (
    AffinityMatrix,
    LayoutPoint,
    TsneParams,
    TsneResult,
    calibrate_affinities,
    kl_divergence,
    tsne_layout,
)

__version__ = "0.1.0"
