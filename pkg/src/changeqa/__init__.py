"""changeqa: change-detection QA generation, evaluation metrics, and the
text-conditioned bi-temporal change-scan kernel, with a toy training pipeline.
"""

from .masks import (
    ClassCounts,
    Label,
    PixelCoord,
    SemanticMask,
    count_labels,
    destruction_percentage,
    destruction_pixels,
)
from .metrics import EvalReport, PredictionSet, confusion_matrix, per_category_breakdown, score
from .qagen import (
    DatasetStats,
    dataset_stats,
    generate_all,
    imbalance_ratio,
    percent_of_buildings,
    percent_of_total,
    resilience_ratio,
    severity_level,
    spatial_pattern,
    threshold_answer,
)
from .scan import (
    ScanDims,
    ScanOutput,
    ScanParams,
    StreamPair,
    change_scan_backward,
    change_scan_fast,
    change_scan_ref,
    gradcheck,
    linear_scan_chunked,
    scan_benchmark,
    zoh_discretize,
)
from .templates import (
    ANSWER_INDEX,
    ANSWER_VOCABULARY,
    CATEGORY_SCHEDULE,
    QAItem,
    QATemplate,
    QuestionCategory,
    SeverityLevel,
    SpatialPattern,
    TEMPLATE_REGISTRY,
    bucket,
)

__version__ = "0.1.0"
