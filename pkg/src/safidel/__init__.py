"""safidel: safety-aware fidelity assessment and calibration for paired
real/synthetic perception data."""

__version__ = "0.1.0"

from .boxes import BoundingBox, iou
from .calibrate import (
    CalibrationResult,
    CalibratorParams,
    ParamGrid,
    apply_calibrator,
    apply_enhancement,
    apply_gaussian_blur,
    calibrate,
    enumerate_grid,
    random_search,
)
from .dataset import (
    GroundTruthObject,
    ImageTensor,
    KittiParseError,
    ManifestError,
    PairedDataset,
    PairedSample,
    format_kitti_labels,
    load_image,
    load_manifest,
    parse_kitti_labels,
    save_image,
)
from .detector import (
    CachingDetector,
    DetectionCache,
    DetectorError,
    DetectorHandle,
    MockDetector,
    MockRule,
    detect,
    detect_mock,
    image_digest,
)
from .fidelity import (
    ALL_OBJECTS,
    SAFETY_RELEVANT,
    Detection,
    DetectionSet,
    FidelityQuery,
    FidelityVerdict,
    InconsistencyCount,
    count_inconsistencies,
    embed_output,
    fnr_consistency,
    iv_fidelity,
    lf_fidelity,
    match_detections,
    ov_fidelity,
    sa_fidelity,
    vector_distance,
)
from .report import (
    BoxStats,
    RankEntry,
    RankedEntry,
    box_stats,
    emit_report,
    mann_whitney_u,
    rank_generators,
)
from .scenario import (
    Attribute,
    AttributeSelector,
    ScenarioDescription,
    attr_loss,
    encode_ground_truth,
    inter,
    pia,
    safety_similar,
    sia,
)

__all__ = [
    "__version__",
    "ALL_OBJECTS",
    "Attribute",
    "AttributeSelector",
    "BoundingBox",
    "BoxStats",
    "CachingDetector",
    "CalibrationResult",
    "CalibratorParams",
    "Detection",
    "DetectionCache",
    "DetectionSet",
    "DetectorError",
    "DetectorHandle",
    "FidelityQuery",
    "FidelityVerdict",
    "GroundTruthObject",
    "ImageTensor",
    "InconsistencyCount",
    "KittiParseError",
    "ManifestError",
    "MockDetector",
    "MockRule",
    "PairedDataset",
    "PairedSample",
    "ParamGrid",
    "RankEntry",
    "RankedEntry",
    "SAFETY_RELEVANT",
    "ScenarioDescription",
    "apply_calibrator",
    "apply_enhancement",
    "apply_gaussian_blur",
    "attr_loss",
    "box_stats",
    "calibrate",
    "count_inconsistencies",
    "detect",
    "detect_mock",
    "embed_output",
    "emit_report",
    "encode_ground_truth",
    "enumerate_grid",
    "fnr_consistency",
    "format_kitti_labels",
    "image_digest",
    "inter",
    "iou",
    "iv_fidelity",
    "lf_fidelity",
    "load_image",
    "load_manifest",
    "mann_whitney_u",
    "match_detections",
    "ov_fidelity",
    "parse_kitti_labels",
    "pia",
    "random_search",
    "rank_generators",
    "sa_fidelity",
    "safety_similar",
    "save_image",
    "sia",
    "vector_distance",
]
