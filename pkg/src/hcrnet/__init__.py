"""Handwritten character recognition on a fixed 13-layer convolutional net.

The public surface re-exports the pieces most callers need: dataset
loading, graph construction, two-phase training, metrics, and the
weight archive format. Layer kernels live in hcrnet.layers for direct
use.
"""

__version__ = "0.1.0"

from .augment import AffineTransform, AugmentConfig, apply_affine, augment_batch, sample_affine
from .data import (
    LabeledDataset,
    StrokeSample,
    load_idx,
    load_image_dir,
    load_stroke_dir,
    rasterize_strokes,
    split_dataset,
)
from .errors import DataError, FormatError, HcrnetError, NumericError, ShapeError, UsageError
from .network import (
    NetworkGraph,
    backward,
    build_hcrnet,
    forward,
    frozen_boundary,
    layer_param_table,
    param_count,
    predict,
    run_segment,
    set_phase,
)
from .optim import (
    RmspropState,
    StaircaseSchedule,
    cross_entropy,
    default_schedules,
    lr_at,
    rmsprop_step,
)
from .tensor import Tensor, create, derive_rng, derive_seed, elementwise, glorot_uniform, matmul, reshape
from .training import (
    EpochRecord,
    MetricsReport,
    PhasePlan,
    confusion_matrix,
    evaluate,
    misclassification_report,
    report_from_confusion,
    run_experiment,
    train,
)
from .weights import (
    WeightArchive,
    init_from_pretrained,
    load_checkpoint,
    read_archive,
    save_checkpoint,
    write_archive,
)

__all__ = [
    "__version__",
    "AffineTransform", "AugmentConfig", "apply_affine", "augment_batch", "sample_affine",
    "LabeledDataset", "StrokeSample", "load_idx", "load_image_dir", "load_stroke_dir",
    "rasterize_strokes", "split_dataset",
    "DataError", "FormatError", "HcrnetError", "NumericError", "ShapeError", "UsageError",
    "NetworkGraph", "backward", "build_hcrnet", "forward", "frozen_boundary",
    "layer_param_table", "param_count", "predict", "run_segment", "set_phase",
    "RmspropState", "StaircaseSchedule", "cross_entropy", "default_schedules", "lr_at", "rmsprop_step",
    "Tensor", "create", "derive_rng", "derive_seed", "elementwise", "glorot_uniform", "matmul", "reshape",
    "EpochRecord", "MetricsReport", "PhasePlan", "confusion_matrix", "evaluate",
    "misclassification_report", "report_from_confusion", "run_experiment", "train",
    "WeightArchive", "init_from_pretrained", "load_checkpoint", "read_archive",
    "save_checkpoint", "write_archive",
]
