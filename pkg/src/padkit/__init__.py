"""padkit: presentation attack detection toolkit.

A shallow CNN trained from scratch plus an LBP texture classifier, with
dataset ingestion, deterministic training, ROC/AUC evaluation, and a
synthetic live/spoof corpus generator.
"""

from .image_core import (
    Image,
    Rect,
    center_rect,
    crop,
    decode_pnm,
    encode_pnm,
    resize_bilinear,
    to_grayscale,
    to_input_tensor,
)
from .lbp import (
    LbpCodeMap,
    LbpFeature,
    LbpModel,
    chi_square,
    classify,
    compute_code_map,
    extract_feature,
    lbp_code,
)
from .neural_net import (
    AdamState,
    EpochMetrics,
    ModelParams,
    NumericalAbort,
    TrainConfig,
    adam_step,
    build_spoofnet,
    load_model,
    predict,
    save_model,
    train,
)
from .dataset import (
    DatasetManifest,
    LabelSchema,
    ManifestRecord,
    apply_label_schema,
    cap_per_class,
    iter_batches,
    load_manifest,
    save_manifest,
    scan_directory,
    split_half,
)
from .evaluation import (
    RocCurve,
    ScoredSample,
    accuracy,
    auc_pair_oracle,
    confusion_matrix,
    roc_curve,
)
from .synth_data import SynthConfig, gen_corpus, gen_live, spoofify

__version__ = "0.1.0"
