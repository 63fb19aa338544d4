"""Seven-way dermoscopy lesion classification engine.

From-scratch NHWC float32 inference for a depthwise-separable CNN,
head-only transfer learning with Adam, HAM10000-style data preparation
and augmentation, the full evaluation-metrics suite, and a CLI plus HTTP
inference service.
"""

from .augment import AugmentPlan, AugmentPolicy, apply_affine, apply_augment, rebalance_classes
from .dataset import (
    DatasetIndex,
    EdaReport,
    MetadataRecord,
    eda_histograms,
    impute_age,
    load_metadata,
    make_split,
    preprocess_pixels,
    resize_bilinear,
)
from .labels import CLASS_CODES, CLASS_LABELS, ClassLabels
from .metrics import (
    ClassReport,
    ConfusionMatrix,
    categorical_accuracy,
    class_report,
    confusion_matrix,
    format_report,
    micro_average,
    per_class_binary_accuracy,
    per_class_prf,
    top_k_accuracy,
    weighted_average,
)
from .model import (
    ModelConfig,
    ModelGraph,
    build_mobilenet,
    forward,
    load_weights,
    model_summary,
    save_weights,
    set_trainable_boundary,
)
from .nn_ops import (
    BatchNormParams,
    ConvParams,
    activation_relu6,
    batchnorm_infer,
    conv2d,
    cross_entropy_loss,
    dense_forward,
    depthwise_conv2d,
    dropout,
    global_avg_pool,
    head_gradients,
    softmax,
)
from .service import PredictionResult, create_app, load_bundle, predict_image_bytes
from .tensor import Tensor, tensor_allclose, tensor_at, tensor_create
from .train import (
    AdamState,
    ArrayDataset,
    EpochLog,
    TrainConfig,
    adam_step,
    evaluate,
    train_head,
)

__version__ = "0.1.0"
