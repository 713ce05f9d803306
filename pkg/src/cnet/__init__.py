"""cnet: a concatenated-CNN library for binary image classification.

Pure numpy tensor engine with tape-based reverse-mode autodiff, the C-Net
graph (four outer feature extractors, two middle networks, one inner
network, dense head), a seeded data pipeline, clinical evaluation metrics,
and a CLI (``cnet split/train/eval/predict/verify``).
"""

__version__ = "0.1.0"

from .data import AugmentSpec, DatasetManifest, Record
from .gradcheck import grad_check
from .layers import Conv2D, Dense, DropoutSpec
from .loss import BCELoss, bce_loss
from .metrics import ConfusionMatrix, MetricReport, accumulate, compute_metrics
from .model import CNetConfig, CNetModel, build_cnet, forward, parameter_count
from .optim import AdamState, adam_init, adam_step
from .tensor import Tape, Tensor, backward, tensor_new

__all__ = [
    "AugmentSpec", "DatasetManifest", "Record", "grad_check",
    "Conv2D", "Dense", "DropoutSpec", "BCELoss", "bce_loss",
    "ConfusionMatrix", "MetricReport", "accumulate", "compute_metrics",
    "CNetConfig", "CNetModel", "build_cnet", "forward", "parameter_count",
    "AdamState", "adam_init", "adam_step",
    "Tape", "Tensor", "backward", "tensor_new",
    "__version__",
]
