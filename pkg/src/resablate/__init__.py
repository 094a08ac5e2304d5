"""resablate: a desk-scale residual-network engine and layer-ablation toolkit.

Build and train small ResNets on the CPU, replace chosen convolution kernels
with exact zeros, verify the closed-form constant their batch-normalized
branches collapse to, classify layers as trivial or non-trivial by the metric
drop, and fold trivial branches away into pruned checkpoints.
"""

from .ablation import (
    AblationResult,
    AblationSpec,
    TrivialityReport,
    analytic_ablated_forward,
    classify_triviality,
    fold_and_prune,
    run_protocol_e1,
    run_protocol_e2,
    run_protocol_e3,
    zero_kernels,
)
from .checkpoint import fingerprint, load_checkpoint, save_checkpoint
from .datasets import (
    LabeledDataset,
    gen_classification_dataset,
    gen_segmentation_dataset,
    load_cifar10,
)
from .model import (
    LayerAddress,
    Model,
    ResNetConfig,
    build_model,
    list_layers,
    partition_layer_blocks,
    residual_forward_identity,
    residual_forward_projection,
)
from .tensor import BatchNormState, ConvKernel, Tensor
from .training import Hyperparams, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "AblationResult",
    "AblationSpec",
    "BatchNormState",
    "ConvKernel",
    "Hyperparams",
    "LabeledDataset",
    "LayerAddress",
    "Model",
    "ResNetConfig",
    "Tensor",
    "TrivialityReport",
    "analytic_ablated_forward",
    "build_model",
    "classify_triviality",
    "evaluate",
    "fingerprint",
    "fold_and_prune",
    "gen_classification_dataset",
    "gen_segmentation_dataset",
    "list_layers",
    "load_checkpoint",
    "load_cifar10",
    "partition_layer_blocks",
    "residual_forward_identity",
    "residual_forward_projection",
    "run_protocol_e1",
    "run_protocol_e2",
    "run_protocol_e3",
    "save_checkpoint",
    "train",
    "zero_kernels",
]
