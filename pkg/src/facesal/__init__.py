"""Facial saliency workbench: a small CNN stack with guided backprop
saliency, human bounding-box aggregation, and the analyses comparing
the two."""

from .kernels import BACKEND, get_backend
from .network import (ActivationTrace, Checkpoint, LayerSpec, NetworkSpec,
                      backward, conv, dense, flatten, forward, guided_backward,
                      init_checkpoint, input_gradient, maxpool, relu, softmax)
from .saliency import (BinaryMask, SaliencyMap, class_saliency_heatmap,
                       consistency_r2, gb_map, load_map, mask_top_fraction,
                       save_map, saliency_difference, top_percent_mask)
from .tensor import DegenerateInputError, DimensionError

__version__ = "0.1.0"

__all__ = [
    "ActivationTrace", "BACKEND", "BinaryMask", "Checkpoint",
    "DegenerateInputError", "DimensionError", "LayerSpec", "NetworkSpec",
    "SaliencyMap", "__version__", "backward", "class_saliency_heatmap",
    "consistency_r2", "conv", "dense", "flatten", "forward", "gb_map",
    "get_backend", "guided_backward", "init_checkpoint", "input_gradient",
    "load_map", "mask_top_fraction", "maxpool", "relu", "saliency_difference",
    "save_map", "softmax", "top_percent_mask",
]
