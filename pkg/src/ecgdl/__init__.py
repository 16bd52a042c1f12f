"""From-scratch 1-D deep learning engine, ECG rhythm classifiers, and saliency tools."""

from .backbones import (BackboneSpec, LayerSpec, build_backbone, build_residual_backbone,
                        count_parameters, named_backbone)
from .heads import HeadSpec, PooledClassifier, fuse_mean_vote, global_pool
from .recurrent import RecurrentSpec, assemble_convlstm, run_sequence
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "no_grad", "BackboneSpec", "LayerSpec", "build_backbone",
           "build_residual_backbone", "count_parameters", "named_backbone",
           "HeadSpec", "PooledClassifier", "fuse_mean_vote", "global_pool",
           "RecurrentSpec", "assemble_convlstm", "run_sequence", "__version__"]
