"""Facial-emotion classification stack built on a self-contained
reverse-mode autodiff core: hierarchical windowed-attention encoder,
excitation gating on the pooled feature vector, and sharpness-aware
SGD training, plus the data/metrics/CLI harness around them."""

from .tensor import Tensor, backward, no_grad, precision, set_precision

__all__ = ["Tensor", "backward", "no_grad", "precision", "set_precision"]
__version__ = "0.1.0"
