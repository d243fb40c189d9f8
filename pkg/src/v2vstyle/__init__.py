"""Unsupervised video-to-video style transfer trained with replay-buffer policy gradients."""

__version__ = "0.1.0"

from .tensor import Tensor, Parameter, no_grad  # noqa: F401
