"""Saliency map toolkit: attribution methods, faithfulness and localization
metrics, a procedural benchmark generator, and shortcut diagnostics for small
image classifiers."""

__version__ = "0.1.0"

from .errors import SaliencyBenchError
from .model import Capability, FunctionModel, MicroCnn, MicroCnnConfig, ModelHandle
from .tensors import Image

__all__ = [
    "Capability",
    "FunctionModel",
    "Image",
    "MicroCnn",
    "MicroCnnConfig",
    "ModelHandle",
    "SaliencyBenchError",
    "__version__",
]
