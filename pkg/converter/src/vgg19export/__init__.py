"""Export pretrained VGG-19 feature weights into the tensor container format.

The package pulls the torchvision VGG-19 classifier (or reads a local
state dict), keeps the convolutional stack through conv5_1, and writes
two digest-verified containers: the feature weights themselves and a
reference-activation fixture that downstream consumers can replay to
prove their forward pass matches the original model.
"""

from .container import Container, ContainerError, read_container, write_container
from .convert import (
    ARCHITECTURE,
    IMAGENET_MEAN,
    IMAGENET_STD,
    LAYER_PLAN,
    TAPS,
    ConversionError,
    ConversionResult,
    convert,
    extract_feature_weights,
    fixture_image,
    tap_activations,
    torchvision_index_map,
)

__all__ = [
    "ARCHITECTURE",
    "IMAGENET_MEAN",
    "IMAGENET_STD",
    "LAYER_PLAN",
    "TAPS",
    "Container",
    "ContainerError",
    "ConversionError",
    "ConversionResult",
    "convert",
    "extract_feature_weights",
    "fixture_image",
    "read_container",
    "tap_activations",
    "torchvision_index_map",
    "write_container",
]
