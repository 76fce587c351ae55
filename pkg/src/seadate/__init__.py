"""Dual-attention transformer fusion and contrastive learning for paired-modality detection.

A numpy-only toolkit: differentiable primitives with hand-written
gradients, the fusion block, the contrastive module, a toy dual-stream
detector, COCO-style evaluation and a synthetic paired-image generator.
"""
from .errors import (ConfigError, CorruptionError, DegenerateEmbeddingError, DimensionError, NumericalError,
                     SeaDateError)

__version__ = "0.1.0"

__all__ = ["ConfigError", "CorruptionError", "DegenerateEmbeddingError", "DimensionError", "NumericalError",
           "SeaDateError", "__version__"]
