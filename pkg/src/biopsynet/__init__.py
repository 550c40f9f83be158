"""Duodenal biopsy patch classification pipeline.

Stages: slide patching, autoencoder + k-means tissue filtering, percentile
color balancing, CNN training with Adam, and precision/recall/F1/ROC
evaluation. All numerics are numpy-backed and deterministic for a fixed seed.
"""

__version__ = "0.1.0"

CLASS_NAMES = ("EE", "CD", "Normal")
CLASS_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}
