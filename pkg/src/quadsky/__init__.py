"""Spatial entity linkage: QuadFlex blocking, skyline ranking and SkyEx cut-off selection."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CandidatePair,
    ClassificationResult,
    EntityCollection,
    QuadSkyError,
    SimilarityVector,
    SkylinePartition,
    SpatialEntity,
)

__all__ = [
    "CandidatePair",
    "ClassificationResult",
    "EntityCollection",
    "QuadSkyError",
    "SimilarityVector",
    "SkylinePartition",
    "SpatialEntity",
    "__version__",
]
