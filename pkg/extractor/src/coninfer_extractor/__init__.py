"""Feature, prototype, and prior export for the coninfer engine."""

from .extract import (
    ClassSpec,
    ContextBackbone,
    ExtractJob,
    SemanticBackbone,
    build_prototypes,
    list_images,
    priors_from_scores,
    run_extraction,
)
from .templates import TEMPLATE_SETS

__version__ = "0.1.0"

__all__ = [
    "ClassSpec",
    "ContextBackbone",
    "ExtractJob",
    "SemanticBackbone",
    "TEMPLATE_SETS",
    "build_prototypes",
    "list_images",
    "priors_from_scores",
    "run_extraction",
]
