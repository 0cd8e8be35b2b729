from .model import *

__all__ = [
    "CriterionKind",
    "CriterionSpec",
    "CriterionValue",
    "SpaceScore",
    "OverfitSpectrum",
    "OverfitReport",
    "SelectionReport",
]
