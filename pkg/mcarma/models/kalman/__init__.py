from .model import *

__all__ = [
    "DiscretizedModel",
    "LikelihoodValue",
    "ObjectiveEvaluation",
]
