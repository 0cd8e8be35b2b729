from .model import *

__all__ = [
    "SpaceRef",
    "TrueModelConfig",
    "NestedPair",
    "ExperimentConfig",
    "FitJobConfig",
    "SelectJobConfig",
    "ReplicationOutcome",
    "ReplicationSummary",
]
