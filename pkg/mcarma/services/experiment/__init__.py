from .experiment_service import *

__all__ = [
    "ExperimentService",
    "run_replication",
]
