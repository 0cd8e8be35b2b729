from .model_core_service import *

__all__ = [
    "ModelCoreService",
    "STUDY_THETA_1",
    "STUDY_THETA_2",
    "STUDY_SPACES",
]
