from .kalman_service import *

__all__ = [
    "KalmanService",
]
