from .levy_service import *

__all__ = [
    "LevyService",
]
