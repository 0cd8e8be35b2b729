from .model import *

__all__ = [
    "FitOptions",
    "StartResult",
    "FitResult",
]
