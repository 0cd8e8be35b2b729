from .selection_service import *

__all__ = [
    "SelectionService",
]
