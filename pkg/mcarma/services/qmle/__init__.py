from .qmle_service import *

__all__ = [
    "QmleService",
]
