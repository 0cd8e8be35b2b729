from .model import *

__all__ = [
    "DriverKind",
    "DriverSpec",
    "DriverMoments",
    "Sample",
    "SimulatedPath",
]
