from .model import *

__all__ = [
    "PolynomialPair",
    "StateSpaceModel",
    "StabilityReport",
    "KroneckerIndex",
    "ParameterSpace",
    "NestingMap",
    "EchelonCoefficients",
    "SpaceConfig",
    "ModelFile",
]
