"""Joint architecture and weight discovery for MLPs via a learned functional embedding."""

from .netcore import (
    ActivationKind,
    EvalConfig,
    HiddenLayer,
    MaskMode,
    Mlp,
    eval_mlp,
)
from .matrep import MatRep, RepLayout, pack, sample_random_mlp, unpack

__all__ = [
    "ActivationKind",
    "EvalConfig",
    "HiddenLayer",
    "MaskMode",
    "Mlp",
    "eval_mlp",
    "MatRep",
    "RepLayout",
    "pack",
    "sample_random_mlp",
    "unpack",
]

__version__ = "0.1.0"
