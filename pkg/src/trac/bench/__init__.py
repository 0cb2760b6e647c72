"""Sequence IO, synthetic sequences and evaluation metrics."""

from .metrics import (
    Curve,
    center_errors,
    emit_curves,
    overlaps,
    precision_curve,
    read_curve_csv,
    success_curve,
)
from .sequence import (
    ImageReadError,
    MalformedRowError,
    MissingGroundTruthError,
    SequenceError,
    SequenceSpec,
    load_frame,
    load_sequence,
    read_results,
    write_results,
    write_sequence,
)
from .synthetic import SyntheticSpec, SyntheticSpecError, generate

__all__ = [
    "Curve", "center_errors", "emit_curves", "overlaps", "precision_curve", "read_curve_csv",
    "success_curve", "ImageReadError", "MalformedRowError", "MissingGroundTruthError",
    "SequenceError", "SequenceSpec", "load_frame", "load_sequence", "read_results",
    "write_results", "write_sequence", "SyntheticSpec", "SyntheticSpecError", "generate",
]
