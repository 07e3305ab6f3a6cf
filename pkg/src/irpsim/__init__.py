"""Trace-level simulation of behavioral ransomware detectors and
multi-process evasion attacks (process splitting, functional splitting,
mimicry) on synthetic I/O traces."""

from .errors import DataError, FormatError, IrpSimError
from .trace import (
    FileCensus,
    FileInfo,
    IrpEvent,
    OpKind,
    Trace,
    load_census,
    load_trace,
    save_census,
    save_trace,
    shannon_entropy,
    validate_trace,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "FormatError",
    "IrpSimError",
    "FileCensus",
    "FileInfo",
    "IrpEvent",
    "OpKind",
    "Trace",
    "load_census",
    "load_trace",
    "save_census",
    "save_trace",
    "shannon_entropy",
    "validate_trace",
    "__version__",
]
