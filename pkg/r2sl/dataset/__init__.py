"""WS-Dream parsing, density splits, label statistics and synthetic records."""

from __future__ import annotations

from .report import DistributionReport, distribution_report
from .splits import (
    DensitySplit,
    fractions_for,
    make_splits,
    read_split_manifest,
    write_split_manifest,
)
from .synth import SynthResult, SynthSpec, synthesize
from .wsdream import (
    ParseResult,
    load_codebooks_near,
    parse_matrix,
    parse_matrix_files,
    parse_metadata,
    read_codebooks,
    write_codebooks,
)

__all__ = [
    "DensitySplit",
    "DistributionReport",
    "ParseResult",
    "SynthResult",
    "SynthSpec",
    "distribution_report",
    "fractions_for",
    "load_codebooks_near",
    "make_splits",
    "parse_matrix",
    "parse_matrix_files",
    "parse_metadata",
    "read_codebooks",
    "read_split_manifest",
    "synthesize",
    "write_codebooks",
    "write_split_manifest",
]
