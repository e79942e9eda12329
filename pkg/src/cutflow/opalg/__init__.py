"""Normal-ordered fermionic operator algebra: blocks, Wick calculus, IO."""

from .poly import (
    GeneratorPolynomial,
    OperatorPolynomial,
    canonicalize_rank3,
    canonicalize_rank4,
    commutator,
    diagonal_part,
    fock_trace,
    frobenius_norm,
    max_abs,
    off_diagonal_part,
    pattern_for,
    support_rms_norm,
)
from .serial import dump_polynomial, dumps_polynomial, load_polynomial, loads_polynomial

__all__ = [
    "GeneratorPolynomial",
    "OperatorPolynomial",
    "canonicalize_rank3",
    "canonicalize_rank4",
    "commutator",
    "diagonal_part",
    "fock_trace",
    "frobenius_norm",
    "max_abs",
    "off_diagonal_part",
    "pattern_for",
    "support_rms_norm",
    "dump_polynomial",
    "dumps_polynomial",
    "load_polynomial",
    "loads_polynomial",
]
