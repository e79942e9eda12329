"""Flowed creation operators and their complexity diagnostics.

At the fixed point of the flow each co-flowed creation operator is the sum
of a linear and a cubic normal-ordered string in the diagonal-basis
fermions,

    c+_i(l)  =  sum_j a_j c+_j  +  sum_jkq b_jkq c+_j c+_k c_q .

This module folds those two coefficient blocks into a small container and
derives the diagnostics used downstream: the operator complexity (fraction
of coefficients surviving a cutoff) and the spatial decay profile of the
linear part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .opalg.poly import OperatorPolynomial

__all__ = [
    "FlowedCreationOperator",
    "complexity",
    "localization_profile",
]


@dataclass(frozen=True)
class FlowedCreationOperator:
    """Coefficients of one creation operator in the diagonal basis.

    Parameters
    ----------
    site : int
        The physical site ``i`` the operator started from at ``l = 0``.
    a : numpy.ndarray
        Real ``(N,)`` coefficients of the linear string ``c+_j``.
    b : numpy.ndarray
        Real ``(N, N, N)`` coefficients of the cubic string
        ``c+_j c+_k c_q`` (antisymmetric in the first two slots, as
        stored by the flow).

    Notes
    -----
    At ``l = 0`` the operator is ``a = e_i``, ``b = 0``.  Under the
    truncated flow, weight can only leak out of ``a`` (into ``b`` and the
    discarded higher strings), so ``sum(a**2)`` may fall below one but
    never rise meaningfully above it; construction rejects states whose
    linear weight exceeds ``1 + 1e-3``.
    """

    site: int
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=float)
        n = a.shape[0]
        b = np.asarray(self.b, dtype=float)
        if a.ndim != 1 or b.shape != (n, n, n):
            raise ValueError(
                f"inconsistent blocks: a has shape {a.shape}, b has shape {b.shape}"
            )
        if not 0 <= self.site < n:
            raise ValueError(f"site {self.site} outside 0..{n - 1}")
        w = float(a @ a)
        if w > 1.0 + 1e-3:
            raise ValueError(f"linear weight {w:.6f} exceeds 1 (flow not unitary?)")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n_sites(self) -> int:
        return self.a.shape[0]

    @property
    def linear_weight(self) -> float:
        """Probability weight retained in the linear string, ``sum a_j**2``."""
        return float(self.a @ self.a)

    @classmethod
    def from_polynomial(cls, op: OperatorPolynomial, site: int) -> "FlowedCreationOperator":
        """Fold a co-flowed odd polynomial into its (a, b) blocks.

        ``op`` is one element of the ``flowed_ops`` list returned by
        :func:`cutflow.flow.integrate_flow`; a missing cubic block (free
        flows never generate one) folds to zeros.
        """
        a = op.block(1)
        if a is None:
            raise ValueError("polynomial has no linear block")
        b = op.block(3)
        if b is None:
            n = op.n_sites
            b = np.zeros((n, n, n))
        return cls(site=site, a=a.copy(), b=b.copy())


def complexity(
    op: FlowedCreationOperator, eps_cut: float = 1e-6
) -> tuple[float, int]:
    """Fraction and count of operator coefficients above a cutoff.

    A coefficient ``x`` (from either block) is counted when
    ``x**2 > eps_cut**2``; the fraction divides by the ``N + N**3``
    stored slots, duplicate-index slots included.

    Parameters
    ----------
    op : FlowedCreationOperator
    eps_cut : float
        Positive cutoff amplitude; defaults to ``1e-6``.

    Returns
    -------
    chi : float
        ``chi_bar / (N + N**3)``, in ``[0, 1]``.
    chi_bar : int
        Number of surviving coefficients.
    """
    if eps_cut <= 0:
        raise ConfigurationError(f"eps_cut must be positive, got {eps_cut}")
    thr = eps_cut * eps_cut
    chi_bar = int(np.count_nonzero(op.a**2 > thr))
    chi_bar += int(np.count_nonzero(op.b**2 > thr))
    n = op.n_sites
    return chi_bar / (n + n**3), chi_bar


def localization_profile(
    op: FlowedCreationOperator,
) -> tuple[np.ndarray, np.ndarray]:
    """Distance-resolved amplitudes of the linear block.

    Returns ``(distances, amplitudes)`` in site order: ``|j - i|`` and
    ``|a_j|`` for every site ``j``.  Consumers bin and fit; nothing is
    aggregated here so reflection-asymmetric leakage stays visible.
    """
    j = np.arange(op.n_sites)
    return np.abs(j - op.site), np.abs(op.a)
