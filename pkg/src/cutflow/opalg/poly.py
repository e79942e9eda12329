"""Normal-ordered operator polynomials on a fermionic lattice.

An :class:`OperatorPolynomial` collects the coefficient tensors of a
vacuum normal-ordered expansion of a lattice operator:

* even parity -- ``scalar``, rank-2 ``:c^dag_i c_j:``, rank-4
  ``:c^dag_i c_j c^dag_k c_q:`` and (optionally) rank-6 blocks;
* odd parity -- rank-1 ``c^dag_j`` and rank-3 ``:c^dag_j c^dag_k c_q:``
  blocks (the co-flowed creation-operator family).

Canonical gauge
---------------
The alternating slot layout is redundant: anticommutation identifies
``:c^dag_i c_j c^dag_k c_q:`` with ``:c^dag_k c_q c^dag_i c_j:`` and with
``-:c^dag_i c_q c^dag_k c_j:``, slots with equal creation (or equal
annihilation) indices encode the zero operator, and the exchange slot
``(a,b,b,a)`` is ``-(a,a,b,b)``.  All rank-4 tensors handled here are
kept in a canonical gauge (see :func:`canonicalize_rank4`) in which the
zero modes are projected out and every occupation-diagonal contribution
lives purely on the density slots ``(i,i,k,k)``.  Without this, gradient
flows can stall on tensor weight that represents the zero operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import wick

__all__ = [
    "OperatorPolynomial",
    "GeneratorPolynomial",
    "pattern_for",
    "commutator",
    "canonicalize_rank4",
    "canonicalize_rank3",
    "off_diagonal_part",
    "diagonal_part",
    "frobenius_norm",
    "max_abs",
    "support_rms_norm",
    "fock_trace",
]

_EVEN_RANKS = (0, 2, 4, 6)
_ODD_RANKS = (1, 3)


def pattern_for(parity: str, rank: int) -> tuple[str, ...]:
    """Slot pattern of the canonical block of given parity and rank."""
    if parity == "even":
        if rank % 2 or rank > 6:
            raise ValueError(f"invalid even block rank {rank}")
        return wick.canonical_pattern(rank // 2, rank // 2)
    if parity == "odd":
        if rank % 2 == 0 or rank > 5:
            raise ValueError(f"invalid odd block rank {rank}")
        return wick.canonical_pattern((rank + 1) // 2, rank // 2)
    raise ValueError(f"unknown parity {parity!r}")


@dataclass
class OperatorPolynomial:
    """Block container for a normal-ordered operator polynomial.

    Parameters
    ----------
    n_sites : int
        Number of lattice modes ``N``; a rank-``r`` block has shape
        ``(N,) * r``.
    parity : str
        ``"even"`` (particle-conserving blocks, ranks 0/2/4/6) or
        ``"odd"`` (one surplus creation operator, ranks 1/3).
    blocks : dict[int, numpy.ndarray]
        Present coefficient tensors keyed by rank.  Absent ranks are
        implicitly zero.
    """

    n_sites: int
    parity: str = "even"
    blocks: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.parity not in ("even", "odd"):
            raise ValueError(f"unknown parity {self.parity!r}")
        allowed = _EVEN_RANKS if self.parity == "even" else _ODD_RANKS
        for rank, arr in self.blocks.items():
            if rank not in allowed:
                raise ValueError(f"rank {rank} not allowed for {self.parity} parity")
            if arr.shape != (self.n_sites,) * rank:
                raise ValueError(
                    f"rank-{rank} block has shape {arr.shape}, expected "
                    f"{(self.n_sites,) * rank}"
                )

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_rank2(cls, h2: np.ndarray) -> "OperatorPolynomial":
        h2 = np.asarray(h2)
        return cls(n_sites=h2.shape[0], parity="even", blocks={2: h2.copy()})

    def copy(self) -> "OperatorPolynomial":
        return OperatorPolynomial(
            self.n_sites, self.parity, {r: a.copy() for r, a in self.blocks.items()}
        )

    # -- block access ----------------------------------------------------------

    @property
    def scalar(self) -> complex:
        blk = self.blocks.get(0)
        return blk.item() if blk is not None else 0.0

    def block(self, rank: int) -> np.ndarray | None:
        return self.blocks.get(rank)

    def ensure(self, rank: int, dtype=np.float64) -> np.ndarray:
        """Return the rank-``rank`` block, creating a zero block if absent."""
        blk = self.blocks.get(rank)
        if blk is None:
            blk = np.zeros((self.n_sites,) * rank, dtype=dtype)
            self.blocks[rank] = blk
        return blk

    def ranks(self) -> tuple[int, ...]:
        return tuple(sorted(self.blocks))

    def items(self) -> Iterator[tuple[int, np.ndarray]]:
        for rank in sorted(self.blocks):
            yield rank, self.blocks[rank]

    # -- arithmetic --------------------------------------------------------------

    def add_scaled(self, other: "OperatorPolynomial", factor: float = 1.0) -> "OperatorPolynomial":
        """In-place ``self += factor * other`` (parities must match)."""
        if other.parity != self.parity or other.n_sites != self.n_sites:
            raise ValueError("incompatible polynomials")
        for rank, arr in other.items():
            dtype = np.result_type(arr, *(a for a in self.blocks.values()), np.float64)
            blk = self.ensure(rank, dtype=dtype)
            if blk.dtype != dtype:
                blk = blk.astype(dtype)
                self.blocks[rank] = blk
            blk += factor * arr
        return self


@dataclass
class GeneratorPolynomial(OperatorPolynomial):
    """Flow generator: an anti-Hermitian operator polynomial with a tag.

    ``origin`` records which construction produced it (``"wegner"`` for
    the commutator generator, ``"scrambling"`` for the degeneracy-lifting
    rotation).  The rank-2 block of a real generator is antisymmetric.
    """

    origin: str = "wegner"

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.origin not in ("wegner", "scrambling"):
            raise ValueError(f"unknown generator origin {self.origin!r}")


# -- canonical gauge ------------------------------------------------------------


def canonicalize_rank4(t4: np.ndarray) -> np.ndarray:
    """Project a rank-4 block onto the canonical gauge (returns new array).

    First symmetrizes over the slot relabelings that leave the operator
    invariant (pair swap ``(i,j,k,q) -> (k,q,i,j)`` and, with a minus
    sign, annihilation swap ``(i,j,k,q) -> (i,q,k,j)``), which annihilates
    all pure-gauge tensor content, then folds the exchange slots
    ``(a,b,b,a) = -(a,a,b,b)`` onto the density slots so that diagonal
    operator weight lives only at ``(i,i,k,k)``.
    """
    t = (
        t4
        + t4.transpose(2, 3, 0, 1)
        - t4.transpose(0, 3, 2, 1)
        - t4.transpose(2, 1, 0, 3)
    ) / 4.0
    n = t.shape[0]
    idx = np.arange(n)
    a = idx[:, None]
    b = idx[None, :]
    g = t[a, b, b, a]
    t[a, b, b, a] = 0.0
    t[a, a, b, b] -= g
    return t


def canonicalize_rank3(t3: np.ndarray) -> np.ndarray:
    """Antisymmetrize the two creation slots of a rank-3 odd block."""
    return (t3 - t3.transpose(1, 0, 2)) / 2.0


def _canonicalize_block(rank: int, parity: str, arr: np.ndarray) -> np.ndarray:
    if parity == "even" and rank == 4:
        return canonicalize_rank4(arr)
    if parity == "odd" and rank == 3:
        return canonicalize_rank3(arr)
    return arr


# -- commutator ------------------------------------------------------------------


def commutator(
    x: OperatorPolynomial,
    y: OperatorPolynomial,
    max_rank: int = 4,
    canonicalize: bool = True,
) -> OperatorPolynomial:
    """Normal-ordered commutator ``[X, Y]`` truncated at ``max_rank``.

    ``X`` must be even (particle-number parity), so that the
    uncontracted Wick terms of ``XY`` and ``YX`` cancel identically and
    the result is again a finite polynomial of the same parity as ``Y``.
    Every Wick term with rank above ``max_rank`` is dropped; with
    ``max_rank`` large enough (6 for even/even of rank <= 4 inputs) the
    expansion is exact.
    """
    if x.parity != "even":
        raise ValueError("left operand of commutator must have even parity")
    if x.n_sites != y.n_sites:
        raise ValueError("operand size mismatch")
    out = OperatorPolynomial(x.n_sites, y.parity)
    for rx, tx in x.items():
        if rx == 0:
            continue  # scalars commute with everything
        px = pattern_for(x.parity, rx)
        for ry, ty in y.items():
            if ry == 0:
                continue
            py = pattern_for(y.parity, ry)
            for term in wick.commutator_terms(px, py, max_rank):
                ops = (ty, tx) if term.swap else (tx, ty)
                val = wick.contract(term.spec, *ops)
                dtype = np.result_type(val, np.float64)
                blk = out.ensure(term.out_rank, dtype=dtype)
                if blk.dtype != dtype:
                    blk = blk.astype(dtype)
                    out.blocks[term.out_rank] = blk
                if term.sign == 1:
                    blk += val
                else:
                    blk -= val
    if canonicalize:
        for rank in out.ranks():
            if rank in (3, 4):
                out.blocks[rank] = _canonicalize_block(rank, out.parity, out.blocks[rank])
    return out


# -- diagonal / off-diagonal split -----------------------------------------------


def off_diagonal_part(h: OperatorPolynomial) -> OperatorPolynomial:
    """Non-diagonal content of an even polynomial (in canonical gauge).

    Keeps rank-2 entries with ``i != j`` and every rank-4 entry except
    the density-density slots ``(i,i,k,k)``.  The scalar block and all
    occupation-diagonal weight are dropped.
    """
    if h.parity != "even":
        raise ValueError("off_diagonal_part expects an even polynomial")
    out = OperatorPolynomial(h.n_sites, "even")
    h2 = h.block(2)
    if h2 is not None:
        v2 = h2.copy()
        np.fill_diagonal(v2, 0.0)
        out.blocks[2] = v2
    h4 = h.block(4)
    if h4 is not None:
        v4 = h4.copy()
        n = h.n_sites
        idx = np.arange(n)
        v4[idx[:, None], idx[:, None], idx[None, :], idx[None, :]] = 0.0
        out.blocks[4] = v4
    return out


def diagonal_part(h: OperatorPolynomial) -> OperatorPolynomial:
    """Occupation-diagonal content: rank-2 diagonal and density slots."""
    if h.parity != "even":
        raise ValueError("diagonal_part expects an even polynomial")
    out = OperatorPolynomial(h.n_sites, "even")
    if 0 in h.blocks:
        out.blocks[0] = h.blocks[0].copy()
    h2 = h.block(2)
    if h2 is not None:
        out.blocks[2] = np.diag(np.diag(h2)).astype(h2.dtype)
    h4 = h.block(4)
    if h4 is not None:
        n = h.n_sites
        idx = np.arange(n)
        d4 = np.zeros_like(h4)
        dens = h4[idx[:, None], idx[:, None], idx[None, :], idx[None, :]]
        d4[idx[:, None], idx[:, None], idx[None, :], idx[None, :]] = dens
        out.blocks[4] = d4
    return out


# -- norms and invariants ---------------------------------------------------------


def frobenius_norm(h: OperatorPolynomial, rank: int | None = None) -> float:
    """Frobenius norm of one block, or of all blocks combined."""
    if rank is not None:
        blk = h.block(rank)
        return 0.0 if blk is None else float(np.linalg.norm(blk.ravel()))
    total = 0.0
    for _, arr in h.items():
        total += float(np.vdot(arr, arr).real)
    return float(np.sqrt(total))


def max_abs(h: OperatorPolynomial, rank: int) -> float:
    blk = h.block(rank)
    return 0.0 if blk is None or blk.size == 0 else float(np.max(np.abs(blk)))


def support_rms_norm(arr: np.ndarray, floor: float = 1e-300) -> float:
    """Root-mean-square magnitude over the nonzero support of a tensor.

    Used as a typical-matrix-element scale in the truncation-error
    bookkeeping, where products of extensive Frobenius norms would grow
    with system size while the per-element physics does not.
    """
    mag2 = np.abs(arr.ravel()) ** 2
    support = mag2 > floor
    cnt = int(np.count_nonzero(support))
    if cnt == 0:
        return 0.0
    return float(np.sqrt(mag2[support].sum() / cnt))


def fock_trace(h: OperatorPolynomial) -> float:
    """Trace of the Fock-space image, in closed form.

    A normal-ordered monomial has nonzero trace only when it is
    occupation-diagonal: ``tr 1 = 2^N``, ``tr :n_i: = 2^(N-1)`` and
    ``tr :n_i n_k: = 2^(N-2)`` for ``i != k``.  In the canonical gauge
    the only diagonal rank-4 slots are the density slots, so the trace
    of an even polynomial (ranks <= 4) is a closed expression in three
    block sums.  This is the conserved quantity of a unitary flow.
    """
    if h.parity != "even":
        raise ValueError("fock_trace expects an even polynomial")
    if 6 in h.blocks:
        raise NotImplementedError("fock_trace supports ranks <= 4")
    n = h.n_sites
    total = float(np.real(h.scalar)) * 2.0**n
    h2 = h.block(2)
    if h2 is not None:
        total += float(np.real(np.trace(h2))) * 2.0 ** (n - 1)
    h4 = h.block(4)
    if h4 is not None:
        idx = np.arange(n)
        dens = h4[idx[:, None], idx[:, None], idx[None, :], idx[None, :]]
        off = float(np.real(dens.sum() - np.trace(dens)))
        total += off * 2.0 ** (n - 2)
    return total
