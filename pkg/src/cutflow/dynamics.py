"""Closed-form Heisenberg dynamics and sampled infinite-temperature traces.

The diagonal fixed point of the flow makes real-time evolution cheap: the
number operator, re-expanded in the diagonal basis, evolves by explicit
phases plus a first-order interaction correction, and infinite-temperature
autocorrelations reduce to Wick contractions against occupation-state
ensembles.  No time stepping happens anywhere in this module — every
``t`` is evaluated directly from the ``t = 0`` coefficients.

Operator blocks follow the package-wide slot convention: a rank-``2k``
tensor ``T[i, j, ...]`` multiplies the normal-ordered string
``:c+_i c_j c+_k c_q ...:`` with creation/annihilation slots alternating.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import CapacityError, ConfigurationError, EmptyEnsembleError
from .flow import DiagonalHamiltonian
from .opalg import wick
from .opalg.poly import OperatorPolynomial, pattern_for
from .opflow import FlowedCreationOperator

__all__ = [
    "EvolvedNumberOperator",
    "CorrelationTrace",
    "OccupationEnsemble",
    "reconstruct_number_operator",
    "evolve",
    "long_time_average",
    "infinite_T_correlation",
    "correlation_trace",
    "rescale_trace",
    "divergence_filter",
    "default_time_grid",
    "sector_dimension",
]

#: order-6 reconstruction is refused above this many sites
_MAX_SEXTIC_SITES = 36

#: denominators below this (in units of the hopping) use the linear-in-t branch
_DEGENERACY_TOL = 1e-10


def default_time_grid(n_points: int = 200, t_min: float = 0.1, t_max: float = 1e5) -> np.ndarray:
    """``t = 0`` followed by ``n_points`` log-spaced times (units of 1/J)."""
    return np.concatenate([[0.0], np.geomspace(t_min, t_max, n_points)])


def sector_dimension(n_sites: int) -> int:
    """Dimension of the half-filled occupation sector, ``C(N, N/2)``."""
    return math.comb(n_sites, n_sites // 2)


# ---------------------------------------------------------------------------
# transformed number operator


@dataclass
class EvolvedNumberOperator:
    """Number operator of one site, expanded in the diagonal basis.

    Parameters
    ----------
    site : int
        Physical site the operator belongs to.
    t : float
        Evolution time in units of ``1/J``; ``0`` for the reconstructed
        fixed-point operator.
    alpha : numpy.ndarray
        Real ``(N,)`` density weights (coefficients of ``n_j``); exactly
        conserved by the evolution.
    beta : numpy.ndarray
        ``(N, N)`` quadratic coefficients with zero diagonal (the
        diagonal lives in ``alpha``); complex once evolved.
    gamma : numpy.ndarray
        ``(N, N, N, N)`` quartic coefficients on
        ``:c+_i c_j c+_k c_q:`` slots.
    zeta : numpy.ndarray or None
        Optional ``(N,) * 6`` sextic coefficients, present only for
        order-6 reconstructions.
    """

    site: int
    t: float
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    zeta: np.ndarray | None = None

    def __post_init__(self) -> None:
        n = self.alpha.shape[0]
        if self.beta.shape != (n, n) or self.gamma.shape != (n,) * 4:
            raise ValueError("inconsistent block shapes")
        if self.zeta is not None and self.zeta.shape != (n,) * 6:
            raise ValueError("inconsistent sextic block shape")

    @property
    def n_sites(self) -> int:
        return self.alpha.shape[0]

    @property
    def order(self) -> int:
        return 6 if self.zeta is not None else 4

    def quadratic(self) -> np.ndarray:
        """Full quadratic block ``beta + diag(alpha)``."""
        return self.beta + np.diag(self.alpha)

    def blocks(self) -> dict[int, np.ndarray]:
        """Present blocks keyed by rank, with ``alpha`` folded into rank 2."""
        out = {2: self.quadratic(), 4: self.gamma}
        if self.zeta is not None:
            out[6] = self.zeta
        return out

    def to_polynomial(self) -> OperatorPolynomial:
        """Even OperatorPolynomial equivalent (for oracle cross-checks)."""
        return OperatorPolynomial(
            self.n_sites, "even", {r: a.copy() for r, a in self.blocks().items()}
        )


def reconstruct_number_operator(
    op: FlowedCreationOperator, order: int = 4
) -> EvolvedNumberOperator:
    """Expand ``n_i = c+_i(l) c_i(l)`` in the diagonal basis at ``t = 0``.

    The flowed creation operator and its adjoint are multiplied with the
    full Wick expansion (empty contractions included), keeping strings up
    to the requested rank.

    Parameters
    ----------
    op : FlowedCreationOperator
        Fixed-point operator from the flow.
    order : int
        4 drops the sextic strings (default); 6 keeps them, allowed for
        ``N <= 36`` only — the ``N**6`` block is the memory wall.

    Returns
    -------
    EvolvedNumberOperator
        Operator at ``t = 0`` with real blocks.
    """
    if order not in (4, 6):
        raise ConfigurationError(f"order must be 4 or 6, got {order}")
    n = op.n_sites
    if order == 6 and n > _MAX_SEXTIC_SITES:
        raise CapacityError(
            f"order-6 reconstruction limited to N <= {_MAX_SEXTIC_SITES}, got {n}"
        )
    a, b = op.a, op.b
    # adjoint of  B_jkq c+_j c+_k c_q  is  B_jkq c+_q c_k c_j
    creation: list[tuple[tuple[str, ...], np.ndarray]] = [(("+",), a)]
    annihilation: list[tuple[tuple[str, ...], np.ndarray]] = [(("-",), a)]
    if np.any(b):
        creation.append((("+", "+", "-"), b))
        annihilation.append((("+", "-", "-"), b.transpose(2, 1, 0)))

    out: dict[int, np.ndarray] = {2: np.zeros((n, n)), 4: np.zeros((n,) * 4)}
    if order == 6:
        out[6] = np.zeros((n,) * 6)
    for (p1, t1), (p2, t2) in itertools.product(creation, annihilation):
        for term in wick.product_terms(p1, p2, max_rank=order, include_empty=True):
            if term.out_rank not in out:
                continue
            out[term.out_rank] += term.sign * wick.contract(term.spec, t1, t2)

    q2 = out[2]
    alpha = np.diag(q2).copy()
    beta = q2.copy()
    np.fill_diagonal(beta, 0.0)
    return EvolvedNumberOperator(
        site=op.site, t=0.0, alpha=alpha, beta=beta, gamma=out[4], zeta=out.get(6)
    )


def _herm4(t4: np.ndarray) -> np.ndarray:
    """Adjoint coefficients on alternating rank-4 slots."""
    return t4.transpose(3, 2, 1, 0).conj()


def evolve(
    n: EvolvedNumberOperator, diag: DiagonalHamiltonian, t: float
) -> EvolvedNumberOperator:
    """Heisenberg-evolve a reconstructed number operator to time ``t``.

    Quadratic coefficients pick up two-energy phases.  Quartic ones pick
    up four-energy phases plus the first-order interaction correction

        delta_ij Delta_ik (beta_kq(t) - beta_kq(0)) / (h_k - h_q)
      + delta_kq Delta_ik (beta_ij(t) - beta_ij(0)) / (h_i - h_j) ,

    Hermitized (the raw expression is not self-adjoint; its Hermitian
    part is the physical one — the Fock image of ``n(t)`` must stay
    Hermitian).  Denominators smaller than ``1e-10`` (units of J) switch
    to their continuous limit, the linear branch
    ``i t Delta_ik beta(0)``.  Sextic coefficients, when present, evolve
    by their six-energy phase only.

    Parameters
    ----------
    n : EvolvedNumberOperator
        Operator at ``t = 0``.
    diag : DiagonalHamiltonian
        Fixed point supplying ``h_tilde`` and ``delta``.
    t : float
        Target time, ``>= 0``, in units of ``1/J``.
    """
    if n.t != 0.0:
        raise ConfigurationError("evolve() starts from the t = 0 operator")
    if t < 0:
        raise ConfigurationError(f"negative time {t}")
    h = diag.h_tilde
    nn = n.n_sites
    w2 = h[:, None] - h[None, :]
    beta_t = np.exp(1j * w2 * t) * n.beta

    w4 = (
        h[:, None, None, None]
        - h[None, :, None, None]
        + h[None, None, :, None]
        - h[None, None, None, :]
    )
    gamma_t = np.exp(1j * w4 * t) * n.gamma

    degenerate = np.abs(w2) < _DEGENERACY_TOL
    denom = np.where(degenerate, 1.0, w2)
    integ = (np.exp(1j * w2 * t) - 1.0) / denom * n.beta
    integ[degenerate] = 1j * t * n.beta[degenerate]

    delta = diag.delta
    idx = np.arange(nn)
    corr = np.zeros((nn,) * 4, dtype=complex)
    corr[idx, idx] = np.einsum("ik,kq->ikq", delta, integ)
    corr[:, :, idx, idx] += np.einsum("ik,ij->ijk", delta, integ)
    gamma_t += 0.5 * (corr + _herm4(corr))

    zeta_t = None
    if n.zeta is not None:
        w6 = (
            w4[:, :, :, :, None, None]
            + h[None, None, None, None, :, None]
            - h[None, None, None, None, None, :]
        )
        zeta_t = np.exp(1j * w6 * t) * n.zeta

    return EvolvedNumberOperator(
        site=n.site, t=t, alpha=n.alpha.copy(), beta=beta_t, gamma=gamma_t, zeta=zeta_t
    )


def long_time_average(n: EvolvedNumberOperator) -> EvolvedNumberOperator:
    """Diagonal-ensemble projection of a ``t = 0`` number operator.

    Keeps the pieces whose phases never rotate: ``alpha``, the (zero)
    diagonal of ``beta``, the density-density quartic slots
    ``(i, i, k, k)`` and their sextic analogue.  Feeding the result to
    the sampler yields the time-independent plateau value directly.
    """
    if n.t != 0.0:
        raise ConfigurationError("long_time_average() expects the t = 0 operator")
    nn = n.n_sites
    idx = np.arange(nn)
    gamma = np.zeros_like(n.gamma)
    gamma[idx[:, None], idx[:, None], idx[None, :], idx[None, :]] = n.gamma[
        idx[:, None], idx[:, None], idx[None, :], idx[None, :]
    ]
    zeta = None
    if n.zeta is not None:
        zeta = np.zeros_like(n.zeta)
        ii = idx[:, None, None]
        kk = idx[None, :, None]
        mm = idx[None, None, :]
        zeta[ii, ii, kk, kk, mm, mm] = n.zeta[ii, ii, kk, kk, mm, mm]
    return EvolvedNumberOperator(
        site=n.site,
        t=0.0,
        alpha=n.alpha.copy(),
        beta=np.zeros_like(n.beta),
        gamma=gamma,
        zeta=zeta,
    )


# ---------------------------------------------------------------------------
# occupation-state sampling


def _half_filled_states(n_sites: int, n_samples: int, seed) -> np.ndarray:
    """``(N_s, N)`` 0/1 occupation rows from the half-filled sector.

    Exhaustive (lexicographic, deterministic) when the sector dimension
    does not exceed ``n_samples``; otherwise distinct uniform draws from
    a seeded generator.
    """
    if n_sites % 2:
        raise ConfigurationError(
            f"half filling needs an even number of sites, got {n_sites}"
        )
    k = n_sites // 2
    dim = math.comb(n_sites, k)
    if n_samples >= dim:
        if n_samples > dim:
            warnings.warn(
                f"requested {n_samples} samples from a {dim}-state sector; "
                "clamping to exhaustive enumeration",
                stacklevel=3,
            )
        states = np.zeros((dim, n_sites))
        for row, occ in enumerate(itertools.combinations(range(n_sites), k)):
            states[row, list(occ)] = 1.0
        return states
    rng = np.random.default_rng(seed)
    seen: set[tuple[int, ...]] = set()
    rows = []
    while len(rows) < n_samples:
        occ = tuple(sorted(rng.choice(n_sites, size=k, replace=False).tolist()))
        if occ in seen:
            continue
        seen.add(occ)
        row = np.zeros(n_sites)
        row[list(occ)] = 1.0
        rows.append(row)
    return np.array(rows)


class OccupationEnsemble:
    """A fixed set of occupation states with cached contraction moments.

    Wick evaluation of ensemble-averaged expectation values needs mixed
    moments ``mean_s prod_c f_c(s_{x_c})`` where each factor is either an
    occupation ``s`` (an occupied chord) or a hole ``1 - s``.  These are
    small dense tensors reused across every time point and every block
    pair, so they are computed once per type signature and memoized.
    """

    def __init__(self, n_sites: int, n_samples: int = 256, seed=0):
        self.states = _half_filled_states(n_sites, n_samples, seed)
        self.n_sites = n_sites
        self.n_samples = self.states.shape[0]
        self.exhaustive = self.n_samples >= math.comb(n_sites, n_sites // 2)
        self._hole = 1.0 - self.states
        self._moments: dict[str, np.ndarray] = {}

    def moment(self, types: str) -> np.ndarray:
        """Mixed moment tensor for a chord type string like ``"sst"``."""
        cached = self._moments.get(types)
        if cached is not None:
            return cached
        ops = [self.states if c == "s" else self._hole for c in types]
        letters = "abcdefgh"[: len(types)]
        spec = ",".join(f"z{c}" for c in letters) + "->" + letters
        out = np.einsum(spec, *ops) / self.n_samples
        self._moments[types] = out
        return out

    # -- expectation machinery ----------------------------------------------

    def _single(self, rank: int, tensor: np.ndarray) -> complex:
        total = 0.0 + 0.0j
        for term in wick.single_pairing_terms(pattern_for("even", rank)):
            mom = self.moment("".join(f for _, f in term.moment))
            letters = "".join(let for let, _ in term.moment)
            val = wick.contract(f"{term.x_spec},{letters}->", tensor, mom)
            total += term.sign * val
        return total

    def _pair(self, rx: int, tx: np.ndarray, ry: int, ty: np.ndarray) -> complex:
        total = 0.0 + 0.0j
        terms = wick.pairing_terms(pattern_for("even", rx), pattern_for("even", ry))
        for term in terms:
            mom = self.moment("".join(f for _, f in term.moment))
            letters = "".join(let for let, _ in term.moment)
            val = wick.contract(
                f"{term.x_spec},{term.y_spec},{letters}->", tx, ty, mom
            )
            total += term.sign * val
        return total

    def expectation(self, op: EvolvedNumberOperator) -> complex:
        """Ensemble-averaged ``<n(t)>``."""
        return sum(self._single(r, blk) for r, blk in op.blocks().items())

    def pair_expectation(
        self, x: EvolvedNumberOperator, y: EvolvedNumberOperator
    ) -> complex:
        """Ensemble-averaged ``<x y>`` over the retained block pairs.

        Quartic-sextic and sextic-sextic cross terms are dropped (their
        cost grows past the sextic storage itself and their weight is
        higher order in the interaction); quadratic-sextic is kept in
        both orderings.
        """
        bx, by = x.blocks(), y.blocks()
        total = 0.0 + 0.0j
        for rx, ry in ((2, 2), (2, 4), (4, 2), (4, 4), (2, 6), (6, 2)):
            tx, ty = bx.get(rx), by.get(ry)
            if tx is None or ty is None:
                continue
            total += self._pair(rx, tx, ry, ty)
        return total


def infinite_T_correlation(
    n_t: EvolvedNumberOperator,
    n_0: EvolvedNumberOperator,
    n_samples: int = 256,
    seed=0,
    ensemble: OccupationEnsemble | None = None,
) -> float:
    """One sampled value of ``C(t) = 4 <(n_i(t) - 1/2)(n_i(0) - 1/2)>``.

    The average runs over ``n_samples`` distinct half-filled occupation
    bitstrings (exhaustive when the sector is small enough), each
    expectation evaluated by complete Wick pairings.  Passing a
    pre-built ``ensemble`` reuses its moment cache across time points.

    Returns the real part, which by Hermiticity equals the symmetrized
    (anticommutator) correlator per state.  The antisymmetric part
    cancels exactly only over the complete sector, so an imaginary
    residue above ``1e-8`` raises only for exhaustive ensembles; for a
    strict subsample it is ordinary ``1/sqrt(N_s)`` noise and is
    discarded.
    """
    if n_t.n_sites != n_0.n_sites:
        raise ConfigurationError("operators live on different lattices")
    if ensemble is None:
        ensemble = OccupationEnsemble(n_t.n_sites, n_samples, seed)
    c = 4.0 * (
        ensemble.pair_expectation(n_t, n_0)
        - 0.5 * ensemble.expectation(n_t)
        - 0.5 * ensemble.expectation(n_0)
        + 0.25
    )
    if ensemble.exhaustive and abs(c.imag) > 1e-8:
        raise ValueError(f"correlation has imaginary residue {c.imag:.3e}")
    return float(c.real)


# ---------------------------------------------------------------------------
# traces


@dataclass
class CorrelationTrace:
    """One realization's autocorrelation trace and its rescaling state.

    ``c_raw`` holds the sampled values; ``c_rescaled`` is populated by
    :func:`rescale_trace` (``c1 * (c_raw - c2)``, pinned to 1 at t=0).
    ``meta`` carries realization identifiers for output rows.
    """

    times: np.ndarray
    c_raw: np.ndarray
    c_rescaled: np.ndarray | None = None
    c1: float | None = None
    c2: float | None = None
    diverged: bool = False
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def values(self) -> np.ndarray:
        """Rescaled samples when available, raw otherwise."""
        return self.c_raw if self.c_rescaled is None else self.c_rescaled


def correlation_trace(
    n_0: EvolvedNumberOperator,
    diag: DiagonalHamiltonian,
    times: np.ndarray | None = None,
    n_samples: int = 256,
    seed=0,
    meta: dict | None = None,
) -> CorrelationTrace:
    """Sample ``C(t)`` on a time grid from one realization's fixed point.

    A single occupation ensemble (and moment cache) is shared by all
    time points; each point evolves the operator in closed form and
    contracts.
    """
    if times is None:
        times = default_time_grid()
    ens = OccupationEnsemble(n_0.n_sites, n_samples, seed)
    c = np.empty(times.shape[0])
    for i, t in enumerate(times):
        n_t = n_0 if t == 0.0 else evolve(n_0, diag, float(t))
        c[i] = infinite_T_correlation(n_t, n_0, ensemble=ens)
    return CorrelationTrace(
        times=np.asarray(times, dtype=float),
        c_raw=c,
        seed=seed if isinstance(seed, int) else None,
        meta=dict(meta or {}),
    )


def rescale_trace(
    raw: CorrelationTrace, free_trace: np.ndarray | CorrelationTrace
) -> CorrelationTrace:
    """Affine-rescale a trace against the free oracle's short-time values.

    Fits ``C -> c1 (C - c2)`` by least squares over the window
    ``t <= 1/J`` subject to the exact constraint ``C(0) = 1``; with
    ``u = C_raw - C_raw(0)`` the constrained optimum is closed-form,
    ``c1 = sum(u (C_free - 1)) / sum(u^2)``, ``c2 = C_raw(0) - 1/c1``.
    A flat window (or a vanishing slope) degrades to the identity map
    with a warning.
    """
    free = free_trace.c_raw if isinstance(free_trace, CorrelationTrace) else free_trace
    free = np.asarray(free, dtype=float)
    if free.shape != raw.times.shape:
        raise ConfigurationError("free-oracle trace must share the time grid")
    window = raw.times <= 1.0
    u = raw.c_raw[window] - raw.c_raw[0]
    g = free[window] - 1.0
    denom = float(u @ u)
    numer = float(u @ g)
    if denom <= 0.0 or numer == 0.0:
        warnings.warn("degenerate rescaling fit; keeping the raw trace", stacklevel=2)
        c1, c2 = 1.0, 0.0
    else:
        c1 = numer / denom
        c2 = float(raw.c_raw[0]) - 1.0 / c1
    return replace(
        raw, c_rescaled=c1 * (raw.c_raw - c2), c1=float(c1), c2=float(c2)
    )


def divergence_filter(
    traces: Iterable[CorrelationTrace], threshold: float = 1.1
) -> tuple[list[CorrelationTrace], float]:
    """Drop traces whose ``max |C(t)|`` exceeds ``threshold``.

    Marks every trace's ``diverged`` flag, returns the retained traces
    and the dropped fraction; an ensemble with nothing left raises
    :class:`~cutflow.errors.EmptyEnsembleError`.
    """
    traces = list(traces)
    kept: list[CorrelationTrace] = []
    for tr in traces:
        tr.diverged = bool(np.max(np.abs(tr.values())) > threshold)
        if not tr.diverged:
            kept.append(tr)
    if traces and not kept:
        raise EmptyEnsembleError(
            f"all {len(traces)} traces exceeded |C| > {threshold}"
        )
    frac = 0.0 if not traces else 1.0 - len(kept) / len(traces)
    return kept, frac
