"""Exact small-system references: Fock images, spectra, correlators.

Everything here works in the full ``2^N`` occupation-number basis (or a
fixed-filling sector of it) and is exact up to floating point.  These
routines exist to validate the tensor-algebra pipeline and are guarded
to small ``N``; nothing in the production flow depends on them.

Basis conventions: basis state ``s`` is an integer whose bit ``b`` is
the occupation of mode ``b``, and ``c^dag_b |s> = (-1)^(popcount of bits
below b) |s + 2^b>`` (Jordan-Wigner phase counting set bits below ``b``).
"""

from __future__ import annotations

import numpy as np

from .errors import CapacityError
from .opalg import wick
from .opalg.poly import OperatorPolynomial

__all__ = [
    "basis_states",
    "fock_image",
    "exact_spectrum",
    "exact_correlation",
    "typicality_correlation",
    "free_fermion_correlation",
]

_MAX_FULL_SITES = 14
_MAX_RANK6_SITES = 8
_ENTRY_CHUNK = 1 << 21  # cap on (entries x states) elements touched at once


def basis_states(n_sites: int, filling: int | None = None) -> np.ndarray:
    """All basis states (as ints), optionally restricted to a particle number."""
    states = np.arange(1 << n_sites, dtype=np.int64)
    if filling is None:
        return states
    return states[np.bitwise_count(states) == filling]


def _apply_block(
    mat: np.ndarray,
    pattern: tuple[str, ...],
    tensor: np.ndarray,
    in_states: np.ndarray,
    row_of: np.ndarray | None,
) -> None:
    """Accumulate the image of one normal-ordered block onto ``mat``.

    Vectorized over (tensor entries) x (basis states): each monomial is
    brought to creations-first order once (global sign), then its ladder
    operators are applied right-to-left to every basis state at once,
    tracking Jordan-Wigner signs and Pauli deaths.
    """
    nz = np.nonzero(tensor)
    vals = tensor[nz]
    if vals.size == 0:
        return
    sign0, order = wick.true_normal(pattern)
    n_states = in_states.size
    chunk = max(1, _ENTRY_CHUNK // max(1, n_states))
    cols_full = np.arange(n_states, dtype=np.int64)
    for start in range(0, vals.size, chunk):
        sl = slice(start, start + chunk)
        v = vals[sl]
        cur = np.broadcast_to(in_states, (v.size, n_states)).copy()
        sgn = np.ones((v.size, n_states), dtype=np.int8)
        alive = np.ones((v.size, n_states), dtype=bool)
        for t_pos in reversed(range(len(pattern))):
            slot = order[t_pos]
            creation = t_pos < pattern.count("+")
            modes = nz[slot][sl].astype(np.int64)[:, None]
            bit = np.int64(1) << modes
            occ = (cur & bit) != 0
            par = (np.bitwise_count(cur & (bit - 1)) & 1).astype(np.int8)
            if creation:
                alive &= ~occ
                cur = cur | bit
            else:
                alive &= occ
                cur = cur & ~bit
            sgn = sgn * (1 - 2 * par)
        contrib = (v[:, None] * sgn) * sign0
        rows = cur if row_of is None else row_of[cur]
        cols = np.broadcast_to(cols_full, (v.size, n_states))
        keep = alive
        if row_of is not None:
            in_basis = rows >= 0
            if not np.array_equal(keep & in_basis, keep):
                raise ValueError("operator maps states outside the requested basis")
        np.add.at(mat, (rows[keep], cols[keep]), contrib[keep])


def fock_image(
    op: OperatorPolynomial, basis: np.ndarray | None = None
) -> np.ndarray:
    """Dense matrix of an operator polynomial in the occupation basis.

    Parameters
    ----------
    op : OperatorPolynomial
        Operator to materialize.
    basis : ndarray of int, optional
        Basis states spanning an invariant subspace (e.g. a filling
        sector from :func:`basis_states`).  Default: the full ``2^N``
        space, guarded to ``N <= 14`` (``N <= 8`` if a rank-6 block is
        present).

    Returns
    -------
    ndarray
        ``(D, D)`` matrix ``M[out, in]`` with ``D = len(basis)``.
    """
    n = op.n_sites
    if basis is None:
        if n > _MAX_FULL_SITES:
            raise CapacityError(
                f"full Fock image limited to N <= {_MAX_FULL_SITES}, got {n}"
            )
        if 6 in op.blocks and n > _MAX_RANK6_SITES:
            raise CapacityError(
                f"rank-6 Fock image limited to N <= {_MAX_RANK6_SITES}, got {n}"
            )
        basis = np.arange(1 << n, dtype=np.int64)
        row_of = None
    else:
        basis = np.asarray(basis, dtype=np.int64)
        row_of = np.full(1 << n, -1, dtype=np.int64)
        row_of[basis] = np.arange(basis.size)
    is_complex = any(np.iscomplexobj(a) for a in op.blocks.values())
    dtype = np.complex128 if is_complex else np.float64
    mat = np.zeros((basis.size, basis.size), dtype=dtype)
    for rank, tensor in op.items():
        if rank == 0:
            mat[np.arange(basis.size), np.arange(basis.size)] += tensor.item()
            continue
        pattern = (
            wick.canonical_pattern(rank // 2, rank // 2)
            if op.parity == "even"
            else wick.canonical_pattern((rank + 1) // 2, rank // 2)
        )
        _apply_block(mat, pattern, tensor, basis, row_of)
    return mat


def _check_hermitian(mat: np.ndarray, tol: float = 1e-9) -> None:
    scale = 1.0 + float(np.max(np.abs(mat))) if mat.size else 1.0
    dev = float(np.max(np.abs(mat - mat.conj().T))) if mat.size else 0.0
    if dev > tol * scale:
        raise ValueError(f"Fock image is not Hermitian (deviation {dev:.3e})")


def exact_spectrum(
    h: OperatorPolynomial, filling: int | None = None
) -> np.ndarray:
    """Sorted eigenvalues of the Fock image, optionally in one filling sector."""
    basis = None if filling is None else basis_states(h.n_sites, filling)
    mat = fock_image(h, basis)
    _check_hermitian(mat)
    return np.linalg.eigvalsh(mat)


def _sector_number_op(basis: np.ndarray, site: int) -> np.ndarray:
    """Diagonal of n_site over the given basis states."""
    return ((basis >> site) & 1).astype(np.float64)


def exact_correlation(
    h: OperatorPolynomial,
    site: int,
    t_grid: np.ndarray,
    filling: int | None = None,
) -> np.ndarray:
    """Exact infinite-temperature autocorrelation of ``n_site``.

    Evaluates ``C(t) = 4 [ tr(n_i(t) n_i)/D - tr(n_i(t))/2D - tr(n_i)/2D
    + 1/4 ]`` by full diagonalization in the half-filled sector (default)
    or the full space (``filling=None`` uses every sector at once).
    """
    n = h.n_sites
    if filling is None:
        filling = n // 2
        if n % 2:
            raise ValueError("half filling undefined for odd N; pass filling explicitly")
    basis = basis_states(n, filling)
    mat = fock_image(h, basis)
    _check_hermitian(mat)
    energies, vecs = np.linalg.eigh(mat)
    n_diag = _sector_number_op(basis, site)
    # matrix elements of n_i between eigenstates
    m = vecs.conj().T @ (n_diag[:, None] * vecs)
    w = np.abs(m) ** 2
    d = basis.size
    mean_n = float(n_diag.sum()) / d
    t_grid = np.asarray(t_grid, dtype=np.float64)
    out = np.empty(t_grid.size, dtype=np.float64)
    gaps = energies[:, None] - energies[None, :]
    for k, t in enumerate(t_grid):
        out[k] = float(np.sum(w * np.cos(gaps * t))) / d
    return 4.0 * (out - mean_n * mean_n)


def typicality_correlation(
    h: OperatorPolynomial,
    site: int,
    t_grid: np.ndarray,
    seed: int,
    filling: int | None = None,
) -> np.ndarray:
    """Stochastic-trace estimate of the infinite-temperature autocorrelation.

    Draws one Gaussian random vector in the half-filled sector per call
    (seeded), and estimates ``tr(n_i(t) n_i)/D`` and the one-point traces
    from it; the estimator error decays with the sector dimension.
    Guarded to ``N <= 14``.
    """
    n = h.n_sites
    if n > _MAX_FULL_SITES:
        raise CapacityError(f"typicality oracle limited to N <= {_MAX_FULL_SITES}")
    if filling is None:
        if n % 2:
            raise ValueError("half filling undefined for odd N; pass filling explicitly")
        filling = n // 2
    basis = basis_states(n, filling)
    mat = fock_image(h, basis)
    _check_hermitian(mat)
    energies, vecs = np.linalg.eigh(mat)
    rng = np.random.default_rng(seed)
    d = basis.size
    phi = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    norm2 = float(np.vdot(phi, phi).real)
    n_diag = _sector_number_op(basis, site)
    psi = n_diag * phi
    a = vecs.conj().T @ phi
    b = vecs.conj().T @ psi
    t_grid = np.asarray(t_grid, dtype=np.float64)
    out = np.empty(t_grid.size, dtype=np.float64)
    mean_n0 = float(np.vdot(phi, n_diag * phi).real) / norm2
    for k, t in enumerate(t_grid):
        phase = np.exp(-1j * energies * t)
        phi_t = vecs @ (phase * a)
        psi_t = vecs @ (phase * b)
        corr = np.vdot(phi_t, n_diag * psi_t) / norm2
        mean_nt = float(np.vdot(phi_t, n_diag * phi_t).real) / norm2
        out[k] = 4.0 * (corr.real - 0.5 * mean_nt - 0.5 * mean_n0 + 0.25)
    return out


def free_fermion_correlation(
    h2: np.ndarray | OperatorPolynomial,
    site: int,
    t_grid: np.ndarray,
) -> np.ndarray:
    """Exact autocorrelation of a quadratic Hamiltonian at infinite temperature.

    For ``H = sum h_ab c^dag_a c_b`` the single-particle propagator
    ``G(t) = exp(i h t)`` fixes the half-filled-ensemble autocorrelation
    exactly: with ``x = |G_ii(t)|^2``,

        ``C(t) = (N x - 1) / (N - 1)``.

    This is the ensemble matching :func:`exact_correlation` and the
    production sampler, so interacting results converge onto it as the
    interaction is switched off.
    """
    if isinstance(h2, OperatorPolynomial):
        blk = h2.block(2)
        if blk is None:
            raise ValueError("polynomial has no quadratic block")
        if 4 in h2.blocks and np.max(np.abs(h2.blocks[4])) > 0:
            raise ValueError("free-fermion oracle requires a quadratic Hamiltonian")
        h2 = blk
    h2 = np.asarray(h2, dtype=np.float64)
    n = h2.shape[0]
    w, u = np.linalg.eigh(h2)
    weights = u[site, :] ** 2
    t_grid = np.asarray(t_grid, dtype=np.float64)
    phases = np.exp(1j * np.outer(t_grid, w))
    g_ii = phases @ weights
    x = np.abs(g_ii) ** 2
    return (n * x - 1.0) / (n - 1.0)
