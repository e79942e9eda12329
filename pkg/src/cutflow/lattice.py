"""Model Hamiltonians: disordered chains and snake-mapped 2D lattices.

Builds the spinless-fermion Hamiltonian

    H = sum_i h_i :n_i: + J sum_<ij> (:c^dag_i c_j: + h.c.)
        + Delta_0 sum_<ij> :n_i n_j:

with open boundaries, on a 1D chain or on a 2D rectangle unfolded to a
chain by boustrophedon ("snake") ordering, in which case vertical bonds
appear as correlated long-range hoppings.  On-site energies come from a
uniform box or from an incommensurate cosine (quasi-periodic) potential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .opalg.poly import OperatorPolynomial

__all__ = [
    "ModelSpec",
    "SitePotential",
    "sample_potential",
    "snake_map",
    "build_hamiltonian",
    "GOLDEN_RATIO",
    "SILVER_RATIO",
]

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0
SILVER_RATIO = 1.0 + math.sqrt(2.0)

_FAMILIES = ("random-box", "quasi-periodic")


@dataclass(frozen=True)
class ModelSpec:
    """Geometry, couplings and disorder family of one model.

    Parameters
    ----------
    dims : int
        1 for a chain, 2 for a rectangle (unfolded by :func:`snake_map`).
    extent : int | tuple[int, int]
        Sites per axis: ``L`` in 1D, ``(Lx, Ly)`` in 2D.
    hopping : float
        Nearest-neighbor hopping ``J`` (energy units).
    interaction : float
        Nearest-neighbor density-density coupling ``Delta_0``.
    family : str
        ``"random-box"`` (uniform on ``[-d, d]``) or ``"quasi-periodic"``
        (incommensurate cosine).
    disorder : float
        Disorder strength ``d``.
    boundary : str
        Only ``"open"`` is supported.
    seed : int
        Default seed for :func:`sample_potential`.
    """

    dims: int = 1
    extent: int | tuple[int, int] = 8
    hopping: float = 1.0
    interaction: float = 0.1
    family: str = "random-box"
    disorder: float = 5.0
    boundary: str = "open"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dims not in (1, 2):
            raise ConfigurationError(f"dims must be 1 or 2, got {self.dims}")
        if self.dims == 2:
            ext = self.extent
            if not (isinstance(ext, tuple) and len(ext) == 2):
                raise ConfigurationError("2D extent must be a (Lx, Ly) tuple")
            if ext[0] < 2 or ext[1] < 2:
                raise ConfigurationError("2D extents must be >= 2")
        else:
            if not isinstance(self.extent, int):
                raise ConfigurationError("1D extent must be an int")
            if self.extent < 2:
                raise ConfigurationError("need at least 2 sites")
        if self.hopping < 0 or self.disorder < 0:
            raise ConfigurationError("J and d must be non-negative")
        if self.boundary != "open":
            raise ConfigurationError(f"unsupported boundary {self.boundary!r}")
        if self.family not in _FAMILIES:
            raise ConfigurationError(
                f"unknown disorder family {self.family!r}; choose from {_FAMILIES}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        """(Lx, Ly) with Ly = 1 in 1D."""
        if self.dims == 1:
            return (int(self.extent), 1)
        return self.extent  # type: ignore[return-value]

    @property
    def n_sites(self) -> int:
        lx, ly = self.shape
        return lx * ly


@dataclass(frozen=True)
class SitePotential:
    """On-site energies of one disorder realization.

    ``theta``/``theta2`` hold the phases that generated a quasi-periodic
    potential (NaN for the box family), making realizations reproducible
    from metadata alone.
    """

    h: np.ndarray
    theta: float = math.nan
    theta2: float = math.nan


def sample_potential(spec: ModelSpec, seed: int | None = None) -> SitePotential:
    """Draw one disorder realization for ``spec``.

    Box family: ``h_i`` i.i.d. uniform on ``[-d, d]``.  Quasi-periodic:
    ``h_i = d cos(2 pi i / phi + theta)`` with the golden ratio ``phi``
    (1D); in 2D an independent cosine with the silver ratio and its own
    phase is added per axis, so ``|h_i| <= 2d``.  Phases are uniform on
    ``[0, 2 pi)`` and drawn independently.
    """
    if seed is None:
        seed = spec.seed
    rng = np.random.default_rng(seed)
    lx, ly = spec.shape
    n = lx * ly
    if spec.family == "random-box":
        h = rng.uniform(-spec.disorder, spec.disorder, size=n)
        return SitePotential(h=h)
    theta = float(rng.uniform(0.0, 2.0 * math.pi))
    if spec.dims == 1:
        i = np.arange(n)
        h = spec.disorder * np.cos(2.0 * math.pi * i / GOLDEN_RATIO + theta)
        return SitePotential(h=h, theta=theta)
    theta2 = float(rng.uniform(0.0, 2.0 * math.pi))
    h = np.empty(n)
    for iy in range(ly):
        for ix in range(lx):
            val = spec.disorder * (
                math.cos(2.0 * math.pi * ix / GOLDEN_RATIO + theta)
                + math.cos(2.0 * math.pi * iy / SILVER_RATIO + theta2)
            )
            h[snake_map(ix, iy, lx)] = val
    return SitePotential(h=h, theta=theta, theta2=theta2)


def snake_map(ix: int, iy: int, lx: int) -> int:
    """Boustrophedon index of 2D site ``(ix, iy)`` on a width-``lx`` lattice.

    Even rows run left-to-right, odd rows right-to-left, so consecutive
    1D indices are always nearest neighbors in 2D.
    """
    if not (0 <= ix < lx) or iy < 0:
        raise IndexError(f"coordinates ({ix}, {iy}) out of range for Lx={lx}")
    return iy * lx + (ix if iy % 2 == 0 else lx - 1 - ix)


def _bonds(spec: ModelSpec) -> list[tuple[int, int]]:
    """Nearest-neighbor bonds as 1D index pairs (i < j), open boundaries."""
    lx, ly = spec.shape
    bonds: list[tuple[int, int]] = []
    if spec.dims == 1:
        bonds = [(i, i + 1) for i in range(lx - 1)]
        return bonds
    for iy in range(ly):
        for ix in range(lx):
            a = snake_map(ix, iy, lx)
            if ix + 1 < lx:
                b = snake_map(ix + 1, iy, lx)
                bonds.append((min(a, b), max(a, b)))
            if iy + 1 < ly:
                b = snake_map(ix, iy + 1, lx)
                bonds.append((min(a, b), max(a, b)))
    bonds.sort()
    return bonds


def build_hamiltonian(spec: ModelSpec, pot: SitePotential) -> OperatorPolynomial:
    """Assemble the normal-ordered Hamiltonian for one realization.

    The rank-2 block carries ``h_i`` on its diagonal and ``J`` on every
    nearest-neighbor bond (long-range entries after snake mapping); the
    rank-4 block carries ``Delta_0`` once per bond on the density slot
    ``(i, i, j, j)`` with ``i < j``.
    """
    n = spec.n_sites
    if pot.h.shape != (n,):
        raise ConfigurationError(
            f"potential has {pot.h.shape[0]} sites, spec wants {n}"
        )
    h2 = np.diag(pot.h.astype(np.float64))
    for i, j in _bonds(spec):
        h2[i, j] = spec.hopping
        h2[j, i] = spec.hopping
    blocks = {2: h2}
    if spec.interaction != 0.0:
        h4 = np.zeros((n, n, n, n))
        for i, j in _bonds(spec):
            h4[i, i, j, j] = spec.interaction
        blocks[4] = h4
    return OperatorPolynomial(n_sites=n, parity="even", blocks=blocks)
