"""Lattice construction: potentials, snake mapping, Hamiltonian blocks."""

import numpy as np
import pytest

from cutflow.errors import ConfigurationError
from cutflow.lattice import ModelSpec, build_hamiltonian, sample_potential, snake_map

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


def test_quasi_periodic_phase_zero_first_site():
    # h_i = d cos(2 pi i / phi + theta); at i=0, theta=0 this is exactly d
    spec = ModelSpec(extent=4, family="quasi-periodic", disorder=1.0)
    pot = sample_potential(spec, seed=0)
    expected = 1.0 * np.cos(2.0 * np.pi * np.arange(4) / GOLDEN + pot.theta)
    np.testing.assert_allclose(pot.h, expected, atol=1e-12)


def test_quasi_periodic_uses_golden_ratio():
    spec = ModelSpec(extent=64, family="quasi-periodic", disorder=2.0)
    pot = sample_potential(spec, seed=3)
    # reconstruct the modulation wavenumber from three consecutive sites:
    # h_{i+1} + h_{i-1} = 2 cos(2 pi / phi) h_i for a pure cosine
    h = pot.h
    lhs = h[2:] + h[:-2]
    coef = float(np.linalg.lstsq(h[1:-1, None], lhs, rcond=None)[0][0])
    assert abs(coef / 2.0 - np.cos(2.0 * np.pi / GOLDEN)) < 1e-10


def test_box_family_bounds_and_mean():
    spec = ModelSpec(extent=10_000, family="random-box", disorder=5.0)
    pot = sample_potential(spec, seed=11)
    assert pot.h.min() >= -5.0
    assert pot.h.max() <= 5.0
    # mean of U(-5,5) has sigma = 5/sqrt(3)/sqrt(n)
    sigma = 5.0 / np.sqrt(3.0) / np.sqrt(10_000)
    assert abs(pot.h.mean()) < 3.0 * sigma


def test_quasi_periodic_2d_bound():
    spec = ModelSpec(dims=2, extent=(5, 5), family="quasi-periodic", disorder=3.0)
    pot = sample_potential(spec, seed=2)
    assert np.max(np.abs(pot.h)) <= 2.0 * 3.0 + 1e-12


def test_potential_deterministic_in_seed():
    spec = ModelSpec(extent=12, family="quasi-periodic", disorder=4.0)
    a = sample_potential(spec, seed=9)
    b = sample_potential(spec, seed=9)
    np.testing.assert_array_equal(a.h, b.h)


def test_unknown_family_rejected():
    with pytest.raises(ConfigurationError):
        ModelSpec(extent=4, family="gaussian")


def test_snake_map_hand_values():
    assert snake_map(0, 0, 3) == 0
    assert snake_map(2, 1, 3) == 3  # second row runs right-to-left


@pytest.mark.parametrize("lx,ly", [(2, 2), (3, 5), (8, 8), (5, 3)])
def test_snake_map_bijective(lx, ly):
    images = {snake_map(ix, iy, lx) for iy in range(ly) for ix in range(lx)}
    assert images == set(range(lx * ly))


def test_two_site_hopping_hamiltonian():
    spec = ModelSpec(extent=2, hopping=1.0, interaction=0.0, disorder=0.0)
    pot = sample_potential(spec, seed=0)
    h = build_hamiltonian(spec, pot)
    np.testing.assert_allclose(h.block(2), [[0.0, 1.0], [1.0, 0.0]], atol=1e-15)
    assert h.block(4) is None or not np.any(h.block(4))


def test_rank4_density_slot_convention():
    # each bond's interaction sits once at (i, i, j, j) with i < j
    spec = ModelSpec(extent=4, interaction=0.25, disorder=1.0)
    h = build_hamiltonian(spec, sample_potential(spec, seed=5))
    g = h.block(4)
    for i, j in [(0, 1), (1, 2), (2, 3)]:
        assert g[i, i, j, j] == pytest.approx(0.25)
    filled = np.argwhere(g != 0)
    assert len(filled) == 3


def test_rank2_symmetric_nearest_neighbor():
    spec = ModelSpec(extent=9, disorder=2.0, seed=1)
    h2 = build_hamiltonian(spec, sample_potential(spec, seed=1)).block(2)
    np.testing.assert_array_equal(h2, h2.T)
    off = h2 - np.diag(np.diag(h2))
    i, j = np.nonzero(off)
    assert np.all(np.abs(i - j) == 1)


def test_2d_bond_through_snake_indices():
    # 2x2 lattice: geometric bond (1,0)-(1,1) lands between snake sites 1 and 2
    spec = ModelSpec(dims=2, extent=(2, 2), hopping=1.0, disorder=0.0)
    h2 = build_hamiltonian(spec, sample_potential(spec, seed=0)).block(2)
    assert h2[1, 2] == pytest.approx(1.0)
    assert h2[0, 3] == pytest.approx(1.0)  # vertical bond (0,0)-(0,1)


def test_2d_interactions_on_all_geometric_bonds():
    spec = ModelSpec(dims=2, extent=(3, 3), interaction=0.1, disorder=1.0)
    g = build_hamiltonian(spec, sample_potential(spec, seed=4)).block(4)
    # 3x3 open lattice has 12 nearest-neighbor bonds
    assert np.count_nonzero(g) == 12


def test_fock_image_matches_direct_construction():
    from cutflow.oracle import fock_image

    spec = ModelSpec(extent=4, interaction=0.3, disorder=2.0)
    pot = sample_potential(spec, seed=7)
    h = build_hamiltonian(spec, pot)
    mat = fock_image(h)

    # build the same matrix from the second-quantized definition
    dim = 16
    ref = np.zeros((dim, dim))

    def parity(state, site):
        return (-1) ** bin(state & ((1 << site) - 1)).count("1")

    def apply_hop(state, i, j):
        # c^dag_i c_j |state>
        if not (state >> j) & 1:
            return None
        sgn = parity(state, j)
        mid = state & ~(1 << j)
        if (mid >> i) & 1:
            return None
        return mid | (1 << i), sgn * parity(mid, i)

    h2 = h.block(2)
    for s in range(dim):
        for i in range(4):
            for j in range(4):
                if h2[i, j] == 0.0:
                    continue
                out = apply_hop(s, i, j)
                if out is not None:
                    ref[out[0], s] += h2[i, j] * out[1]
        for i, j in [(0, 1), (1, 2), (2, 3)]:
            if ((s >> i) & 1) and ((s >> j) & 1):
                ref[s, s] += 0.3
    np.testing.assert_allclose(mat, ref, atol=1e-12)
