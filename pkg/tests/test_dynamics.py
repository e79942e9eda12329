"""Tests for number-operator reconstruction, closed-form evolution, sampling."""

import numpy as np
import pytest

from cutflow.dynamics import (
    CorrelationTrace,
    EvolvedNumberOperator,
    OccupationEnsemble,
    correlation_trace,
    default_time_grid,
    divergence_filter,
    evolve,
    infinite_T_correlation,
    long_time_average,
    reconstruct_number_operator,
    rescale_trace,
    sector_dimension,
)
from cutflow.errors import CapacityError, ConfigurationError, EmptyEnsembleError
from cutflow.flow import DiagonalHamiltonian, FlowParams, initial_state, integrate_flow
from cutflow.lattice import ModelSpec, build_hamiltonian, sample_potential
from cutflow.opflow import FlowedCreationOperator
from cutflow.oracle import basis_states, fock_image, free_fermion_correlation


def bare_operator(n, site):
    a = np.zeros(n)
    a[site] = 1.0
    return FlowedCreationOperator(site=site, a=a, b=np.zeros((n, n, n)))


def flow_chain(n, d, delta0, seed, l_max):
    spec = ModelSpec(extent=n, interaction=delta0, disorder=d, seed=0)
    h = build_hamiltonian(spec, sample_potential(spec, seed=seed))
    site = n // 2
    state = initial_state(h, op_sites=(site,))
    diag, ops, _ = integrate_flow(state, FlowParams(l_max=l_max))
    return h, diag, FlowedCreationOperator.from_polynomial(ops[0], site), ops[0]


@pytest.fixture(scope="module")
def small_interacting():
    """L=4 fixed point, small enough for dense Fock cross-checks."""
    return flow_chain(4, 5.0, 0.2, seed=0, l_max=25.0)


def diagonal_data(h_tilde, delta=None):
    n = len(h_tilde)
    return DiagonalHamiltonian(
        h_tilde=np.asarray(h_tilde, dtype=float),
        delta=np.zeros((n, n)) if delta is None else np.asarray(delta, dtype=float),
        residual_offdiag2=0.0,
        residual_offdiag4=0.0,
        converged=True,
        l_final=0.0,
    )


# ---------------------------------------------------------------------------
# reconstruction
# ---------------------------------------------------------------------------


def test_reconstruct_bare_operator():
    rec = reconstruct_number_operator(bare_operator(5, 2))
    assert np.array_equal(rec.alpha, np.eye(5)[2])
    assert not np.any(rec.beta)
    assert not np.any(rec.gamma)
    assert rec.zeta is None and rec.order == 4
    rec6 = reconstruct_number_operator(bare_operator(5, 2), order=6)
    assert rec6.zeta is not None and not np.any(rec6.zeta)


def test_reconstruct_validates_order():
    with pytest.raises(ConfigurationError):
        reconstruct_number_operator(bare_operator(4, 0), order=5)
    with pytest.raises(CapacityError):
        reconstruct_number_operator(bare_operator(37, 0), order=6)


def test_reconstruction_matches_fock_product(small_interacting):
    # n_i(l) must be the literal operator product c+_i(l) c_i(l)
    _, _, fop, poly = small_interacting
    cdag = fock_image(poly)
    product = cdag @ cdag.conj().T
    rec = reconstruct_number_operator(fop, order=6)
    image = fock_image(rec.to_polynomial())
    assert np.max(np.abs(image - product)) < 1e-10


def test_diagonal_weight_near_unity():
    _, diag, fop, _ = flow_chain(8, 8.0, 0.1, seed=0, l_max=50.0)
    assert diag.converged
    rec = reconstruct_number_operator(fop)
    assert abs(np.sum(rec.alpha) - 1.0) < 1e-3


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------


def test_evolve_is_identity_at_t0(small_interacting):
    _, diag, fop, _ = small_interacting
    rec = reconstruct_number_operator(fop)
    out = evolve(rec, diag, 0.0)
    assert np.array_equal(out.alpha, rec.alpha)
    assert np.allclose(out.beta, rec.beta, atol=0.0)
    assert np.allclose(out.gamma, rec.gamma, atol=0.0)


def test_evolve_validations(small_interacting):
    _, diag, fop, _ = small_interacting
    rec = reconstruct_number_operator(fop)
    with pytest.raises(ConfigurationError):
        evolve(rec, diag, -1.0)
    later = evolve(rec, diag, 1.0)
    with pytest.raises(ConfigurationError):
        evolve(later, diag, 2.0)


def test_beta_moduli_and_alpha_static(small_interacting):
    _, diag, fop, _ = small_interacting
    rec = reconstruct_number_operator(fop)
    out = evolve(rec, diag, 7.3)
    assert np.max(np.abs(np.abs(out.beta) - np.abs(rec.beta))) < 1e-12
    assert np.array_equal(out.alpha, rec.alpha)


def test_free_limit_matches_free_oracle():
    # Delta_0 = 0: the quartic machinery is inert and the sampled trace
    # must collapse onto the quadratic propagator result
    spec = ModelSpec(extent=8, interaction=0.0, disorder=5.0, seed=0)
    h = build_hamiltonian(spec, sample_potential(spec, seed=4))
    h2 = h.block(2).copy()
    state = initial_state(h, op_sites=(4,))
    diag, ops, _ = integrate_flow(state, FlowParams(l_max=300.0))
    assert diag.converged
    rec = reconstruct_number_operator(FlowedCreationOperator.from_polynomial(ops[0], 4))
    times = np.concatenate([[0.0], np.geomspace(0.1, 1e3, 60)])
    trace = correlation_trace(rec, diag, times=times, n_samples=sector_dimension(8))
    oracle = free_fermion_correlation(h2, 4, times)
    assert np.max(np.abs(trace.c_raw - oracle)) < 1e-4


def test_degenerate_pair_evolves_linearly():
    """An exact level degeneracy switches the quartic correction to the
    linear-in-t branch."""
    n = 5
    g, b = 0.21, 0.37
    h_tilde = [0.4, 1.1, 2.0, 2.0, -0.6]
    delta = np.zeros((n, n))
    delta[0, 2] = delta[2, 0] = g
    delta[0, 3] = delta[3, 0] = -g
    beta = np.zeros((n, n))
    beta[2, 3] = beta[3, 2] = b
    rec = EvolvedNumberOperator(
        site=0, t=0.0, alpha=np.zeros(n), beta=beta, gamma=np.zeros((n,) * 4)
    )
    diag = diagonal_data(h_tilde, delta)
    for t in (5.0, 17.0):
        out = evolve(rec, diag, t)
        assert abs(out.gamma[0, 0, 2, 3] - 1j * g * b * t) < 1e-12


def test_sextic_block_is_pure_phase():
    n = 4
    h_tilde = np.array([0.3, -1.2, 2.7, 0.9])
    zeta = np.zeros((n,) * 6, dtype=float)
    zeta[0, 1, 2, 3, 0, 1] = 0.77
    rec = EvolvedNumberOperator(
        site=0,
        t=0.0,
        alpha=np.zeros(n),
        beta=np.zeros((n, n)),
        gamma=np.zeros((n,) * 4),
        zeta=zeta,
    )
    t = 3.9
    out = evolve(rec, diagonal_data(h_tilde), t)
    omega = h_tilde[0] - h_tilde[1] + h_tilde[2] - h_tilde[3] + h_tilde[0] - h_tilde[1]
    expect = 0.77 * np.exp(1j * omega * t)
    assert abs(out.zeta[0, 1, 2, 3, 0, 1] - expect) < 1e-12
    out.zeta[0, 1, 2, 3, 0, 1] = 0.0
    assert not np.any(out.zeta)


def test_evolved_fock_image_stays_hermitian(small_interacting):
    _, diag, fop, _ = small_interacting
    rec = reconstruct_number_operator(fop, order=6)
    for t in (0.0, 3.7, 410.0):
        out = rec if t == 0.0 else evolve(rec, diag, t)
        image = fock_image(out.to_polynomial())
        assert np.max(np.abs(image - image.conj().T)) < 1e-10


def test_long_time_average_projects_static_slots(small_interacting):
    _, diag, fop, _ = small_interacting
    rec = reconstruct_number_operator(fop, order=6)
    avg = long_time_average(rec)
    assert np.array_equal(avg.alpha, rec.alpha)
    assert not np.any(avg.beta)
    idx = np.arange(4)
    dens = avg.gamma[idx[:, None], idx[:, None], idx[None, :], idx[None, :]]
    expect = rec.gamma[idx[:, None], idx[:, None], idx[None, :], idx[None, :]]
    assert np.array_equal(dens, expect)
    killed = avg.gamma.copy()
    killed[idx[:, None], idx[:, None], idx[None, :], idx[None, :]] = 0.0
    assert not np.any(killed)
    assert avg.zeta is not None and np.any(avg.zeta)
    with pytest.raises(ConfigurationError):
        long_time_average(evolve(rec, diag, 1.0))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def test_exhaustive_sampler_equals_sector_trace(small_interacting):
    """Wick-contraction sampling over the full sector is a disguised trace."""
    _, diag, fop, _ = small_interacting
    rec = reconstruct_number_operator(fop)
    dim = sector_dimension(4)
    ens = OccupationEnsemble(4, dim)
    assert ens.exhaustive
    sector = basis_states(4, 2)
    n0_img = fock_image(rec.to_polynomial())[np.ix_(sector, sector)]
    for t in (0.0, 2.2, 31.0):
        n_t = rec if t == 0.0 else evolve(rec, diag, t)
        sampled = infinite_T_correlation(n_t, rec, ensemble=ens)
        nt_img = fock_image(n_t.to_polynomial())[np.ix_(sector, sector)]
        half = np.trace(nt_img @ n0_img).real / dim
        one_t = np.trace(nt_img).real / dim
        one_0 = np.trace(n0_img).real / dim
        exact = 4.0 * (half - 0.5 * one_t - 0.5 * one_0 + 0.25)
        assert abs(sampled - exact) < 1e-10


def test_subsample_tracks_exhaustive_within_noise():
    _, diag, fop, _ = flow_chain(10, 6.0, 0.1, seed=1, l_max=30.0)
    rec = reconstruct_number_operator(fop)
    times = np.concatenate([[0.0], np.geomspace(0.1, 100.0, 12)])
    full = correlation_trace(rec, diag, times=times, n_samples=sector_dimension(10))
    sub = correlation_trace(rec, diag, times=times, n_samples=64, seed=0)
    assert np.max(np.abs(sub.c_raw - full.c_raw)) < 0.1


def test_untransformed_operator_gives_unit_trace():
    # n_i commutes with a diagonal Hamiltonian: C(t) = 1 identically
    rec = reconstruct_number_operator(bare_operator(6, 3))
    diag = diagonal_data([0.3, -0.9, 1.7, 0.2, -1.1, 0.8])
    trace = correlation_trace(rec, diag, n_samples=sector_dimension(6))
    assert trace.times[0] == 0.0
    assert np.max(np.abs(trace.c_raw - 1.0)) < 1e-12


def test_half_filling_requires_even_sites():
    with pytest.raises(ConfigurationError):
        OccupationEnsemble(5, 10)


def test_sampler_clamps_to_sector_dimension():
    with pytest.warns(UserWarning, match="clamping"):
        ens = OccupationEnsemble(4, 100)
    assert ens.n_samples == 6
    assert ens.exhaustive


def test_mismatched_lattices_rejected():
    a = reconstruct_number_operator(bare_operator(4, 1))
    b = reconstruct_number_operator(bare_operator(6, 1))
    with pytest.raises(ConfigurationError):
        infinite_T_correlation(a, b)


# ---------------------------------------------------------------------------
# rescaling and filtering
# ---------------------------------------------------------------------------


def synthetic_trace(times, values):
    return CorrelationTrace(times=times, c_raw=np.asarray(values, dtype=float))


def test_rescale_inverts_affine_distortion():
    times = default_time_grid(n_points=80)
    spec = ModelSpec(extent=8, interaction=0.0, disorder=3.0, seed=0)
    h = build_hamiltonian(spec, sample_potential(spec, seed=7))
    free = free_fermion_correlation(h.block(2), 4, times)
    a, b = 0.85, 0.06
    raw = synthetic_trace(times, a * free + b)
    out = rescale_trace(raw, free)
    assert out.c1 == pytest.approx(1.0 / a, rel=1e-8)
    assert out.c2 == pytest.approx(b, abs=1e-8)
    assert np.max(np.abs(out.c_rescaled - free)) < 1e-8
    assert out.c_rescaled[0] == pytest.approx(1.0, abs=1e-12)


def test_rescale_flat_trace_degrades_with_warning():
    times = default_time_grid(n_points=20)
    raw = synthetic_trace(times, np.full(times.shape, 0.4))
    with pytest.warns(UserWarning, match="degenerate"):
        out = rescale_trace(raw, np.ones(times.shape))
    assert out.c1 == 1.0 and out.c2 == 0.0
    assert np.array_equal(out.c_rescaled, raw.c_raw)


def test_rescale_rejects_mismatched_grid():
    raw = synthetic_trace(np.array([0.0, 0.1, 1.0]), [1.0, 0.9, 0.5])
    with pytest.raises(ConfigurationError):
        rescale_trace(raw, np.ones(5))


def test_divergence_filter_flags_and_drops():
    times = np.array([0.0, 1.0, 10.0])
    good = synthetic_trace(times, [1.0, 0.7, 0.4])
    bad = synthetic_trace(times, [1.0, 1.4, 0.2])
    kept, frac = divergence_filter([good, bad])
    assert kept == [good]
    assert frac == pytest.approx(0.5)
    assert not good.diverged and bad.diverged
    with pytest.raises(EmptyEnsembleError):
        divergence_filter([bad])
    kept, frac = divergence_filter([])
    assert kept == [] and frac == 0.0


def test_divergence_filter_threshold_adjustable():
    times = np.array([0.0, 1.0])
    tr = synthetic_trace(times, [1.0, 1.4])
    kept, frac = divergence_filter([tr], threshold=1.5)
    assert kept == [tr] and frac == 0.0
