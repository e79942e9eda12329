"""Operator-polynomial algebra against the brute-force Fock oracle."""

import io

import numpy as np
import pytest

from cutflow.opalg import (
    OperatorPolynomial,
    canonicalize_rank4,
    commutator,
    diagonal_part,
    dump_polynomial,
    dumps_polynomial,
    fock_trace,
    frobenius_norm,
    load_polynomial,
    loads_polynomial,
    max_abs,
    off_diagonal_part,
    support_rms_norm,
)
from cutflow.oracle import fock_image


def random_even(rng, n, ranks=(2, 4), scale=1.0):
    blocks = {}
    for r in ranks:
        blocks[r] = scale * rng.standard_normal((n,) * r)
    return OperatorPolynomial(n, "even", blocks)


def random_odd(rng, n, ranks=(1, 3)):
    return OperatorPolynomial(n, "odd", {r: rng.standard_normal((n,) * r) for r in ranks})


# ---------------------------------------------------------------------------
# norms


def test_frobenius_norm_zero_block():
    h = OperatorPolynomial(4, "even", {2: np.zeros((4, 4))})
    assert frobenius_norm(h, 2) == 0.0


def test_frobenius_norm_identity():
    h = OperatorPolynomial(4, "even", {2: np.eye(4)})
    assert frobenius_norm(h, 2) == pytest.approx(2.0)


def test_frobenius_norm_matches_independent_accumulation():
    rng = np.random.default_rng(42)
    t = rng.standard_normal((3, 3, 3, 3))
    h = OperatorPolynomial(3, "even", {4: t})
    acc = 0.0
    for v in t.ravel()[::-1]:  # reversed accumulation order
        acc += v * v
    assert frobenius_norm(h, 4) ** 2 == pytest.approx(acc, rel=1e-12)


def test_support_rms_norm_ignores_zeros():
    a = np.zeros(10)
    a[3] = 2.0
    a[7] = 2.0
    assert support_rms_norm(a) == pytest.approx(2.0)
    assert support_rms_norm(np.zeros(5)) == 0.0


# ---------------------------------------------------------------------------
# diagonal / off-diagonal split


def test_off_diagonal_of_diagonal_is_zero():
    h = OperatorPolynomial(3, "even", {2: np.diag([1.0, 2.0, 3.0])})
    v = off_diagonal_part(h)
    assert max_abs(v, 2) == 0.0


def test_split_is_a_partition():
    rng = np.random.default_rng(0)
    h = random_even(rng, 4)
    h.blocks[4] = canonicalize_rank4(h.blocks[4])
    h0 = diagonal_part(h)
    v = off_diagonal_part(h)
    for rank in (2, 4):
        np.testing.assert_allclose(
            h0.block(rank) + v.block(rank), h.block(rank), atol=1e-14
        )


def test_hopping_offdiagonal_entries():
    h = OperatorPolynomial(2, "even", {2: np.array([[0.3, 1.0], [1.0, -0.2]])})
    v = off_diagonal_part(h).block(2)
    assert np.count_nonzero(v) == 2
    assert v[0, 1] == 1.0 and v[1, 0] == 1.0


# ---------------------------------------------------------------------------
# commutator: small closed forms


def test_commuting_diagonals():
    x = OperatorPolynomial(3, "even", {2: np.diag([1.0, 2.0, 3.0])})
    y = OperatorPolynomial(3, "even", {2: np.diag([5.0, -1.0, 0.5])})
    out = commutator(x, y, max_rank=4)
    assert frobenius_norm(out) < 1e-15


def test_rank2_rank2_matrix_commutator_plus_reorder():
    # [A, B] on quadratic strings is the matrix commutator in the
    # single-index slots plus scalar/diagonal reorder byproducts; on the
    # off-diagonal entries it must equal AB - BA exactly.
    rng = np.random.default_rng(7)
    a = rng.standard_normal((5, 5))
    b = rng.standard_normal((5, 5))
    out = commutator(
        OperatorPolynomial(5, "even", {2: a}),
        OperatorPolynomial(5, "even", {2: b}),
        max_rank=4,
    )
    np.testing.assert_allclose(out.block(2), a @ b - b @ a, atol=1e-12)


def test_parity_conservation():
    rng = np.random.default_rng(1)
    x = random_even(rng, 3)
    assert commutator(x, random_even(rng, 3), 4).parity == "even"
    assert commutator(x, random_odd(rng, 3), 3).parity == "odd"


def test_odd_left_operand_rejected():
    rng = np.random.default_rng(2)
    with pytest.raises(ValueError):
        commutator(random_odd(rng, 3), random_even(rng, 3), 4)


# ---------------------------------------------------------------------------
# commutator vs Fock oracle


def comm_oracle(x, y, basis_n):
    mx, my = fock_image(x), fock_image(y)
    return mx @ my - my @ mx


@pytest.mark.parametrize("seed", range(6))
def test_even_commutator_matches_fock_oracle(seed):
    rng = np.random.default_rng(seed)
    n = 5
    x = random_even(rng, n, scale=0.7)
    y = random_even(rng, n, scale=0.9)
    out = commutator(x, y, max_rank=6)
    np.testing.assert_allclose(
        fock_image(out), comm_oracle(x, y, n), atol=1e-10
    )


@pytest.mark.parametrize("seed", range(4))
def test_odd_commutator_matches_fock_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    n = 4
    x = random_even(rng, n)
    y = random_odd(rng, n)
    out = commutator(x, y, max_rank=5)
    np.testing.assert_allclose(
        fock_image(out), comm_oracle(x, y, n), atol=1e-10
    )


def test_bilinearity():
    rng = np.random.default_rng(3)
    n = 4
    x1, x2, y = random_even(rng, n), random_even(rng, n), random_even(rng, n)
    a, b = 0.37, -1.21
    lhs = commutator(
        x1.copy().add_scaled(x2, 0.0).add_scaled(x1, a - 1.0).add_scaled(x2, b),
        y,
        6,
    )
    rhs = commutator(x1, y, 6)
    for rank, arr in rhs.items():
        arr *= a
    rhs.add_scaled(commutator(x2, y, 6), b)
    for rank in set(lhs.ranks()) | set(rhs.ranks()):
        la, ra = lhs.block(rank), rhs.block(rank)
        if la is None or ra is None:
            assert max_abs(lhs if la is not None else rhs, rank) < 1e-12
        else:
            np.testing.assert_allclose(la, ra, atol=1e-10)


def test_antisymmetry_at_full_rank():
    rng = np.random.default_rng(4)
    n = 4
    x, y = random_even(rng, n), random_even(rng, n)
    xy = fock_image(commutator(x, y, 6))
    yx = fock_image(commutator(y, x, 6))
    np.testing.assert_allclose(xy, -yx, atol=1e-10)


def test_truncation_drops_exactly_the_rank6_weight():
    rng = np.random.default_rng(5)
    n = 4
    x, y = random_even(rng, n), random_even(rng, n)
    full = commutator(x, y, max_rank=6)
    cut = commutator(x, y, max_rank=4)
    # truncation only removes the rank-6 block
    for rank in (0, 2, 4):
        fa, ca = full.block(rank), cut.block(rank)
        if fa is None and ca is None:
            continue
        np.testing.assert_allclose(fa, ca, atol=1e-12)
    assert full.block(6) is not None
    assert cut.block(6) is None
    assert frobenius_norm(full, 6) > 0.1  # the discarded weight is real


def test_canonicalize_rank4_preserves_fock_image():
    rng = np.random.default_rng(6)
    n = 4
    t = rng.standard_normal((n,) * 4)
    raw = OperatorPolynomial(n, "even", {4: t})
    canon = OperatorPolynomial(n, "even", {4: canonicalize_rank4(t)})
    np.testing.assert_allclose(fock_image(raw), fock_image(canon), atol=1e-12)


def test_canonicalize_rank4_idempotent():
    rng = np.random.default_rng(8)
    t = canonicalize_rank4(rng.standard_normal((5,) * 4))
    np.testing.assert_allclose(canonicalize_rank4(t), t, atol=1e-14)


# ---------------------------------------------------------------------------
# closed-form trace


@pytest.mark.parametrize("seed", range(3))
def test_fock_trace_closed_form(seed):
    rng = np.random.default_rng(30 + seed)
    n = 5
    h = random_even(rng, n)
    h.blocks[0] = np.array(rng.standard_normal())
    h.blocks[4] = canonicalize_rank4(h.blocks[4])
    assert fock_trace(h) == pytest.approx(
        float(np.trace(fock_image(h)).real), rel=1e-12, abs=1e-9
    )


# ---------------------------------------------------------------------------
# serialization


def test_roundtrip_bytes():
    rng = np.random.default_rng(9)
    h = random_even(rng, 4)
    h.blocks[0] = np.array(2.5)
    back = loads_polynomial(dumps_polynomial(h))
    assert back.parity == h.parity
    assert back.n_sites == h.n_sites
    for rank, arr in h.items():
        np.testing.assert_array_equal(back.block(rank), arr)


def test_roundtrip_complex_and_stream():
    rng = np.random.default_rng(10)
    arr = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    op = OperatorPolynomial(3, "even", {2: arr})
    buf = io.BytesIO()
    dump_polynomial(op, buf)
    buf.seek(0)
    back = load_polynomial(buf)
    np.testing.assert_array_equal(back.block(2), arr)


def test_wrong_shape_rejected():
    with pytest.raises(ValueError):
        OperatorPolynomial(3, "even", {2: np.zeros((2, 2))})
    with pytest.raises(ValueError):
        OperatorPolynomial(3, "even", {1: np.zeros(3)})
