"""Symbolic Wick algebra for strings of fermionic ladder operators.

Everything in this package stores an operator as a sum of vacuum
normal-ordered monomials, e.g. ``:c^dag_i c_j:`` with an ``N x N``
coefficient tensor.  Products and commutators of such monomials expand,
by Wick's theorem, into a finite set of contraction terms, each of which
is again a normal-ordered monomial whose coefficient tensor is a single
``einsum`` over the two input tensors.  The expansion depends only on the
*slot patterns* (which slots carry creation operators and which carry
annihilation operators), never on the numerical tensors, so it is done
once per pattern pair, compiled to einsum specifications, and cached.

Sign conventions
----------------
* A contraction pairs an annihilation slot of the left string with a
  creation slot of the right string; the pair is removed and the term
  picks up ``(-1)**k`` where ``k`` is the number of operators standing
  strictly between the two at removal time (pairs are removed one at a
  time, left-to-right).  Only ``<0| c c^dag |0> = 1`` survives against
  the vacuum, which is what makes the expansion exact and finite.
* Remaining operators are reordered to the canonical slot pattern for
  their rank (see ``canonical_pattern``), contributing the parity of the
  reordering permutation.

The compiled plans are plain named tuples evaluated by ``contract``
below with cached ``einsum`` paths; no Python-level index loops touch
the tensors.
"""

from __future__ import annotations

import itertools
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "canonical_pattern",
    "true_normal",
    "product_terms",
    "commutator_terms",
    "pairing_terms",
    "single_pairing_terms",
    "contract",
    "BilinearTerm",
    "PairingTerm",
]

_LETTERS = "abcdefghijklmnopqrstuvwxyz"


class BilinearTerm(NamedTuple):
    """One contraction term of a product/commutator of two monomial blocks.

    ``spec`` is an einsum specification whose first operand is the left
    tensor and second operand the right tensor; ``swap`` marks terms
    coming from the reversed product (Y on the left), in which case the
    caller supplies the tensors in reversed order.
    """

    sign: int
    spec: str
    out_rank: int
    swap: bool


class PairingTerm(NamedTuple):
    """One complete-pairing term of an ensemble expectation value.

    ``x_spec``/``y_spec`` give the einsum letters of the two operand
    tensors (``y_spec`` empty for single-operator expectations) and
    ``moment`` the letter/type pairs of the required occupation moment
    tensor: type ``'s'`` for an ``<c^dag c>`` chord (occupied factor),
    ``'t'`` for a ``<c c^dag>`` chord (empty factor).
    """

    sign: int
    x_spec: str
    y_spec: str
    moment: tuple[tuple[str, str], ...]


def canonical_pattern(n_plus: int, n_minus: int) -> tuple[str, ...]:
    """Canonical slot pattern used for storage of a monomial block.

    Particle-conserving blocks alternate ``(+,-,+,-,...)`` so that e.g.
    the rank-4 block reads ``:c^dag_i c_j c^dag_k c_q:``.  Blocks with
    one extra creation (the co-flowed creation-operator family) put all
    creations first: ``(+,)``, ``(+,+,-)``, ``(+,+,+,-,-)``.
    """
    if n_plus == n_minus:
        return ("+", "-") * n_plus
    if abs(n_plus - n_minus) == 1:
        return ("+",) * n_plus + ("-",) * n_minus
    raise ValueError(f"no canonical pattern for ({n_plus}, {n_minus})")


def _contraction_sign(n_total: int, pairs: Sequence[tuple[int, int]]) -> int:
    """Fermionic sign of removing contraction ``pairs`` from a string.

    Positions index the concatenated operator string.  Pairs are removed
    in order of their left member; each removal contributes ``(-1)**k``
    with ``k`` the number of not-yet-removed operators strictly between
    the paired positions.
    """
    active = list(range(n_total))
    sign = 1
    for p, r in sorted(pairs):
        ip = active.index(p)
        ir = active.index(r)
        lo, hi = (ip, ir) if ip < ir else (ir, ip)
        if (hi - lo - 1) % 2:
            sign = -sign
        del active[hi]
        del active[lo]
    return sign


def _permutation_parity(order: Sequence[int]) -> int:
    """Parity (+1/-1) of the permutation taking ``sorted(order)`` to ``order``."""
    inv = 0
    for i in range(len(order)):
        for j in range(i + 1, len(order)):
            if order[i] > order[j]:
                inv += 1
    return -1 if inv % 2 else 1


def _reorder_to(types: Sequence[str], target: Sequence[str]) -> tuple[int, tuple[int, ...]]:
    """Stable reordering of an operator string onto a target pattern.

    Creations keep their relative order, annihilations keep theirs, and
    the interleaving is dictated by ``target``.  Returns the permutation
    sign and, per target slot, the index into ``types`` it is filled from.
    """
    if sorted(types) != sorted(target):
        raise ValueError("incompatible patterns")
    pools = {
        "+": iter([i for i, t in enumerate(types) if t == "+"]),
        "-": iter([i for i, t in enumerate(types) if t == "-"]),
    }
    order = tuple(next(pools[t]) for t in target)
    return _permutation_parity(order), order


@lru_cache(maxsize=None)
def product_terms(
    p1: tuple[str, ...],
    p2: tuple[str, ...],
    max_rank: int,
    include_empty: bool = True,
) -> tuple[BilinearTerm, ...]:
    """Wick expansion of the product of two normal-ordered monomials.

    Enumerates every set of contractions pairing annihilation slots of
    the left pattern with creation slots of the right pattern (the only
    contractions that survive vacuum normal ordering) and compiles each
    surviving term, with rank at most ``max_rank``, to an einsum.
    """
    n1, n2 = len(p1), len(p2)
    ann1 = [i for i, t in enumerate(p1) if t == "-"]
    cre2 = [n1 + i for i, t in enumerate(p2) if t == "+"]
    types = list(p1) + list(p2)

    terms: list[BilinearTerm] = []
    k_min = 0 if include_empty else 1
    for k in range(k_min, min(len(ann1), len(cre2)) + 1):
        for asub in itertools.combinations(ann1, k):
            for cperm in itertools.permutations(cre2, k):
                pairs = list(zip(asub, cperm))
                remaining = [i for i in range(n1 + n2) if i not in asub and i not in cperm]
                if len(remaining) > max_rank:
                    continue
                sign = _contraction_sign(n1 + n2, pairs)
                rem_types = [types[i] for i in remaining]
                n_plus = rem_types.count("+")
                perm_sign, order = _reorder_to(
                    rem_types, canonical_pattern(n_plus, len(rem_types) - n_plus)
                )
                # Assign einsum letters: left slots in order, right slots
                # reuse the partner's letter when contracted.
                letters = {}
                nxt = 0
                for i in range(n1):
                    letters[i] = _LETTERS[nxt]
                    nxt += 1
                partner = {r: p for p, r in pairs}
                for i in range(n1, n1 + n2):
                    if i in partner:
                        letters[i] = letters[partner[i]]
                    else:
                        letters[i] = _LETTERS[nxt]
                        nxt += 1
                lhs = "".join(letters[i] for i in range(n1))
                rhs = "".join(letters[i] for i in range(n1, n1 + n2))
                out = "".join(letters[remaining[j]] for j in order)
                terms.append(
                    BilinearTerm(sign * perm_sign, f"{lhs},{rhs}->{out}", len(remaining), False)
                )
    return tuple(terms)


@lru_cache(maxsize=None)
def commutator_terms(
    p1: tuple[str, ...],
    p2: tuple[str, ...],
    max_rank: int,
) -> tuple[BilinearTerm, ...]:
    """Wick expansion of ``[X, Y]`` for monomial patterns ``p1``, ``p2``.

    ``X`` must contain an even number of ladder operators: then the
    uncontracted (normal-ordered) parts of ``XY`` and ``YX`` coincide and
    cancel in the commutator, so only genuinely contracted terms remain.
    Terms with ``swap=True`` take the operand tensors in (Y, X) order.
    """
    if len(p1) % 2:
        raise ValueError("left operand of a commutator must be of even fermion parity")
    fwd = product_terms(p1, p2, max_rank, include_empty=False)
    rev = product_terms(p2, p1, max_rank, include_empty=False)
    terms = [t for t in fwd]
    terms += [BilinearTerm(-t.sign, t.spec, t.out_rank, True) for t in rev]
    return tuple(terms)


def true_normal(pattern: tuple[str, ...]) -> tuple[int, tuple[int, ...]]:
    """Sign and slot order bringing a pattern to creations-first form.

    Returns ``(sign, order)`` such that the normal-ordered monomial with
    slot pattern ``pattern`` equals ``sign`` times the operator string
    whose ``k``-th factor is the ladder operator from slot ``order[k]``,
    with all creations to the left of all annihilations.
    """
    n_plus = pattern.count("+")
    target = ("+",) * n_plus + ("-",) * (len(pattern) - n_plus)
    return _reorder_to(pattern, target)


_true_normal = true_normal


def _crossing_parity(chords: Sequence[tuple[int, int]]) -> int:
    """Sign from chord crossings of a complete fermionic pairing."""
    sign = 1
    for (a, b), (c, d) in itertools.combinations(chords, 2):
        if a < c < b < d or c < a < d < b:
            sign = -sign
    return sign


def _pairings(positions: list[int]) -> list[list[tuple[int, int]]]:
    """All perfect matchings of ``positions`` into ordered pairs."""
    if not positions:
        return [[]]
    head, rest = positions[0], positions[1:]
    out = []
    for i, q in enumerate(rest):
        sub = rest[:i] + rest[i + 1 :]
        for tail in _pairings(sub):
            out.append([(head, q)] + tail)
    return out


@lru_cache(maxsize=None)
def pairing_terms(p1: tuple[str, ...], p2: tuple[str, ...]) -> tuple[PairingTerm, ...]:
    """Complete-pairing expansion of ``<X Y>`` over occupation product states.

    For a product state with occupations ``s``, the only non-vanishing
    elementary contractions are ``<c^dag_a c_b> = delta_ab s_a`` (type
    ``'s'``) and ``<c_a c^dag_b> = delta_ab (1 - s_a)`` (type ``'t'``).
    Both operands are first brought to creations-first order inside their
    own normal-ordering signs, then all complete pairings of the
    concatenated string are enumerated with chord-crossing signs.
    """
    s1, o1 = _true_normal(p1)
    s2, o2 = _true_normal(p2)
    n1 = len(p1)
    types = [p1[i] for i in o1] + [p2[i] for i in o2]
    # slot_axis[j] = (operand, tensor axis) feeding concatenated position j
    slot_axis = [(0, i) for i in o1] + [(1, i) for i in o2]
    base_sign = s1 * s2

    terms: list[PairingTerm] = []
    if len(types) % 2:
        return tuple(terms)
    for chords in _pairings(list(range(len(types)))):
        factors = []
        ok = True
        for a, b in chords:
            ta, tb = types[a], types[b]
            if ta == "+" and tb == "-":
                factors.append("s")
            elif ta == "-" and tb == "+":
                factors.append("t")
            else:
                ok = False
                break
        if not ok:
            continue
        sign = base_sign * _crossing_parity(chords)
        letters_x = [""] * n1
        letters_y = [""] * len(p2)
        moment = []
        for letter, ((a, b), f) in zip(_LETTERS, zip(chords, factors)):
            for pos in (a, b):
                op, ax = slot_axis[pos]
                if op == 0:
                    letters_x[ax] = letter
                else:
                    letters_y[ax] = letter
            moment.append((letter, f))
        terms.append(
            PairingTerm(sign, "".join(letters_x), "".join(letters_y), tuple(moment))
        )
    return tuple(terms)


@lru_cache(maxsize=None)
def single_pairing_terms(p: tuple[str, ...]) -> tuple[PairingTerm, ...]:
    """Complete-pairing expansion of ``<X>`` for a single monomial block."""
    return pairing_terms(p, ())


_PATH_CACHE: dict = {}
_PLAN_CACHE: dict = {}


def _tensordot_plan(spec: str) -> tuple | None:
    """Compile a two-operand einsum spec into a tensordot + transpose plan.

    Returns ``(x_axes, y_axes, perm)`` or None when the spec is not a
    plain pairwise contraction (repeated labels within one operand,
    broadcast labels, or more than two operands).
    """
    lhs, out = spec.split("->")
    parts = lhs.split(",")
    if len(parts) != 2:
        return None
    x, y = parts
    if len(set(x)) != len(x) or len(set(y)) != len(y):
        return None
    shared = [c for c in x if c in y]
    if any(c in out for c in shared):
        return None
    x_axes = tuple(x.index(c) for c in shared)
    y_axes = tuple(y.index(c) for c in shared)
    free = [c for c in x if c not in y] + [c for c in y if c not in x]
    if sorted(free) != sorted(out):
        return None
    perm = tuple(free.index(c) for c in out)
    return x_axes, y_axes, perm


def contract(spec: str, *operands: np.ndarray) -> np.ndarray:
    """Contract operands per an einsum spec.

    Two-operand specs run through a precompiled tensordot plan (the
    einsum front-end is pure overhead at these tensor sizes); anything
    else falls back to ``np.einsum`` with a cached contraction path.
    """
    if len(operands) == 2:
        plan = _PLAN_CACHE.get(spec, False)
        if plan is False:
            plan = _tensordot_plan(spec)
            _PLAN_CACHE[spec] = plan
        if plan is not None:
            x_axes, y_axes, perm = plan
            out = np.tensordot(operands[0], operands[1], axes=(x_axes, y_axes))
            if perm != tuple(range(len(perm))):
                out = out.transpose(perm)
            return out
    key = (spec, tuple(op.shape for op in operands))
    path = _PATH_CACHE.get(key)
    if path is None:
        path = np.einsum_path(spec, *operands, optimize="optimal")[0]
        _PATH_CACHE[key] = path
    return np.einsum(spec, *operands, optimize=path)
