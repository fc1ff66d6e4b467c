"""Distribution families for waiting times and feedback, plus the family DSL.

A :class:`WaitingFamily` is a distribution-valued sequence ``j -> law(X_j)``
(``X_j`` is the time an agent's value takes to go from ``j-1`` to ``j``).
Besides sampling, it carries the analytic callbacks the classifier consumes:
tails, truncated moments, diagonal probabilities ``P(X_j = X'_j)``, and the
symmetrised quantities for ``X_j - X'_j``.  A :class:`FeedbackFamily` is the
discrete-chain counterpart ``j -> law(F(j))`` with reciprocal-moment
callbacks; :func:`embed_feedback` turns it into a waiting family by drawing
an exponential of the sampled rate, ``X_j ~ Exp(F(j-1))``.

Unknown analytics are first class: a callback returns ``None`` (or an
evidence slot is ``None``) when no closed form exists, and downstream
classification degrades to ``Undetermined`` rather than guessing.

Convergence *evidence* is separated from pointwise values: a
:class:`SeriesEvidence` bundles an upper tail bound (proves summability) and
a harmonic-type minorant (proves divergence) for one analytic series.  The
evidence callables are certified by the family constructors, audited by
``numerics.series_eval``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special as sp

from .errors import ParseError
from .numerics import Dyadic

__all__ = [
    "SeriesEvidence",
    "LatticeTerm",
    "LatticeSequence",
    "IndexedLaw",
    "WaitingFamily",
    "FeedbackFamily",
    "embed_feedback",
    "counter_families",
    "two_point_counter",
    "geometric_counter",
    "rademacher",
    "const_table",
    "power_feedback",
    "random_power_feedback",
    "feedback_from_function",
    "parse_family",
]

ATOMLESS = "atomless"
DYADIC_LATTICE = "dyadic_lattice"
INTEGER_LATTICE = "integer_lattice"


# ---------------------------------------------------------------------------
# Evidence and lattice plumbing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SeriesEvidence:
    """Certificates for one nonnegative analytic series ``j -> term(j)``.

    ``tail_bound(J)`` bounds ``sum_{j>J} term(j)`` from above (summability
    proof); ``minorant`` is a pointwise lower bound on the term for
    ``j >= minorant_start`` whose own series diverges by harmonic comparison
    (divergence proof).  Either side may be absent.
    """

    tail_bound: Optional[Callable[[int], float]] = None
    minorant: Optional[Callable] = None
    minorant_start: int = 1


@dataclass(frozen=True)
class LatticeTerm:
    """Finite-support exact law of one summand, for the atom oracle.

    ``support`` lists ``(value, probability)`` with exact rationals;
    ``clipped`` is the mass outside the listed support (nonzero when an
    infinite-support law was truncated).  ``atomless`` marks a continuous
    term; such a term makes the whole sum atomless.
    """

    support: tuple[tuple[Fraction, Fraction], ...]
    clipped: Fraction = Fraction(0)
    atomless: bool = False


@dataclass(frozen=True)
class LatticeSequence:
    """Exact-lattice view of a term sequence ``Y_j`` for the atom oracle.

    ``anchor(j)`` is a deterministic value the law concentrates near;
    ``neq_tail(J)`` bounds ``sum_{j>J} P(Y_j != anchor(j))`` exactly (None if
    no summable bound exists), and ``anchor_tail_sum(J)`` is the exact value
    of ``sum_{j>J} anchor(j)`` when that sum is finite.
    """

    term: Callable[[int], LatticeTerm]
    anchor: Callable[[int], Fraction]
    neq_tail: Optional[Callable[[int], Fraction]]
    anchor_tail_sum: Optional[Callable[[int], Fraction]]
    diag: Callable[[int], Optional[float]]
    neq_evidence: Optional[SeriesEvidence]


# ---------------------------------------------------------------------------
# Core family types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IndexedLaw:
    """A sequence of laws ``j -> law(X_j)`` with sampling and analytics.

    ``sample(j, rng)`` returns a float for atomless laws and an exact value
    (``Dyadic`` / ``int``) for lattice laws.  Analytic callbacks return
    ``None`` when unknown.  ``nonnegative`` is False only for signed test
    families (they are rejected as waiting times).
    """

    support_kind: str
    sample: Callable
    tail: Callable[[int, float], Optional[float]]
    diag: Callable[[int], Optional[float]]
    trunc_mean: Callable[[int, float], Optional[float]]
    nonnegative: bool = True


@dataclass(frozen=True)
class WaitingFamily:
    name: str
    base: IndexedLaw
    sym_tail: Callable[[int, float], Optional[float]]
    sym_m2: Callable[[int, float], Optional[float]]
    prob_gt: Callable[[int, float], Optional[float]]
    # evidence suppliers; None means Unknown and classification degrades
    tail_evidence: Optional[Callable[[float], SeriesEvidence]] = None
    trunc_mean_evidence: Optional[Callable[[float], SeriesEvidence]] = None
    sym_tail_evidence: Optional[Callable[[float], SeriesEvidence]] = None
    sym_m2_evidence: Optional[Callable[[float], SeriesEvidence]] = None
    # presence of prob_gt_evidence asserts validity for EVERY eps > 0
    prob_gt_evidence: Optional[Callable[[float], SeriesEvidence]] = None
    neq_evidence: Optional[SeriesEvidence] = None
    # sure (almost-sure) upper bound on sum_{j>J} X_j, for the explosion race
    sup_tail: Optional[Callable[[int], Fraction]] = None
    lattice: Optional[LatticeSequence] = None
    deterministic: bool = False
    # fast batched sampler factory used by the engine hot path
    make_stepper: Optional[Callable] = None

    def __repr__(self):
        return f"WaitingFamily({self.name})"


@dataclass(frozen=True)
class FeedbackFamily:
    """Law sequence ``j -> law(F(j))`` of a (possibly random) feedback.

    Feedback indices start at 0.  Evidence series are reindexed to ``i >= 1``
    with term index ``i`` referring to ``F(i-1)``, so they plug directly into
    ``series_eval``.  For the evidence semantics on random feedback:
    ``tail_bound`` certifies summability of the *expected* series (hence
    almost-sure convergence), ``minorant`` is a sure pointwise lower bound.
    """

    name: str
    deterministic: bool
    sample_F: Callable
    det_value: Optional[Callable[[int], float]] = None
    exact_value: Optional[Callable[[int], Fraction]] = None
    p_leq: Optional[Callable[[int, float], float]] = None
    m2inv: Optional[Callable[[int, float], float]] = None
    m1inv: Optional[Callable[[int], float]] = None
    laplace: Optional[Callable[[int, float], float]] = None
    invm_exp: Optional[Callable[[int, float], float]] = None
    quad_nodes: Optional[Callable[[int], tuple[np.ndarray, np.ndarray]]] = None
    m1inv_evidence: Optional[SeriesEvidence] = None
    p_leq_evidence: Optional[Callable[[float], SeriesEvidence]] = None
    m2inv_evidence: Optional[Callable[[float], SeriesEvidence]] = None
    # hooks consumed by embed_feedback to certify divergence of the embedded
    # truncated-moment series (C -> (minorant, start))
    sym_m2_minorant: Optional[Callable[[float], tuple[Callable, int]]] = None
    trunc_mean_minorant: Optional[Callable[[float], tuple[Callable, int]]] = None

    def __repr__(self):
        return f"FeedbackFamily({self.name})"


# ---------------------------------------------------------------------------
# Small closed-form helpers
# ---------------------------------------------------------------------------

def _q2(x):
    """1 - e^{-x}(1 + x), the truncated-mean kernel of an exponential."""
    return sp.gammainc(2.0, x)


def _q3(x):
    """1 - e^{-x}(1 + x + x^2/2), the truncated-second-moment kernel."""
    return sp.gammainc(3.0, x)


def _power_tail(s: float, const: float = 1.0) -> Callable[[int], float]:
    """Upper bound for sum_{j>J} const * j^(-s), s > 1 (integral comparison)."""
    if s <= 1.0:
        raise ValueError("power tail needs exponent > 1")
    return lambda J: const * float(J) ** (1.0 - s) / (s - 1.0)


def _count_tail(j_star: float, cap: float = 1.0) -> Callable[[int], float]:
    """Upper bound when at most ceil(j_star) terms are nonzero, each <= cap."""
    return lambda J: cap * max(0.0, math.ceil(j_star) - J)


def _zero_tail(_J: int) -> float:
    return 0.0


def _one(j):
    return np.ones_like(np.asarray(j, dtype=float)) if np.ndim(j) else 1.0


# ---------------------------------------------------------------------------
# Counterexample families (exact lattice laws)
# ---------------------------------------------------------------------------

def two_point_counter() -> WaitingFamily:
    """X_j = 2^{-j} with probability 1 - 1/(j+1)^2, else 0.  Exact dyadic."""

    def p(j):
        return 1.0 - 1.0 / (j + 1.0) ** 2

    def q(j):
        return 1.0 / (j + 1.0) ** 2

    def sample(j, rng):
        # exact Bernoulli(1/(j+1)^2) via an integer draw
        if int(rng.integers(0, (j + 1) ** 2)) == 0:
            return Dyadic(0)
        return Dyadic(1, j)

    def tail(j, C):
        return p(j) if C < 2.0 ** (-j) else 0.0

    def diag(j):
        return p(j) ** 2 + q(j) ** 2

    def trunc_mean(j, C):
        v = 2.0 ** (-j)
        return v * p(j) if v <= C else 0.0

    def sym_tail(j, C):
        return 2.0 * p(j) * q(j) if C < 2.0 ** (-j) else 0.0

    def sym_m2(j, C):
        v = 2.0 ** (-j)
        return 2.0 * p(j) * q(j) * v * v if v <= C else 0.0

    def prob_gt(j, eps):
        return p(j) if eps < 2.0 ** (-j) else 0.0

    def _j_cut(c):
        # largest index with 2^{-j} > c, plus slack
        if c >= 1.0:
            return 0
        return int(math.ceil(-math.log2(c))) + 1

    base = IndexedLaw(DYADIC_LATTICE, sample, tail, diag, trunc_mean)

    def lat_term(j):
        qq = Fraction(1, (j + 1) ** 2)
        return LatticeTerm(
            support=((Fraction(0), qq), (Fraction(1, 2 ** j), 1 - qq))
        )

    lattice = LatticeSequence(
        term=lat_term,
        anchor=lambda j: Fraction(1, 2 ** j),
        neq_tail=lambda J: Fraction(1, J + 1),
        anchor_tail_sum=lambda J: Fraction(1, 2 ** J),
        diag=diag,
        neq_evidence=SeriesEvidence(tail_bound=lambda J: 2.0 / (J + 1)),
    )

    return WaitingFamily(
        name="two_point_counter{}",
        base=base,
        sym_tail=sym_tail,
        sym_m2=sym_m2,
        prob_gt=prob_gt,
        tail_evidence=lambda C: SeriesEvidence(tail_bound=_count_tail(_j_cut(C))),
        trunc_mean_evidence=lambda C: SeriesEvidence(tail_bound=lambda J: 2.0 ** (-J)),
        sym_tail_evidence=lambda C: SeriesEvidence(tail_bound=lambda J: 2.0 / (J + 1)),
        sym_m2_evidence=lambda C: SeriesEvidence(tail_bound=lambda J: 4.0 ** (-J) / 3.0),
        prob_gt_evidence=lambda eps: SeriesEvidence(tail_bound=_count_tail(_j_cut(eps))),
        neq_evidence=SeriesEvidence(tail_bound=lambda J: 2.0 / (J + 1)),
        sup_tail=lambda J: Fraction(1, 2 ** J),
        lattice=lattice,
    )


def geometric_counter() -> WaitingFamily:
    """X_j ~ Geom(p_j) on {1, 2, ...} with p_j = 1 - 1/(j+1)^2.  Exact ints."""

    def p(j):
        return 1.0 - 1.0 / (j + 1.0) ** 2

    def q(j):
        return 1.0 / (j + 1.0) ** 2

    def sample(j, rng):
        return int(rng.geometric(p(j)))

    def tail(j, C):
        m = max(0, math.floor(C))
        return q(j) ** m

    def diag(j):
        return p(j) / (2.0 - p(j))

    def trunc_mean(j, C):
        m = math.floor(C)
        if m < 1:
            return 0.0
        qq, pp = q(j), p(j)
        return (1.0 - qq ** m) / pp - m * qq ** m

    def neq(j):
        return 2.0 / ((j + 1.0) ** 2 + 1.0)

    def sym_tail(j, C):
        m = max(0, math.floor(C))
        return 2.0 * q(j) ** (m + 1) / (2.0 - p(j))

    def sym_m2(j, C):
        # E[Z^2 1{|Z| <= C}] = 2 sum_{k=1..floor(C)} k^2 p q^k / (2 - p)
        m = math.floor(C)
        if m < 1:
            return 0.0
        qq, pp = q(j), p(j)
        total = 0.0
        qk = qq
        for k in range(1, m + 1):
            total += k * k * qk
            qk *= qq
            if qk < 1e-320:
                break
        return 2.0 * pp * total / (2.0 - pp)

    def prob_gt(j, eps):
        return 1.0 if eps < 1.0 else tail(j, eps)

    base = IndexedLaw(INTEGER_LATTICE, sample, tail, diag, trunc_mean)

    def _tail_ev(C):
        if C < 1.0:
            # every term equals 1
            return SeriesEvidence(minorant=_one)
        return SeriesEvidence(tail_bound=lambda J: 1.0 / (J + 1))

    def _tm_ev(C):
        if C < 1.0:
            return SeriesEvidence(tail_bound=_zero_tail)
        # term >= P(X_j = 1) = p_j >= 3/4
        return SeriesEvidence(minorant=lambda j: 0.75 * _one(j))

    def lat_term(j, bits: int = 80):
        qq = Fraction(1, (j + 1) ** 2)
        pp = 1 - qq
        # clip where the residual geometric mass drops below 2^-bits
        k_max = max(1, math.ceil(bits / max(1.0, -math.log2(float(qq)))))
        support = []
        mass = Fraction(0)
        qk = Fraction(1)
        for k in range(1, k_max + 1):
            pr = pp * qk
            support.append((Fraction(k), pr))
            mass += pr
            qk *= qq
        return LatticeTerm(support=tuple(support), clipped=1 - mass)

    lattice = LatticeSequence(
        term=lat_term,
        anchor=lambda j: Fraction(1),
        neq_tail=lambda J: Fraction(1, J + 1),
        anchor_tail_sum=None,
        diag=diag,
        neq_evidence=SeriesEvidence(tail_bound=lambda J: 2.0 / (J + 1)),
    )

    return WaitingFamily(
        name="geometric_counter{}",
        base=base,
        sym_tail=sym_tail,
        sym_m2=sym_m2,
        prob_gt=prob_gt,
        tail_evidence=_tail_ev,
        trunc_mean_evidence=_tm_ev,
        sym_tail_evidence=lambda C: SeriesEvidence(tail_bound=lambda J: 2.0 / (J + 1)),
        sym_m2_evidence=lambda C: SeriesEvidence(
            tail_bound=lambda J: 2.0 * max(1.0, C) ** 2 / (J + 1)
        ),
        prob_gt_evidence=None,  # P(X_j > eps) = 1 for eps < 1: not summable
        neq_evidence=SeriesEvidence(tail_bound=lambda J: 2.0 / (J + 1)),
        sup_tail=None,
        lattice=lattice,
    )


def counter_families() -> tuple[WaitingFamily, WaitingFamily]:
    """The two non-zero-one counterexample families (two-point, geometric)."""
    return two_point_counter(), geometric_counter()


def rademacher() -> WaitingFamily:
    """Fair +/-1 signs; a symmetric test family, not a waiting-time law."""

    def sample(j, rng):
        return 1 - 2 * int(rng.integers(0, 2))

    def tail(j, C):
        return 0.5 if C < 1.0 else 0.0

    def diag(j):
        return 0.5

    def trunc_mean(j, C):
        # E[X 1{X <= C}] for the signed law
        if C >= 1.0:
            return 0.0
        if C >= -1.0:
            return -0.5
        return 0.0

    def sym_tail(j, C):
        return 0.5 if C < 2.0 else 0.0

    def sym_m2(j, C):
        return 2.0 if C >= 2.0 else 0.0

    base = IndexedLaw(INTEGER_LATTICE, sample, tail, diag, trunc_mean, nonnegative=False)

    lattice = LatticeSequence(
        term=lambda j: LatticeTerm(
            support=((Fraction(-1), Fraction(1, 2)), (Fraction(1), Fraction(1, 2)))
        ),
        anchor=lambda j: Fraction(0),
        neq_tail=None,
        anchor_tail_sum=lambda J: Fraction(0),
        diag=diag,
        neq_evidence=SeriesEvidence(minorant=lambda j: 0.5 * _one(j)),
    )

    def _sym_tail_ev(C):
        if C < 2.0:
            return SeriesEvidence(minorant=lambda j: 0.5 * _one(j))
        return SeriesEvidence(tail_bound=_zero_tail)

    def _sym_m2_ev(C):
        if C >= 2.0:
            return SeriesEvidence(minorant=lambda j: 2.0 * _one(j))
        return SeriesEvidence(tail_bound=_zero_tail)

    return WaitingFamily(
        name="rademacher{}",
        base=base,
        sym_tail=sym_tail,
        sym_m2=sym_m2,
        prob_gt=lambda j, eps: 0.5 if eps < 1.0 else 0.0,
        sym_tail_evidence=_sym_tail_ev,
        sym_m2_evidence=_sym_m2_ev,
        neq_evidence=SeriesEvidence(minorant=lambda j: 0.5 * _one(j)),
        lattice=lattice,
    )


# ---------------------------------------------------------------------------
# Deterministic tables
# ---------------------------------------------------------------------------

def const_table(xs: Sequence[float], tail_ratio: Optional[float] = None) -> WaitingFamily:
    """Deterministic waiting times: X_j = xs[j-1] for j <= K.

    Beyond the table, X_j repeats the last entry, or decays geometrically as
    ``xs[-1] * tail_ratio^(j-K)`` when ``tail_ratio`` in [0, 1) is given.
    All values must be exactly dyadic floats (every float is).
    """
    xs = [float(x) for x in xs]
    if not xs:
        raise ValueError("const_table needs at least one value")
    if any(x < 0 for x in xs):
        raise ValueError("const_table values must be nonnegative")
    if tail_ratio is not None and not (0.0 <= tail_ratio < 1.0):
        raise ValueError("tail_ratio must lie in [0, 1)")
    K = len(xs)
    dy = [Dyadic.from_float(x) for x in xs]
    dy_ratio = Dyadic.from_float(tail_ratio) if tail_ratio is not None else None
    last = xs[-1]

    def value(j: int) -> float:
        if j <= K:
            return xs[j - 1]
        if tail_ratio is None:
            return last
        return last * tail_ratio ** (j - K)

    def value_frac(j: int) -> Fraction:
        if j <= K:
            return dy[j - 1].as_fraction()
        if tail_ratio is None:
            return dy[-1].as_fraction()
        return dy[-1].as_fraction() * dy_ratio.as_fraction() ** (j - K)

    def value_dyadic(j: int) -> Dyadic:
        if j <= K:
            return dy[j - 1]
        if tail_ratio is None:
            return dy[-1]
        out = dy[-1]
        r = dy_ratio
        m = j - K
        while m:
            if m & 1:
                out = out * r
            r = r * r
            m >>= 1
        return out

    def tail_sum(J: int) -> Optional[Fraction]:
        """Exact sum_{j>J} X_j, or None when it diverges."""
        if tail_ratio is None:
            if last > 0.0:
                return None
            return sum((value_frac(j) for j in range(J + 1, K + 1)), Fraction(0))
        head = sum((value_frac(j) for j in range(J + 1, K + 1)), Fraction(0))
        r = dy_ratio.as_fraction()
        if r == 0:
            return head
        m = max(J, K)
        geo = dy[-1].as_fraction() * r ** (m + 1 - K) / (1 - r)
        return head + geo

    def count_gt(eps: float) -> Optional[int]:
        """Number of indices with X_j > eps, or None if infinite."""
        if eps < 0:
            eps = 0.0
        n = sum(1 for x in xs if x > eps)
        if tail_ratio is None or tail_ratio == 0.0:
            if last > eps and tail_ratio is None:
                return None
            return n
        if last == 0.0:
            return n
        if eps == 0.0:
            return None  # geometric tail stays positive
        # last * ratio^m <= eps for m >= log(eps/last)/log(ratio)
        m = max(0, math.ceil(math.log(eps / last) / math.log(tail_ratio)))
        return n + m

    def tail(j, C):
        return 1.0 if value(j) > C else 0.0

    def trunc_mean(j, C):
        v = value(j)
        return v if v <= C else 0.0

    base = IndexedLaw(
        DYADIC_LATTICE,
        lambda j, rng: value_dyadic(j),
        tail,
        lambda j: 1.0,
        trunc_mean,
    )

    def _indicator_ev(eps):
        n = count_gt(eps)
        if n is None:
            # infinitely many exceedances: the indicator series diverges
            start = K + 1 if tail_ratio is None else 1
            return SeriesEvidence(minorant=_one, minorant_start=start)
        return SeriesEvidence(tail_bound=_count_tail(n))

    def _tm_ev(C):
        ts = tail_sum(0)
        if ts is not None:
            return SeriesEvidence(
                tail_bound=lambda J: float(tail_sum(J)) * (1 + 1e-12) + 1e-300
            )
        # repeat mode with positive last value
        if last <= C:
            return SeriesEvidence(
                minorant=lambda j: last * _one(j), minorant_start=K + 1
            )
        return SeriesEvidence(tail_bound=_count_tail(K, cap=max(xs)))

    name = "const_table{" + ",".join(
        f"x{i+1}={_fmt_num(x)}" for i, x in enumerate(xs)
    )
    if tail_ratio is not None:
        name += ("," if xs else "") + f"tail_ratio={_fmt_num(tail_ratio)}"
    name += "}"

    lattice = LatticeSequence(
        term=lambda j: LatticeTerm(support=((value_frac(j), Fraction(1)),)),
        anchor=value_frac,
        neq_tail=lambda J: Fraction(0),
        anchor_tail_sum=(lambda J: tail_sum(J)) if tail_sum(0) is not None else None,
        diag=lambda j: 1.0,
        neq_evidence=SeriesEvidence(tail_bound=_zero_tail),
    )

    return WaitingFamily(
        name=name,
        base=base,
        sym_tail=lambda j, C: 0.0,
        sym_m2=lambda j, C: 0.0,
        prob_gt=lambda j, eps: 1.0 if value(j) > eps else 0.0,
        tail_evidence=_indicator_ev,
        trunc_mean_evidence=_tm_ev,
        sym_tail_evidence=lambda C: SeriesEvidence(tail_bound=_zero_tail),
        sym_m2_evidence=lambda C: SeriesEvidence(tail_bound=_zero_tail),
        prob_gt_evidence=_indicator_ev,
        neq_evidence=SeriesEvidence(tail_bound=_zero_tail),
        sup_tail=(lambda J: tail_sum(J)) if tail_sum(0) is not None else None,
        lattice=lattice,
        deterministic=True,
    )


# ---------------------------------------------------------------------------
# Feedback families
# ---------------------------------------------------------------------------

def power_feedback(p: float) -> FeedbackFamily:
    """Deterministic feedback F(j) = (j+1)^p, p >= 0."""
    if p < 0:
        raise ValueError("p must be >= 0")
    p = float(p)

    def fval(j):
        return (j + 1.0) ** p

    def exact_value(j):
        if abs(p - round(p)) < 1e-12:
            return Fraction((j + 1) ** int(round(p)))
        return None

    def m1inv_series():
        # reindexed term i >= 1: 1/F(i-1) = i^(-p)
        if p > 1.0:
            return SeriesEvidence(tail_bound=_power_tail(p))
        return SeriesEvidence(minorant=lambda i: np.asarray(i, dtype=float) ** -1.0)

    def p_leq_ev(eta):
        if p == 0.0:
            if eta >= 1.0:
                return SeriesEvidence(minorant=_one)
            return SeriesEvidence(tail_bound=_zero_tail)
        i_star = math.floor(eta ** (1.0 / p)) if eta > 0 else 0
        return SeriesEvidence(tail_bound=_count_tail(i_star))

    def m2inv_ev(eta):
        if p == 0.0:
            if eta >= 1.0:
                return SeriesEvidence(tail_bound=_zero_tail)
            return SeriesEvidence(minorant=_one)
        if 2.0 * p > 1.0:
            return SeriesEvidence(tail_bound=_power_tail(2.0 * p))
        i_star = math.floor(eta ** (1.0 / p)) if eta > 0 else 0
        start = max(1, i_star + 1)
        return SeriesEvidence(
            minorant=lambda i: np.asarray(i, dtype=float) ** -1.0,
            minorant_start=start,
        )

    def sym_m2_min(C):
        if 2.0 * p > 1.0:
            return None
        def lower(i):
            i = np.asarray(i, dtype=float)
            return 2.0 * _q3(C * i ** p) * i ** (-2.0 * p)
        return (lower, 1)

    def tm_min(C):
        if p > 1.0:
            return None
        def lower(i):
            i = np.asarray(i, dtype=float)
            return _q2(C * i ** p) * i ** (-p)
        return (lower, 1)

    # array-friendly callbacks: j may be a scalar or an ndarray
    def p_leq(j, eta):
        return np.where(fval(np.asarray(j, dtype=float)) <= eta, 1.0, 0.0)[()]

    def m2inv(j, eta):
        f = fval(np.asarray(j, dtype=float))
        return np.where(f > eta, f ** -2.0, 0.0)[()]

    def laplace(j, s):
        return np.exp(-s * fval(np.asarray(j, dtype=float)))[()]

    def invm_exp(j, s):
        f = fval(np.asarray(j, dtype=float))
        return (np.exp(-s * f) / f)[()]

    return FeedbackFamily(
        name=f"power_feedback{{p={_fmt_num(p)}}}",
        deterministic=True,
        sample_F=lambda j, rng: fval(j),
        det_value=fval,
        exact_value=exact_value,
        p_leq=p_leq,
        m2inv=m2inv,
        m1inv=lambda j: (fval(np.asarray(j, dtype=float)) ** -1.0)[()],
        laplace=laplace,
        invm_exp=invm_exp,
        quad_nodes=lambda j: (np.array([fval(j)]), np.array([1.0])),
        m1inv_evidence=m1inv_series(),
        p_leq_evidence=p_leq_ev,
        m2inv_evidence=m2inv_ev,
        sym_m2_minorant=sym_m2_min,
        trunc_mean_minorant=tm_min,
    )


def random_power_feedback(p: float, lo: float, hi: float) -> FeedbackFamily:
    """Random feedback F(j) = (j+1)^p * M_j with M_j ~ Uniform[lo, hi].

    A bounded multiplicative perturbation of the power feedback; requires
    0 < lo <= hi so every series criterion can be sandwiched.
    """
    if p < 0:
        raise ValueError("p must be >= 0")
    if not (0.0 < lo <= hi):
        raise ValueError("need 0 < lo <= hi")
    p, lo, hi = float(p), float(lo), float(hi)
    width = hi - lo
    kappa1 = math.log(hi / lo) / width if width > 0 else 1.0 / lo
    kappa2 = 1.0 / (lo * hi)

    def scale(j):
        return (np.asarray(j, dtype=float) + 1.0) ** p

    def p_leq(j, eta):
        c = scale(j)
        if width == 0.0:
            return np.where(c * lo <= eta, 1.0, 0.0)[()]
        return np.clip((eta / c - lo) / width, 0.0, 1.0)[()]

    def m2inv(j, eta):
        c = scale(j)
        if width == 0.0:
            return np.where(c * lo > eta, (c * lo) ** -2.0, 0.0)[()]
        a = np.maximum(lo, eta / c)
        return np.where(a < hi, (1.0 / a - 1.0 / hi) / (width * c * c), 0.0)[()]

    def m1inv(j):
        return (kappa1 / scale(j))[()]

    def laplace(j, s):
        c = scale(j)
        if s <= 0.0:
            return np.ones_like(c)[()]
        if width == 0.0:
            return np.exp(-s * c * lo)[()]
        return ((np.exp(-s * c * lo) - np.exp(-s * c * hi)) / (s * c * width))[()]

    def invm_exp(j, s):
        c = scale(j)
        if s <= 0.0:
            return m1inv(j)
        if width == 0.0:
            return (np.exp(-s * c * lo) / (c * lo))[()]
        return ((sp.exp1(s * c * lo) - sp.exp1(s * c * hi)) / (c * width))[()]

    _nodes = lo + (np.arange(128) + 0.5) * (width / 128.0) if width > 0 else np.array([lo])
    _weights = np.full(_nodes.size, 1.0 / _nodes.size)

    def m1inv_series():
        if p > 1.0:
            return SeriesEvidence(tail_bound=_power_tail(p, kappa1))
        return SeriesEvidence(
            minorant=lambda i: np.asarray(i, dtype=float) ** -1.0 / hi
        )

    def p_leq_ev(eta):
        if p == 0.0:
            if eta > lo:
                lvl = min(1.0, (eta - lo) / width) if width > 0 else 1.0
                return SeriesEvidence(minorant=lambda i: lvl * _one(i))
            return SeriesEvidence(tail_bound=_zero_tail)
        i_star = math.floor((eta / lo) ** (1.0 / p)) if eta > 0 else 0
        return SeriesEvidence(tail_bound=_count_tail(i_star))

    def m2inv_ev(eta):
        if p == 0.0:
            v = m2inv(0, eta)
            if v > 0.0:
                return SeriesEvidence(minorant=lambda i: v * _one(i))
            return SeriesEvidence(tail_bound=_zero_tail)
        if 2.0 * p > 1.0:
            return SeriesEvidence(tail_bound=_power_tail(2.0 * p, kappa2))
        i_star = math.floor((eta / lo) ** (1.0 / p)) if eta > 0 else 0
        start = max(1, i_star + 1)
        return SeriesEvidence(
            minorant=lambda i: kappa2 * np.asarray(i, dtype=float) ** -1.0,
            minorant_start=start,
        )

    def sym_m2_min(C):
        if 2.0 * p > 1.0:
            return None
        def lower(i):
            i = np.asarray(i, dtype=float)
            c = i ** p
            return 2.0 * lo * _q3(C * lo * c) / (hi ** 3 * c * c)
        return (lower, 1)

    def tm_min(C):
        if p > 1.0:
            return None
        def lower(i):
            i = np.asarray(i, dtype=float)
            c = i ** p
            return _q2(C * lo * c) / (hi * c)
        return (lower, 1)

    return FeedbackFamily(
        name=f"random_power_feedback{{p={_fmt_num(p)},lo={_fmt_num(lo)},hi={_fmt_num(hi)}}}",
        deterministic=(width == 0.0),
        sample_F=lambda j, rng: scale(j) * float(rng.uniform(lo, hi)),
        det_value=(lambda j: scale(j) * lo) if width == 0.0 else None,
        exact_value=None,
        p_leq=p_leq,
        m2inv=m2inv,
        m1inv=m1inv,
        laplace=laplace,
        invm_exp=invm_exp,
        quad_nodes=lambda j: (scale(j) * _nodes, _weights),
        m1inv_evidence=m1inv_series(),
        p_leq_evidence=p_leq_ev,
        m2inv_evidence=m2inv_ev,
        sym_m2_minorant=sym_m2_min,
        trunc_mean_minorant=tm_min,
    )


def feedback_from_function(
    f: Callable[[int], float],
    name: str = "custom_feedback",
    exact: Optional[Callable[[int], Fraction]] = None,
) -> FeedbackFamily:
    """Wrap a deterministic feedback function (no series evidence attached)."""

    return FeedbackFamily(
        name=name,
        deterministic=True,
        sample_F=lambda j, rng: float(f(j)),
        det_value=lambda j: float(f(j)),
        exact_value=exact,
        p_leq=lambda j, eta: 1.0 if f(j) <= eta else 0.0,
        m2inv=lambda j, eta: float(f(j)) ** -2.0 if f(j) > eta else 0.0,
        m1inv=lambda j: 1.0 / float(f(j)),
        laplace=lambda j, s: math.exp(-s * float(f(j))),
        invm_exp=lambda j, s: math.exp(-s * float(f(j))) / float(f(j)),
        quad_nodes=lambda j: (np.array([float(f(j))]), np.array([1.0])),
    )


# ---------------------------------------------------------------------------
# Exponential embedding
# ---------------------------------------------------------------------------

def embed_feedback(fb: FeedbackFamily) -> WaitingFamily:
    """Waiting family with X_j exponentially distributed at rate F(j-1).

    Sampling draws the (possibly random) feedback value first, then an
    exponential of that rate.  For deterministic feedback the analytic
    callbacks use the exponential-difference closed forms; for random
    feedback they average those forms over the mixing law via the family's
    quadrature nodes.  Convergence evidence is assembled from the feedback
    evidence through the bounds
    ``P(X > C) <= P(F <= 1) + C^-2 E[F^-2; F > 1]``,
    ``E[(X-X')^2; |X-X'| <= C] <= 2 E[F^-2; F > 1] + 2 C^2 P(F <= 1)``,
    and ``E[X; X <= C] <= E[1/F]``; divergence evidence comes from the
    feedback family's certified minorant hooks.
    """
    from .series import exp_diff_m2, exp_diff_tail  # leaf import, no cycle

    det = fb.deterministic and fb.det_value is not None

    def rate(j):
        return fb.det_value(j - 1)

    def sample(j, rng):
        r = rate(j) if det else float(fb.sample_F(j - 1, rng))
        if r <= 0:
            raise ValueError(f"feedback value must be positive, got {r} at index {j - 1}")
        return float(rng.standard_exponential()) / r

    def tail(j, C):
        return None if fb.laplace is None else fb.laplace(j - 1, C)

    def trunc_mean(j, C):
        if fb.m1inv is None or fb.invm_exp is None or fb.laplace is None:
            return None
        return fb.m1inv(j - 1) - fb.invm_exp(j - 1, C) - C * fb.laplace(j - 1, C)

    def _avg(fn, j, C):
        if det:
            r = rate(j)
            return fn(r, r, C)
        if fb.quad_nodes is None:
            return None
        nodes, w = fb.quad_nodes(j - 1)
        rr, ss = np.meshgrid(nodes, nodes)
        ww = np.outer(w, w)
        return float(np.sum(ww * fn(rr, ss, C)))

    def sym_tail(j, C):
        return _avg(exp_diff_tail, j, C)

    def sym_m2(j, C):
        return _avg(exp_diff_m2, j, C)

    pleq_ev = fb.p_leq_evidence(1.0) if fb.p_leq_evidence is not None else None
    m2_ev = fb.m2inv_evidence(1.0) if fb.m2inv_evidence is not None else None
    have_tails = (
        pleq_ev is not None
        and m2_ev is not None
        and pleq_ev.tail_bound is not None
        and m2_ev.tail_bound is not None
    )

    def _combined_tail(scale_m2, scale_pleq):
        def tb(J):
            return scale_pleq * pleq_ev.tail_bound(J) + scale_m2 * m2_ev.tail_bound(J)
        return tb

    def tail_ev(C):
        if not have_tails:
            return SeriesEvidence()
        return SeriesEvidence(tail_bound=_combined_tail(C ** -2.0, 1.0))

    def tm_ev(C):
        tb = None
        if fb.m1inv_evidence is not None:
            tb = fb.m1inv_evidence.tail_bound
        minor, mstart = None, 1
        if fb.trunc_mean_minorant is not None:
            hook = fb.trunc_mean_minorant(C)
            if hook is not None:
                minor, mstart = hook
        return SeriesEvidence(tail_bound=tb, minorant=minor, minorant_start=mstart)

    def sym_tail_ev(C):
        if not have_tails:
            return SeriesEvidence()
        return SeriesEvidence(tail_bound=_combined_tail(2.0 * (C / 2.0) ** -2.0, 2.0))

    def sym_m2_ev(C):
        tb = _combined_tail(2.0, 2.0 * C * C) if have_tails else None
        minor, mstart = None, 1
        if fb.sym_m2_minorant is not None:
            hook = fb.sym_m2_minorant(C)
            if hook is not None:
                minor, mstart = hook
        return SeriesEvidence(tail_bound=tb, minorant=minor, minorant_start=mstart)

    prob_gt_ev = None
    if have_tails:
        def prob_gt_ev(eps):
            return SeriesEvidence(tail_bound=_combined_tail(eps ** -2.0, 1.0))

    def make_stepper(rng, batch: int = 1024):
        buf = rng.standard_exponential(batch)
        pos = [0]

        def draw(j):
            i = pos[0]
            if i >= batch:
                buf[:] = rng.standard_exponential(batch)
                i = 0
            pos[0] = i + 1
            r = rate(j) if det else float(fb.sample_F(j - 1, rng))
            return buf[i] / r

        return draw

    base = IndexedLaw(ATOMLESS, sample, tail, lambda j: 0.0, trunc_mean)
    return WaitingFamily(
        name=f"embedded({fb.name})",
        base=base,
        sym_tail=sym_tail,
        sym_m2=sym_m2,
        prob_gt=tail,
        tail_evidence=tail_ev,
        trunc_mean_evidence=tm_ev,
        sym_tail_evidence=sym_tail_ev,
        sym_m2_evidence=sym_m2_ev,
        prob_gt_evidence=prob_gt_ev,
        neq_evidence=SeriesEvidence(minorant=_one),
        sup_tail=None,
        lattice=None,
        deterministic=False,
        make_stepper=make_stepper,
    )


# ---------------------------------------------------------------------------
# Family DSL
# ---------------------------------------------------------------------------

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUM_RE = re.compile(r"[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?")


def _fmt_num(x: float) -> str:
    xf = float(x)
    if xf == int(xf) and abs(xf) < 1e15:
        return str(int(xf))
    return repr(xf)


def _parse_pairs(text: str, after_ident: int) -> dict[str, float]:
    """Parse '{key=num, ...}' starting at position after_ident."""
    i = after_ident
    n = len(text)

    def skip_ws(k):
        while k < n and text[k].isspace():
            k += 1
        return k

    i = skip_ws(i)
    if i >= n or text[i] != "{":
        raise ParseError("expected '{'", i)
    i += 1
    pairs: dict[str, float] = {}
    i = skip_ws(i)
    if i < n and text[i] == "}":
        return pairs, i + 1
    while True:
        i = skip_ws(i)
        m = _IDENT_RE.match(text, i)
        if m is None:
            raise ParseError("expected key", i)
        key = m.group(0)
        i = skip_ws(m.end())
        if i >= n or text[i] != "=":
            raise ParseError(f"expected '=' after key {key!r}", i)
        eq_pos = i
        i = skip_ws(i + 1)
        mnum = _NUM_RE.match(text, i)
        if mnum is None:
            raise ParseError(f"expected number for key {key!r}", eq_pos)
        if key in pairs:
            raise ParseError(f"duplicate key {key!r}", eq_pos)
        pairs[key] = float(mnum.group(0))
        i = skip_ws(mnum.end())
        if i < n and text[i] == ",":
            i += 1
            continue
        if i < n and text[i] == "}":
            return pairs, i + 1
        raise ParseError("expected ',' or '}'", i)


def _require_keys(ident, pairs, required, pos):
    missing = [k for k in required if k not in pairs]
    if missing:
        raise ParseError(f"{ident} missing key(s) {missing}", pos)
    extra = [k for k in pairs if k not in required]
    if extra:
        raise ParseError(f"{ident} has unknown key(s) {extra}", pos)


def parse_family(spec: str):
    """Parse a family spec like ``power_feedback{p=1.5}``.

    Returns a :class:`WaitingFamily` or a :class:`FeedbackFamily`.  Known
    idents: power_exponential{p}, power_feedback{p},
    random_power_feedback{p,lo,hi}, two_point_counter{}, geometric_counter{},
    rademacher{}, const_table{x1=..[,x2=..][,tail_ratio=..]}.
    """
    text = spec.strip()
    m = _IDENT_RE.match(text)
    if m is None:
        raise ParseError("expected family name", 0)
    ident = m.group(0)
    pairs, end = _parse_pairs(text, m.end())
    if text[end:].strip():
        raise ParseError("trailing input after '}'", end)

    try:
        if ident == "power_exponential":
            _require_keys(ident, pairs, ["p"], m.end())
            fam = embed_feedback(power_feedback(pairs["p"]))
            return replace(fam, name=f"power_exponential{{p={_fmt_num(pairs['p'])}}}")
        if ident == "power_feedback":
            _require_keys(ident, pairs, ["p"], m.end())
            return power_feedback(pairs["p"])
        if ident == "random_power_feedback":
            _require_keys(ident, pairs, ["p", "lo", "hi"], m.end())
            return random_power_feedback(pairs["p"], pairs["lo"], pairs["hi"])
        if ident == "two_point_counter":
            _require_keys(ident, pairs, [], m.end())
            return two_point_counter()
        if ident == "geometric_counter":
            _require_keys(ident, pairs, [], m.end())
            return geometric_counter()
        if ident == "rademacher":
            _require_keys(ident, pairs, [], m.end())
            return rademacher()
        if ident == "const_table":
            ratio = pairs.pop("tail_ratio", None)
            ks = sorted(pairs)
            expect = [f"x{i+1}" for i in range(len(ks))]
            if ks != sorted(expect):
                raise ParseError(
                    f"const_table keys must be x1..x{len(ks)} (+ optional tail_ratio)",
                    m.end(),
                )
            xs = [pairs[f"x{i+1}"] for i in range(len(ks))]
            if not xs:
                raise ParseError("const_table needs at least x1", m.end())
            return const_table(xs, ratio)
    except ValueError as e:
        if isinstance(e, ParseError):
            raise
        raise ParseError(str(e), m.end()) from e

    raise ParseError(f"unknown family {ident!r}", 0)
