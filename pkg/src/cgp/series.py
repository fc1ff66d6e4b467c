"""Statement-level random-series machinery.

Closed forms for the difference of two exponentials (tail and truncated
second moment), the two/three-series convergence checkers for symmetric and
nonnegative summand sequences, the atom criterion for convergent sums of
independent terms together with an exact brute-force convolution oracle, and
an exact fluctuation scanner for partial-sum paths.

All checkers return verdicts only when the supplied evidence proves them;
anything else is ``Undetermined``.  The fluctuation scanner is a probe, not a
decision procedure: no finite path can certify that partial sums oscillate
unboundedly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import TYPE_CHECKING, Iterable, Optional, Sequence, Union

import numpy as np
from scipy import special as sp

from .errors import PreconditionError, ResourceBudgetError
from .numerics import ConvergenceReport, SeriesStatus, series_eval

if TYPE_CHECKING:  # pragma: no cover
    from .families import LatticeSequence, SeriesEvidence, WaitingFamily

__all__ = [
    "exp_diff_tail",
    "exp_diff_m2",
    "symmetric_three_series",
    "positive_series_check",
    "AtomAnswer",
    "AtomVerdict",
    "AtomReport",
    "BruteAtom",
    "atom_criterion",
    "atom_bruteforce",
    "FluctuationStats",
    "fluctuation_scan",
]


# ---------------------------------------------------------------------------
# Exponential-difference closed forms
# ---------------------------------------------------------------------------

def _q(x):
    """q(x) = 1 - e^{-x}(1 + x + x^2/2), computed stably for all x >= 0.

    Equals the regularised lower incomplete gamma P(3, x), since
    q'(x) = x^2 e^{-x} / 2.
    """
    return sp.gammainc(3.0, x)


def exp_diff_tail(r, r2, C):
    """P(|Y - Y'| > C) for independent Y ~ Exp(r), Y' ~ Exp(r2).

    Closed form: r2/(r+r2) * e^{-r C} + r/(r+r2) * e^{-r2 C}.
    Symmetric in (r, r2); equals 1 at C = 0.
    """
    r = np.asarray(r, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    if np.any(r <= 0) or np.any(r2 <= 0):
        raise PreconditionError("rates must be positive")
    if np.any(np.asarray(C) < 0):
        raise PreconditionError("C must be nonnegative")
    s = r + r2
    out = (r2 / s) * np.exp(-r * C) + (r / s) * np.exp(-r2 * C)
    return float(out) if out.ndim == 0 else out


def exp_diff_m2(r, r2, C):
    """E[(Y - Y')^2 ; |Y - Y'| <= C] for independent exponentials.

    Closed form 2/(r+r2) * (r2 q(Cr)/r^2 + r q(Cr2)/r2^2) with
    q(x) = 1 - e^{-x}(1 + x + x^2/2); C = inf gives the full second moment
    2/(r+r2) * (r2/r^2 + r/r2^2).  Nondecreasing in C, zero at C = 0.
    """
    r = np.asarray(r, dtype=float)
    r2 = np.asarray(r2, dtype=float)
    if np.any(r <= 0) or np.any(r2 <= 0):
        raise PreconditionError("rates must be positive")
    if np.any(np.asarray(C) < 0):
        raise PreconditionError("C must be nonnegative")
    s = r + r2
    if np.ndim(C) == 0 and math.isinf(float(np.asarray(C))):
        out = (2.0 / s) * (r2 / r ** 2 + r / r2 ** 2)
    else:
        out = (2.0 / s) * (r2 * _q(C * r) / r ** 2 + r * _q(C * r2) / r2 ** 2)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Three-series checkers
# ---------------------------------------------------------------------------

def _series_from_evidence(term, evidence, tolerance):
    if evidence is None:
        return series_eval(term, tolerance=tolerance)
    return series_eval(
        term,
        tail_bound=evidence.tail_bound,
        divergence_minorant=evidence.minorant,
        minorant_start=evidence.minorant_start,
        tolerance=tolerance,
    )


def _combine_two(rep_a: ConvergenceReport, rep_b: ConvergenceReport,
                 name_a: str, name_b: str) -> ConvergenceReport:
    witness = f"{name_a}: [{rep_a.status.value}] {rep_a.witness}; " \
              f"{name_b}: [{rep_b.status.value}] {rep_b.witness}"
    if rep_a.divergent or rep_b.divergent:
        status = SeriesStatus.PROVEN_DIVERGENT
    elif rep_a.convergent and rep_b.convergent:
        status = SeriesStatus.PROVEN_CONVERGENT
    else:
        status = SeriesStatus.UNDETERMINED
    tail = None
    if status is SeriesStatus.PROVEN_CONVERGENT:
        tail = (rep_a.tail_bound or 0.0) + (rep_b.tail_bound or 0.0)
    return ConvergenceReport(
        status=status,
        partial_value=rep_a.partial_value + rep_b.partial_value,
        truncation_index=max(rep_a.truncation_index, rep_b.truncation_index),
        tail_bound=tail,
        witness=witness,
    )


def symmetric_three_series(fam: "WaitingFamily", C: float = 1.0,
                           tolerance: float = 0.5) -> ConvergenceReport:
    """Almost-sure convergence verdict for the symmetrised series of X_j - X'_j.

    For symmetric summands the truncated-mean series vanishes identically, so
    the criterion reduces to the tail series P(|X_j - X'_j| > C) and the
    truncated second-moment series.  Convergent iff both are proven
    convergent; divergent if either is proven divergent; else undetermined.
    """
    if C <= 0:
        raise PreconditionError("C must be positive")

    def tail_term(j):
        v = fam.sym_tail(j, C)
        if v is None:
            raise _Unknown()
        return v

    def m2_term(j):
        v = fam.sym_m2(j, C)
        if v is None:
            raise _Unknown()
        return v

    tail_ev = fam.sym_tail_evidence(C) if fam.sym_tail_evidence else None
    m2_ev = fam.sym_m2_evidence(C) if fam.sym_m2_evidence else None
    try:
        rep_tail = _series_from_evidence(tail_term, tail_ev, tolerance)
        rep_m2 = _series_from_evidence(m2_term, m2_ev, tolerance)
    except _Unknown:
        return _unknown_report("symmetrised analytics unavailable")
    return _combine_two(rep_tail, rep_m2, "sym_tail", "sym_m2")


def positive_series_check(fam: "WaitingFamily", C: float = 1.0,
                          tolerance: float = 0.5) -> ConvergenceReport:
    """Almost-sure finiteness verdict for sum X_j, X_j >= 0.

    For nonnegative summands two series suffice: the tail series
    P(X_j > C) and the truncated-mean series E[X_j; X_j <= C] (the variance
    series is controlled by C times the truncated mean, by the
    variance-of-bounded-variable inequality).
    """
    if C <= 0:
        raise PreconditionError("C must be positive")
    if not fam.base.nonnegative:
        raise PreconditionError("positive_series_check needs nonnegative summands")

    def tail_term(j):
        v = fam.base.tail(j, C)
        if v is None:
            raise _Unknown()
        return v

    def tm_term(j):
        v = fam.base.trunc_mean(j, C)
        if v is None:
            raise _Unknown()
        return v

    tail_ev = fam.tail_evidence(C) if fam.tail_evidence else None
    tm_ev = fam.trunc_mean_evidence(C) if fam.trunc_mean_evidence else None
    try:
        rep_tail = _series_from_evidence(tail_term, tail_ev, tolerance)
        rep_tm = _series_from_evidence(tm_term, tm_ev, tolerance)
    except _Unknown:
        return _unknown_report("tail/truncated-mean analytics unavailable")
    return _combine_two(rep_tail, rep_tm, "tail", "trunc_mean")


class _Unknown(Exception):
    pass


def _unknown_report(reason: str) -> ConvergenceReport:
    return ConvergenceReport(
        status=SeriesStatus.UNDETERMINED,
        partial_value=math.nan,
        truncation_index=0,
        tail_bound=None,
        witness=reason,
    )


# ---------------------------------------------------------------------------
# Atom criterion
# ---------------------------------------------------------------------------

class AtomAnswer(str, Enum):
    YES = "Yes"
    NO = "No"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class AtomVerdict:
    """Existence of an atom in the law of a convergent sum of independent terms.

    The criterion: an atom exists iff every term's self-coincidence
    probability P(Y_j = Y'_j) is positive AND the mismatch series
    sum_j P(Y_j != Y'_j) converges.  ``evidence`` records the fired clause.
    (Almost-sure convergence of the sum itself is the caller's
    responsibility.)
    """

    has_atom: AtomAnswer
    reason: str
    neq_report: Optional[ConvergenceReport] = None
    atomless_index: Optional[int] = None


def _diag_of(obj):
    # accepts WaitingFamily or LatticeSequence
    if hasattr(obj, "diag"):
        return obj.diag
    return obj.base.diag


def _neq_evidence_of(obj):
    return getattr(obj, "neq_evidence", None)


def atom_criterion(fam, tolerance: float = 0.5) -> AtomVerdict:
    """Apply the mismatch-series criterion to a term sequence with known diag.

    Yes requires diag(j) > 0 for every j up to the certified truncation depth
    (beyond it the convergent mismatch tail forces diag -> 1, so positivity
    holds for all larger j) and a proven-convergent mismatch series.  No
    requires an atomless term (diag(j) = 0) or a proven-divergent mismatch
    series.  Any unknown diag, or an unproven series, yields Undetermined.
    """
    diag = _diag_of(fam)
    evidence = _neq_evidence_of(fam)

    def neq_term(j):
        d = diag(j)
        if d is None:
            raise _Unknown()
        return 1.0 - d

    # scan a modest prefix for an atomless term first
    probe_hi = 64
    for j in range(1, probe_hi + 1):
        d = diag(j)
        if d is None:
            return AtomVerdict(AtomAnswer.UNDETERMINED, f"diag({j}) unknown")
        if d == 0.0:
            return AtomVerdict(
                AtomAnswer.NO,
                f"term {j} is atomless (diag = 0), so the sum has no atom",
                atomless_index=j,
            )

    try:
        rep = _series_from_evidence(neq_term, evidence, tolerance)
    except _Unknown:
        return AtomVerdict(AtomAnswer.UNDETERMINED, "diag unknown at some index")

    if rep.divergent:
        return AtomVerdict(
            AtomAnswer.NO,
            "mismatch series sum P(Y_j != Y'_j) proven divergent",
            neq_report=rep,
        )
    if rep.convergent:
        # need diag(j) > 0 for ALL j: check explicitly up to the truncation
        # depth; beyond it 1 - diag(j) <= tail < 1 once tail < 1
        J = rep.truncation_index
        if rep.tail_bound is not None and rep.tail_bound < 1.0:
            for j in range(probe_hi + 1, J + 1):
                d = diag(j)
                if d is None:
                    return AtomVerdict(AtomAnswer.UNDETERMINED, f"diag({j}) unknown")
                if d == 0.0:
                    return AtomVerdict(
                        AtomAnswer.NO,
                        f"term {j} is atomless (diag = 0)",
                        atomless_index=j,
                    )
            return AtomVerdict(
                AtomAnswer.YES,
                "all terms have atoms and the mismatch series converges",
                neq_report=rep,
            )
    return AtomVerdict(AtomAnswer.UNDETERMINED, "mismatch series not decided", neq_report=rep)


# ---------------------------------------------------------------------------
# Brute-force atom oracle (exact convolution)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BruteAtom:
    """One atom of the truncated sum with sound full-sum mass bounds.

    ``location`` is the exact value of the truncated sum; ``prefix_mass`` the
    exact (possibly pruned-lower) probability the truncated convolution
    assigns there.  ``mass_lower``/``mass_upper`` bound the mass the full sum
    places at ``location + tail anchor sum`` (when that shift is finite) or,
    equivalently, the anchored-centred limit; the bounds account for the
    mass clipped from infinite supports, pruned during convolution, and the
    probability that any tail term deviates from its anchor.
    """

    location: Fraction
    prefix_mass: Fraction
    mass_lower: float
    mass_upper: float


@dataclass(frozen=True)
class AtomReport:
    atoms: tuple[BruteAtom, ...]
    depth: int
    tail_neq_mass: Optional[Fraction]
    tail_anchor_sum: Optional[Fraction]
    slack: Fraction  # clipped + pruned mass inside the prefix
    max_atom_upper: float
    atomless: bool = False

    def max_prefix_atom(self) -> Optional[BruteAtom]:
        return max(self.atoms, key=lambda a: a.prefix_mass, default=None)


def atom_bruteforce(
    seq: "LatticeSequence",
    depth: int,
    state_budget: int = 200_000,
    mass_floor: Fraction = Fraction(0),
) -> AtomReport:
    """Exact convolution of the first ``depth`` terms, with mass intervals.

    Works entirely in rational arithmetic.  If any term is atomless, the full
    sum is atomless (convolution with a continuous law stays continuous) and
    the report is empty with a zero mass ceiling.  Otherwise every reported
    interval is sound: masses can leak out of an atom when a tail term
    misses its anchor or when support was clipped/pruned, and can leak in by
    at most the same budget; in addition no full-sum atom can exceed the
    largest prefix atom (convolution never concentrates mass).
    """
    if depth < 0:
        raise PreconditionError("depth must be >= 0")
    mass_floor = Fraction(mass_floor)

    terms = [seq.term(j) for j in range(1, depth + 1)]
    if any(t.atomless for t in terms):
        return AtomReport(
            atoms=(),
            depth=depth,
            tail_neq_mass=None,
            tail_anchor_sum=None,
            slack=Fraction(0),
            max_atom_upper=0.0,
            atomless=True,
        )

    # rescale to integer arithmetic: support values over a common location
    # denominator L, masses over a running probability denominator D
    L = 1
    for t in terms:
        for v, _m in t.support:
            L = L * v.denominator // math.gcd(L, v.denominator)

    dist: dict[int, int] = {0: 1}
    D = 1
    slack = Fraction(0)  # clipped + pruned, all inside the prefix
    for j, term in enumerate(terms, start=1):
        slack += term.clipped
        d_j = 1
        for _v, m in term.support:
            d_j = d_j * m.denominator // math.gcd(d_j, m.denominator)
        support = [
            ((v.numerator * L) // v.denominator, (m.numerator * d_j) // m.denominator)
            for v, m in term.support
        ]
        new: dict[int, int] = {}
        get = new.get
        for v, m in dist.items():
            for sv, sm in support:
                key = v + sv
                mm = m * sm
                acc = get(key)
                new[key] = mm if acc is None else acc + mm
        D *= d_j
        if mass_floor > 0:
            thr = (mass_floor.numerator * D + mass_floor.denominator - 1) // mass_floor.denominator
            if thr > 1:
                pruned_mass = 0
                kept = {}
                for k, m in new.items():
                    if m >= thr:
                        kept[k] = m
                    else:
                        pruned_mass += m
                if pruned_mass:
                    slack += Fraction(pruned_mass, D)
                new = kept
        if len(new) > state_budget:
            raise ResourceBudgetError(
                f"convolution support {len(new)} exceeds budget {state_budget} at depth {j}"
            )
        dist = new

    tail_neq = seq.neq_tail(depth) if seq.neq_tail is not None else None
    shift = seq.anchor_tail_sum(depth) if seq.anchor_tail_sum is not None else None

    max_kept = Fraction(max(dist.values(), default=0), D)
    ceiling = max_kept + slack  # no full-sum atom can exceed this
    atoms = []
    for v, m_int in sorted(dist.items(), key=lambda kv: (-kv[1], kv[0])):
        m = Fraction(m_int, D)
        if tail_neq is not None and tail_neq < 1:
            lower = m * (1 - tail_neq)
            upper = min(m + slack + tail_neq * ceiling, ceiling)
        else:
            lower = Fraction(0)
            upper = ceiling
        atoms.append(
            BruteAtom(
                location=Fraction(v, L),
                prefix_mass=m,
                mass_lower=_round_down(lower),
                mass_upper=_round_up(upper),
            )
        )
    return AtomReport(
        atoms=tuple(atoms),
        depth=depth,
        tail_neq_mass=tail_neq,
        tail_anchor_sum=shift,
        slack=slack,
        max_atom_upper=_round_up(ceiling),
    )


def _round_down(f: Fraction) -> float:
    x = float(f)
    return x if Fraction(x) <= f else math.nextafter(x, -math.inf)


def _round_up(f: Fraction) -> float:
    x = float(f)
    return x if Fraction(x) >= f else math.nextafter(x, math.inf)


# ---------------------------------------------------------------------------
# Fluctuation probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FluctuationStats:
    """Exact path statistics of a finite partial-sum stream.

    ``zero_crossings`` counts strict sign changes (a path touching zero and
    returning to the same sign does not cross); ``last_sign_change`` is the
    1-based index of the last crossing, 0 if none.
    """

    running_max: float
    running_min: float
    zero_crossings: int
    last_sign_change: int
    length: int


def fluctuation_scan(partial_sums: Union[Iterable, np.ndarray]) -> FluctuationStats:
    """Scan a finite stream of partial sums for range and sign-change counts."""
    arr = np.asarray(
        partial_sums if isinstance(partial_sums, (np.ndarray, list, tuple))
        else list(partial_sums),
        dtype=float,
    )
    if arr.ndim != 1 or arr.size == 0:
        raise PreconditionError("partial_sums must be a nonempty 1-d stream")
    signs = np.sign(arr).astype(np.int8)
    nz = signs[signs != 0]
    if nz.size:
        changes = np.nonzero(nz[1:] != nz[:-1])[0]
        crossings = int(changes.size)
        if crossings:
            # map the change position back to the index in the full stream
            nz_idx = np.nonzero(signs != 0)[0]
            last = int(nz_idx[changes[-1] + 1]) + 1
        else:
            last = 0
    else:
        crossings, last = 0, 0
    return FluctuationStats(
        running_max=float(arr.max()),
        running_min=float(arr.min()),
        zero_crossings=crossings,
        last_sign_change=last,
        length=int(arr.size),
    )
