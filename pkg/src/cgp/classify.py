"""Analytic almost-sure classification of leadership, strict leadership and
monopoly.

Verdict logic, with every clause backed by an audited convergence report:

* Leadership is a zero-one event: almost sure iff the symmetrised series
  sum (X_j - X'_j) converges almost surely (decided by the two-series check
  on the symmetric summands).
* Monopoly: almost never when the total waiting series diverges almost
  surely; almost sure when it converges AND either the mismatch series
  sum P(X_j != X'_j) diverges, or some term beyond the smaller initial
  value is atomless (these force distinct explosion times).
* Strict leadership: almost sure under leadership plus the mismatch /
  atomless condition plus summability of sum_j P(X_j > eps) for every
  eps > 0.  A finite epsilon grid cannot prove the universal quantifier, so
  the almost-sure verdict additionally requires the family to supply a
  symbolic (all-epsilon) evidence family; the grid is audited
  diagnostically.  Almost never exactly when leadership is almost never.

Outcome ``PositiveNondegenerate`` is never assigned here; only the harness
can, from explicit probability bounds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .errors import PreconditionError
from .families import FeedbackFamily, WaitingFamily
from .numerics import ConvergenceReport, SeriesStatus, series_eval
from .series import positive_series_check, symmetric_three_series

__all__ = ["Outcome", "Event", "Verdict", "classify_leadership",
           "classify_monopoly", "classify_strict", "classify_ballsbins"]


class Outcome(str, Enum):
    ALMOST_SURELY = "AlmostSurely"
    ALMOST_NEVER = "AlmostNever"
    POSITIVE_NONDEGENERATE = "PositiveNondegenerate"
    UNDETERMINED = "Undetermined"


class Event(str, Enum):
    LEADERSHIP = "Leadership"
    STRICT_LEADERSHIP = "StrictLeadership"
    MONOPOLY = "Monopoly"


@dataclass(frozen=True)
class Verdict:
    event: Event
    outcome: Outcome
    basis: str
    reports: tuple[tuple[str, ConvergenceReport], ...] = ()
    epsilon_grid: tuple[float, ...] = ()
    eta_grid: tuple[float, ...] = ()

    def to_record(self) -> dict:
        """Structured evidence chain, JSON-serialisable."""
        return {
            "event": self.event.value,
            "outcome": self.outcome.value,
            "basis": self.basis,
            "epsilon_grid": list(self.epsilon_grid),
            "eta_grid": list(self.eta_grid),
            "reports": [
                {
                    "series": name,
                    "status": rep.status.value,
                    "partial_value": rep.partial_value,
                    "truncation_index": rep.truncation_index,
                    "tail_bound": rep.tail_bound,
                    "witness": rep.witness,
                }
                for name, rep in self.reports
            ],
        }

    def to_text(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def classify_leadership(fam: WaitingFamily, C: float = 1.0) -> Verdict:
    """Zero-one verdict for leadership via the symmetrised series."""
    rep = symmetric_three_series(fam, C=C)
    if rep.convergent:
        out, basis = Outcome.ALMOST_SURELY, "symmetrised series converges a.s."
    elif rep.divergent:
        out, basis = Outcome.ALMOST_NEVER, "symmetrised series diverges a.s."
    else:
        out, basis = Outcome.UNDETERMINED, "symmetrised series undecided"
    return Verdict(Event.LEADERSHIP, out, basis, (("symmetric", rep),))


def _mismatch_branch(fam: WaitingFamily, initial: Sequence[int]):
    """Try the two routes that force distinct explosion times.

    Returns (ok, description, report-or-None).
    """
    # route 2: an atomless term above the smaller initial value
    floor = min(initial) if initial else 0
    for j in range(floor + 1, floor + 65):
        d = fam.base.diag(j)
        if d == 0.0:
            return True, f"term {j} is atomless: P(X_{j} != X'_{j}) = 1", None
        if d is None:
            break
    # route 1: divergent mismatch series
    def term(j):
        d = fam.base.diag(j)
        if d is None:
            raise _DiagUnknown()
        return 1.0 - d

    ev = fam.neq_evidence
    try:
        rep = series_eval(
            term,
            tail_bound=ev.tail_bound if ev else None,
            divergence_minorant=ev.minorant if ev else None,
            minorant_start=ev.minorant_start if ev else 1,
            tolerance=0.5,
        )
    except _DiagUnknown:
        return False, "mismatch series unknown", None
    if rep.divergent:
        return True, "mismatch series sum P(X_j != X'_j) diverges", rep
    return False, "mismatch condition not proven", rep


class _DiagUnknown(Exception):
    pass


def classify_monopoly(fam: WaitingFamily, initial: Sequence[int], C: float = 1.0) -> Verdict:
    """Monopoly verdict from total-series finiteness plus the mismatch branch."""
    if not fam.base.nonnegative:
        raise PreconditionError("monopoly classification needs nonnegative waiting times")
    total = positive_series_check(fam, C=C)
    reports = [("total", total)]
    if total.divergent:
        return Verdict(
            Event.MONOPOLY, Outcome.ALMOST_NEVER,
            "total waiting series diverges a.s.: every value diverges",
            tuple(reports),
        )
    if total.convergent:
        ok, desc, rep = _mismatch_branch(fam, initial)
        if rep is not None:
            reports.append(("mismatch", rep))
        if ok:
            return Verdict(
                Event.MONOPOLY, Outcome.ALMOST_SURELY,
                f"total series converges a.s. and explosion times are distinct ({desc})",
                tuple(reports),
            )
        return Verdict(
            Event.MONOPOLY, Outcome.UNDETERMINED,
            f"total series converges but {desc}",
            tuple(reports),
        )
    return Verdict(
        Event.MONOPOLY, Outcome.UNDETERMINED,
        "total series undecided",
        tuple(reports),
    )


def classify_strict(
    fam: WaitingFamily,
    initial: Sequence[int],
    eps_grid: Sequence[float] = (0.5, 1.0, 2.0),
    C: float = 1.0,
) -> Verdict:
    """Strict-leadership verdict (sufficient criterion plus leadership)."""
    if any(e <= 0 for e in eps_grid):
        raise PreconditionError("epsilon grid must be positive")
    lead = classify_leadership(fam, C=C)
    reports = list(lead.reports)
    if lead.outcome is Outcome.ALMOST_NEVER:
        return Verdict(
            Event.STRICT_LEADERSHIP, Outcome.ALMOST_NEVER,
            "leadership fails a.s., so strict leadership fails",
            tuple(reports), epsilon_grid=tuple(eps_grid),
        )
    if lead.outcome is not Outcome.ALMOST_SURELY:
        return Verdict(
            Event.STRICT_LEADERSHIP, Outcome.UNDETERMINED,
            "leadership undecided",
            tuple(reports), epsilon_grid=tuple(eps_grid),
        )
    ok, desc, rep = _mismatch_branch(fam, initial)
    if rep is not None:
        reports.append(("mismatch", rep))
    if not ok:
        return Verdict(
            Event.STRICT_LEADERSHIP, Outcome.UNDETERMINED,
            f"leadership holds but {desc}",
            tuple(reports), epsilon_grid=tuple(eps_grid),
        )
    if fam.prob_gt_evidence is None:
        return Verdict(
            Event.STRICT_LEADERSHIP, Outcome.UNDETERMINED,
            "no symbolic (all-epsilon) exceedance evidence; a finite grid cannot "
            "prove the universal epsilon condition",
            tuple(reports), epsilon_grid=tuple(eps_grid),
        )
    for eps in eps_grid:
        ev = fam.prob_gt_evidence(eps)
        rep_eps = series_eval(
            lambda j, e=eps: fam.prob_gt(j, e),
            tail_bound=ev.tail_bound,
            divergence_minorant=ev.minorant,
            minorant_start=ev.minorant_start,
            tolerance=0.5,
        )
        reports.append((f"exceedance(eps={eps:g})", rep_eps))
        if not rep_eps.convergent:
            return Verdict(
                Event.STRICT_LEADERSHIP, Outcome.UNDETERMINED,
                f"exceedance series not proven summable at eps={eps:g}",
                tuple(reports), epsilon_grid=tuple(eps_grid),
            )
    return Verdict(
        Event.STRICT_LEADERSHIP, Outcome.ALMOST_SURELY,
        f"leadership a.s., {desc}, and sum P(X_j > eps) summable for all eps "
        "(symbolic evidence, grid audited)",
        tuple(reports), epsilon_grid=tuple(eps_grid),
    )


# ---------------------------------------------------------------------------
# Discrete chain (feedback) classification
# ---------------------------------------------------------------------------

def _eval_evidence(term, ev, tolerance=0.5):
    return series_eval(
        term,
        tail_bound=ev.tail_bound if ev else None,
        divergence_minorant=ev.minorant if ev else None,
        minorant_start=ev.minorant_start if ev else 1,
        tolerance=tolerance,
    )


def classify_ballsbins(
    fb: FeedbackFamily,
    eta_grid: Sequence[float] = (0.5, 1.0, 2.0),
) -> tuple[Verdict, Verdict]:
    """Zero-one verdicts (monopoly, strict leadership) for the urn chain.

    Monopoly is almost sure iff sum 1/F(j) converges almost surely; strict
    leadership iff sum 1/F(j)^2 does, which for random feedback is decided
    through the small-value / truncated-reciprocal-square pair of series at
    every threshold eta.  As with epsilon above, the almost-sure verdict
    needs symbolic (all-eta) evidence; a proven divergence at any single
    grid eta already forces the almost-never verdict.
    """
    if any(e <= 0 for e in eta_grid):
        raise PreconditionError("eta grid must be positive")
    reports_m: list[tuple[str, ConvergenceReport]] = []

    if fb.m1inv is None:
        mono = Verdict(Event.MONOPOLY, Outcome.UNDETERMINED,
                       "reciprocal-mean analytics unknown", (), eta_grid=tuple(eta_grid))
    else:
        rep = _eval_evidence(lambda i: fb.m1inv(i - 1), fb.m1inv_evidence)
        reports_m.append(("sum 1/F", rep))
        if rep.convergent:
            mono = Verdict(
                Event.MONOPOLY, Outcome.ALMOST_SURELY,
                "sum 1/F(j) converges a.s.",
                tuple(reports_m), eta_grid=tuple(eta_grid),
            )
        elif rep.divergent:
            mono = Verdict(
                Event.MONOPOLY, Outcome.ALMOST_NEVER,
                "sum 1/F(j) diverges a.s.",
                tuple(reports_m), eta_grid=tuple(eta_grid),
            )
        else:
            mono = Verdict(Event.MONOPOLY, Outcome.UNDETERMINED,
                           "sum 1/F(j) undecided", tuple(reports_m),
                           eta_grid=tuple(eta_grid))

    strict = _classify_ballsbins_strict(fb, eta_grid)
    return mono, strict


def _classify_ballsbins_strict(fb: FeedbackFamily, eta_grid) -> Verdict:
    reports: list[tuple[str, ConvergenceReport]] = []
    have = (fb.p_leq is not None and fb.m2inv is not None
            and fb.p_leq_evidence is not None and fb.m2inv_evidence is not None)
    if not have:
        return Verdict(Event.STRICT_LEADERSHIP, Outcome.UNDETERMINED,
                       "small-value / reciprocal-square analytics unknown",
                       (), eta_grid=tuple(eta_grid))
    all_convergent = True
    for eta in eta_grid:
        rep_small = _eval_evidence(
            lambda i, e=eta: fb.p_leq(i - 1, e), fb.p_leq_evidence(eta))
        reports.append((f"small(eta={eta:g})", rep_small))
        rep_m2 = _eval_evidence(
            lambda i, e=eta: fb.m2inv(i - 1, e), fb.m2inv_evidence(eta))
        reports.append((f"recip2(eta={eta:g})", rep_m2))
        if rep_small.divergent or rep_m2.divergent:
            which = "small-value" if rep_small.divergent else "truncated reciprocal-square"
            return Verdict(
                Event.STRICT_LEADERSHIP, Outcome.ALMOST_NEVER,
                f"{which} series diverges at eta={eta:g}: sum 1/F(j)^2 = inf a.s.",
                tuple(reports), eta_grid=tuple(eta_grid),
            )
        if not (rep_small.convergent and rep_m2.convergent):
            all_convergent = False
    if all_convergent:
        return Verdict(
            Event.STRICT_LEADERSHIP, Outcome.ALMOST_SURELY,
            "both eta-series summable for all eta (symbolic evidence, grid audited): "
            "sum 1/F(j)^2 < inf a.s.",
            tuple(reports), eta_grid=tuple(eta_grid),
        )
    return Verdict(Event.STRICT_LEADERSHIP, Outcome.UNDETERMINED,
                   "eta-series not decided", tuple(reports), eta_grid=tuple(eta_grid))
