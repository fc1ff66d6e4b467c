"""Exact and robust arithmetic primitives.

Three layers:

* :class:`Dyadic` -- exact rationals with power-of-two denominators.  Event
  times in exact simulation mode are dyadic, so equality of jump times (tie
  detection) is decidable, not approximate.
* :func:`compensated_sum` -- Neumaier-compensated floating summation with a
  rigorous error bound, used for partial sums of waiting times in float mode.
* :func:`series_eval` / :func:`infinite_product` -- evaluation of infinite
  sums and products of nonnegative terms with *caller-supplied* proof
  obligations.  A convergence verdict is only issued when a valid tail bound
  shrinks below tolerance; a divergence verdict only when a harmonic-type
  minorant is supplied and audited.  Plain numeric summation never decides
  convergence: it yields ``Undetermined``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import total_ordering
from typing import Callable, Iterable, Optional

import numpy as np

__all__ = [
    "Dyadic",
    "SeriesStatus",
    "ConvergenceReport",
    "compensated_sum",
    "series_eval",
    "infinite_product",
]

_EPS = 2.0 ** -53


# ---------------------------------------------------------------------------
# Dyadic rationals
# ---------------------------------------------------------------------------

@total_ordering
class Dyadic:
    """Exact dyadic rational ``num / 2**exp`` with arbitrary-precision ``num``.

    Canonical form: ``exp`` is minimal, i.e. ``num`` is odd whenever
    ``exp > 0`` (and ``exp == 0`` when ``num == 0``).  Addition, subtraction,
    multiplication and comparison are exact; there is no rounding anywhere.
    """

    __slots__ = ("num", "exp")

    def __init__(self, num: int, exp: int = 0):
        num = int(num)
        exp = int(exp)
        if exp < 0:
            # normalise x / 2**(-k) = x * 2**k
            num <<= -exp
            exp = 0
        if num == 0:
            exp = 0
        else:
            while exp > 0 and (num & 1) == 0:
                num >>= 1
                exp -= 1
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "exp", exp)

    def __setattr__(self, *a):  # immutable after construction
        raise AttributeError("Dyadic is immutable")

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_float(cls, x: float) -> "Dyadic":
        """Exact conversion: every finite float is a dyadic rational."""
        if not math.isfinite(x):
            raise ValueError(f"not a finite float: {x!r}")
        n, d = float(x).as_integer_ratio()
        return cls(n, d.bit_length() - 1)

    @classmethod
    def from_fraction(cls, f: Fraction) -> "Dyadic":
        d = f.denominator
        if d & (d - 1):
            raise ValueError(f"{f} has a non power-of-two denominator")
        return cls(f.numerator, d.bit_length() - 1)

    @classmethod
    def parse(cls, text: str) -> "Dyadic":
        m = re.fullmatch(r"\s*(-?\d+)/2\^(\d+)\s*", text)
        if m is None:
            raise ValueError(f"cannot parse dyadic {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))

    # -- conversions -------------------------------------------------------

    def as_fraction(self) -> Fraction:
        return Fraction(self.num, 1 << self.exp)

    def __float__(self) -> float:
        return self.num / (1 << self.exp)

    def render(self) -> str:
        """Canonical text form ``num/2^exp``."""
        return f"{self.num}/2^{self.exp}"

    # -- arithmetic (exact) ------------------------------------------------

    def __add__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        e = max(self.exp, other.exp)
        return Dyadic(
            (self.num << (e - self.exp)) + (other.num << (e - other.exp)), e
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self + (-other)

    def __rsub__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return other + (-self)

    def __neg__(self):
        return Dyadic(-self.num, self.exp)

    def __mul__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return Dyadic(self.num * other.num, self.exp + other.exp)

    __rmul__ = __mul__

    # -- order -------------------------------------------------------------

    def __eq__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return self.num == other.num and self.exp == other.exp

    def __lt__(self, other):
        other = _coerce(other)
        if other is NotImplemented:
            return NotImplemented
        return (self.num << other.exp) < (other.num << self.exp)

    def __hash__(self):
        return hash(self.as_fraction())

    def __repr__(self):
        return f"Dyadic({self.num}, {self.exp})"

    def __bool__(self):
        return self.num != 0


def _coerce(x):
    if isinstance(x, Dyadic):
        return x
    if isinstance(x, int):
        return Dyadic(x, 0)
    return NotImplemented


def dyadic_arith(a: Dyadic, b: Dyadic, op: str):
    """Explicit operation dispatcher: op in {'add', 'sub', 'compare'}.

    'compare' returns -1, 0 or +1 (true rational order).
    """
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "compare":
        if a < b:
            return -1
        return 0 if a == b else 1
    raise ValueError(f"unknown op {op!r}")


# ---------------------------------------------------------------------------
# Compensated summation
# ---------------------------------------------------------------------------

def compensated_sum(terms: Iterable[float]) -> tuple[float, float]:
    """Neumaier-compensated sum of a finite stream of floats.

    Returns ``(total, error_bound)`` where the exact rational sum of the
    inputs lies within ``error_bound`` of ``total``.  The bound is
    ``(2u + 8nu^2) * sum|x| + u|total|`` with ``u = 2^-53``, i.e. it grows at
    most linearly in machine epsilon times the term count.

    Non-finite input terms are rejected.
    """
    s = 0.0
    c = 0.0
    abs_sum = 0.0
    n = 0
    for x in terms:
        x = float(x)
        if not math.isfinite(x):
            raise ValueError(f"non-finite term {x!r}")
        n += 1
        abs_sum += abs(x)
        t = s + x
        if abs(s) >= abs(x):
            c += (s - t) + x
        else:
            c += (x - t) + s
        s = t
    total = s + c
    err = (2.0 * _EPS + 8.0 * n * _EPS * _EPS) * abs_sum + _EPS * abs(total)
    return total, err


class _Accumulator:
    """Incremental Neumaier accumulator (running compensated sum)."""

    __slots__ = ("s", "c")

    def __init__(self):
        self.s = 0.0
        self.c = 0.0

    def add(self, x: float) -> float:
        s = self.s
        t = s + x
        if abs(s) >= abs(x):
            self.c += (s - t) + x
        else:
            self.c += (x - t) + s
        self.s = t
        return t + self.c

    @property
    def value(self) -> float:
        return self.s + self.c


# ---------------------------------------------------------------------------
# Series evaluation with proof obligations
# ---------------------------------------------------------------------------

class SeriesStatus(str, Enum):
    PROVEN_CONVERGENT = "ProvenConvergent"
    PROVEN_DIVERGENT = "ProvenDivergent"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class ConvergenceReport:
    """Outcome of evaluating a nonnegative series.

    ``tail_bound`` is a valid upper bound on the omitted mass beyond
    ``truncation_index`` when the status is ``PROVEN_CONVERGENT`` (it
    includes the floating-point summation error), and ``None`` otherwise.
    ``witness`` records which bound fired.
    """

    status: SeriesStatus
    partial_value: float
    truncation_index: int
    tail_bound: Optional[float]
    witness: str

    @property
    def convergent(self) -> bool:
        return self.status is SeriesStatus.PROVEN_CONVERGENT

    @property
    def divergent(self) -> bool:
        return self.status is SeriesStatus.PROVEN_DIVERGENT


def _eval_terms(term: Callable, lo: int, hi: int) -> np.ndarray:
    """Evaluate term(j) for j in [lo, hi).  Tries a vectorised call first."""
    if hi <= lo:
        return np.empty(0)
    js = np.arange(lo, hi, dtype=np.float64)
    try:
        vals = np.asarray(term(js), dtype=np.float64)
        if vals.shape == js.shape:
            return vals
    except Exception:
        pass
    return np.array([float(term(int(j))) for j in range(lo, hi)], dtype=np.float64)


def _block_sum(term: Callable, start: int, stop: int, block: int) -> tuple[float, float]:
    """Sum term(j) for j in [start, stop] in blocks.  Returns (sum, float_err).

    Blocks are summed with numpy pairwise summation and combined with a
    compensated accumulator; the returned error bound covers both stages.
    """
    acc = _Accumulator()
    abs_total = 0.0
    lo = start
    while lo <= stop:
        hi = min(stop + 1, lo + block)
        vals = _eval_terms(term, lo, hi)
        if not np.all(np.isfinite(vals)):
            raise ValueError("series term is not finite")
        if np.any(vals < 0):
            j_bad = lo + int(np.argmax(vals < 0))
            raise ValueError(f"negative series term at j={j_bad}")
        acc.add(float(np.sum(vals)))
        abs_total += float(np.sum(np.abs(vals)))
        lo = hi
    n = stop - start + 1
    err = (math.log2(max(block, 2)) + 4.0) * _EPS * abs_total + 8.0 * n * _EPS * _EPS * abs_total
    return acc.value, err


_PROBE_CAP = 1 << 50


def _minorant_probes(start: int) -> list[int]:
    probes = [start + k for k in range(17)]
    j = start
    while j < _PROBE_CAP:
        j *= 2
        probes.append(j)
    return probes


def series_eval(
    term: Callable,
    tail_bound: Optional[Callable[[int], float]] = None,
    divergence_minorant: Optional[Callable] = None,
    tolerance: float = 1e-9,
    start: int = 1,
    minorant_start: Optional[int] = None,
    max_terms: int = 1 << 33,
    sum_budget: int = 1 << 26,
    block: int = 1 << 20,
) -> ConvergenceReport:
    """Evaluate ``sum_{j>=start} term(j)`` for nonnegative ``term``.

    Proof protocol (honest by construction):

    * ``ProvenConvergent`` requires ``tail_bound``, a caller-certified upper
      bound ``J -> sum_{j>J} term(j)``: any finite certified bound already
      proves summability.  The truncation depth is pushed until the bound
      drops below ``tolerance`` when that takes at most ``sum_budget``
      summed terms; otherwise the partial sum stops at the budget and the
      report carries the (coarser) certified bound at that depth, with the
      witness flagging that the requested tolerance was not reached.
    * ``ProvenDivergent`` requires ``divergence_minorant``, a caller-certified
      pointwise lower bound on ``term`` for ``j >= minorant_start`` whose
      series diverges by harmonic comparison.  The audit checks, on a
      geometric probe grid, that ``j * minorant(j) >= c`` for some ``c > 0``
      and that the minorant does not exceed the term; the recorded constant
      goes into the witness.  Validity off the probe grid is the caller's
      obligation (the same trust model as ``tail_bound``).
    * Otherwise ``Undetermined``.
    """
    # Convergence branch: search for a truncation depth certified by the bound.
    if tail_bound is not None:
        J_precise = None
        J_finite = None
        probe = max(64, start)
        while probe - start <= max_terms:
            tb = float(tail_bound(probe))
            if math.isfinite(tb):
                if J_finite is None and probe - start <= sum_budget:
                    J_finite = probe
                if tb <= tolerance:
                    J_precise = probe
                    break
            if probe - start > sum_budget and J_finite is not None:
                break  # cannot afford the precise depth; settle for J_finite
            probe *= 2
        J = J_precise if (J_precise is not None and J_precise - start <= sum_budget) else J_finite
        if J is not None:
            total, ferr = _block_sum(term, start, J, block)
            tb = float(tail_bound(J))
            met = tb <= tolerance
            note = "" if met else " (convergence proven; requested tolerance not reached)"
            return ConvergenceReport(
                status=SeriesStatus.PROVEN_CONVERGENT,
                partial_value=total,
                truncation_index=J,
                tail_bound=tb + ferr,
                witness=f"tail_bound({J}) = {tb:.3g}, tolerance {tolerance:.3g}{note}",
            )

    # Divergence branch: audit the minorant against harmonic comparison.
    if divergence_minorant is not None:
        m_start = minorant_start if minorant_start is not None else start
        c = math.inf
        ratios = []
        for j in _minorant_probes(m_start):
            mj = float(divergence_minorant(j))
            tj = float(term(j))
            if tj < 0:
                raise ValueError(f"negative series term at j={j}")
            if mj < 0:
                raise ValueError(f"negative minorant at j={j}")
            if mj > tj * (1 + 1e-9) + 1e-300:
                c = -math.inf
                break
            ratios.append(j * mj)
            c = min(c, j * mj)
        # a certificate must keep j*minorant(j) bounded below: a harmonic
        # ratio that still decays at the largest probed scales indicates a
        # sub-harmonic minorant, which proves nothing
        tail_ratios = ratios[-6:]
        decaying = len(tail_ratios) >= 2 and all(
            b < a * (1.0 - 1e-12) for a, b in zip(tail_ratios, tail_ratios[1:])
        )
        if c > 0 and math.isfinite(c) and not decaying:
            head, _ = _block_sum(term, start, min(start + 4096, start + max_terms), block)
            return ConvergenceReport(
                status=SeriesStatus.PROVEN_DIVERGENT,
                partial_value=head,
                truncation_index=start + 4096,
                tail_bound=None,
                witness=(
                    f"divergent minorant: term(j) >= minorant(j) and "
                    f"j*minorant(j) >= {c:.3g} for probed j >= {m_start} "
                    f"(harmonic comparison)"
                ),
            )

    head, _ = _block_sum(term, start, start + 4096, block)
    return ConvergenceReport(
        status=SeriesStatus.UNDETERMINED,
        partial_value=head,
        truncation_index=start + 4096,
        tail_bound=None,
        witness="no tail bound reached tolerance and no divergent minorant was audited",
    )


# ---------------------------------------------------------------------------
# Rigorous infinite products
# ---------------------------------------------------------------------------

def infinite_product(
    factor: Callable,
    tail_bound: Callable[[int], float],
    width: float = 1e-9,
    start: int = 1,
    max_terms: int = 1 << 33,
    block: int = 1 << 20,
) -> tuple[float, float]:
    """Enclosure ``(lower, upper)`` for ``prod_{j>=start} (1 - q_j)``.

    ``factor`` supplies ``q_j`` in ``[0, 1)`` (values >= 1 are rejected);
    ``tail_bound(J)`` must bound ``sum_{j>J} q_j``.  The head product is
    accumulated as ``sum log1p(-q_j)`` with an explicit rounding-error budget
    applied in the directed sense (subtracted from the lower exponent, added
    to the upper), and the tail product is bracketed by
    ``[max(0, 1 - t), 1]`` via the Weierstrass inequality.  If the tail never
    certifies ``t < 1`` within the term budget the lower bound degrades to 0,
    which is the honest answer (the product may vanish).
    """
    target = max(width / 4.0, 4.0 * _EPS)
    J = None
    probe = max(64, start)
    while probe - start < max_terms:
        t = float(tail_bound(probe))
        if t <= target:
            J = probe
            break
        probe *= 2
    if J is None:
        # fall back: any certified t < 1 still gives a nonzero lower bound
        probe = max(64, start)
        best = None
        while probe - start < max_terms:
            t = float(tail_bound(probe))
            if t < 1.0:
                best = probe
                break
            probe *= 2
        if best is None:
            J, t = max(64, start), math.inf
        else:
            J, t = best, float(tail_bound(best))
    else:
        t = float(tail_bound(J))

    log_sum = _Accumulator()
    abs_log = 0.0
    lo = start
    while lo <= J:
        hi = min(J + 1, lo + block)
        q = _eval_terms(factor, lo, hi)
        if np.any(q >= 1.0):
            j_bad = lo + int(np.argmax(q >= 1.0))
            raise ValueError(f"factor q_{j_bad} >= 1")
        if np.any(q < 0.0):
            j_bad = lo + int(np.argmax(q < 0.0))
            raise ValueError(f"factor q_{j_bad} < 0")
        logs = np.log1p(-q)
        log_sum.add(float(np.sum(logs)))
        abs_log += float(np.sum(np.abs(logs)))
        lo = hi
    # rounding budget: <= 2 ulp per log1p plus pairwise-summation growth
    err = (math.log2(max(block, 2)) + 6.0) * _EPS * abs_log + 16.0 * _EPS
    s = log_sum.value
    tail_lo = max(0.0, 1.0 - t) if math.isfinite(t) else 0.0
    lower = math.exp(s - err) * tail_lo * (1.0 - 4.0 * _EPS)
    upper = math.exp(s + err) * (1.0 + 4.0 * _EPS)
    return max(0.0, lower), min(1.0, upper)
