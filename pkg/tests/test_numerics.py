import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cgp.numerics import (
    ConvergenceReport,
    Dyadic,
    SeriesStatus,
    compensated_sum,
    infinite_product,
    series_eval,
)
from cgp.numerics import dyadic_arith


dyadics = st.builds(
    Dyadic,
    st.integers(min_value=-(10 ** 12), max_value=10 ** 12),
    st.integers(min_value=0, max_value=60),
)


class TestDyadic:
    def test_half_plus_quarter(self):
        assert Dyadic(1, 1) + Dyadic(1, 2) == Dyadic(3, 2)

    def test_geometric_identity(self):
        total = Dyadic(0)
        for j in range(1, 31):
            total = total + Dyadic(1, j)
        assert total == Dyadic(2 ** 30 - 1, 30)

    def test_dyadic_carry_compare(self):
        # 2^-1 vs sum_{j=2}^{31} 2^-j: greater by exactly 2^-31
        rhs = Dyadic(0)
        for j in range(2, 32):
            rhs = rhs + Dyadic(1, j)
        lhs = Dyadic(1, 1)
        assert dyadic_arith(lhs, rhs, "compare") == 1
        assert lhs - rhs == Dyadic(1, 31)

    def test_canonical_form(self):
        d = Dyadic(4, 2)  # 4/4 = 1
        assert (d.num, d.exp) == (1, 0)
        assert Dyadic(0, 7).exp == 0
        d2 = Dyadic(6, 1)  # 3
        assert (d2.num, d2.exp) == (3, 0)
        d3 = Dyadic(3, 5)
        assert (d3.num, d3.exp) == (3, 5)

    def test_render_parse_roundtrip(self):
        d = Dyadic(-13, 7)
        assert d.render() == "-13/2^7"
        assert Dyadic.parse(d.render()) == d

    def test_from_float_exact(self):
        for x in [0.5, 0.25, 3.75, -1.0, 1e-300, 123456789.0]:
            assert float(Dyadic.from_float(x)) == x
            assert Dyadic.from_float(x).as_fraction() == Fraction(x)

    @given(dyadics, dyadics)
    @settings(max_examples=300)
    def test_arith_matches_fraction(self, a, b):
        fa, fb = a.as_fraction(), b.as_fraction()
        assert (a + b).as_fraction() == fa + fb
        assert (a - b).as_fraction() == fa - fb
        assert (a * b).as_fraction() == fa * fb
        assert (a < b) == (fa < fb)
        assert (a == b) == (fa == fb)

    @given(dyadics, dyadics)
    @settings(max_examples=300)
    def test_compare_consistent_with_floats_beyond_gap(self, a, b):
        # ordering agrees with float comparison whenever the gap exceeds 2^-40
        gap = abs((a - b).as_fraction())
        if gap > Fraction(1, 2 ** 40) and abs(float(a)) < 1e15 and abs(float(b)) < 1e15:
            assert (float(a) < float(b)) == (a < b)

    def test_total_order_and_hash(self):
        xs = [Dyadic(1, 1), Dyadic(1, 2), Dyadic(3, 2), Dyadic(-1, 0)]
        assert sorted(xs) == [Dyadic(-1, 0), Dyadic(1, 2), Dyadic(1, 1), Dyadic(3, 2)]
        assert len({Dyadic(2, 1), Dyadic(1, 0)}) == 1


class TestCompensatedSum:
    def test_empty(self):
        assert compensated_sum([]) == (0.0, 0.0)

    def test_cancellation(self):
        total, err = compensated_sum([1e16, 1.0, -1e16])
        assert total == 1.0
        assert err >= 0.0

    def test_many_tenths(self):
        total, err = compensated_sum([0.1] * 10 ** 7)
        assert abs(total - 1e6) < 1e-6

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            compensated_sum([1.0, math.inf])
        with pytest.raises(ValueError):
            compensated_sum([math.nan])

    @given(st.lists(st.floats(min_value=-1e12, max_value=1e12,
                              allow_nan=False, allow_infinity=False), max_size=200))
    @settings(max_examples=200)
    def test_error_bound_holds(self, xs):
        total, err = compensated_sum(xs)
        exact = sum(Fraction(x) for x in xs)
        assert abs(Fraction(total) - exact) <= Fraction(err) + Fraction(1, 10 ** 300)


class TestSeriesEval:
    def test_basel_sum_tight(self):
        # sum 1/(j+1)^2 = pi^2/6 - 1, certified by the integral tail bound 1/J
        rep = series_eval(
            lambda j: 1.0 / (j + 1.0) ** 2,
            tail_bound=lambda J: 1.0 / J,
            tolerance=1e-9,
            sum_budget=1 << 31,
        )
        assert rep.status is SeriesStatus.PROVEN_CONVERGENT
        truth = math.pi ** 2 / 6.0 - 1.0
        assert rep.tail_bound <= 1.1e-9
        assert abs(rep.partial_value - truth) <= 1e-9

    def test_harmonic_divergent(self):
        rep = series_eval(
            lambda j: 1.0 / (j + 1.0),
            divergence_minorant=lambda j: 1.0 / (j + 1.0),
        )
        assert rep.status is SeriesStatus.PROVEN_DIVERGENT
        assert "harmonic" in rep.witness

    def test_zero_series(self):
        rep = series_eval(lambda j: 0.0 * j, tail_bound=lambda J: 0.0)
        assert rep.status is SeriesStatus.PROVEN_CONVERGENT
        assert rep.partial_value == 0.0

    def test_negative_term_rejected(self):
        with pytest.raises(ValueError):
            series_eval(lambda j: -1.0 + 0.0 * j, tail_bound=lambda J: 0.0)

    def test_no_evidence_is_undetermined(self):
        rep = series_eval(lambda j: 1.0 / (j + 1.0) ** 2)
        assert rep.status is SeriesStatus.UNDETERMINED

    def test_bad_minorant_not_below_term(self):
        # minorant exceeding the term must not prove divergence
        rep = series_eval(
            lambda j: 1.0 / (j + 1.0) ** 2,
            divergence_minorant=lambda j: 1.0 / (j + 1.0),
        )
        assert rep.status is SeriesStatus.UNDETERMINED

    def test_coarse_budget_still_proves(self):
        # slowly decaying tail: budget stops the sum early but the verdict holds
        rep = series_eval(
            lambda j: np.asarray(j, dtype=float) ** -1.2,
            tail_bound=lambda J: J ** -0.2 / 0.2,
            tolerance=1e-6,
            sum_budget=1 << 12,
        )
        assert rep.status is SeriesStatus.PROVEN_CONVERGENT
        assert rep.tail_bound > 1e-6  # tolerance not reached, bound still valid
        assert "not reached" in rep.witness

    @given(st.floats(min_value=1.2, max_value=3.0), st.floats(min_value=0.1, max_value=5.0))
    @settings(max_examples=30, deadline=None)
    def test_no_contradictory_verdicts_under_domination(self, s, c):
        # term_small <= term_big pointwise: small cannot be proven divergent
        # while big is proven convergent
        big = series_eval(
            lambda j: c * np.asarray(j, dtype=float) ** -s,
            tail_bound=lambda J: c * J ** (1 - s) / (s - 1),
            tolerance=1e-3,
        )
        small = series_eval(
            lambda j: 0.5 * c * np.asarray(j, dtype=float) ** -s,
            divergence_minorant=lambda j: 0.5 * c * np.asarray(j, dtype=float) ** -s,
        )
        assert not (big.convergent and small.divergent)


class TestInfiniteProduct:
    def test_telescoping_half(self):
        lo, hi = infinite_product(
            lambda j: 1.0 / (np.asarray(j, dtype=float) + 1.0) ** 2,
            lambda J: 1.0 / J,
            width=1e-6,
        )
        assert lo <= 0.5 <= hi
        assert hi - lo < 1e-6

    def test_zero_factors(self):
        lo, hi = infinite_product(lambda j: 0.0 * j, lambda J: 0.0)
        assert lo <= 1.0 <= hi
        assert hi - lo < 1e-12

    def test_matches_direct_depth50(self):
        # q_j = 2^-j against exact rational direct multiplication
        truth = Fraction(1)
        for j in range(1, 51):
            truth *= 1 - Fraction(1, 2 ** j)
        lo, hi = infinite_product(
            lambda j: 2.0 ** -np.asarray(j, dtype=float),
            lambda J: 2.0 ** -float(J),
            width=1e-12,
        )
        # the infinite product differs from depth 50 by less than its tail
        assert lo <= float(truth)
        assert hi >= float(truth) * (1 - 2.0 ** -49)

    def test_brackets_direct_product_at_2J(self):
        for q in (lambda j: 1.0 / (np.asarray(j, dtype=float) + 2.0) ** 2,
                  lambda j: 3.0 ** -np.asarray(j, dtype=float)):
            lo, hi = infinite_product(q, lambda J: 2.0 / J, width=1e-10)
            direct = 1.0
            for j in range(1, 2 * 4096):
                direct *= 1.0 - float(q(j))
            assert lo <= direct * (1 + 1e-12)
            # direct at finite depth overestimates the infinite product
            assert direct >= lo

    def test_rejects_factor_at_least_one(self):
        with pytest.raises(ValueError):
            infinite_product(lambda j: np.where(np.asarray(j) == 3, 1.0, 0.1),
                             lambda J: 0.0)

    def test_divergent_tail_gives_zero_lower(self):
        lo, hi = infinite_product(
            lambda j: np.full_like(np.asarray(j, dtype=float), 0.5),
            lambda J: math.inf,
            max_terms=1 << 12,
        )
        assert lo == 0.0
        assert hi <= 1.0


class TestReportInvariants:
    def test_convergent_report_shape(self):
        rep = series_eval(lambda j: 2.0 ** -np.asarray(j, dtype=float),
                          tail_bound=lambda J: 2.0 ** -float(J), tolerance=1e-10)
        assert rep.convergent
        assert rep.tail_bound is not None and rep.tail_bound >= 0.0
        assert math.isfinite(rep.tail_bound)

    def test_divergent_report_has_witness(self):
        rep = series_eval(lambda j: 1.0 + 0.0 * j, divergence_minorant=lambda j: 1.0 + 0.0 * j)
        assert rep.divergent
        assert rep.tail_bound is None
        assert "minorant" in rep.witness
