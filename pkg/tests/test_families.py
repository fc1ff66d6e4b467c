import math
from fractions import Fraction

import numpy as np
import pytest

from cgp.engine import make_rng
from cgp.errors import ParseError
from cgp.families import (
    FeedbackFamily,
    WaitingFamily,
    const_table,
    counter_families,
    embed_feedback,
    geometric_counter,
    parse_family,
    power_feedback,
    rademacher,
    random_power_feedback,
    two_point_counter,
)
from cgp.numerics import Dyadic


ALL_SPECS = [
    "power_exponential{p=0.75}",
    "power_feedback{p=1.5}",
    "random_power_feedback{p=0.4,lo=1,hi=2}",
    "two_point_counter{}",
    "geometric_counter{}",
    "rademacher{}",
    "const_table{x1=1}",
    "const_table{x1=0.5,tail_ratio=0.5}",
]


class TestParse:
    def test_power_feedback_values(self):
        fb = parse_family("power_feedback{p=1.5}")
        assert isinstance(fb, FeedbackFamily) and fb.deterministic
        assert fb.det_value(0) == 1.0
        assert fb.det_value(2) == pytest.approx(3.0 ** 1.5)

    def test_two_point_is_waiting(self):
        fam = parse_family("two_point_counter{}")
        assert isinstance(fam, WaitingFamily)
        assert fam.base.tail(1, 0.0) == pytest.approx(0.75)

    def test_missing_value_position(self):
        with pytest.raises(ParseError) as ei:
            parse_family("power_exponential{p=}")
        assert ei.value.position == 19

    def test_unknown_ident(self):
        with pytest.raises(ParseError):
            parse_family("mystery_family{}")

    def test_missing_key(self):
        with pytest.raises(ParseError):
            parse_family("power_feedback{}")

    def test_extra_key(self):
        with pytest.raises(ParseError):
            parse_family("power_feedback{p=1,q=2}")

    def test_duplicate_key(self):
        with pytest.raises(ParseError):
            parse_family("power_feedback{p=1,p=2}")

    def test_trailing_garbage(self):
        with pytest.raises(ParseError):
            parse_family("rademacher{} extra")

    def test_nonnumeric_value(self):
        with pytest.raises(ParseError):
            parse_family("power_feedback{p=abc}")

    def test_bad_domain_is_parse_error(self):
        with pytest.raises(ParseError):
            parse_family("random_power_feedback{p=1,lo=2,hi=1}")
        with pytest.raises(ParseError):
            parse_family("const_table{x1=1,x3=2}")

    @pytest.mark.parametrize("spec", ALL_SPECS)
    def test_canonical_roundtrip(self, spec):
        fam = parse_family(spec)
        again = parse_family(fam.name)
        assert again.name == fam.name

    def test_whitespace_tolerated(self):
        fam = parse_family("  power_feedback { p = 2 } ")
        assert fam.name == "power_feedback{p=2}"


class TestTwoPoint:
    def setup_method(self):
        self.fam = two_point_counter()

    def test_zero_probability(self):
        # P(X_1 = 0) = 1/4
        assert self.fam.base.tail(1, 0.0) == pytest.approx(0.75)
        assert self.fam.base.diag(1) == pytest.approx((0.75) ** 2 + 0.25 ** 2)

    def test_diag_j1_is_five_eighths(self):
        assert self.fam.base.diag(1) == pytest.approx(5.0 / 8.0)

    def test_samples_exact_dyadic(self):
        rng = make_rng(3)
        vals = {self.fam.base.sample(3, rng) for _ in range(200)}
        assert vals <= {Dyadic(0), Dyadic(1, 3)}
        assert Dyadic(1, 3) in vals

    def test_empirical_tail_and_diag(self):
        rng = make_rng(17)
        n = 100_000
        for j in (1, 2, 5):
            draws = np.array([float(self.fam.base.sample(j, rng)) for _ in range(n)])
            for C in (0.0, 2.0 ** -j / 2, 2.0 ** -j):
                p_true = self.fam.base.tail(j, C)
                emp = float(np.mean(draws > C))
                se = math.sqrt(max(p_true * (1 - p_true), 1e-12) / n)
                assert abs(emp - p_true) < 4 * se + 1e-9
        j = 2
        a = np.array([float(self.fam.base.sample(j, rng)) for _ in range(n)])
        b = np.array([float(self.fam.base.sample(j, rng)) for _ in range(n)])
        d_true = self.fam.base.diag(j)
        emp = float(np.mean(a == b))
        se = math.sqrt(d_true * (1 - d_true) / n)
        assert abs(emp - d_true) < 4 * se

    def test_trunc_mean(self):
        # E[X_2; X_2 <= C]: only value 1/4 with prob 8/9
        assert self.fam.base.trunc_mean(2, 1.0) == pytest.approx(0.25 * 8 / 9)
        assert self.fam.base.trunc_mean(2, 0.1) == 0.0

    def test_sup_tail_exact(self):
        assert self.fam.sup_tail(5) == Fraction(1, 32)


class TestGeometric:
    def setup_method(self):
        self.fam = geometric_counter()

    def test_diag_closed_form(self):
        # diag(1) = (3/4)/(5/4) = 3/5, so P(X != X') = 2/5
        assert self.fam.base.diag(1) == pytest.approx(0.6)

    @pytest.mark.parametrize("p", [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
    def test_diag_formula_vs_direct_sum(self, p):
        # sum_k p^2 (1-p)^(2(k-1)) to machine precision
        direct = sum(p * p * (1 - p) ** (2 * (k - 1)) for k in range(1, 2000))
        assert p / (2 - p) == pytest.approx(direct, abs=1e-14)

    def test_support_starts_at_one(self):
        rng = make_rng(5)
        draws = [self.fam.base.sample(1, rng) for _ in range(500)]
        assert min(draws) >= 1
        assert all(isinstance(d, int) for d in draws)
        for eps in (0.1, 0.5, 0.99):
            assert self.fam.prob_gt(1, eps) == 1.0

    def test_tail_and_trunc_mean_vs_enumeration(self):
        j = 2
        q = 1.0 / 9.0
        p = 1 - q
        for C in (0.5, 1.0, 2.5, 7.0):
            m = math.floor(C)
            tail_direct = sum(p * q ** (k - 1) for k in range(m + 1, 400))
            tm_direct = sum(k * p * q ** (k - 1) for k in range(1, m + 1))
            assert self.fam.base.tail(j, C) == pytest.approx(tail_direct, abs=1e-12)
            assert self.fam.base.trunc_mean(j, C) == pytest.approx(tm_direct, abs=1e-12)

    def test_sym_values_vs_mc(self):
        rng = make_rng(11)
        j, C = 1, 2.0
        n = 200_000
        a = rng.geometric(0.75, n)
        b = rng.geometric(0.75, n)
        z = a.astype(float) - b
        tail_emp = float(np.mean(np.abs(z) > C))
        m2_emp = float(np.mean(z * z * (np.abs(z) <= C)))
        t = self.fam.sym_tail(j, C)
        m = self.fam.sym_m2(j, C)
        assert abs(tail_emp - t) < 4 * math.sqrt(t * (1 - t) / n)
        assert abs(m2_emp - m) < 4 * math.sqrt(float(np.var(z * z * (np.abs(z) <= C))) / n)

    def test_empirical_diag(self):
        rng = make_rng(23)
        n = 100_000
        a = rng.geometric(8 / 9, n)
        b = rng.geometric(8 / 9, n)
        d_true = self.fam.base.diag(2)
        emp = float(np.mean(a == b))
        assert abs(emp - d_true) < 4 * math.sqrt(d_true * (1 - d_true) / n)


class TestEmbedding:
    def test_rate_indexing(self):
        # X_j ~ Exp(F(j-1)); for the power feedback F(j-1) = j^p
        fam = embed_feedback(power_feedback(2.0))
        assert fam.base.tail(1, 1.3) == pytest.approx(math.exp(-1.3))  # F(0) = 1

    def test_mean_is_reciprocal_feedback(self):
        # p = 1, j = 3: E[X_3] = 1/F(2) = 1/3
        fam = embed_feedback(power_feedback(1.0))
        assert fam.base.trunc_mean(3, 200.0) == pytest.approx(1.0 / 3.0, abs=1e-9)
        rng = make_rng(29)
        draws = np.array([fam.base.sample(3, rng) for _ in range(200_000)])
        assert abs(draws.mean() - 1 / 3) < 4 * draws.std() / math.sqrt(draws.size)

    def test_diag_zero(self):
        fam = embed_feedback(power_feedback(0.5))
        assert fam.base.diag(1) == 0.0
        assert fam.base.diag(17) == 0.0

    def test_empirical_tail(self):
        fam = embed_feedback(power_feedback(0.75))
        rng = make_rng(31)
        n = 100_000
        for j, C in ((1, 0.5), (3, 0.3), (8, 0.2)):
            draws = np.array([fam.base.sample(j, rng) for _ in range(n)])
            p_true = fam.base.tail(j, C)
            emp = float(np.mean(draws > C))
            assert abs(emp - p_true) < 4 * math.sqrt(p_true * (1 - p_true) / n)

    def test_random_feedback_embedding(self):
        fb = random_power_feedback(0.5, 1.0, 2.0)
        fam = embed_feedback(fb)
        rng = make_rng(37)
        n = 200_000
        j, C = 2, 0.4
        draws = np.array([fam.base.sample(j, rng) for _ in range(n)])
        p_true = fam.base.tail(j, C)
        emp = float(np.mean(draws > C))
        assert abs(emp - p_true) < 4 * math.sqrt(p_true * (1 - p_true) / n)
        # symmetric difference analytics averaged over the mixing law
        d2 = np.array([fam.base.sample(j, rng) for _ in range(n)])
        z = draws - d2
        st_true = fam.sym_tail(j, C)
        st_emp = float(np.mean(np.abs(z) > C))
        assert abs(st_emp - st_true) < 4 * math.sqrt(st_true * (1 - st_true) / n) + 1e-3

    def test_sym_tail_dominated_by_tail(self):
        # sym_tail(j, C) <= 2 tail(j, C/2) wherever both known
        fams = [
            two_point_counter(),
            geometric_counter(),
            embed_feedback(power_feedback(0.75)),
            embed_feedback(random_power_feedback(0.5, 1.0, 2.0)),
        ]
        for fam in fams:
            for j in (1, 2, 4, 9):
                for C in (0.25, 0.5, 1.0, 2.0):
                    s = fam.sym_tail(j, C)
                    t = fam.base.tail(j, C / 2)
                    if s is None or t is None:
                        continue
                    assert s <= 2 * t + 1e-9


class TestRandomPowerFeedback:
    def test_analytics_vs_quadrature(self):
        fb = random_power_feedback(0.7, 0.5, 2.5)
        j = 3
        c = (j + 1.0) ** 0.7
        ms = np.linspace(0.5, 2.5, 200_001)[:-1] + 1e-6  # fine midpoint-ish grid
        w = 2.0 / (ms.size)
        for eta in (0.5, 2.0, 5.0):
            p_num = float(np.mean(c * ms <= eta))
            assert fb.p_leq(j, eta) == pytest.approx(p_num, abs=1e-3)
            m2_num = float(np.mean(np.where(c * ms > eta, (c * ms) ** -2.0, 0.0)))
            assert fb.m2inv(j, eta) == pytest.approx(m2_num, abs=1e-4)
        m1_num = float(np.mean(1.0 / (c * ms)))
        assert fb.m1inv(j) == pytest.approx(m1_num, abs=1e-5)

    def test_samples_in_sandwich(self):
        fb = random_power_feedback(0.4, 1.0, 2.0)
        rng = make_rng(41)
        for j in (0, 1, 5):
            c = (j + 1.0) ** 0.4
            for _ in range(100):
                v = fb.sample_F(j, rng)
                assert c * 1.0 <= v <= c * 2.0

    def test_degenerate_uniform_is_deterministic(self):
        fb = random_power_feedback(1.0, 2.0, 2.0)
        assert fb.deterministic
        assert fb.det_value(3) == pytest.approx(8.0)


class TestConstTable:
    def test_repeat_mode(self):
        fam = const_table([1.0])
        assert float(fam.base.sample(1, None)) == 1.0
        assert float(fam.base.sample(100, None)) == 1.0
        assert fam.sup_tail is None  # diverges

    def test_ratio_mode_values_and_tail(self):
        fam = const_table([0.5], tail_ratio=0.5)
        # X_j = 2^-j, total 1
        assert float(fam.base.sample(3, None)) == 0.125
        assert fam.sup_tail(0) == Fraction(1)
        assert fam.sup_tail(4) == Fraction(1, 16)

    def test_table_then_ratio(self):
        fam = const_table([1.0, 0.25], tail_ratio=0.5)
        assert float(fam.base.sample(1, None)) == 1.0
        assert float(fam.base.sample(2, None)) == 0.25
        assert float(fam.base.sample(4, None)) == 0.0625
        assert fam.sup_tail(2) == Fraction(1, 4)

    def test_deterministic_flags(self):
        fam = const_table([1.0])
        assert fam.deterministic
        assert fam.base.diag(7) == 1.0
        assert fam.sym_tail(3, 0.1) == 0.0

    def test_zero_table(self):
        fam = const_table([0.0])
        assert fam.sup_tail(0) == Fraction(0)


class TestRademacher:
    def test_signed_flag(self):
        fam = rademacher()
        assert not fam.base.nonnegative
        rng = make_rng(43)
        vals = {fam.base.sample(1, rng) for _ in range(100)}
        assert vals == {-1, 1}
        assert fam.base.diag(9) == 0.5


def test_counter_families_pair():
    tp, ge = counter_families()
    assert tp.base.support_kind == "dyadic_lattice"
    assert ge.base.support_kind == "integer_lattice"
