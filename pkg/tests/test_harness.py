import json
import math
import os
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats as scipy_stats

from cgp.classify import Outcome
from cgp.errors import PreconditionError
from cgp.families import feedback_from_function, parse_family, power_feedback
from cgp.harness import (
    ExperimentSpec,
    chi_square_gof,
    equivalence_test,
    prop4_bounds,
    prop4_verdicts,
    run_mc,
    stats,
    sweep,
    wilson_ci,
)


class TestWilson:
    def test_zero_successes(self):
        lo, hi = wilson_ci(0, 10)
        assert lo == 0.0
        assert hi == pytest.approx(0.27753279986, abs=1e-9)

    def test_against_statsmodels(self):
        from statsmodels.stats.proportion import proportion_confint

        for k, n in ((0, 10), (3, 17), (50, 100), (99, 100)):
            lo, hi = wilson_ci(k, n)
            slo, shi = proportion_confint(k, n, method="wilson")
            assert lo == pytest.approx(float(slo), abs=1e-9)
            assert hi == pytest.approx(float(shi), abs=1e-9)

    def test_symmetry_under_complement(self):
        lo0, hi0 = wilson_ci(0, 10)
        lo1, hi1 = wilson_ci(10, 10)
        assert lo1 == pytest.approx(1.0 - hi0, abs=1e-12)
        assert hi1 == pytest.approx(1.0 - lo0, abs=1e-12)

    def test_bad_inputs(self):
        with pytest.raises(PreconditionError):
            wilson_ci(5, 4)
        with pytest.raises(PreconditionError):
            wilson_ci(-1, 4)


class TestChiSquare:
    def test_perfectly_proportional(self):
        stat, dof, p = chi_square_gof([25, 25, 25, 25], [0.25] * 4)
        assert stat == 0.0
        assert dof == 3
        assert p == pytest.approx(1.0)

    def test_p_value_matches_scipy(self):
        counts = [30, 20, 25, 25]
        stat, dof, p = chi_square_gof(counts, [0.25] * 4)
        assert p == pytest.approx(float(scipy_stats.chi2.sf(stat, dof)), rel=1e-12)

    def test_pooling_small_cells(self):
        probs = [0.49, 0.49, 0.01, 0.01]
        counts = [49, 49, 1, 1]
        stat, dof, p = chi_square_gof(counts, probs, min_expected=5.0)
        assert dof == 2  # two tiny cells pooled into one

    def test_probs_must_sum_to_one(self):
        with pytest.raises(PreconditionError):
            chi_square_gof([1, 2], [0.6, 0.5])

    def test_dof_guard(self):
        with pytest.raises(PreconditionError):
            chi_square_gof([5], [1.0])

    def test_dispatcher(self):
        assert stats("wilson_ci", k=0, n=10) == wilson_ci(0, 10)
        with pytest.raises(PreconditionError):
            stats("bootstrap")


class TestEquivalence:
    def test_prefix_zero_trivial(self):
        fb = power_feedback(1.0)
        assert equivalence_test(fb, (1, 2, 1), 0, 100) == (0.0, 0, 1.0)

    def test_null_passes_small(self):
        fb = power_feedback(1.0)
        stat, dof, p = equivalence_test(fb, (1, 2, 1), 3, 20_000, seed=5)
        assert p > 1e-3

    def test_corrupted_fails(self):
        fb = power_feedback(1.0)
        bad = feedback_from_function(lambda j: float(j + 2), "offbyone")
        stat, dof, p = equivalence_test(fb, (1, 2, 1), 3, 20_000, seed=5,
                                        simulator_family=bad)
        assert p < 1e-6

    def test_ballsbins_self_test(self):
        fb = power_feedback(1.0)
        stat, dof, p = equivalence_test(fb, (1, 2, 1), 3, 20_000, seed=6,
                                        simulator="ballsbins")
        assert p > 1e-3

    def test_random_feedback_rejected(self):
        fb = parse_family("random_power_feedback{p=1,lo=1,hi=2}")
        with pytest.raises(PreconditionError):
            equivalence_test(fb, (1, 1), 2, 100)


class TestRunMC:
    def _spec(self, **kw):
        base = dict(
            family="power_exponential{p=1.5}",
            initial=(0, 0),
            horizons=(200, 500),
            replications=40,
            events=("leadership", "monopoly"),
            seed=17,
            workers=1,
        )
        base.update(kw)
        return ExperimentSpec(**base)

    def test_reproducible(self):
        a = run_mc(self._spec())
        b = run_mc(self._spec())
        assert a == b

    def test_degenerate_single_replication(self):
        ests = run_mc(self._spec(replications=1, horizons=(100,)))
        for est in ests:
            assert est.estimate in (0.0, 1.0)
            assert 0.0 <= est.wilson_low <= est.wilson_high <= 1.0

    def test_bad_horizons_rejected(self):
        with pytest.raises(PreconditionError):
            self._spec(horizons=(500, 200)).validate()
        with pytest.raises(PreconditionError):
            self._spec(horizons=()).validate()

    def test_unknown_event_rejected(self):
        with pytest.raises(PreconditionError):
            self._spec(events=("sorcery",)).validate()

    def test_jsonl_identical_across_workers(self, tmp_path):
        lines = {}
        for w in (1, 3):
            path = tmp_path / f"out{w}.jsonl"
            run_mc(self._spec(workers=w, out_path=str(path)))
            with open(path) as fh:
                recs = [json.loads(line) for line in fh]
            for rec in recs:
                rec.pop("timestamp", None)
            lines[w] = recs
        assert lines[1] == lines[3]

    def test_jsonl_structure(self, tmp_path):
        path = tmp_path / "out.jsonl"
        run_mc(self._spec(out_path=str(path)))
        with open(path) as fh:
            recs = [json.loads(line) for line in fh]
        kinds = [r["type"] for r in recs]
        assert kinds[0] == "meta"
        assert kinds.count("rep") == 2 * 40
        assert kinds.count("estimate") == 2 * 2
        assert "timestamp" in recs[0]
        assert recs[0]["seed_rule"].startswith("philox")

    def test_ballsbins_process(self):
        spec = ExperimentSpec(
            family="power_feedback{p=1}",
            initial=(1, 1),
            horizons=(300,),
            replications=30,
            events=("leadership",),
            process="ballsbins",
            seed=3,
        )
        ests = run_mc(spec)
        assert len(ests) == 1


class TestProp4:
    def test_bounds_values(self):
        b = prop4_bounds(width=1e-6)
        assert b.monopoly_complement_lower == pytest.approx(0.25, abs=1e-5)
        assert b.mon_lower == pytest.approx(1.0 / 12.0, abs=1e-5)
        lo, hi = b.square_product
        assert lo <= 0.5 <= hi
        for val in (b.monopoly_complement_lower, b.slead_complement_lower,
                    b.mon_lower, b.slead_lower):
            assert 0.0 < val < 1.0
        m_lo, m_hi = b.monopoly_envelope()
        s_lo, s_hi = b.slead_envelope()
        assert 0 < m_lo < m_hi < 1
        assert 0 < s_lo < s_hi < 1

    def test_geometric_product_bounds(self):
        b = prop4_bounds(width=1e-6)
        lo, hi = b.geometric_product
        # oracle: direct product to depth 10^6 with residual bracketing
        direct = 1.0
        for j in range(1, 1_000_001):
            direct *= 1.0 - 2.0 / ((j + 1.0) ** 2 + 1.0)
        assert lo <= direct
        # the true infinite product is below the finite-depth one by < 2e-6
        assert hi >= direct * (1 - 3e-6)

    def test_nondegenerate_verdicts(self):
        mono, slead = prop4_verdicts(prop4_bounds(width=1e-6))
        assert mono.outcome is Outcome.POSITIVE_NONDEGENERATE
        assert slead.outcome is Outcome.POSITIVE_NONDEGENERATE


class TestSweep:
    def test_small_sweep(self, tmp_path):
        out = tmp_path / "sweep.csv"
        rows = sweep([0.75, 0.25], [100, 300], 20, seed=9, out_path=str(out))
        assert [r["p"] for r in rows] == sorted(r["p"] for r in rows)
        got = {(r["p"], r["horizon"], r["event"]) for r in rows}
        assert len(got) == 2 * 2 * 3
        verdicts = {(r["p"], r["event"]): r["verdict"] for r in rows}
        assert verdicts[(0.25, "leadership")] == "AlmostNever"
        assert verdicts[(0.75, "strict_leadership")] == "AlmostSurely"
        assert verdicts[(0.75, "monopoly")] == "AlmostNever"
        text = out.read_text().splitlines()
        assert text[0].startswith("p,horizon,event")
        assert len(text) == 1 + len(rows)

    def test_empty_grid_rejected(self):
        with pytest.raises(PreconditionError):
            sweep([], [100], 5)
        with pytest.raises(PreconditionError):
            sweep([1.0], [], 5)
