import json

import pytest

from cgp.classify import (
    Event,
    Outcome,
    classify_ballsbins,
    classify_leadership,
    classify_monopoly,
    classify_strict,
)
from cgp.errors import PreconditionError
from cgp.families import (
    IndexedLaw,
    WaitingFamily,
    const_table,
    embed_feedback,
    geometric_counter,
    parse_family,
    power_feedback,
    random_power_feedback,
    two_point_counter,
)

AS = Outcome.ALMOST_SURELY
AN = Outcome.ALMOST_NEVER
UND = Outcome.UNDETERMINED


def unknown_family():
    """A waiting family with no usable analytics at all."""
    base = IndexedLaw(
        support_kind="atomless",
        sample=lambda j, rng: float(rng.random()),
        tail=lambda j, C: None,
        diag=lambda j: None,
        trunc_mean=lambda j, C: None,
    )
    return WaitingFamily(
        name="opaque{}",
        base=base,
        sym_tail=lambda j, C: None,
        sym_m2=lambda j, C: None,
        prob_gt=lambda j, eps: None,
    )


class TestLeadership:
    def test_power_three_quarters_almost_surely(self):
        v = classify_leadership(embed_feedback(power_feedback(0.75)))
        assert v.outcome is AS

    def test_power_quarter_almost_never(self):
        v = classify_leadership(embed_feedback(power_feedback(0.25)))
        assert v.outcome is AN

    def test_unknown_analytics_undetermined(self):
        v = classify_leadership(unknown_family())
        assert v.outcome is UND

    def test_outcome_is_zero_one_only(self):
        for p in (0.25, 0.5, 0.75, 1.0, 2.0):
            v = classify_leadership(embed_feedback(power_feedback(p)))
            assert v.outcome in (AS, AN, UND)

    def test_C_invariance(self):
        for p in (0.4, 0.75, 1.5):
            outs = {classify_leadership(embed_feedback(power_feedback(p)), C=C).outcome
                    for C in (0.5, 1.0, 2.0)}
            assert len(outs) == 1


class TestMonopoly:
    def test_power_two_almost_surely(self):
        v = classify_monopoly(embed_feedback(power_feedback(2.0)), (0, 0))
        assert v.outcome is AS
        assert "atomless" in v.basis

    def test_power_one_almost_never(self):
        v = classify_monopoly(embed_feedback(power_feedback(1.0)), (0, 0))
        assert v.outcome is AN

    def test_two_point_undetermined(self):
        # convergent total series, but neither mismatch route is provable:
        # consistent with the true non-zero-one monopoly probability
        v = classify_monopoly(two_point_counter(), (0, 0))
        assert v.outcome is UND

    def test_lockstep_table_almost_never(self):
        v = classify_monopoly(const_table([1.0]), (0, 0))
        assert v.outcome is AN


class TestStrict:
    def test_power_three_quarters_almost_surely(self):
        v = classify_strict(embed_feedback(power_feedback(0.75)), (0, 0))
        assert v.outcome is AS

    def test_geometric_undetermined(self):
        # exceedance series fails for eps < 1: no symbolic supplier exists
        v = classify_strict(geometric_counter(), (0, 0))
        assert v.outcome is UND

    def test_power_quarter_almost_never(self):
        v = classify_strict(embed_feedback(power_feedback(0.25)), (0, 0))
        assert v.outcome is AN

    def test_epsilon_grid_must_be_positive(self):
        with pytest.raises(PreconditionError):
            classify_strict(embed_feedback(power_feedback(1.0)), (0, 0), eps_grid=(0.0,))


class TestBallsBins:
    @pytest.mark.parametrize("p,mono,strict", [
        (0.25, AN, AN),
        (0.4, AN, AN),
        (0.5, AN, AN),
        (0.6, AN, AS),
        (0.75, AN, AS),
        (1.0, AN, AS),
        (1.5, AS, AS),
        (2.0, AS, AS),
    ])
    def test_power_phase_table(self, p, mono, strict):
        vm, vs = classify_ballsbins(power_feedback(p))
        assert vm.outcome is mono
        assert vs.outcome is strict

    def test_random_feedback_divergent(self):
        vm, vs = classify_ballsbins(random_power_feedback(0.4, 1.0, 2.0))
        assert vm.outcome is AN
        assert vs.outcome is AN

    def test_random_feedback_convergent(self):
        vm, vs = classify_ballsbins(random_power_feedback(2.0, 0.5, 3.0))
        assert vm.outcome is AS
        assert vs.outcome is AS

    def test_outcomes_zero_one(self):
        for p in (0.3, 0.7, 1.2):
            vm, vs = classify_ballsbins(power_feedback(p))
            assert vm.outcome in (AS, AN, UND)
            assert vs.outcome in (AS, AN, UND)


class TestConsistency:
    CORPUS = [0.25, 0.4, 0.5, 0.6, 0.75, 1.0, 1.5, 2.0]

    def test_verdict_hierarchy(self):
        fams = [embed_feedback(power_feedback(p)) for p in self.CORPUS]
        fams += [two_point_counter(), geometric_counter(), const_table([1.0])]
        for fam in fams:
            lead = classify_leadership(fam).outcome
            strict = classify_strict(fam, (0, 0)).outcome
            mono = classify_monopoly(fam, (0, 0)).outcome
            if mono is AS:
                assert strict is AS
            if strict is AS:
                assert lead is AS
            if lead is AN:
                assert strict is AN
            if strict is AN and strict is not UND:
                assert mono in (AN, UND)  # monopoly may be undecided, never AS

    def test_cross_validation_with_embedding(self):
        for p in self.CORPUS:
            fb = power_feedback(p)
            vm, vs = classify_ballsbins(fb)
            fam = embed_feedback(fb)
            lead = classify_leadership(fam).outcome
            strict = classify_strict(fam, (0, 0)).outcome
            mono = classify_monopoly(fam, (0, 0)).outcome
            if vs.outcome is not UND and strict is not UND:
                assert vs.outcome is strict
            if vm.outcome is not UND and mono is not UND:
                assert vm.outcome is mono
            # strict leadership a.s. implies leadership a.s.
            if vs.outcome is AS and lead is not UND:
                assert lead is AS

    def test_serialisation(self):
        v = classify_strict(embed_feedback(power_feedback(0.75)), (0, 0))
        rec = json.loads(v.to_text())
        assert rec["event"] == Event.STRICT_LEADERSHIP.value
        assert rec["outcome"] == "AlmostSurely"
        assert rec["reports"]
        for r in rec["reports"]:
            assert {"series", "status", "witness", "truncation_index"} <= set(r)
