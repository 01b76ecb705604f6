import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idlv.errors import EvaluationError
from idlv.evaluation import (
    ConfusionCounts,
    MetricsReport,
    SweepPoint,
    best_threshold,
    candidate_thresholds,
    confusion_counts,
    emit_report,
    hter,
    parse_csv_report,
    threshold_sweep,
)
from idlv.labels import Liveness

R, F = Liveness.REAL, Liveness.FAKE


def tally(distances, is_real, tau):
    """Independent brute-force recount: accept iff d < tau."""
    ra = rr = fa = fr = 0
    for d, real in zip(distances, is_real):
        accepted = d < tau
        if real:
            ra, rr = ra + accepted, rr + (not accepted)
        else:
            fa, fr = fa + accepted, fr + (not accepted)
    return ra, rr, fa, fr


class TestConfusion:
    def test_all_correct(self):
        c = confusion_counts([R, R, F], [R, R, F])
        assert (c.frr, c.far) == (0.0, 0.0)

    def test_all_inverted(self):
        c = confusion_counts([F, F, R], [R, R, F])
        assert (c.frr, c.far) == (1.0, 1.0)

    def test_hand_tally(self):
        truths = [R] * 10 + [F] * 20
        decisions = [F] + [R] * 9 + [R] * 4 + [F] * 16
        c = confusion_counts(decisions, truths)
        assert c == ConfusionCounts(9, 1, 4, 16)
        assert c.frr == 0.1 and c.far == 0.2

    def test_accepts_strings_and_bools(self):
        c = confusion_counts(["real", "fake"], [True, False])
        assert c == ConfusionCounts(1, 0, 0, 1)

    def test_missing_class(self):
        with pytest.raises(EvaluationError):
            confusion_counts([R, R], [R, R])

    def test_length_mismatch(self):
        with pytest.raises(EvaluationError):
            confusion_counts([R], [R, F])


class TestHter:
    def test_values(self):
        assert hter(0.0, 0.0) == 0.0
        assert hter(0.37, 0.37) == 0.37
        assert hter(0.02, 0.04) == pytest.approx(0.03, abs=1e-17)

    @settings(max_examples=100)
    @given(st.floats(0, 1), st.floats(0, 1))
    def test_symmetric(self, a, b):
        assert hter(a, b) == hter(b, a)

    def test_range(self):
        with pytest.raises(EvaluationError):
            hter(1.2, 0.0)
        with pytest.raises(EvaluationError):
            hter(0.0, -0.1)


class TestSweep:
    def test_separable(self):
        sweep = threshold_sweep([0.1, 0.9], [R, F])
        assert len(sweep) == 3
        assert any(p.hter == 0 for p in sweep)

    def test_extremes(self, rng):
        d = rng.uniform(0, 2, size=30)
        truths = [R] * 15 + [F] * 15
        sweep = threshold_sweep(d, truths)
        assert (sweep[0].frr, sweep[0].far, sweep[0].hter) == (1.0, 0.0, 0.5)
        assert (sweep[-1].frr, sweep[-1].far, sweep[-1].hter) == (0.0, 1.0, 0.5)

    def test_monotone(self, rng):
        d = rng.uniform(0, 2, size=50)
        truths = list(rng.integers(0, 2, size=50).astype(bool))
        truths[0], truths[1] = True, False
        sweep = threshold_sweep(d, truths)
        assert all(b.tau > a.tau for a, b in zip(sweep, sweep[1:]))
        assert all(b.frr <= a.frr for a, b in zip(sweep, sweep[1:]))
        assert all(b.far >= a.far for a, b in zip(sweep, sweep[1:]))

    def test_single_class(self):
        with pytest.raises(EvaluationError):
            threshold_sweep([0.1, 0.2], [R, R])

    def test_matches_brute_force(self, rng):
        d = np.round(rng.uniform(0, 1, size=40), 2)  # force ties
        is_real = rng.integers(0, 2, size=40).astype(bool)
        is_real[:2] = [True, False]
        for p in threshold_sweep(d, is_real):
            ra, rr, fa, fr = tally(d, is_real, p.tau)
            assert p.frr == rr / (ra + rr) and p.far == fa / (fa + fr)


class TestBestThreshold:
    def test_separable_midpoint(self):
        report = best_threshold([0.1, 0.2, 0.9, 1.0], [R, R, F, F])
        assert report.threshold == pytest.approx(0.55, abs=1e-15)
        assert report.hter == 0.0

    def test_exhaustive_rescan(self, rng):
        d = rng.uniform(0, 1, size=25)
        truths = [R] * 12 + [F] * 13
        report = best_threshold(d, truths)
        assert report.hter == min(p.hter for p in threshold_sweep(d, truths))
        assert report.hter <= 0.5

    def test_all_identical(self):
        report = best_threshold([0.4] * 6, [R, R, R, F, F, F])
        assert report.hter == 0.5
        # both extremes give HTER 0.5; the lower-FRR rule keeps the accept-all candidate
        assert (report.frr, report.far) == (0.0, 1.0)
        assert report.threshold > 0.4
        assert all(p.hter == 0.5 for p in threshold_sweep([0.4] * 6, [R, R, R, F, F, F]))

    def test_inverted_scores_surface(self):
        report = best_threshold([0.9, 1.0, 0.1, 0.2], [R, R, F, F])
        assert report.hter == 0.5

    def test_candidates(self):
        np.testing.assert_allclose(candidate_thresholds([0.2, 0.1, 0.2, 0.5]), [0.05, 0.15, 0.35, 1.0])


class TestEmitReport:
    def report(self, h=0.0196):
        counts = ConfusionCounts(98, 2, 3, 97)
        return MetricsReport(0.5, 0.02, 0.0192, h, counts)

    def test_empty_sweep_header_only(self):
        assert emit_report(self.report(), [], "csv") == b"tau,frr,far,hter\n"

    def test_csv_round_trip(self, rng):
        sweep = [SweepPoint(*rng.uniform(size=4)) for _ in range(20)]
        back = parse_csv_report(emit_report(None, sweep, "csv"))
        for a, b in zip(sweep, back):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)

    def test_literal_hter(self):
        sweep = [SweepPoint(0.5, 0.02, 0.0192, 0.0196)]
        assert emit_report(None, sweep, "csv").decode().splitlines()[1] == "0.5,0.02,0.0192,0.0196"
        body = emit_report(self.report(), sweep, "json").decode()
        assert '"hter": 0.0196' in body
        assert json.loads(body)["report"]["hter"] == 0.0196

    def test_json_field_order(self):
        body = json.loads(emit_report(self.report(), [], "json"))
        assert list(body["report"]) == ["threshold", "frr", "far", "hter", "counts"]
        assert list(body["report"]["counts"]) == ["real_accepted", "real_rejected", "fake_accepted", "fake_rejected"]

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            emit_report(None, [], "xml")
