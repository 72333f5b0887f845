import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascade_verify.errors import DegenerateTrialSet
from cascade_verify.evaluation import (EerResult, ModeResult, TrialScore, build_trials, compute_eer, confusion_matrices,
                                       det_curve, format_report, operating_points, ordering_check, read_trials,
                                       summarize, write_reports, write_trials)
from cascade_verify.synth import SynthSpec, plan_corpus

from oracles import sweep_eer


def trials(targets, nontargets, **kw):
    return [TrialScore(float(s), True, **kw) for s in targets] + [TrialScore(float(s), False, **kw) for s in nontargets]


MONOTONE = [
    lambda x: 2 * x + 5,
    lambda x: x ** 3,
    lambda x: math.exp(x / 20),
    lambda x: math.atan(x / 30),
    lambda x: -1.0 / (x + 1000),
    lambda x: x - 1e6,
    lambda x: math.log(x + 1000),
    lambda x: x / 7,
    lambda x: math.sinh(x / 10),
    lambda x: 0.001 * x + 0.5,
]


class TestEer:
    def test_worked_example(self):
        r = compute_eer(trials([0.9, 0.8, 0.2], [0.7, 0.3, 0.1]))
        assert r.eer_percent == pytest.approx(100 / 3, abs=0.01)

    def test_perfect_separation(self):
        assert compute_eer(trials([5, 6, 7], [1, 2, 3])).eer_percent == 0.0

    def test_identical_distributions(self):
        assert compute_eer(trials([1, 2, 3, 4], [1, 2, 3, 4])).eer_percent == pytest.approx(50.0)
        assert compute_eer(trials([2.0] * 5, [2.0] * 7)).eer_percent == pytest.approx(50.0)

    def test_reversed_separation(self):
        assert compute_eer(trials([1, 2], [5, 6])).eer_percent == pytest.approx(100.0)

    def test_oracle_random_sets(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            p, n = rng.integers(1, 30, size=2)
            shift = rng.uniform(-2, 4)
            # coarse rounding forces ties within and across classes
            tar = np.round(rng.normal(shift, 1.5, p), 1).tolist()
            non = np.round(rng.normal(0, 1.5, n), 1).tolist()
            assert compute_eer(trials(tar, non)).eer_percent == pytest.approx(sweep_eer(tar, non), abs=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(-20, 20), min_size=1, max_size=25),
           st.lists(st.integers(-20, 20), min_size=1, max_size=25))
    def test_oracle_property(self, tar, non):
        assert compute_eer(trials(tar, non)).eer_percent == pytest.approx(sweep_eer(tar, non), abs=1e-9)

    @pytest.mark.parametrize("f", MONOTONE)
    def test_monotone_invariance(self, f):
        rng = np.random.default_rng(1)
        tar = rng.integers(-40, 60, 40).tolist()
        non = rng.integers(-60, 40, 55).tolist()
        a = compute_eer(trials(tar, non)).eer_percent
        b = compute_eer(trials([f(x) for x in tar], [f(x) for x in non])).eer_percent
        assert b == pytest.approx(a, abs=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(-10, 10), min_size=2, max_size=20), st.lists(st.booleans(), min_size=2, max_size=20),
           st.randoms())
    def test_permutation_invariance(self, scores, labels, rnd):
        n = min(len(scores), len(labels))
        ts = [TrialScore(float(s), b) for s, b in zip(scores[:n], labels[:n])]
        if all(t.is_target for t in ts) or not any(t.is_target for t in ts):
            return
        shuffled = ts[:]
        rnd.shuffle(shuffled)
        assert compute_eer(shuffled).eer_percent == compute_eer(ts).eer_percent

    def test_threshold_within_score_range(self):
        r = compute_eer(trials([0.9, 0.8, 0.2], [0.7, 0.3, 0.1]))
        assert 0.1 <= r.threshold <= 0.9

    @pytest.mark.parametrize("tar,non", [([], [1.0]), ([1.0], []), ([], []), ([math.nan], [1.0]),
                                         ([1.0], [math.inf])])
    def test_degenerate(self, tar, non):
        with pytest.raises(DegenerateTrialSet):
            compute_eer(trials(tar, non))


class TestDet:
    def test_one_vs_one(self):
        pts = det_curve(trials([1.0], [0.0]))
        assert pts == [(1.0, 0.0), (0.0, 0.0), (0.0, 1.0)]

    def test_endpoints_and_monotone(self):
        rng = np.random.default_rng(2)
        ts = trials(rng.normal(1, 1, 50).round(1), rng.normal(0, 1, 70).round(1))
        thr, far, frr = operating_points(ts)
        assert (far[0], frr[0], far[-1], frr[-1]) == (1.0, 0.0, 0.0, 1.0)
        assert thr[0] == -np.inf and thr[-1] == np.inf
        assert np.all(np.diff(far) <= 0) and np.all(np.diff(frr) >= 0)
        assert np.all(np.diff(thr) > 0)

    def test_eer_lies_on_curve(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            ts = trials(rng.normal(1, 1, 20).round(1), rng.normal(0, 1, 30).round(1))
            eer = compute_eer(ts).eer_percent / 100
            pts = det_curve(ts)
            hit = False
            for (f0, r0), (f1, r1) in zip(pts, pts[1:]):
                if (f0 - r0) >= 0 >= (f1 - r1):
                    if f0 - r0 == f1 - r1:
                        hit |= abs(f1 - eer) < 1e-12
                    else:
                        a = (f0 - r0) / ((f0 - r0) - (f1 - r1))
                        x, y = f0 + a * (f1 - f0), r0 + a * (r1 - r0)
                        hit |= abs(x - eer) < 1e-12 and abs(y - eer) < 1e-12
            assert hit


def decision(g, gd, e, ed):
    return SimpleNamespace(gender_true=g, gender_decided=gd, emotion_true=e, emotion_decided=ed)


class TestConfusion:
    EMO = ["neutral", "anger", "fear"]

    def test_all_correct_is_identity(self):
        ds = [decision(g, g, e, e) for g in ("male", "female") for e in self.EMO for _ in range(3)]
        gender, emotion = confusion_matrices(ds, self.EMO)
        np.testing.assert_array_equal(gender.percent, 100 * np.eye(2))
        for c in emotion.values():
            np.testing.assert_array_equal(c.percent, 100 * np.eye(3))
            assert c.accuracy == 100.0

    def test_males_all_decided_female(self):
        ds = [decision("male", "female", "anger", "anger"), decision("female", "female", "fear", "neutral")]
        gender, emotion = confusion_matrices(ds, self.EMO)
        assert gender.percent[0, 0] == 0.0 and gender.percent[0, 1] == 100.0
        assert gender.overall == 50.0
        assert emotion["female"].counts[2, 0] == 1
        # rows without samples stay at zero and are left out of the accuracy
        assert emotion["male"].accuracy == 100.0


def test_build_trials_counts():
    m = plan_corpus(SynthSpec(n_speakers_per_gender=5, n_sentences_train=1, n_sentences_test=2, n_repetitions=1))
    pairs = build_trials(m)
    # per gender: 4 claimants, 1 imposter, 6 emotions x 2 test sentences
    per_utt = 12
    targets = sum(e.speaker_id == c for e, c in pairs)
    assert targets == 2 * 4 * per_utt
    assert len(pairs) - targets == 2 * 1 * per_utt * 4
    assert all(e.split == "test" for e, _ in pairs)
    assert all(m.claimants()[c] == e.gender for e, c in pairs)
    cross = build_trials(m, cross_claimant=True)
    assert len(cross) - len(pairs) == 2 * 4 * per_utt * 3


def _fake_report():
    rng = np.random.default_rng(4)
    emos = ["neutral", "anger"]
    ts = []
    for mode, sep in (("one_stage", 1.0), ("three_stage", 2.0), ("worst_case", 0.9)):
        for i in range(40):
            e = emos[i % 2]
            g = "male" if i % 4 < 2 else "female"
            tgt = i % 3 == 0
            ts.append(TrialScore(float(rng.normal(sep if tgt else 0, 1)), tgt, emotion_true=e, gender_true=g,
                                 mode=mode, utterance=f"u{i}.wav", claimed="m01" if tgt else "m02",
                                 true_speaker="m01", gender_decided=g, emotion_decided=e))
    return summarize(ts, emos, "toy")


class TestReport:
    def test_table_layout(self):
        text = format_report(_fake_report())
        lines = text.splitlines()
        i = lines.index("Table 1 layout: gender-dependent emotion identification performance")
        assert lines[i + 1].startswith("Emotion") and lines[i + 2].strip() == "toy"
        assert lines[i + 3].split() == ["Neutral", "100.0"]
        assert lines[i + 4].split() == ["Anger", "100.0"]
        assert lines[i + 5].split() == ["Average", "100.00"]
        assert "Table 2 layout: percentage EER based on the three-stage framework" in lines
        assert any(l.startswith("three_stage") for l in lines)

    def test_write_reports(self, tmp_path):
        rep = _fake_report()
        written = write_reports(rep, tmp_path, figures=True)
        names = {p.name for p in written}
        assert {"report.txt", "report.csv", "trials.csv", "det_three_stage.csv"} <= names
        assert any(n.endswith(".png") for n in names)
        assert all(p.stat().st_size > 0 for p in written)

    def test_trials_round_trip(self, tmp_path):
        rep = _fake_report()
        write_trials(rep.trials, tmp_path / "t.csv")
        back = read_trials(tmp_path / "t.csv")
        assert back == rep.trials

    def test_ordering_check(self):
        rep = _fake_report()
        rep.modes = {
            "one_stage": ModeResult({"neutral": EerResult(30, 0)}, EerResult(30, 0), []),
            "two_stage_gender": ModeResult({"neutral": EerResult(25, 0)}, EerResult(25, 0), []),
            "three_stage": ModeResult({"neutral": EerResult(20, 0)}, EerResult(20, 0), []),
            "worst_case": ModeResult({"neutral": EerResult(31, 0)}, EerResult(31, 0), []),
        }
        assert ordering_check(rep) == []
        rep.modes["three_stage"] = ModeResult({"neutral": EerResult(26, 0)}, EerResult(26, 0), [])
        assert len(ordering_check(rep)) == 1
