"""Evaluation metric tests.

The request-score fixture is checked against a brute-force enumerator that
walks raw dialogues independently of the production sample plumbing.
"""

import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dialfuse.corpus import (
    Dialogue,
    DialogueAct,
    Turn,
    build_label,
    drop_welcome_samples,
)
from dialfuse.errors import ContractError, DomainError
from dialfuse.evaluation import (
    DEFAULT_ANSWER_ACTS,
    UrsReport,
    accuracy,
    aggregate_runs,
    append_metrics,
    format_mean_std,
    label_answers,
    metrics_record,
    read_metrics,
    relative_improvement,
    urs,
)


def user(index, acts=(), text="..."):
    return Turn(index=index, speaker="user", transcript=text, acts=list(acts))


def system(index, acts, text="..."):
    return Turn(index=index, speaker="system", transcript=text, acts=list(acts))


def fixture_dialogues():
    """Five dialogues, exactly 3 requests of which the predictions below
    answer 2."""
    return [
        Dialogue("d1", "test", [
            user(0, [DialogueAct("request", "phone")]),
            system(1, [DialogueAct("inform", "phone")]),
        ]),
        Dialogue("d2", "test", [
            user(0, [DialogueAct("request", "area")]),
            system(1, [DialogueAct("inform", "area")]),
        ]),
        Dialogue("d3", "test", [
            user(0, [DialogueAct("request", "addr")]),
            system(1, [DialogueAct("offer", "addr"), DialogueAct("inform", "food")]),
        ]),
        Dialogue("d4", "test", [
            user(0, [DialogueAct("inform", "food")]),  # constraint, not a request
            system(1, [DialogueAct("offer", "name")]),
        ]),
        Dialogue("d5", "test", [
            user(0),
            system(1, [DialogueAct("welcomemsg")]),  # dropped from evaluation
            user(2),
            system(3, [DialogueAct("bye")]),
        ]),
    ]


def fixture_predictions():
    return {
        ("d1", 1): "inform(phone)",   # answers request(phone)
        ("d2", 1): "inform(food)",    # wrong slot: request(area) unanswered
        ("d3", 1): "inform(food)+offer(addr)",  # answers via offer
        ("d4", 1): "offer(name)",
        ("d5", 3): "bye",
    }


def brute_force_urs(dialogues, predictions, answer_acts):
    """Independent enumeration straight over raw dialogue structures."""
    total = answered = 0
    for d in dialogues:
        for i, turn in enumerate(d.turns):
            if turn.speaker != "system" or build_label(turn) == "welcomemsg":
                continue
            if i == 0 or d.turns[i - 1].speaker != "user":
                continue
            for act in d.turns[i - 1].acts:
                if act.act_type == "request" and act.slot:
                    total += 1
                    parts = predictions[(d.id, turn.index)].split("+")
                    if any(f"{a}({act.slot})" in parts for a in answer_acts):
                        answered += 1
    return total, answered


class TestUrsReport:
    def test_score_and_format(self):
        report = UrsReport(requests_total=3, requests_answered=2)
        assert report.score == pytest.approx(200 / 3)
        assert report.formatted == "66.667"

    def test_undefined(self):
        report = UrsReport(requests_total=0, requests_answered=0)
        assert report.score is None
        assert report.formatted == "n/a"

    def test_answered_bounded(self):
        with pytest.raises(ContractError):
            UrsReport(requests_total=1, requests_answered=2)


class TestLabelAnswers:
    def test_exact_inform(self):
        assert label_answers("inform(phone)", "phone")

    def test_multi_act_offer(self):
        assert label_answers("inform(food)+offer(addr)", "addr")

    def test_request_act_does_not_answer(self):
        assert not label_answers("request(phone)", "phone")

    def test_slot_must_match(self):
        assert not label_answers("inform(food)", "phone")

    def test_no_substring_confusion(self):
        assert not label_answers("inform(phonebook)", "phone")

    def test_custom_answer_acts(self):
        assert label_answers("canthelp(food)", "food", answer_acts={"canthelp"})


class TestUrs:
    def test_fixture_matches_brute_force(self):
        dialogues = fixture_dialogues()
        samples = drop_welcome_samples(dialogues)
        predictions = fixture_predictions()
        report = urs(samples, predictions)
        total, answered = brute_force_urs(dialogues, predictions, DEFAULT_ANSWER_ACTS)
        assert (report.requests_total, report.requests_answered) == (total, answered) == (3, 2)
        assert report.formatted == "66.667"

    def test_missing_prediction_rejected(self):
        samples = drop_welcome_samples(fixture_dialogues())
        with pytest.raises(ContractError):
            urs(samples, {})

    def test_no_requests_undefined(self):
        d = Dialogue("x", "test", [user(0), system(1, [DialogueAct("bye")])])
        report = urs(drop_welcome_samples([d]), {("x", 1): "bye"})
        assert report.score is None

    def test_two_requests_in_one_turn(self):
        d = Dialogue("x", "test", [
            user(0, [DialogueAct("request", "phone"), DialogueAct("request", "addr")]),
            system(1, [DialogueAct("inform", "phone")]),
        ])
        report = urs(drop_welcome_samples([d]), {("x", 1): "inform(phone)"})
        assert (report.requests_total, report.requests_answered) == (2, 1)

    @given(st.data())
    def test_monotone_in_answering_flips(self, data):
        n = data.draw(st.integers(1, 6))
        slots = ["food", "area", "phone"]
        dialogues = []
        predictions = {}
        for i in range(n):
            slot = data.draw(st.sampled_from(slots), label=f"slot{i}")
            has_request = data.draw(st.booleans(), label=f"req{i}")
            acts = [DialogueAct("request", slot)] if has_request else []
            dialogues.append(
                Dialogue(f"d{i}", "test", [user(0, acts), system(1, [DialogueAct("bye")])])
            )
            predictions[(f"d{i}", 1)] = data.draw(
                st.sampled_from(["bye", f"inform({slot})", "inform(name)"]), label=f"pred{i}"
            )
        samples = drop_welcome_samples(dialogues)
        before = urs(samples, predictions)
        unanswered = [
            s for s in samples
            if s.request_slots
            and not label_answers(predictions[s.key], s.request_slots[0])
        ]
        if not unanswered:
            return
        flip = data.draw(st.sampled_from(unanswered))
        flipped = dict(predictions)
        flipped[flip.key] = f"inform({flip.request_slots[0]})"
        after = urs(samples, flipped)
        assert after.score >= before.score


class TestAccuracy:
    def test_counts_exact_label_matches(self):
        samples = drop_welcome_samples(fixture_dialogues())
        predictions = {s.key: s.label for s in samples}
        assert accuracy(samples, predictions) == 1.0
        predictions[samples[0].key] = "bye"
        assert accuracy(samples, predictions) == pytest.approx(1 - 1 / len(samples))

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            accuracy([], {})


class TestReporting:
    def test_one_decimal_roundings(self):
        assert round(relative_improvement(85.156, 77.575), 1) == 9.8
        assert round(relative_improvement(80.318, 77.575), 1) == 3.5

    def test_identity_and_constructed(self):
        assert relative_improvement(50.0, 50.0) == 0.0
        assert relative_improvement(150.0, 100.0) == pytest.approx(50.0)

    def test_nonpositive_baseline(self):
        with pytest.raises(DomainError):
            relative_improvement(10.0, 0.0)
        with pytest.raises(DomainError):
            relative_improvement(10.0, -5.0)

    def test_aggregate_singleton(self):
        assert aggregate_runs([77.575]) == (77.575, 0.0)

    def test_aggregate_simple(self):
        mean, std = aggregate_runs([1.0, 2.0, 3.0])
        assert mean == pytest.approx(2.0)
        assert std == pytest.approx(1.0)

    def test_aggregate_nine_runs_frozen_oracle(self):
        scores = [81.2, 83.4, 85.0, 79.8, 82.1, 84.3, 80.7, 83.9, 81.6]
        mean, std = aggregate_runs(scores)
        assert mean == pytest.approx(82.4444444444444, abs=1e-10)
        assert std == pytest.approx(1.78263226094946, abs=1e-10)

    def test_aggregate_empty(self):
        with pytest.raises(ContractError):
            aggregate_runs([])

    def test_format(self):
        assert format_mean_std(82.4444444444444, 1.78263226094946) == "82.444 ± 1.783"


class TestMetricsRecords:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "metrics.jsonl"
        records = [
            metrics_record("run-a", 0, 1, "train", 1.25, 0.5, 60.0),
            metrics_record("run-a", 0, 1, "dev", 1.5, 0.4, None),
        ]
        append_metrics(path, records)
        append_metrics(path, [metrics_record("run-a", 0, 2, "train", 1.0, 0.6, 65.0)])
        loaded = read_metrics(path)
        assert loaded[:2] == records
        assert len(loaded) == 3
        assert loaded[1]["urs"] is None
        assert set(loaded[0]) == {"run_id", "seed", "epoch", "split", "loss", "accuracy", "urs"}
