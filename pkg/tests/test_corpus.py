"""Corpus model tests.

Oracles: label canonicalization and window serialization checked against
hand-written expected strings; counting checked against constructed corpora
with known sizes.
"""

import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dialfuse.corpus import (
    DSTC2_EXPECTED,
    HISTORY_TURNS,
    OOV_INDEX,
    Dialogue,
    DialogueAct,
    LabelVocab,
    Sample,
    Turn,
    build_label,
    dialogue_from_json,
    dialogue_to_json,
    drop_welcome_samples,
    enumerate_samples,
    read_corpus,
    serialize_history,
    validate_corpus_stats,
    write_corpus,
)
from dialfuse.errors import ContractError, ValidationError


def sys_turn(index, transcript, acts, markers=()):
    return Turn(
        index=index,
        speaker="system",
        transcript=transcript,
        acts=acts,
        system_markers=list(markers),
    )


def user_turn(index, transcript, asr=None):
    return Turn(index=index, speaker="user", transcript=transcript, asr_transcript=asr)


class TestBuildLabel:
    def test_sorted_join(self):
        turn = sys_turn(
            1,
            "the cottage serves indian food",
            [DialogueAct("offer", "name"), DialogueAct("inform", "food")],
        )
        assert build_label(turn) == "inform(food)+offer(name)"

    def test_slotless_act(self):
        assert build_label(sys_turn(1, "hi", [DialogueAct("welcomemsg")])) == "welcomemsg"

    def test_values_dropped(self):
        a = sys_turn(1, "x", [DialogueAct("inform", "food", "indian")])
        b = sys_turn(1, "x", [DialogueAct("inform", "food", "chinese")])
        assert build_label(a) == build_label(b) == "inform(food)"

    def test_user_turn_rejected(self):
        with pytest.raises(ContractError):
            build_label(user_turn(0, "hello"))

    def test_empty_acts_rejected(self):
        with pytest.raises(ValidationError):
            build_label(sys_turn(1, "x", []))

    @given(
        st.lists(
            st.tuples(
                st.sampled_from(["inform", "offer", "request", "confirm"]),
                st.sampled_from([None, "food", "area", "pricerange", "name"]),
            ),
            min_size=1,
            max_size=6,
        ),
        st.randoms(use_true_random=False),
    )
    def test_permutation_invariant(self, pairs, rng):
        acts = [DialogueAct(t, s) for t, s in pairs]
        shuffled = list(acts)
        rng.shuffle(shuffled)
        base = build_label(sys_turn(1, "x", acts))
        assert build_label(sys_turn(1, "x", shuffled)) == base

    def test_reserved_characters_rejected(self):
        with pytest.raises(ValidationError):
            DialogueAct("inform(food)")
        with pytest.raises(ValidationError):
            DialogueAct("inform", "a+b")


class TestSerializeHistory:
    def test_single_user_turn(self):
        d = Dialogue(
            id="d1",
            split="train",
            turns=[user_turn(0, "hello"), sys_turn(1, "welcome", [DialogueAct("welcomemsg")])],
        )
        window = serialize_history(d, 1)
        assert window.serialized == "<user> hello <DA_pred>"
        assert window.target_label == "welcomemsg"
        assert window.segments[-1] == ("<DA_pred>", "da_pred")

    def test_system_markers_inline(self):
        d = Dialogue(
            id="d2",
            split="train",
            turns=[
                user_turn(0, "cheap thai food"),
                sys_turn(1, "no matches", [DialogueAct("canthelp", "food")], ["DB_no_result"]),
                user_turn(2, "how about chinese"),
                sys_turn(3, "ok", [DialogueAct("inform", "food")]),
            ],
        )
        window = serialize_history(d, 3)
        assert window.serialized == (
            "<user> cheap thai food "
            "<system> <DB_no_result> no matches "
            "<user> how about chinese <DA_pred>"
        )

    def test_window_keeps_last_nine_turns(self):
        turns = []
        for i in range(12):
            if i % 2 == 0:
                turns.append(user_turn(i, f"u{i}"))
            else:
                turns.append(sys_turn(i, f"s{i}", [DialogueAct("inform", "food")]))
        turns.append(sys_turn(12, "target", [DialogueAct("offer", "name")]))
        # fix alternation: last prior turn is index 11 (system), target system
        # would violate alternation, so drop turn 11
        turns = turns[:11] + [sys_turn(11, "target", [DialogueAct("offer", "name")])]
        d = Dialogue(id="d3", split="train", turns=turns).validate()
        window = serialize_history(d, len(d.turns) - 1)
        turn_segments = [s for s in window.segments if s[1] != "da_pred"]
        assert len(turn_segments) == HISTORY_TURNS
        # the 11 prior turns minus the oldest two
        assert turn_segments[0][0] == "<user> u2"
        assert window.serialized.endswith("<DA_pred>")
        assert window.serialized.count("<DA_pred>") == 1

    def test_short_history_not_padded(self):
        d = Dialogue(
            id="d4",
            split="train",
            turns=[user_turn(0, "hi"), sys_turn(1, "hello", [DialogueAct("welcomemsg")])],
        )
        window = serialize_history(d, 1)
        assert len(window.segments) == 2

    def test_use_asr_swaps_user_text(self):
        d = Dialogue(
            id="d5",
            split="train",
            turns=[
                user_turn(0, "cheap thai food", asr="jeep tie food"),
                sys_turn(1, "ok", [DialogueAct("inform", "food")]),
            ],
        )
        assert serialize_history(d, 1).serialized == "<user> cheap thai food <DA_pred>"
        assert serialize_history(d, 1, use_asr=True).serialized == "<user> jeep tie food <DA_pred>"
        # asr flag with no asr text falls back to the transcript
        d.turns[0].asr_transcript = None
        assert serialize_history(d, 1, use_asr=True).serialized == "<user> cheap thai food <DA_pred>"

    def test_target_must_be_system(self):
        d = Dialogue(
            id="d6",
            split="train",
            turns=[user_turn(0, "hi"), sys_turn(1, "hello", [DialogueAct("welcomemsg")])],
        )
        with pytest.raises(ContractError):
            serialize_history(d, 0)


def make_dialogue(did, split, n_system, first_label="welcomemsg"):
    turns = [user_turn(0, "hi")]
    for k in range(n_system):
        label = first_label if k == 0 else "inform"
        turns.append(sys_turn(2 * k + 1, f"s{k}", [DialogueAct(label, None)]))
        if k + 1 < n_system:
            turns.append(user_turn(2 * k + 2, f"u{k}"))
    return Dialogue(id=did, split=split, turns=turns).validate()


class TestSamples:
    def test_welcome_only_dialogue_contributes_zero(self):
        d = make_dialogue("w", "train", 1)
        assert len(enumerate_samples([d])) == 1
        assert drop_welcome_samples([d]) == []

    def test_welcome_turn_stays_in_history(self):
        d = make_dialogue("w2", "train", 2)
        samples = drop_welcome_samples([d])
        assert len(samples) == 1
        window = serialize_history(d, samples[0].turn_pos)
        assert "<system> s0" in window.serialized

    def test_preceding_user_turn(self):
        d = make_dialogue("w3", "train", 2)
        sample = drop_welcome_samples([d])[0]
        assert sample.preceding_user_turn.transcript == "u0"

    def test_sample_label(self):
        d = make_dialogue("w4", "train", 2)
        assert drop_welcome_samples([d])[0].label == "inform"


class TestLabelVocab:
    def test_train_only_and_oov(self):
        train = Dialogue(
            id="t",
            split="train",
            turns=[
                user_turn(0, "hi"),
                sys_turn(1, "a", [DialogueAct("inform", "food")]),
                user_turn(2, "x"),
                sys_turn(3, "b", [DialogueAct("offer", "name")]),
            ],
        )
        dev = Dialogue(
            id="d",
            split="dev",
            turns=[user_turn(0, "hi"), sys_turn(1, "c", [DialogueAct("reqmore")])],
        )
        vocab = LabelVocab.from_dialogues([train, dev])
        assert vocab.size == 2
        assert vocab.lookup("inform(food)") == 0
        assert vocab.lookup("offer(name)") == 1
        assert vocab.lookup("reqmore") == OOV_INDEX
        assert vocab.label_for(1) == "offer(name)"

    def test_indices_sorted_and_stable(self):
        vocab = LabelVocab(["b", "a", "c", "a"])
        assert [vocab.label_for(i) for i in range(3)] == ["a", "b", "c"]

    def test_json_round_trip(self):
        vocab = LabelVocab(["inform(food)", "bye", "offer(name)"])
        clone = LabelVocab.from_json(vocab.to_json())
        assert clone.label_of == vocab.label_of

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            LabelVocab([])


class TestStats:
    def test_counts_and_expected_match(self):
        dialogues = [
            make_dialogue("a", "train", 2),
            make_dialogue("b", "train", 1),
            make_dialogue("c", "dev", 1),
            make_dialogue("d", "test", 3),
        ]
        report = validate_corpus_stats(
            dialogues,
            expected={"train": (2, 6), "dev": (1, 2), "test": (1, 6)},
        )
        assert report.ok
        assert report.total_dialogues == 4
        assert report.total_turns == 14

    def test_mismatch_reported(self):
        report = validate_corpus_stats(
            [make_dialogue("a", "train", 1)], expected={"train": (2, 2)}
        )
        assert not report.ok
        assert any("dialogues" in m for m in report.mismatches)

    def test_reference_totals(self):
        # distribution-level constants: 3235 dialogues, 22266 turns
        assert sum(d for d, _ in DSTC2_EXPECTED.values()) == 3235
        assert sum(t for _, t in DSTC2_EXPECTED.values()) == 22266


class TestJsonl:
    def test_round_trip(self, tmp_path):
        d = Dialogue(
            id="r1",
            split="dev",
            turns=[
                user_turn(0, "cheap food", asr="sheep food"),
                sys_turn(
                    1,
                    "no matches",
                    [DialogueAct("canthelp", "food", "thai")],
                    ["API_call", "DB_no_result"],
                ),
            ],
        )
        path = tmp_path / "corpus.jsonl"
        write_corpus([d], path)
        (loaded,) = read_corpus(path)
        assert dialogue_to_json(loaded) == dialogue_to_json(d)
        assert loaded.turns[0].asr_transcript == "sheep food"
        assert loaded.turns[1].acts[0].value == "thai"
        assert loaded.turns[1].system_markers == ["API_call", "DB_no_result"]

    def test_serialization_is_deterministic(self):
        d = make_dialogue("det", "train", 2)
        assert dialogue_to_json(d) == dialogue_to_json(dialogue_from_json(dialogue_to_json(d)))

    def test_validate_on_read(self, tmp_path):
        bad = {
            "id": "x",
            "split": "train",
            "turns": [
                {"index": 0, "speaker": "user", "transcript": "hi", "acts": [], "system_markers": []},
                {"index": 0, "speaker": "system", "transcript": "y",
                 "acts": [{"type": "bye"}], "system_markers": []},
            ],
        }
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(bad) + "\n")
        with pytest.raises(ValidationError):
            read_corpus(path)
        assert len(read_corpus(path, validate=False)) == 1

    def test_dialogue_validation_rules(self):
        with pytest.raises(ValidationError):
            Dialogue(
                id="no-sys",
                split="train",
                turns=[user_turn(0, "hi")],
            ).validate()
        with pytest.raises(ValidationError):
            Turn(index=0, speaker="user", transcript="hi", system_markers=["API_call"])
        with pytest.raises(ValidationError):
            Dialogue(id="bad-split", split="validation", turns=[])
