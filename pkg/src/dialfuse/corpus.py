"""Dialogue corpus model: acts, turns, history windows, label vocabulary.

Corpus files are JSONL, one dialogue per line. Marker spellings are part of
the interchange contract with the activation extractor and must not drift:
`<user>`, `<system>`, `<API_call>`, `<DB_result>`, `<DB_no_result>`,
`<DA_pred>`.
"""

import json
from dataclasses import dataclass, field

from .errors import ContractError, ValidationError

MARKER_USER = "<user>"
MARKER_SYSTEM = "<system>"
MARKER_DECISION = "<DA_pred>"
SYSTEM_MARKER_TOKENS = {
    "API_call": "<API_call>",
    "DB_result": "<DB_result>",
    "DB_no_result": "<DB_no_result>",
}

WELCOME_LABEL = "welcomemsg"
HISTORY_TURNS = 9
OOV_INDEX = -1

SPLITS = ("train", "dev", "test")

# DSTC2 distribution counts: (dialogues, turns) per split
DSTC2_EXPECTED = {"train": (1612, 10065), "dev": (506, 3428), "test": (1117, 8773)}


@dataclass(frozen=True)
class DialogueAct:
    """A single action, optionally parameterized by a slot (values are dropped
    from labels, so `value` is carried only for provenance)."""

    act_type: str
    slot: str | None = None
    value: str | None = None

    def __post_init__(self):
        if not self.act_type:
            raise ValidationError("act_type must be non-empty")
        for part in (self.act_type, self.slot or ""):
            if any(ch in part for ch in "()+"):
                raise ValidationError(f"act field {part!r} contains reserved character")

    def canonical(self):
        if self.slot:
            return f"{self.act_type}({self.slot})"
        return self.act_type


@dataclass
class Turn:
    index: int
    speaker: str
    transcript: str
    asr_transcript: str | None = None
    acts: list = field(default_factory=list)
    system_markers: list = field(default_factory=list)
    speech_ref: str | None = None

    def __post_init__(self):
        if self.speaker not in ("user", "system"):
            raise ValidationError(f"speaker must be user|system, got {self.speaker!r}")
        if self.speaker == "user" and self.system_markers:
            raise ValidationError("user turns must not carry system markers")
        for marker in self.system_markers:
            if marker not in SYSTEM_MARKER_TOKENS:
                raise ValidationError(f"unknown system marker {marker!r}")


@dataclass
class Dialogue:
    id: str
    split: str
    turns: list

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")

    def validate(self):
        if not any(t.speaker == "system" for t in self.turns):
            raise ValidationError(f"dialogue {self.id}: no system turn")
        indices = [t.index for t in self.turns]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValidationError(f"dialogue {self.id}: turn indices not strictly increasing")
        speakers = [t.speaker for t in self.turns]
        if any(a == b for a, b in zip(speakers, speakers[1:])):
            raise ValidationError(f"dialogue {self.id}: consecutive turns share a speaker")
        return self


def build_label(turn):
    """Canonical label of a system turn: sorted act strings joined by '+'."""
    if turn.speaker != "system":
        raise ContractError("labels are defined for system turns only")
    if not turn.acts:
        raise ValidationError(f"system turn {turn.index} has no acts")
    return "+".join(sorted(act.canonical() for act in turn.acts))


@dataclass(frozen=True)
class Sample:
    """One classification decision: which dialogue, which system turn."""

    dialogue: Dialogue
    turn_pos: int  # position in dialogue.turns, not the turn index field

    @property
    def turn(self):
        return self.dialogue.turns[self.turn_pos]

    @property
    def label(self):
        return build_label(self.turn)

    @property
    def preceding_user_turn(self):
        for pos in range(self.turn_pos - 1, -1, -1):
            if self.dialogue.turns[pos].speaker == "user":
                return self.dialogue.turns[pos]
        return None

    @property
    def key(self):
        return (self.dialogue.id, self.turn.index)

    @property
    def request_slots(self):
        """Slots the user requested in the immediately preceding turn; the
        answered/unanswered bookkeeping for these drives the request score."""
        if self.turn_pos == 0:
            return ()
        prior = self.dialogue.turns[self.turn_pos - 1]
        if prior.speaker != "user":
            return ()
        return tuple(a.slot for a in prior.acts if a.act_type == "request" and a.slot)


def enumerate_samples(dialogues):
    """Every system turn with acts, in corpus order."""
    samples = []
    for dialogue in dialogues:
        for pos, turn in enumerate(dialogue.turns):
            if turn.speaker == "system":
                samples.append(Sample(dialogue=dialogue, turn_pos=pos))
    return samples


def drop_welcome_samples(dialogues):
    """Classification samples that survive welcome-message removal.

    Welcome turns stay inside the dialogues (and thus in history context);
    only their own prediction samples are discarded.
    """
    return [s for s in enumerate_samples(dialogues) if s.label != WELCOME_LABEL]


@dataclass
class HistoryWindow:
    """The serialized context handed to the text encoder for one decision."""

    dialogue_id: str
    target_turn_index: int
    segments: list  # (text, source) with source in {user, system, da_pred}
    serialized: str
    target_label: str


def _turn_segment(turn, use_asr):
    if turn.speaker == "user":
        text = turn.transcript
        if use_asr and turn.asr_transcript is not None:
            text = turn.asr_transcript
        parts = [MARKER_USER] + ([text] if text else [])
        return " ".join(parts), "user"
    parts = [MARKER_SYSTEM]
    parts += [SYSTEM_MARKER_TOKENS[m] for m in turn.system_markers]
    if turn.transcript:
        parts.append(turn.transcript)
    return " ".join(parts), "system"


def serialize_history(dialogue, target_turn_pos, use_asr=False, max_turns=HISTORY_TURNS):
    """Concatenate the last `max_turns` turns before the target system turn,
    then append the decision marker."""
    target = dialogue.turns[target_turn_pos]
    if target.speaker != "system":
        raise ContractError(
            f"history target must be a system turn, got {target.speaker!r} at {target_turn_pos}"
        )
    prior = dialogue.turns[:target_turn_pos]
    window = prior[-max_turns:] if max_turns else prior
    segments = [_turn_segment(t, use_asr) for t in window]
    segments.append((MARKER_DECISION, "da_pred"))
    return HistoryWindow(
        dialogue_id=dialogue.id,
        target_turn_index=target.index,
        segments=segments,
        serialized=" ".join(text for text, _ in segments),
        target_label=build_label(target),
    )


class LabelVocab:
    """Bijection between canonical label strings and class indices.

    Built from the training split only; labels seen elsewhere map to
    OOV_INDEX and are never predicted.
    """

    def __init__(self, labels):
        ordered = sorted(set(labels))
        if not ordered:
            raise ValidationError("label vocabulary is empty")
        self.label_of = {label: i for i, label in enumerate(ordered)}
        self.index_of = {i: label for label, i in self.label_of.items()}

    @property
    def size(self):
        return len(self.label_of)

    @classmethod
    def from_dialogues(cls, dialogues):
        train = [d for d in dialogues if d.split == "train"]
        return cls(s.label for s in drop_welcome_samples(train))

    def lookup(self, label):
        return self.label_of.get(label, OOV_INDEX)

    def label_for(self, index):
        return self.index_of[index]

    def to_json(self):
        return json.dumps({"labels": [self.index_of[i] for i in range(self.size)]})

    @classmethod
    def from_json(cls, payload):
        labels = json.loads(payload)["labels"]
        vocab = cls(labels)
        if [vocab.index_of[i] for i in range(vocab.size)] != labels:
            raise ValidationError("label list in checkpoint is not in canonical order")
        return vocab


@dataclass
class StatsReport:
    per_split: dict  # split -> {"dialogues": n, "turns": n}
    total_dialogues: int
    total_turns: int
    mismatches: list

    @property
    def ok(self):
        return not self.mismatches


def validate_corpus_stats(dialogues, expected=None):
    """Count dialogues/turns per split; compare against an expected manifest."""
    per_split = {s: {"dialogues": 0, "turns": 0} for s in SPLITS}
    for dialogue in dialogues:
        per_split[dialogue.split]["dialogues"] += 1
        per_split[dialogue.split]["turns"] += len(dialogue.turns)
    total_d = sum(v["dialogues"] for v in per_split.values())
    total_t = sum(v["turns"] for v in per_split.values())
    mismatches = []
    if expected:
        for split, (want_d, want_t) in expected.items():
            got_d = per_split[split]["dialogues"]
            got_t = per_split[split]["turns"]
            if got_d != want_d:
                mismatches.append(f"{split}: {got_d} dialogues, expected {want_d}")
            if got_t != want_t:
                mismatches.append(f"{split}: {got_t} turns, expected {want_t}")
    return StatsReport(per_split, total_d, total_t, mismatches)


# -- JSONL interchange ----------------------------------------------------------

def _act_to_json(act):
    record = {"type": act.act_type}
    if act.slot is not None:
        record["slot"] = act.slot
    if act.value is not None:
        record["value"] = act.value
    return record


def _turn_to_json(turn):
    record = {
        "index": turn.index,
        "speaker": turn.speaker,
        "transcript": turn.transcript,
        "acts": [_act_to_json(a) for a in turn.acts],
        "system_markers": list(turn.system_markers),
    }
    if turn.asr_transcript is not None:
        record["asr_transcript"] = turn.asr_transcript
    if turn.speech_ref is not None:
        record["speech_ref"] = turn.speech_ref
    return record


def dialogue_to_json(dialogue):
    return json.dumps(
        {
            "id": dialogue.id,
            "split": dialogue.split,
            "turns": [_turn_to_json(t) for t in dialogue.turns],
        },
        sort_keys=True,
    )


def dialogue_from_json(line):
    raw = json.loads(line)
    turns = [
        Turn(
            index=int(t["index"]),
            speaker=t["speaker"],
            transcript=t.get("transcript", ""),
            asr_transcript=t.get("asr_transcript"),
            acts=[
                DialogueAct(act_type=a["type"], slot=a.get("slot"), value=a.get("value"))
                for a in t.get("acts", [])
            ],
            system_markers=t.get("system_markers", []),
            speech_ref=t.get("speech_ref"),
        )
        for t in raw["turns"]
    ]
    return Dialogue(id=raw["id"], split=raw["split"], turns=turns)


def write_corpus(dialogues, path):
    with open(path, "w", encoding="utf-8") as fh:
        for dialogue in dialogues:
            fh.write(dialogue_to_json(dialogue) + "\n")
    return path


def read_corpus(path, validate=True):
    dialogues = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            dialogue = dialogue_from_json(line)
            if validate:
                dialogue.validate()
            dialogues.append(dialogue)
    return dialogues
