"""Reader for the dialogue corpus interchange format (JSONL, one dialogue
per line) and the history-window serialization the text encoder consumes.

The rendering contract is byte-level: speaker markers `<user>` / `<system>`,
database markers `<API_call>` / `<DB_result>` / `<DB_no_result>` inlined
after the system marker, the terminal `<DA_pred>` decision marker, segments
joined with single spaces, and a window of the last nine turns before the
decision. Decisions whose own label is the welcome message are skipped
(their turns still appear inside other windows' context).
"""

import json
from dataclasses import dataclass

MARKER_USER = "<user>"
MARKER_SYSTEM = "<system>"
MARKER_DECISION = "<DA_pred>"
SYSTEM_MARKER_TOKENS = {
    "API_call": "<API_call>",
    "DB_result": "<DB_result>",
    "DB_no_result": "<DB_no_result>",
}
ALL_MARKERS = (
    MARKER_USER,
    MARKER_SYSTEM,
    *SYSTEM_MARKER_TOKENS.values(),
    MARKER_DECISION,
)

WELCOME_LABEL = "welcomemsg"
HISTORY_TURNS = 9


def read_corpus(path):
    dialogues = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                dialogues.append(json.loads(line))
    return dialogues


def canonical_label(turn):
    parts = []
    for act in turn["acts"]:
        slot = act.get("slot")
        parts.append(f"{act['type']}({slot})" if slot else act["type"])
    return "+".join(sorted(parts))


@dataclass
class Decision:
    """One system turn to predict: where it sits and what context it sees."""

    dialogue_id: str
    split: str
    turn_index: int
    turn_pos: int
    label: str
    segments: list  # (text, source), source in {user, system, da_pred}
    serialized: str
    speech_ref: str | None  # audio of the user turn right before the decision


def _turn_segment(turn, use_asr):
    if turn["speaker"] == "user":
        text = turn.get("transcript") or ""
        if use_asr and turn.get("asr_transcript") is not None:
            text = turn["asr_transcript"]
        parts = [MARKER_USER] + ([text] if text else [])
        return " ".join(parts), "user"
    parts = [MARKER_SYSTEM]
    parts += [SYSTEM_MARKER_TOKENS[m] for m in turn.get("system_markers") or []]
    if turn.get("transcript"):
        parts.append(turn["transcript"])
    return " ".join(parts), "system"


def serialize_window(dialogue, turn_pos, use_asr=False, max_turns=HISTORY_TURNS):
    turns = dialogue["turns"]
    prior = turns[:turn_pos]
    window = prior[-max_turns:] if max_turns else prior
    segments = [_turn_segment(t, use_asr) for t in window]
    segments.append((MARKER_DECISION, "da_pred"))
    return segments, " ".join(text for text, _ in segments)


def enumerate_decisions(dialogues, use_asr=False):
    """Every non-welcome system decision, with its serialized window and the
    audio reference of the user turn immediately before it."""
    decisions = []
    for dialogue in dialogues:
        turns = dialogue["turns"]
        for pos, turn in enumerate(turns):
            if turn["speaker"] != "system":
                continue
            label = canonical_label(turn)
            if label == WELCOME_LABEL:
                continue
            segments, serialized = serialize_window(dialogue, pos, use_asr)
            speech_ref = None
            if pos > 0 and turns[pos - 1]["speaker"] == "user":
                speech_ref = turns[pos - 1].get("speech_ref")
            decisions.append(Decision(
                dialogue_id=dialogue["id"],
                split=dialogue["split"],
                turn_index=turn["index"],
                turn_pos=pos,
                label=label,
                segments=segments,
                serialized=serialized,
                speech_ref=speech_ref,
            ))
    return decisions
