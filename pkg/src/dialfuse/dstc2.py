"""Converter stub from the DSTC2 distribution format to the corpus format.

The DSTC2 restaurant-domain release (camdial.org) is organized as one
directory per call, each holding a ``log.json`` (the system side plus the
live ASR/SLU input for the user side) and a ``label.json`` (gold user
transcriptions and semantics). Split membership comes from the distributed
``scripts/config/dstc2_{train,dev,test}.flist`` lists. Expected sizes after
conversion are in ``corpus.DSTC2_EXPECTED``: 1612/506/1117 dialogues and
10065/3428/8773 turns.

Mapping, per call:

* Each DSTC2 turn record holds one system utterance followed by the user's
  reply, so record ``i`` becomes corpus turns ``2*i`` (system) and ``2*i+1``
  (user). Calls open with the system's welcome message; its label equals the
  welcome label, so those decisions are dropped from training downstream
  while remaining in history.
* System turns: ``output.transcript`` and ``output.dialog-acts``. A system
  turn with an empty act list has no defined label and is rejected.
* User turns: ``transcription`` and ``semantics.json`` from label.json;
  ``asr_transcript`` is the top live ASR hypothesis
  (``input.live.asr-hyps[0].asr-hyp``); ``speech_ref`` is the user audio
  file named by ``input.audio-file``. A trailing user turn with neither
  transcription nor acts (caller hung up) is dropped.
* Dialog-act slot pairs: ``{"act": "inform", "slots": [["food", "thai"]]}``
  becomes one act per pair with the pair read as (slot, value). ``request``
  acts are the exception: DSTC2 encodes the requested slot as the value of a
  pseudo-slot named "slot", so ``[["slot", "phone"]]`` becomes
  request(phone). An act with no slot pairs maps to a bare act type.
  Values survive in the corpus for provenance but never reach labels, so a
  ``select`` over two values of one slot contributes the same canonical act
  twice ("select(food)+select(food)").
* Database interaction markers are not present in the DSTC2 logs (the
  original annotation added them by hand). With ``infer_markers`` the
  converter reconstructs a deterministic approximation: an ``offer`` act
  implies a query that returned rows (API_call + DB_result) and a
  ``canthelp``-family act implies an empty result (API_call + DB_no_result).
  The default leaves markers empty rather than invent history.

Only the mapping is provided here; fetching the distribution is out of
scope.
"""

import json

from .corpus import Dialogue, DialogueAct, Turn
from .errors import ValidationError

CANTHELP_PREFIX = "canthelp"


def acts_from_dialog_acts(dialog_acts):
    """Flatten DSTC2 dialog-act records into one DialogueAct per slot pair."""
    acts = []
    for record in dialog_acts:
        act_type = record["act"]
        pairs = record.get("slots") or []
        if not pairs:
            acts.append(DialogueAct(act_type=act_type))
            continue
        for pair in pairs:
            slot, value = pair[0], pair[1]
            if act_type == "request" and slot == "slot":
                acts.append(DialogueAct(act_type=act_type, slot=str(value)))
            else:
                acts.append(DialogueAct(
                    act_type=act_type,
                    slot=str(slot) if slot else None,
                    value=None if value is None else str(value),
                ))
    return acts


def infer_system_markers(acts):
    """Deterministic stand-in for the hand-added database markers."""
    act_types = {a.act_type for a in acts}
    if any(t.startswith(CANTHELP_PREFIX) for t in act_types):
        return ["API_call", "DB_no_result"]
    if "offer" in act_types:
        return ["API_call", "DB_result"]
    return []


def _top_asr_hypothesis(log_turn):
    hyps = (log_turn.get("input") or {}).get("live", {}).get("asr-hyps") or []
    if not hyps:
        return None
    return hyps[0].get("asr-hyp") or None


def convert_call(log, label, split, dialogue_id=None, infer_markers=False):
    """One (log.json, label.json) pair -> one validated Dialogue."""
    if log.get("session-id") != label.get("session-id"):
        raise ValidationError(
            f"session-id mismatch: log {log.get('session-id')!r} "
            f"vs label {label.get('session-id')!r}"
        )
    log_turns = log.get("turns") or []
    label_turns = label.get("turns") or []
    if len(log_turns) != len(label_turns):
        raise ValidationError(
            f"{log.get('session-id')}: {len(log_turns)} log turns "
            f"vs {len(label_turns)} label turns"
        )

    turns = []
    for pair_index, (log_turn, label_turn) in enumerate(zip(log_turns, label_turns)):
        if log_turn.get("turn-index") != label_turn.get("turn-index"):
            raise ValidationError(
                f"{log.get('session-id')}: turn-index mismatch "
                f"{log_turn.get('turn-index')} vs {label_turn.get('turn-index')}"
            )

        output = log_turn.get("output") or {}
        system_acts = acts_from_dialog_acts(output.get("dialog-acts") or [])
        if not system_acts:
            raise ValidationError(
                f"{log.get('session-id')}: system turn {pair_index} has no acts"
            )
        turns.append(Turn(
            index=2 * pair_index,
            speaker="system",
            transcript=output.get("transcript") or "",
            acts=system_acts,
            system_markers=infer_system_markers(system_acts) if infer_markers else [],
        ))

        transcription = label_turn.get("transcription") or ""
        user_acts = acts_from_dialog_acts(
            (label_turn.get("semantics") or {}).get("json") or []
        )
        if not transcription and not user_acts:
            # only the final record may lack a user side (caller hung up);
            # a silent gap mid-call would break turn alternation
            if pair_index != len(log_turns) - 1:
                raise ValidationError(
                    f"{log.get('session-id')}: empty user side at "
                    f"mid-call record {pair_index}"
                )
            continue
        turns.append(Turn(
            index=2 * pair_index + 1,
            speaker="user",
            transcript=transcription,
            asr_transcript=_top_asr_hypothesis(log_turn),
            acts=user_acts,
            speech_ref=(log_turn.get("input") or {}).get("audio-file"),
        ))

    dialogue = Dialogue(
        id=dialogue_id or log.get("session-id") or "unnamed-call",
        split=split,
        turns=turns,
    )
    return dialogue.validate()


def convert_files(log_path, label_path, split, **kwargs):
    with open(log_path, "r", encoding="utf-8") as fh:
        log = json.load(fh)
    with open(label_path, "r", encoding="utf-8") as fh:
        label = json.load(fh)
    return convert_call(log, label, split, **kwargs)
