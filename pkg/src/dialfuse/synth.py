"""Synthetic corpus with a planted two-channel policy.

Each decision carries a text cue and a speech cue; the correct label is a
deterministic function of the pair. The cues are unit one-hot directions
written into one (layer, position) cell of the respective stacks, under
Gaussian noise, so that:

- the text-only architectures can at best resolve the text cue,
- the fused architectures can resolve both,
- learned layer weighting matters (cues sit in the last layer only).

With audio_info_bits=0.5 the label space is 2 text cues x 2 speech cues, so
the text-only Bayes accuracy is 50% while the joint optimum is 100%. The
correct label always answers the user's planted request, so the ground-truth
policy scores 100 on the request metric.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .corpus import Dialogue, DialogueAct, Turn, write_corpus
from .embx import ActivationStack, ManifestRecord, write_activation, write_manifest
from .errors import ContractError, ValidationError

N_LABELS = 4  # two entropy bits, split between the channels

SPLIT_NAMES = ("train", "dev", "test")


@dataclass(frozen=True)
class SynthSpec:
    train_dialogues: int = 500
    dev_dialogues: int = 100
    test_dialogues: int = 100
    turns_per_dialogue: int = 10  # greeting pair + 4 decision pairs
    n_slots: int = 4
    text_layers: int = 3
    speech_layers: int = 3
    speech_frames: int = 8  # T1
    text_tokens: int = 12  # T2
    dim: int = 16
    audio_info_bits: float = 0.5
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.train_dialogues, self.dev_dialogues, self.test_dialogues) < 1:
            raise ContractError("every split needs at least one dialogue")
        if self.turns_per_dialogue < 4 or self.turns_per_dialogue % 2:
            raise ValidationError(
                "turns_per_dialogue must be even and at least 4 "
                "(greeting pair plus one decision pair)"
            )
        if not 0.0 <= self.audio_info_bits <= 1.0:
            raise ValidationError("audio_info_bits must lie in [0, 1]")
        if self.dim % 4:
            raise ValidationError("dim must be divisible by 4")
        if self.dim < 2 * N_LABELS:
            raise ValidationError(f"dim must be at least {2 * N_LABELS} to hold cue directions")
        if self.n_slots < N_LABELS:
            raise ValidationError(f"n_slots must be at least {N_LABELS}")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be non-negative")
        if min(self.text_layers, self.speech_layers) < 1:
            raise ValidationError("layer counts must be positive")
        if self.text_tokens < 3 or self.speech_frames < 1:
            raise ValidationError("sequence extents too small")

    @property
    def decisions_per_dialogue(self):
        return (self.turns_per_dialogue - 2) // 2

    @property
    def speech_cue_count(self):
        # quantize the audio share of the two label bits to 0, 1 or 2 bits
        return 2 ** round(2 * self.audio_info_bits)

    @property
    def text_cue_count(self):
        return N_LABELS // self.speech_cue_count

    def dialogue_counts(self):
        return {
            "train": self.train_dialogues,
            "dev": self.dev_dialogues,
            "test": self.test_dialogues,
        }


def policy_label(text_cue, speech_cue, speech_cue_count):
    slot_index = text_cue * speech_cue_count + speech_cue
    return f"inform(slot_{slot_index})"


def build_policy_table(spec):
    entries = []
    for text_cue in range(spec.text_cue_count):
        for speech_cue in range(spec.speech_cue_count):
            entries.append(
                {
                    "text_cue": text_cue,
                    "speech_cue": speech_cue,
                    "label": policy_label(text_cue, speech_cue, spec.speech_cue_count),
                    "request_slot": f"slot_{text_cue * spec.speech_cue_count + speech_cue}",
                }
            )
    return {
        "n_text_cues": spec.text_cue_count,
        "n_speech_cues": spec.speech_cue_count,
        "text_cue_dims": list(range(spec.text_cue_count)),
        "speech_cue_dims": [N_LABELS + c for c in range(spec.speech_cue_count)],
        "text_cue_layer": spec.text_layers - 1,
        "speech_cue_layer": spec.speech_layers - 1,
        "speech_cue_frame": 0,
        "entries": entries,
    }


def text_only_bayes_accuracy(policy):
    """Best possible accuracy when only the text cue is observable: cues are
    uniform, so it is one over the number of labels per text group."""
    return 1.0 / policy["n_speech_cues"]


def _text_stack(spec, rng, text_cue):
    frames_valid = int(rng.integers(max(3, spec.text_tokens - 3), spec.text_tokens + 1))
    values = rng.normal(0.0, spec.noise_std, (spec.text_layers, spec.text_tokens, spec.dim))
    values = values.astype(np.float32)
    da_pred_position = frames_valid - 1
    values[spec.text_layers - 1, da_pred_position, text_cue] += 1.0
    return ActivationStack(values=values, frames_valid=frames_valid), da_pred_position


def _speech_stack(spec, rng, speech_cue):
    frames_valid = int(
        rng.integers(max(1, spec.speech_frames - 2), spec.speech_frames + 1)
    )
    values = rng.normal(0.0, spec.noise_std, (spec.speech_layers, spec.speech_frames, spec.dim))
    values = values.astype(np.float32)
    values[spec.speech_layers - 1, 0, N_LABELS + speech_cue] += 1.0
    return ActivationStack(values=values, frames_valid=frames_valid)


def generate(spec, out_dir):
    """Write corpus.jsonl, manifest.jsonl, policy.json and embx/ files.

    Byte-identical for identical spec+seed; each split draws from its own
    child generator so splits could be produced independently.
    """
    os.makedirs(out_dir, exist_ok=True)
    embx_dir = os.path.join(out_dir, "embx")
    os.makedirs(embx_dir, exist_ok=True)

    policy = build_policy_table(spec)
    dialogues = []
    records = []
    sample_counts = {}

    for split_index, split in enumerate(SPLIT_NAMES):
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([spec.seed, split_index]))
        )
        n_dialogues = spec.dialogue_counts()[split]
        sample_counts[split] = n_dialogues * spec.decisions_per_dialogue
        for d in range(n_dialogues):
            did = f"{split}-{d:04d}"
            turns = [
                Turn(index=0, speaker="user", transcript="hello"),
                Turn(
                    index=1,
                    speaker="system",
                    transcript="welcome what can i do for you",
                    acts=[DialogueAct("welcomemsg")],
                ),
            ]
            for k in range(spec.decisions_per_dialogue):
                text_cue = int(rng.integers(spec.text_cue_count))
                speech_cue = int(rng.integers(spec.speech_cue_count))
                slot_index = text_cue * spec.speech_cue_count + speech_cue
                slot = f"slot_{slot_index}"
                user_index = 2 * k + 2
                system_index = 2 * k + 3

                speech_name = f"{did}_{system_index}_speech.embx"
                turns.append(
                    Turn(
                        index=user_index,
                        speaker="user",
                        transcript=f"tell me about {slot}",
                        asr_transcript=f"tell me bout {slot}",
                        acts=[DialogueAct("request", slot)],
                        speech_ref=os.path.join("embx", speech_name),
                    )
                )
                turns.append(
                    Turn(
                        index=system_index,
                        speaker="system",
                        transcript=f"here is the {slot}",
                        acts=[DialogueAct("inform", slot)],
                    )
                )

                text_stack, da_pred_position = _text_stack(spec, rng, text_cue)
                speech_stack = _speech_stack(spec, rng, speech_cue)
                text_name = f"{did}_{system_index}_text.embx"
                write_activation(text_stack, os.path.join(embx_dir, text_name))
                write_activation(speech_stack, os.path.join(embx_dir, speech_name))
                for modality, stack, name, pos in (
                    ("text", text_stack, text_name, da_pred_position),
                    ("speech", speech_stack, speech_name, None),
                ):
                    records.append(
                        ManifestRecord(
                            id=f"{did}:{system_index}:{modality}",
                            dialogue_id=did,
                            turn_index=system_index,
                            modality=modality,
                            path=os.path.join("embx", name),
                            layers=stack.values.shape[0],
                            frames=stack.values.shape[1],
                            dim=stack.values.shape[2],
                            frames_valid=stack.frames_valid,
                            da_pred_position=pos,
                            meta={"text_cue": text_cue, "speech_cue": speech_cue},
                        )
                    )
            dialogues.append(Dialogue(id=did, split=split, turns=turns).validate())

    corpus_path = os.path.join(out_dir, "corpus.jsonl")
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    policy_path = os.path.join(out_dir, "policy.json")
    write_corpus(dialogues, corpus_path)
    write_manifest(records, manifest_path)
    with open(policy_path, "w", encoding="utf-8") as fh:
        json.dump(policy, fh, sort_keys=True, indent=1)
        fh.write("\n")

    return {
        "corpus": corpus_path,
        "manifest": manifest_path,
        "policy": policy_path,
        "embx_dir": embx_dir,
        "samples": sample_counts,
        "labels": sorted({e["label"] for e in policy["entries"]}),
    }
