"""Extraction driver: corpus -> EMBX files + manifest.

Text windows within one split are zero-padded to the split's longest window
(capped at the encoder context); frames_valid records the real token count
and the decision-marker position goes into the manifest, so consumers never
look at pad frames. Speech clips are fixed-length after prepare_audio, so
they need no padding.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .audio import TARGET_SECONDS, load_waveform, prepare_audio
from .embx_io import manifest_record, write_activation, write_manifest
from .records import enumerate_decisions, read_corpus


def extract_text(segments, encoder, pad_to=None):
    """One window -> ((L, T, D) stack, frames_valid, da_pred_position)."""
    token_ids, source_ids = encoder.encode_window(segments)
    return extract_text_encoded(token_ids, source_ids, encoder, pad_to)


def extract_text_encoded(token_ids, source_ids, encoder, pad_to=None):
    hidden = encoder.forward_hidden(token_ids, source_ids)
    valid = hidden.shape[1]
    if pad_to is not None:
        if pad_to < valid:
            raise ValueError(f"pad_to {pad_to} shorter than window of {valid} tokens")
        if pad_to > valid:
            pad = np.zeros((hidden.shape[0], pad_to - valid, hidden.shape[2]),
                           np.float32)
            hidden = np.concatenate([hidden, pad], axis=1)
    return hidden, valid, valid - 1  # decision marker is always the last token


def extract_speech(waveform, encoder):
    """One prepared clip -> ((L, T, D) stack, frames_valid). All frames of a
    single clip are real, so frames_valid equals the frame count."""
    hidden = encoder.forward_hidden(waveform)
    return hidden, hidden.shape[1]


@dataclass
class ExtractJob:
    corpus_path: str
    out_dir: str
    text_encoder: object = None
    speech_encoder: object = None
    audio_root: str = ""
    use_asr: bool = False
    normalization: str = "zero_mean_unit_var"
    target_seconds: float = TARGET_SECONDS
    splits: tuple = ()  # empty = all splits present in the corpus
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.target_seconds != TARGET_SECONDS:
            raise ValueError(f"clip length is fixed at {TARGET_SECONDS} s")
        if self.text_encoder is None and self.speech_encoder is None:
            raise ValueError("job needs at least one encoder")


def run_job(job):
    """Extract activations for every decision in the corpus. Returns a
    summary {decisions, text_files, speech_files, skipped_audio, manifest}."""
    dialogues = read_corpus(job.corpus_path)
    decisions = enumerate_decisions(dialogues, use_asr=job.use_asr)
    if job.splits:
        decisions = [d for d in decisions if d.split in job.splits]

    embx_dir = os.path.join(job.out_dir, "embx")
    records = []
    text_files = speech_files = skipped_audio = 0

    if job.text_encoder is not None:
        encoded = [(d, *job.text_encoder.encode_window(d.segments))
                   for d in decisions]
        pad_by_split = {}
        for decision, token_ids, _ in encoded:
            current = pad_by_split.get(decision.split, 0)
            pad_by_split[decision.split] = max(current, len(token_ids))
        for decision, token_ids, source_ids in encoded:
            hidden, valid, da_pred_position = extract_text_encoded(
                token_ids, source_ids, job.text_encoder,
                pad_to=pad_by_split[decision.split],
            )
            rel = os.path.join(
                "embx", f"{decision.dialogue_id}_{decision.turn_index}_text.embx"
            )
            write_activation(hidden, valid, os.path.join(job.out_dir, rel))
            meta = {**job.text_encoder.meta(), "use_asr": job.use_asr, **job.meta}
            records.append(manifest_record(
                id=f"{decision.dialogue_id}:{decision.turn_index}:text",
                dialogue_id=decision.dialogue_id,
                turn_index=decision.turn_index,
                modality="text",
                path=rel,
                shape=hidden.shape,
                frames_valid=valid,
                da_pred_position=da_pred_position,
                meta=meta,
            ))
            text_files += 1

    if job.speech_encoder is not None:
        for decision in decisions:
            if not decision.speech_ref:
                skipped_audio += 1
                continue
            wave = load_waveform(os.path.join(job.audio_root, decision.speech_ref))
            prepared = prepare_audio(wave, normalization=job.normalization)
            hidden, valid = extract_speech(prepared, job.speech_encoder)
            rel = os.path.join(
                "embx", f"{decision.dialogue_id}_{decision.turn_index}_speech.embx"
            )
            write_activation(hidden, valid, os.path.join(job.out_dir, rel))
            meta = {**job.speech_encoder.meta(),
                    "normalization": job.normalization, **job.meta}
            records.append(manifest_record(
                id=f"{decision.dialogue_id}:{decision.turn_index}:speech",
                dialogue_id=decision.dialogue_id,
                turn_index=decision.turn_index,
                modality="speech",
                path=rel,
                shape=hidden.shape,
                frames_valid=valid,
                meta=meta,
            ))
            speech_files += 1

    manifest_path = os.path.join(job.out_dir, "manifest.jsonl")
    write_manifest(records, manifest_path)
    os.makedirs(embx_dir, exist_ok=True)  # empty text-only/speech-only runs still get the dir
    return {
        "decisions": len(decisions),
        "text_files": text_files,
        "speech_files": speech_files,
        "skipped_audio": skipped_audio,
        "manifest": manifest_path,
    }
