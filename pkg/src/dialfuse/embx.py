"""EMBX: bit-exact binary interchange for per-layer encoder activations.

File layout, little-endian:

    magic   4 bytes  b"EMBX"
    version u32      1
    L       u32      layer count
    T       u32      frames per layer
    D       u32      feature dimension
    valid   u32      frames_valid, in [1, T]
    pad     u32      reserved, written as 0
    payload L*T*D float32, [layer][frame][dim] order

Header is 28 bytes. Manifests are JSONL, one record per activation file.
Writers go through a temp file and rename, so readers never observe a
partially written file.
"""

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, NumericError, TruncationError, ValidationError

MAGIC = b"EMBX"
VERSION = 1
HEADER = struct.Struct("<4s6I")
HEADER_BYTES = HEADER.size

# 16 kHz self-supervised speech encoders: 400-sample receptive field, 320-sample hop
SPEECH_RECEPTIVE_FIELD = 400
SPEECH_HOP = 320


def expected_speech_frames(n_samples, receptive=SPEECH_RECEPTIVE_FIELD, hop=SPEECH_HOP):
    """Frame count a strided conv front-end produces for a waveform length."""
    if n_samples < receptive:
        return 0
    return (n_samples - receptive) // hop + 1


@dataclass
class ActivationStack:
    """Per-utterance stack of encoder hidden states, layers x frames x dim."""

    values: np.ndarray
    frames_valid: int

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        self.frames_valid = int(self.frames_valid)
        self.validate()

    @property
    def layers(self):
        return self.values.shape[0]

    @property
    def frames(self):
        return self.values.shape[1]

    @property
    def dim(self):
        return self.values.shape[2]

    def validate(self):
        if self.values.ndim != 3:
            raise ValidationError(f"activation stack must be 3D, got {self.values.shape}")
        if min(self.values.shape) < 1:
            raise ValidationError(f"activation extents must be positive, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            bad = int(np.flatnonzero(~np.isfinite(self.values.reshape(-1)))[0])
            raise NumericError(f"non-finite activation value at flat index {bad}")
        if not 1 <= self.frames_valid <= self.frames:
            raise ValidationError(
                f"frames_valid {self.frames_valid} outside [1, {self.frames}]"
            )

    def valid_mask(self):
        mask = np.zeros(self.frames, dtype=bool)
        mask[: self.frames_valid] = True
        return mask


def write_activation(stack, path):
    """Serialize a stack to `path` atomically (temp file + rename)."""
    stack.validate()
    header = HEADER.pack(
        MAGIC, VERSION, stack.layers, stack.frames, stack.dim, stack.frames_valid, 0
    )
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".embx.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(stack.values.tobytes(order="C"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_header(path):
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_BYTES)
    if len(raw) < HEADER_BYTES:
        raise TruncationError(f"{path}: file shorter than the {HEADER_BYTES}-byte header")
    magic, version, layers, frames, dim, frames_valid, _pad = HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if min(layers, frames, dim) < 1:
        raise ValidationError(f"{path}: non-positive extents {(layers, frames, dim)}")
    if not 1 <= frames_valid <= frames:
        raise ValidationError(f"{path}: frames_valid {frames_valid} outside [1, {frames}]")
    return layers, frames, dim, frames_valid


def read_activation(path):
    """Read and validate an EMBX file back into an ActivationStack."""
    layers, frames, dim, frames_valid = read_header(path)
    expected = HEADER_BYTES + layers * frames * dim * 4
    actual = os.path.getsize(path)
    if actual != expected:
        raise TruncationError(f"{path}: {actual} bytes on disk, header promises {expected}")
    with open(path, "rb") as fh:
        fh.seek(HEADER_BYTES)
        payload = fh.read()
    values = np.frombuffer(payload, dtype="<f4").reshape(layers, frames, dim)
    finite = np.isfinite(values)
    if not finite.all():
        bad = int(np.flatnonzero(~finite.reshape(-1))[0])
        raise NumericError(
            f"{path}: non-finite value at byte offset {HEADER_BYTES + bad * 4}"
        )
    return ActivationStack(values=values, frames_valid=frames_valid)


@dataclass
class ManifestRecord:
    """One activation file: who produced it and what shape it claims."""

    id: str
    dialogue_id: str
    turn_index: int
    modality: str
    path: str
    layers: int
    frames: int
    dim: int
    frames_valid: int
    da_pred_position: int | None = None  # text windows only
    meta: dict = field(default_factory=dict)

    def to_json(self):
        record = {
            "id": self.id,
            "dialogue_id": self.dialogue_id,
            "turn_index": self.turn_index,
            "modality": self.modality,
            "path": self.path,
            "L": self.layers,
            "T": self.frames,
            "D": self.dim,
            "frames_valid": self.frames_valid,
        }
        if self.da_pred_position is not None:
            record["da_pred_position"] = self.da_pred_position
        if self.meta:
            record["meta"] = self.meta
        return json.dumps(record, sort_keys=True)

    @classmethod
    def from_json(cls, line):
        raw = json.loads(line)
        if raw.get("modality") not in ("speech", "text"):
            raise ValidationError(f"manifest modality must be speech|text, got {raw.get('modality')!r}")
        return cls(
            id=raw["id"],
            dialogue_id=raw["dialogue_id"],
            turn_index=int(raw["turn_index"]),
            modality=raw["modality"],
            path=raw["path"],
            layers=int(raw["L"]),
            frames=int(raw["T"]),
            dim=int(raw["D"]),
            frames_valid=int(raw["frames_valid"]),
            da_pred_position=raw.get("da_pred_position"),
            meta=raw.get("meta", {}),
        )


def write_manifest(records, path):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".manifest.tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(record.to_json() + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_manifest(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(ManifestRecord.from_json(line))
    return records


def validate_manifest(records, base_dir):
    """Check id uniqueness and that every file self-describes as claimed."""
    seen = set()
    for record in records:
        if record.id in seen:
            raise ValidationError(f"duplicate manifest id {record.id!r}")
        seen.add(record.id)
        full = os.path.join(base_dir, record.path)
        if not os.path.exists(full):
            raise ValidationError(f"manifest id {record.id!r}: missing file {record.path}")
        layers, frames, dim, frames_valid = read_header(full)
        claimed = (record.layers, record.frames, record.dim, record.frames_valid)
        actual = (layers, frames, dim, frames_valid)
        if claimed != actual:
            raise ValidationError(
                f"manifest id {record.id!r}: record claims {claimed}, file header says {actual}"
            )
    return len(records)
