"""Writers for the activation interchange formats.

EMBX binary layout, little-endian: 4-byte magic "EMBX", then six u32 fields
(version=1, layers, frames, dim, frames_valid, reserved=0), then the
float32 payload in [layer][frame][dim] order. Manifests are JSONL with
keys {id, dialogue_id, turn_index, modality, path, L, T, D, frames_valid,
da_pred_position?, meta?}. Both writers go through a temp file and rename
so a crashed run never leaves a half-written file behind.

This module implements the interchange contract independently of the
training engine; the conformance tests read every emitted file back
through the engine's validating reader.
"""

import json
import os
import struct
import tempfile

import numpy as np

MAGIC = b"EMBX"
VERSION = 1
HEADER = struct.Struct("<4s6I")


def write_activation(values, frames_valid, path):
    """Serialize one (L, T, D) float32 stack atomically."""
    values = np.ascontiguousarray(values, dtype=np.float32)
    if values.ndim != 3:
        raise ValueError(f"activation stack must be 3D, got {values.shape}")
    if min(values.shape) < 1:
        raise ValueError(f"activation extents must be positive, got {values.shape}")
    if not np.isfinite(values).all():
        raise ValueError("activation stack contains non-finite values")
    layers, frames, dim = values.shape
    frames_valid = int(frames_valid)
    if not 1 <= frames_valid <= frames:
        raise ValueError(f"frames_valid {frames_valid} outside [1, {frames}]")

    header = HEADER.pack(MAGIC, VERSION, layers, frames, dim, frames_valid, 0)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".embx.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(values.tobytes(order="C"))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def manifest_record(id, dialogue_id, turn_index, modality, path, shape,
                    frames_valid, da_pred_position=None, meta=None):
    layers, frames, dim = shape
    record = {
        "id": id,
        "dialogue_id": dialogue_id,
        "turn_index": int(turn_index),
        "modality": modality,
        "path": path,
        "L": int(layers),
        "T": int(frames),
        "D": int(dim),
        "frames_valid": int(frames_valid),
    }
    if da_pred_position is not None:
        record["da_pred_position"] = int(da_pred_position)
    if meta:
        record["meta"] = meta
    return record


def write_manifest(records, path):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".manifest.tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path
