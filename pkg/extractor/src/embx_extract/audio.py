"""Waveform preparation for the speech encoders.

Every clip is forced to exactly 3.0 s at 16 kHz (48000 samples): longer
audio keeps its first 48000 samples, shorter audio is repeated end to end
until it reaches the target and then cut. Normalization happens after the
length fix, per the encoder family's input requirements.
"""

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000
TARGET_SECONDS = 3.0
TARGET_SAMPLES = int(SAMPLE_RATE * TARGET_SECONDS)  # 48000

NORMALIZATIONS = ("zero_mean_unit_var", "none")


def prepare_audio(waveform, normalization="zero_mean_unit_var"):
    """Mono 16 kHz waveform -> float32 array of exactly TARGET_SAMPLES."""
    wave = np.asarray(waveform, dtype=np.float32)
    if wave.ndim != 1:
        raise ValueError(f"expected a mono waveform, got shape {wave.shape}")
    if wave.size == 0:
        raise ValueError("empty waveform")
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}")

    if wave.size >= TARGET_SAMPLES:
        wave = wave[:TARGET_SAMPLES]
    else:
        repeats = -(-TARGET_SAMPLES // wave.size)  # ceil
        wave = np.tile(wave, repeats)[:TARGET_SAMPLES]

    if normalization == "zero_mean_unit_var":
        mean = wave.mean(dtype=np.float64)
        var = wave.var(dtype=np.float64)
        # 1e-7 matches the epsilon the wav2vec2-family feature extractors use
        wave = ((wave - mean) / np.sqrt(var + 1e-7)).astype(np.float32)
    return np.ascontiguousarray(wave, dtype=np.float32)


def load_waveform(path):
    """Read a mono 16 kHz clip from a .wav (PCM or float) or .npy file."""
    path = str(path)
    if path.endswith(".npy"):
        wave = np.load(path)
        return np.asarray(wave, dtype=np.float32)
    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise ValueError(f"{path}: sample rate {rate}, expected {SAMPLE_RATE}")
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got shape {data.shape}")
    if np.issubdtype(data.dtype, np.integer):
        scale = float(np.iinfo(data.dtype).max) + 1.0
        return (data.astype(np.float32)) / scale
    return data.astype(np.float32)
