"""RIFF PCM16 mono reading and writing on top of the stdlib ``wave`` module.

Signed samples ``s`` map to the engine's unsigned domain as ``u = s + 32768``.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import InputError

DEFAULT_RATE = 24000


@dataclass
class WavFile:
    samples: np.ndarray          # int16
    sample_rate: int = DEFAULT_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.int16)
        if self.samples.ndim != 1:
            raise InputError("only mono audio is supported")
        if self.sample_rate < 1:
            raise InputError("sample rate must be positive")

    @property
    def u(self) -> np.ndarray:
        return (self.samples.astype(np.int32) + 32768).astype(np.uint16)

    @classmethod
    def from_u(cls, u, sample_rate=DEFAULT_RATE) -> "WavFile":
        u = np.asarray(u)
        if u.size and (u.min() < 0 or u.max() > 65535):
            raise InputError("samples must lie in [0, 65535]")
        return cls((u.astype(np.int32) - 32768).astype(np.int16), sample_rate)

    @property
    def seconds(self) -> float:
        return len(self.samples) / self.sample_rate


def wav_read(path) -> WavFile:
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getcomptype() != "NONE":
                raise InputError(f"{path}: unsupported codec {fh.getcomptype()!r}")
            if fh.getnchannels() != 1:
                raise InputError(f"{path}: {fh.getnchannels()} channels, only mono is supported")
            if fh.getsampwidth() != 2:
                raise InputError(f"{path}: {8 * fh.getsampwidth()}-bit samples, only 16-bit PCM")
            n = fh.getnframes()
            raw = fh.readframes(n)
            rate = fh.getframerate()
    except (wave.Error, EOFError) as exc:
        raise InputError(f"{path}: malformed WAV file ({exc})") from None
    if len(raw) != 2 * n:
        raise InputError(f"{path}: header promises {n} frames, payload holds {len(raw) // 2}")
    return WavFile(np.frombuffer(raw, dtype="<i2").copy(), rate)


def wav_write(wav: WavFile, path):
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(wav.sample_rate)
        fh.writeframes(wav.samples.astype("<i2").tobytes())
