"""Synthetic training audio: sums of random-phase sinusoids plus noise."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError
from .wav import DEFAULT_RATE, WavFile, wav_read, wav_write


@dataclass(frozen=True)
class CorpusSpec:
    n_utterances: int = 8
    length: int = DEFAULT_RATE
    sample_rate: int = DEFAULT_RATE
    min_partials: int = 1
    max_partials: int = 3
    freq_low: float = 60.0
    freq_high: float = 400.0
    amplitude: float = 0.5        # peak of the clean mixture, fraction of full scale
    noise: float = 0.002          # noise standard deviation, fraction of full scale
    seed: int = 0

    def __post_init__(self):
        if self.n_utterances < 1 or self.length < 1:
            raise InputError("corpus needs at least one utterance of positive length")
        if not 1 <= self.min_partials <= self.max_partials:
            raise InputError("need 1 <= min_partials <= max_partials")
        if not 0 < self.freq_low <= self.freq_high < self.sample_rate / 2:
            raise InputError("frequencies must lie in (0, Nyquist)")
        if not 0 < self.amplitude <= 1 or self.noise < 0:
            raise InputError("amplitude must be in (0, 1], noise >= 0")


@dataclass
class Utterance:
    samples: np.ndarray           # int16
    frequencies: tuple[float, ...]


def synthesize(spec: CorpusSpec) -> list[Utterance]:
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.length) / spec.sample_rate
    out = []
    for _ in range(spec.n_utterances):
        k = int(rng.integers(spec.min_partials, spec.max_partials + 1))
        freqs = np.sort(rng.uniform(spec.freq_low, spec.freq_high, k))
        phases = rng.uniform(0, 2 * np.pi, k)
        weights = rng.uniform(0.5, 1.0, k)
        clean = (weights[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(0)
        clean *= spec.amplitude / weights.sum()
        x = clean + spec.noise * rng.standard_normal(spec.length)
        s = np.clip(np.round(x * 32767), -32767, 32767).astype(np.int16)
        out.append(Utterance(s, tuple(float(f) for f in freqs)))
    return out


def make_corpus(spec: CorpusSpec, directory) -> list[Path]:
    """Write ``utt_NNNN.wav`` files and a ``manifest.csv`` of their partial frequencies."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    with open(d / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["file", "frequencies_hz"])
        for k, utt in enumerate(synthesize(spec)):
            p = d / f"utt_{k:04d}.wav"
            wav_write(WavFile(utt.samples, spec.sample_rate), p)
            w.writerow([p.name, " ".join(f"{f:.6f}" for f in utt.frequencies)])
            paths.append(p)
    return paths


def load_corpus(directory) -> list[np.ndarray]:
    """Every WAV file in ``directory`` (sorted by name) as unsigned 16-bit samples."""
    files = sorted(Path(directory).glob("*.wav"))
    if not files:
        raise InputError(f"no .wav files in {directory}")
    return [wav_read(p).u for p in files]
