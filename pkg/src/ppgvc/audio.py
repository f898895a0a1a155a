"""Waveform container and 16-bit PCM RIFF/WAVE I/O."""
from __future__ import annotations

import wave as _wave
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, InvalidValue, IoError, SampleRateMismatch


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono audio in [-1, 1] with its sample rate."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        x = np.ascontiguousarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise InvalidValue(f"waveform must be 1-D, got shape {x.shape}")
        if self.sample_rate <= 0:
            raise InvalidValue(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise InvalidValue("waveform contains non-finite samples")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def require_nonempty(self):
        if len(self) == 0:
            raise EmptyInput("empty waveform")
        return self


def read_wav(path, expected_rate: int | None = None) -> Waveform:
    """Read a mono PCM16 WAVE file and scale it to [-1, 1)."""
    try:
        with _wave.open(str(path), "rb") as f:
            nch, width, rate, n = f.getnchannels(), f.getsampwidth(), f.getframerate(), f.getnframes()
            raw = f.readframes(n)
    except (OSError, EOFError, _wave.Error) as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if nch != 1 or width != 2:
        raise IoError(f"{path}: expected mono 16-bit PCM, got {nch} channel(s) of {8 * width} bit")
    if expected_rate is not None and rate != expected_rate:
        raise SampleRateMismatch(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return Waveform(pcm / 32768.0, rate)


def write_wav(path, wave: Waveform) -> None:
    pcm = np.clip(np.round(wave.samples * 32768.0), -32768, 32767).astype("<i2")
    try:
        with _wave.open(str(path), "wb") as f:
            f.setnchannels(1)
            f.setsampwidth(2)
            f.setframerate(int(wave.sample_rate))
            f.writeframes(pcm.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
