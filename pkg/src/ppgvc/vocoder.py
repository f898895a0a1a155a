"""Frequency-domain harmonic-plus-noise vocoder.

Every frame ``t`` owns a buffer of ``fft_size`` samples centred on its frame
centre.  Its spectrum is ``envelope(k) * excitation(k)`` where the excitation
mixes

* glottal pulses: unit impulses of height ``sqrt(fs / f0)`` at the
  fractional epoch positions that fall inside the frame's hop, with zero-phase
  shaping, and
* noise: seeded white noise under a sine window of two hops, whose squares
  overlap-add to one.

Both excitation parts have unit power spectral density, so the rendered
signal's PSD equals the squared envelope.  On voiced frames the noise gets
amplitude weight ``a = 10 ** (bap / 20)`` per band and the pulses
``sqrt(1 - a ** 2)``.  Frames are inverse transformed and overlap-added.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import kernels
from .audio import Waveform
from .errors import FrameCountMismatch, InvalidConfig
from .features import SpeechParams, band_edges, mcep_to_logspec


@dataclass(frozen=True)
class SynthesisConfig:
    sample_rate: int = 16000
    frame_shift_ms: float = 10.0
    fft_size: int = 1024
    warp_alpha: float = 0.42
    spectral_floor: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.sample_rate <= 0 or self.frame_shift_ms <= 0:
            raise InvalidConfig("sample_rate and frame_shift_ms must be positive")
        if self.fft_size & (self.fft_size - 1):
            raise InvalidConfig("fft_size must be a power of two")
        if self.fft_size < 2 * 2 * self.shift:
            raise InvalidConfig("fft_size must hold at least two synthesis segments")
        if not 0.0 < self.warp_alpha < 1.0:
            raise InvalidConfig("warp_alpha must lie in (0, 1)")

    @property
    def shift(self) -> int:
        return int(round(self.sample_rate * self.frame_shift_ms / 1000.0))

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _check_streams(lf0, vuv, bap):
    if not (len(lf0) == len(vuv) == len(bap)):
        raise FrameCountMismatch(f"lf0/vuv/bap frame counts differ: {len(lf0)}/{len(vuv)}/{len(bap)}")


def _origins(n_frames, cfg):
    centers = np.arange(n_frames, dtype=np.int64) * cfg.shift + cfg.shift // 2
    return centers - cfg.fft_size // 2


def noise_spectra(n_frames: int, cfg: SynthesisConfig = SynthesisConfig()) -> np.ndarray:
    """Seeded, sine-windowed white-noise spectra, one row per frame."""
    seg = 2 * cfg.shift
    rng = np.random.default_rng(cfg.seed)
    noise = rng.standard_normal((n_frames, seg))
    window = np.sin(np.pi * (np.arange(seg) + 0.5) / seg)
    buf = np.zeros((n_frames, cfg.fft_size))
    off = cfg.fft_size // 2 - cfg.shift
    buf[:, off:off + seg] = noise * window
    return np.fft.rfft(buf, axis=1)


def sample_f0(lf0, vuv, cfg: SynthesisConfig) -> np.ndarray:
    """Per-sample F0 (Hz, zero where the owning frame is unvoiced), log-linear between frame centres."""
    T = len(lf0)
    n = np.arange(T * cfg.shift)
    centers = np.arange(T) * cfg.shift + cfg.shift // 2
    f0 = np.exp(np.interp(n, centers, np.asarray(lf0, dtype=np.float64)))
    voiced = np.repeat(np.asarray(vuv, dtype=bool), cfg.shift)
    return np.where(voiced, f0, 0.0)


def band_weights(bap, n_bins) -> np.ndarray:
    """Expand per-band dB values to per-bin noise amplitude weights."""
    bap = np.asarray(bap, dtype=np.float64)
    edges = band_edges(n_bins, bap.shape[1])
    counts = np.diff(edges)
    return np.repeat(10.0 ** (np.minimum(bap, 0.0) / 20.0), counts, axis=1)


def generate_excitation(lf0, vuv, bap, cfg: SynthesisConfig = SynthesisConfig()) -> np.ndarray:
    """Complex excitation spectra, shape ``(T, fft_size // 2 + 1)``."""
    lf0 = np.asarray(lf0, dtype=np.float64)
    vuv = np.asarray(vuv, dtype=bool)
    bap = np.asarray(bap, dtype=np.float64).reshape(len(bap), -1)
    _check_streams(lf0, vuv, bap)
    T = len(lf0)
    exc = noise_spectra(T, cfg)
    if not vuv.any():
        return exc

    pos, f0_at = kernels.pulse_epochs(sample_f0(lf0, vuv, cfg), float(cfg.sample_rate))
    frame = np.minimum(np.floor(pos).astype(np.int64) // cfg.shift, T - 1)
    local = pos - _origins(T, cfg)[frame]
    omega = 2.0 * np.pi * np.arange(cfg.n_bins) / cfg.fft_size
    pulses = np.sqrt(cfg.sample_rate / f0_at)[:, None] * np.exp(-1j * np.outer(local, omega))
    harmonic = np.zeros_like(exc)
    np.add.at(harmonic, frame, pulses)

    a = band_weights(bap, cfg.n_bins)
    mixed = np.sqrt(1.0 - a * a) * harmonic + a * exc
    exc[vuv] = mixed[vuv]
    return exc


def mcep_to_spectrum(mcep, cfg: SynthesisConfig = SynthesisConfig()) -> np.ndarray:
    """Amplitude envelope on the linear FFT grid from mel-cepstra (row or matrix)."""
    return np.exp(mcep_to_logspec(mcep, cfg.fft_size, cfg.warp_alpha))


def synthesize_with_info(p: SpeechParams, cfg: SynthesisConfig = SynthesisConfig()):
    """Render ``p`` and report whether peak normalisation was applied.

    Returns ``(Waveform, info)`` with ``info = {"gain": g, "normalized": bool}``.
    """
    T = p.n_frames
    n_out = T * cfg.shift
    if T == 0:
        return Waveform(np.zeros(0), cfg.sample_rate), {"gain": 1.0, "normalized": False}
    spec = mcep_to_spectrum(p.mcep, cfg) * generate_excitation(p.lf0, p.vuv, p.bap, cfg)
    frames = np.fft.irfft(spec, cfg.fft_size, axis=1)
    y = kernels.overlap_add(frames, _origins(T, cfg), n_out)
    peak = np.max(np.abs(y))
    gain = 1.0
    if peak > 1.0:
        gain = 0.99 / peak
        y = y * gain
    return Waveform(y, cfg.sample_rate), {"gain": gain, "normalized": gain != 1.0}


def synthesize(p: SpeechParams, cfg: SynthesisConfig = SynthesisConfig()) -> Waveform:
    """Waveform of exactly ``T * shift`` samples from speech parameters."""
    return synthesize_with_info(p, cfg)[0]
