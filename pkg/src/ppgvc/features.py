"""Speech parameter analysis: mel-cepstrum, continuous log-F0 with voicing, band aperiodicity.

All streams share one frame grid.  Frame ``t`` is centred on sample
``t * shift + shift // 2`` so that it describes the output samples
``[t * shift, (t + 1) * shift)`` rendered by the vocoder.

The mel-cepstrum is the frequency-warped cepstrum of the natural-log
*amplitude* envelope::

    log A(w) = sum_m c[m] cos(m * beta(w)),   beta = all-pass warped frequency

and is obtained by a weighted least-squares projection of the log envelope
onto that cosine basis, so analysis of an envelope already in the span of the
basis returns its coefficients exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from functools import lru_cache

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import get_window

from . import kernels
from .audio import Waveform
from .errors import EmptyInput, FrameCountMismatch, InvalidConfig, InvalidF0, SampleRateMismatch


def default_bap_bands(sample_rate: int) -> int:
    """Number of aperiodicity bands: one per 3 kHz up to 15 kHz, minus the top 3 kHz."""
    return max(1, int((min(15000.0, sample_rate / 2.0 - 3000.0)) // 3000))


@dataclass(frozen=True)
class AnalysisConfig:
    sample_rate: int = 16000
    frame_shift_ms: float = 10.0
    frame_length_ms: float = 25.0
    mcep_order: int = 39
    warp_alpha: float = 0.42
    f0_floor: float = 60.0
    f0_ceil: float = 500.0
    bap_bands: int = 0  # 0 = derive from sample_rate
    fft_size: int = 1024
    voicing_threshold: float = 0.3
    median_length: int = 5
    spectral_floor: float = 1e-10
    unvoiced_smoothing_hz: float = 400.0

    def __post_init__(self):
        if self.bap_bands == 0:
            object.__setattr__(self, "bap_bands", default_bap_bands(self.sample_rate))
        self.validate()

    def validate(self):
        if self.sample_rate <= 0:
            raise InvalidConfig("sample_rate must be positive")
        if self.frame_shift_ms <= 0 or self.frame_length_ms <= 0:
            raise InvalidConfig("frame shift/length must be positive")
        if not 0.0 < self.warp_alpha < 1.0:
            raise InvalidConfig(f"warp_alpha must lie in (0, 1), got {self.warp_alpha}")
        if not 0.0 < self.f0_floor < self.f0_ceil:
            raise InvalidConfig("need 0 < f0_floor < f0_ceil")
        if self.f0_ceil >= self.sample_rate / 2:
            raise InvalidConfig("f0_ceil must be below Nyquist")
        if self.mcep_order < 0 or self.bap_bands < 1:
            raise InvalidConfig("mcep_order must be >= 0 and bap_bands >= 1")
        if self.fft_size & (self.fft_size - 1) or self.fft_size < self.frame_length:
            raise InvalidConfig("fft_size must be a power of two >= the frame length")
        if self.median_length < 1 or self.median_length % 2 == 0:
            raise InvalidConfig("median_length must be a positive odd number")

    @property
    def shift(self) -> int:
        return int(round(self.sample_rate * self.frame_shift_ms / 1000.0))

    @property
    def frame_length(self) -> int:
        return int(round(self.sample_rate * self.frame_length_ms / 1000.0))

    @property
    def mcep_dim(self) -> int:
        return self.mcep_order + 1

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class SpeechParams:
    """Per-frame MCEP, continuous log-F0, voicing and band aperiodicity (dB)."""

    mcep: np.ndarray
    lf0: np.ndarray
    vuv: np.ndarray
    bap: np.ndarray
    frame_shift_ms: float = 10.0

    def __post_init__(self):
        mcep = np.asarray(self.mcep, dtype=np.float64)
        lf0 = np.asarray(self.lf0, dtype=np.float64).reshape(-1)
        vuv = np.asarray(self.vuv).astype(bool).reshape(-1)
        bap = np.asarray(self.bap, dtype=np.float64)
        if mcep.ndim != 2 or bap.ndim != 2:
            raise FrameCountMismatch("mcep and bap must be 2-D")
        counts = {mcep.shape[0], lf0.shape[0], vuv.shape[0], bap.shape[0]}
        if len(counts) != 1:
            raise FrameCountMismatch(
                f"stream lengths differ: mcep {mcep.shape[0]}, lf0 {lf0.shape[0]}, "
                f"vuv {vuv.shape[0]}, bap {bap.shape[0]}")
        for name, arr in (("mcep", mcep), ("lf0", lf0), ("bap", bap)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        vuv.setflags(write=False)
        object.__setattr__(self, "vuv", vuv)

    @property
    def n_frames(self) -> int:
        return self.lf0.shape[0]

    def __len__(self):
        return self.n_frames

    def f0(self) -> np.ndarray:
        """F0 in Hz with zeros on unvoiced frames."""
        return np.where(self.vuv, np.exp(self.lf0), 0.0)

    def truncate(self, n: int) -> "SpeechParams":
        return SpeechParams(self.mcep[:n], self.lf0[:n], self.vuv[:n], self.bap[:n], self.frame_shift_ms)

    def equals(self, other: "SpeechParams") -> bool:
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("mcep", "lf0", "vuv", "bap"))


# ---------------------------------------------------------------------------
# frequency warping and the cepstral basis

def warp_frequency(omega, alpha):
    """Phase response of the first-order all-pass used for mel warping."""
    omega = np.asarray(omega, dtype=np.float64)
    return omega + 2.0 * np.arctan(alpha * np.sin(omega) / (1.0 - alpha * np.cos(omega)))


@lru_cache(maxsize=32)
def _cepstral_basis(n_bins: int, order: int, alpha: float):
    omega = np.linspace(0.0, np.pi, n_bins)
    beta = warp_frequency(omega, alpha)
    basis = np.cos(np.outer(beta, np.arange(order + 1)))
    # quadrature weights uniform in the warped domain
    w = (1.0 - alpha * alpha) / (1.0 - 2.0 * alpha * np.cos(omega) + alpha * alpha)
    w[0] *= 0.5
    w[-1] *= 0.5
    bw = basis * w[:, None]
    proj = np.linalg.solve(basis.T @ bw, bw.T)
    basis.setflags(write=False)
    proj.setflags(write=False)
    return basis, proj


def logspec_to_mcep(logamp, order: int, alpha: float) -> np.ndarray:
    """Project log-amplitude spectra (``..., fft_size // 2 + 1``) onto warped cepstra."""
    logamp = np.asarray(logamp, dtype=np.float64)
    _, proj = _cepstral_basis(logamp.shape[-1], order, float(alpha))
    return logamp @ proj.T


def mcep_to_logspec(mcep, fft_size: int, alpha: float) -> np.ndarray:
    """Evaluate warped cepstra on the linear-frequency FFT grid (natural-log amplitude)."""
    mcep = np.asarray(mcep, dtype=np.float64)
    basis, _ = _cepstral_basis(fft_size // 2 + 1, mcep.shape[-1] - 1, float(alpha))
    return mcep @ basis.T


# ---------------------------------------------------------------------------
# framing

def n_frames_for(n_samples: int, cfg: AnalysisConfig) -> int:
    """Frame count for a signal: ``floor(n / shift)``, and one frame for short non-empty input."""
    if n_samples <= 0:
        return 0
    return max(1, n_samples // cfg.shift)


def frame_centers(n_frames: int, cfg: AnalysisConfig) -> np.ndarray:
    return np.arange(n_frames, dtype=np.int64) * cfg.shift + cfg.shift // 2


def _check_wave(wave: Waveform, cfg: AnalysisConfig):
    if len(wave) == 0:
        raise EmptyInput("empty waveform")
    if wave.sample_rate != cfg.sample_rate:
        raise SampleRateMismatch(f"waveform at {wave.sample_rate} Hz, analysis expects {cfg.sample_rate} Hz")


def _centered_segments(x, centers, length):
    """Rows ``x[c - length // 2 : c - length // 2 + length]`` with zero padding."""
    half = length // 2
    pad_l = max(0, half - int(centers.min())) if len(centers) else 0
    pad_r = max(0, int(centers.max()) - half + length - len(x)) if len(centers) else 0
    xp = np.concatenate([np.zeros(pad_l), x, np.zeros(pad_r)])
    idx = (centers - half + pad_l)[:, None] + np.arange(length)[None, :]
    return xp[idx]


def _inside(centers, length, n):
    """Shift window centres so a ``length``-sample window stays inside ``n`` samples when it fits."""
    if length > n:
        return centers
    return np.clip(centers, length // 2, n - length + length // 2)


def frame_signal(wave: Waveform, cfg: AnalysisConfig) -> np.ndarray:
    """Hann-windowed analysis frames, shape ``(T, frame_length)``."""
    _check_wave(wave, cfg)
    T = n_frames_for(len(wave), cfg)
    frames = _centered_segments(wave.samples, frame_centers(T, cfg), cfg.frame_length)
    return frames * get_window("hann", cfg.frame_length)


# ---------------------------------------------------------------------------
# F0

def _median_voiced(f0, vuv, length):
    half = length // 2
    out = f0.copy()
    for t in np.flatnonzero(vuv):
        lo, hi = max(0, t - half), min(len(f0), t + half + 1)
        out[t] = np.median(f0[lo:hi][vuv[lo:hi]])
    return out


def estimate_f0(wave: Waveform, cfg: AnalysisConfig = AnalysisConfig()):
    """Normalized cross-correlation pitch tracker.

    Among local maxima within 85% of the strongest one whose lag divides the
    strongest lag (to within 4%), the smallest lag is taken, which guards
    against period doubling without jumping to formant ripples; it is refined by parabolic interpolation, and
    declared voiced when its correlation reaches ``cfg.voicing_threshold``.
    A voiced-only running median of ``cfg.median_length`` frames removes
    isolated octave jumps.

    Returns
    -------
    f0 : ndarray, shape (T,)
        Hz, zero on unvoiced frames.
    vuv : ndarray of bool, shape (T,)
    """
    _check_wave(wave, cfg)
    fs = cfg.sample_rate
    T = n_frames_for(len(wave), cfg)
    win = cfg.frame_length
    lag_min = max(2, int(np.floor(fs / cfg.f0_ceil)))
    lag_max = int(np.ceil(fs / cfg.f0_floor))
    starts = frame_centers(T, cfg) - win // 2
    pad_l = int(max(0, -starts.min()))
    need = int(starts.max()) + pad_l + win + lag_max + 2
    xp = np.zeros(max(need, len(wave) + pad_l))
    xp[pad_l:pad_l + len(wave)] = wave.samples
    r = kernels.nccf(xp, starts + pad_l, win, lag_min - 1, lag_max + 1)

    energy = np.array([np.mean(xp[s:s + win] ** 2) for s in starts + pad_l])
    f0 = np.zeros(T)
    vuv = np.zeros(T, dtype=bool)
    inner = r[:, 1:-1]
    is_peak = (inner > r[:, :-2]) & (inner >= r[:, 2:])
    for t in range(T):
        if energy[t] < 1e-12:
            continue
        peaks = np.flatnonzero(is_peak[t])
        if peaks.size == 0:
            continue
        vals = inner[t, peaks]
        best = vals.max()
        if best < cfg.voicing_threshold:
            continue
        lags = lag_min + peaks
        top = lags[np.argmax(vals)]
        ratio = top / lags
        ok = (vals >= 0.85 * best) & (np.abs(ratio - np.round(ratio)) <= 0.04 * ratio)
        j = peaks[np.argmax(ok)]
        ym, y0, yp = r[t, j], r[t, j + 1], r[t, j + 2]
        den = ym - 2.0 * y0 + yp
        delta = 0.5 * (ym - yp) / den if den < 0 else 0.0
        lag = lag_min + j + float(np.clip(delta, -0.5, 0.5))
        f0[t] = fs / lag
        vuv[t] = True
    if cfg.median_length > 1:
        f0 = _median_voiced(f0, vuv, cfg.median_length)
    f0[vuv] = np.clip(f0[vuv], cfg.f0_floor, cfg.f0_ceil)
    return f0, vuv


def encode_lf0(f0, vuv, f0_floor: float = 60.0):
    """Continuous log-F0: log on voiced frames, linear interpolation across gaps.

    Leading and trailing gaps hold the nearest voiced value; an all-unvoiced
    input encodes ``log(f0_floor)`` everywhere.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    vuv = np.asarray(vuv).astype(bool)
    if f0.shape != vuv.shape:
        raise FrameCountMismatch(f"f0 has {f0.shape[0]} frames, vuv has {vuv.shape[0]}")
    if np.any(f0[vuv] <= 0):
        raise InvalidF0("voiced frame with non-positive F0")
    idx = np.flatnonzero(vuv)
    if idx.size == 0:
        return np.full(f0.shape, np.log(f0_floor)), vuv.copy()
    lf0 = np.interp(np.arange(f0.shape[0]), idx, np.log(f0[idx]))
    return lf0, vuv.copy()


# ---------------------------------------------------------------------------
# spectral envelope

def _power_spectrum(seg, window, n_fft):
    spec = np.fft.rfft(seg * window, n_fft)
    return (spec.real ** 2 + spec.imag ** 2) / np.sum(window ** 2)


def _smooth(power, width_bins):
    size = max(1, int(round(width_bins)))
    if size == 1:
        return power
    return uniform_filter1d(power, size, axis=-1, mode="reflect")


def envelope(wave: Waveform, cfg: AnalysisConfig = AnalysisConfig(), f0=None) -> np.ndarray:
    """Smoothed power-spectral envelope per frame, shape ``(T, fft_size // 2 + 1)``.

    Voiced frames (``f0 > 0``) use a Hann window three periods long and a
    one-harmonic-wide rectangular smoothing, which cancels the harmonic ripple.
    Other frames use the standard analysis frame and
    ``cfg.unvoiced_smoothing_hz`` of smoothing.  Windows are slid inside the
    signal at its ends so the hard onset does not leak into the estimate.  Scaling is a power spectral
    density: unit-variance white noise maps to 1.
    """
    _check_wave(wave, cfg)
    T = n_frames_for(len(wave), cfg)
    n_fft, fs = cfg.fft_size, cfg.sample_rate
    hz_per_bin = fs / n_fft
    win = get_window("hann", cfg.frame_length)
    centers = frame_centers(T, cfg)
    frames = _centered_segments(wave.samples, _inside(centers, cfg.frame_length, len(wave)), cfg.frame_length)
    base = np.fft.rfft(frames * win, n_fft)
    out = (base.real ** 2 + base.imag ** 2) / np.sum(win ** 2)
    out = _smooth(out, cfg.unvoiced_smoothing_hz / hz_per_bin)
    if f0 is not None:
        f0 = np.asarray(f0, dtype=np.float64)
        if f0.shape[0] != T:
            raise FrameCountMismatch(f"f0 has {f0.shape[0]} frames, signal has {T}")
        for t in np.flatnonzero(f0 > 0):
            length = min(n_fft, int(round(3.0 * fs / f0[t])))
            seg = _centered_segments(wave.samples, _inside(centers[t:t + 1], length, len(wave)), length)[0]
            p = _power_spectrum(seg, get_window("hann", length), n_fft)
            out[t] = _smooth(p, f0[t] / hz_per_bin)
    return out


def power_to_mcep(power, cfg: AnalysisConfig) -> np.ndarray:
    eps = cfg.spectral_floor
    logamp = 0.5 * np.log(np.maximum(power, eps * eps))
    return logspec_to_mcep(logamp, cfg.mcep_order, cfg.warp_alpha)


def extract_mcep(wave: Waveform, cfg: AnalysisConfig = AnalysisConfig(), f0=None) -> np.ndarray:
    """Mel-cepstrum per frame, shape ``(T, mcep_order + 1)``.

    Passing the frame F0 track enables pitch-adaptive envelope estimation on
    voiced frames; without it every frame is treated as aperiodic.
    """
    return power_to_mcep(envelope(wave, cfg, f0), cfg)


# ---------------------------------------------------------------------------
# aperiodicity

def band_edges(n_bins: int, bands: int) -> np.ndarray:
    """Bin indices splitting ``[0, n_bins)`` into ``bands`` equal-width bands."""
    return np.round(np.linspace(0, n_bins, bands + 1)).astype(int)


BAP_FLOOR_DB = -60.0


def extract_bap(wave: Waveform, f0, vuv, cfg: AnalysisConfig = AnalysisConfig()) -> np.ndarray:
    """Band aperiodicity in dB: inter-harmonic power over total power per band.

    Voiced frames are analysed with a Blackman window eight periods long so
    that harmonics are resolved; bins whose harmonic phase ``f / f0`` falls in
    ``[0.4, 0.6]`` (mod 1) estimate the aperiodic density.  Windows that would
    run past either end of the signal are slid inside it when the signal is
    long enough.  Unvoiced frames are 0 dB.  Values are clipped to ``[-60, 0]``.
    """
    _check_wave(wave, cfg)
    f0 = np.asarray(f0, dtype=np.float64)
    vuv = np.asarray(vuv).astype(bool)
    T = n_frames_for(len(wave), cfg)
    if f0.shape[0] != T or vuv.shape[0] != T:
        raise FrameCountMismatch(f"f0/vuv have {f0.shape[0]}/{vuv.shape[0]} frames, signal has {T}")
    fs = cfg.sample_rate
    bap = np.zeros((T, cfg.bap_bands))
    centers = frame_centers(T, cfg)
    for t in np.flatnonzero(vuv):
        if f0[t] <= 0:
            raise InvalidF0(f"frame {t} voiced with F0 {f0[t]}")
        length = int(round(8.0 * fs / f0[t]))
        n_fft = max(cfg.fft_size, 1 << int(np.ceil(np.log2(length))))
        seg = _centered_segments(wave.samples, _inside(centers[t:t + 1], length, len(wave)), length)[0]
        p = _power_spectrum(seg, get_window("blackman", length), n_fft)
        freqs = np.arange(p.shape[0]) * fs / n_fft
        phase = np.mod(freqs / f0[t], 1.0)
        valley = (phase >= 0.4) & (phase <= 0.6)
        edges = band_edges(p.shape[0], cfg.bap_bands)
        for b in range(cfg.bap_bands):
            sl = slice(edges[b], edges[b + 1])
            total = p[sl].mean()
            v = valley[sl]
            if total <= 0 or not v.any():
                bap[t, b] = BAP_FLOOR_DB
                continue
            ratio = p[sl][v].mean() / total
            bap[t, b] = 10.0 * np.log10(max(ratio, 10 ** (BAP_FLOOR_DB / 10)))
    return np.clip(bap, BAP_FLOOR_DB, 0.0)


def analyze(wave: Waveform, cfg: AnalysisConfig = AnalysisConfig()) -> SpeechParams:
    f0, vuv = estimate_f0(wave, cfg)
    mcep = extract_mcep(wave, cfg, f0=f0)
    bap = extract_bap(wave, f0, vuv, cfg)
    lf0, vuv = encode_lf0(f0, vuv, cfg.f0_floor)
    return SpeechParams(mcep, lf0, vuv, bap, cfg.frame_shift_ms)
