"""Pure numpy implementations of the hot loops.

Semantics are identical to the compiled versions in ``_ckernels.pyx``; the
test-suite checks the two against each other.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def nccf(x, starts, win, lag_min, lag_max):
    """Normalized cross-correlation of each analysis window with its lagged copy.

    ``x`` must be padded so that ``x[s : s + win + lag_max]`` is in range for
    every start ``s``.  Returns a ``(len(starts), lag_max - lag_min + 1)`` array.
    """
    x = np.asarray(x, dtype=np.float64)
    starts = np.asarray(starts, dtype=np.int64)
    span = win + lag_max
    nlags = lag_max - lag_min + 1
    if starts.size == 0:
        return np.zeros((0, nlags))
    seg = sliding_window_view(x, span)[starts]
    nfft = 1 << int(np.ceil(np.log2(span)))
    head = np.fft.rfft(seg[:, :win], nfft)
    full = np.fft.rfft(seg, nfft)
    num = np.fft.irfft(np.conj(head) * full, nfft)[:, lag_min:lag_max + 1]
    sq = np.concatenate([np.zeros((seg.shape[0], 1)), np.cumsum(seg * seg, axis=1)], axis=1)
    e0 = sq[:, win]
    lags = np.arange(lag_min, lag_max + 1)
    elag = sq[:, lags + win] - sq[:, lags]
    den = np.sqrt(e0[:, None] * elag)
    out = np.zeros_like(num)
    ok = den > 1e-20
    out[ok] = num[ok] / den[ok]
    return out


def overlap_add(frames, starts, out_len):
    """Sum rows of ``frames`` into a buffer of ``out_len`` samples at ``starts``.

    Samples falling outside ``[0, out_len)`` are dropped.
    """
    frames = np.asarray(frames, dtype=np.float64)
    out = np.zeros(out_len)
    if frames.size == 0:
        return out
    width = frames.shape[1]
    for row, s in zip(frames, np.asarray(starts, dtype=np.int64)):
        lo, hi = max(0, s), min(out_len, s + width)
        if lo < hi:
            out[lo:hi] += row[lo - s:hi - s]
    return out


def pulse_epochs(f0, sample_rate):
    """Fractional glottal-pulse positions from a per-sample F0 track.

    Each voiced run (``f0 > 0``) starts with a pulse at its first sample; the
    next pulses fall where the accumulated phase crosses successive integers.
    Returns ``(positions, f0_at_pulse)``.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    voiced = f0 > 0
    pos_chunks, f0_chunks = [], []
    if not voiced.any():
        return np.zeros(0), np.zeros(0)
    edges = np.diff(np.concatenate([[0], voiced.astype(np.int8), [0]]))
    run_starts = np.flatnonzero(edges == 1)
    run_ends = np.flatnonzero(edges == -1)
    for a, b in zip(run_starts, run_ends):
        pos_chunks.append(np.array([float(a)]))
        f0_chunks.append(f0[a:a + 1])
        if b - a < 2:
            continue
        inc = f0[a + 1:b] / sample_rate
        cum = np.cumsum(inc)
        m = np.arange(1, int(np.floor(cum[-1])) + 1, dtype=np.float64)
        if m.size == 0:
            continue
        idx = np.searchsorted(cum, m, side="left")
        prev = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
        n = a + 1 + idx
        pos_chunks.append((n - 1) + (m - prev) / inc[idx])
        f0_chunks.append(f0[n])
    return np.concatenate(pos_chunks), np.concatenate(f0_chunks)
