"""Objective metrics: mel-cepstral distortion, F0 RMSE, voicing error, global variance."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionMismatch, FrameCountMismatch, MissingReference
from .features import SpeechParams

MCD_CONST = 10.0 / np.log(10.0)


def mcd_frames(a, b) -> np.ndarray:
    """Per-frame distortion in dB over coefficients 1..M (c0 excluded)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionMismatch(f"mcep shapes differ: {a.shape} vs {b.shape}")
    d = a[:, 1:] - b[:, 1:]
    return MCD_CONST * np.sqrt(2.0 * np.sum(d * d, axis=1))


def mcd(a, b) -> float:
    """Mean mel-cepstral distortion (dB)."""
    per = mcd_frames(a, b)
    return float(per.mean()) if per.size else 0.0


def _check_len(a: SpeechParams, b: SpeechParams):
    if a.n_frames != b.n_frames:
        raise FrameCountMismatch(f"{a.n_frames} vs {b.n_frames} frames")


def f0_rmse(a: SpeechParams, b: SpeechParams):
    """RMSE in Hz over frames voiced in both; ``(0.0, True)`` when there are none.

    Returns ``(rmse, no_common_voiced)``.
    """
    _check_len(a, b)
    both = a.vuv & b.vuv
    if not both.any():
        return 0.0, True
    d = np.exp(a.lf0[both]) - np.exp(b.lf0[both])
    return float(np.sqrt(np.mean(d * d))), False


def vuv_error(a: SpeechParams, b: SpeechParams) -> float:
    _check_len(a, b)
    if a.n_frames == 0:
        return 0.0
    return float(np.mean(a.vuv != b.vuv))


@dataclass
class UtteranceMetrics:
    id: str
    frames: int
    mcd: float
    f0_rmse: float
    f0_frames: int
    vuv_error: float


@dataclass
class EvalReport:
    utterances: list
    mcd: float
    f0_rmse: float
    vuv_error: float
    gv_ratio: list = field(default_factory=list)
    frames: int = 0
    f0_frames: int = 0

    def as_dict(self):
        return asdict(self)


def compare(pred: SpeechParams, ref: SpeechParams, uid: str = "", slack: int = 2) -> UtteranceMetrics:
    if abs(pred.n_frames - ref.n_frames) > slack:
        raise FrameCountMismatch(f"{uid}: {pred.n_frames} vs {ref.n_frames} frames (slack {slack})")
    T = min(pred.n_frames, ref.n_frames)
    pred, ref = pred.truncate(T), ref.truncate(T)
    rmse, none = f0_rmse(pred, ref)
    return UtteranceMetrics(uid, T, mcd(pred.mcep, ref.mcep), rmse, 0 if none else int(np.sum(pred.vuv & ref.vuv)),
                            vuv_error(pred, ref))


def evaluate_pairs(pairs, slack: int = 2) -> EvalReport:
    """Metrics for ``(id, predicted, reference)`` triples.

    Corpus figures pool frames across utterances: MCD and voicing error are
    frame-weighted, F0 RMSE is taken over all commonly voiced frames, and the
    global-variance ratio compares per-dimension MCEP variances.
    """
    utts, mcd_sum, vuv_sum, f0_sq, frames, f0_frames = [], 0.0, 0.0, 0.0, 0, 0
    pm, rm = [], []
    for uid, pred, ref in sorted(pairs, key=lambda p: p[0]):
        m = compare(pred, ref, uid, slack)
        utts.append(m)
        mcd_sum += m.mcd * m.frames
        vuv_sum += m.vuv_error * m.frames
        f0_sq += m.f0_rmse ** 2 * m.f0_frames
        frames += m.frames
        f0_frames += m.f0_frames
        pm.append(pred.mcep[:m.frames])
        rm.append(ref.mcep[:m.frames])
    gv = []
    if frames > 1:
        vp = np.var(np.concatenate(pm), axis=0)
        vr = np.var(np.concatenate(rm), axis=0)
        gv = (vp / np.maximum(vr, 1e-12)).tolist()
    return EvalReport(utts, mcd_sum / frames if frames else 0.0,
                      float(np.sqrt(f0_sq / f0_frames)) if f0_frames else 0.0,
                      vuv_sum / frames if frames else 0.0, gv, frames, f0_frames)


def evaluate_corpus(pred_manifest, ref_manifest, load_params, slack: int = 2) -> EvalReport:
    """Match utterances by id and evaluate; ``load_params(record)`` yields :class:`SpeechParams`."""
    refs = {r.id: r for r in ref_manifest.entries}
    pairs = []
    for rec in pred_manifest.entries:
        if rec.id not in refs:
            raise MissingReference(f"no reference utterance for {rec.id!r}")
        pairs.append((rec.id, load_params(rec), load_params(refs[rec.id])))
    return evaluate_pairs(pairs, slack)


def format_report(report: EvalReport) -> str:
    lines = [f"{'id':<24}{'frames':>8}{'MCD[dB]':>10}{'F0RMSE[Hz]':>12}{'VUVerr':>9}"]
    for u in report.utterances:
        lines.append(f"{u.id:<24}{u.frames:>8d}{u.mcd:>10.3f}{u.f0_rmse:>12.3f}{u.vuv_error:>9.4f}")
    lines.append(f"{'ALL':<24}{report.frames:>8d}{report.mcd:>10.3f}{report.f0_rmse:>12.3f}{report.vuv_error:>9.4f}")
    if report.gv_ratio:
        lines.append(f"mean GV ratio (c1..): {np.mean(report.gv_ratio[1:]) if len(report.gv_ratio) > 1 else report.gv_ratio[0]:.4f}")
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, path_stem) -> tuple:
    """Write ``<stem>.txt`` (table) and ``<stem>.jsonl`` (one record per utterance, then a summary)."""
    txt, jl = f"{path_stem}.txt", f"{path_stem}.jsonl"
    with open(txt, "w", encoding="utf-8") as f:
        f.write(format_report(report))
    with open(jl, "w", encoding="utf-8") as f:
        for u in report.utterances:
            f.write(json.dumps(asdict(u), sort_keys=True) + "\n")
        summary = {"id": "__corpus__", "frames": report.frames, "mcd": report.mcd, "f0_rmse": report.f0_rmse,
                   "f0_frames": report.f0_frames, "vuv_error": report.vuv_error, "gv_ratio": report.gv_ratio}
        f.write(json.dumps(summary, sort_keys=True) + "\n")
    return txt, jl
