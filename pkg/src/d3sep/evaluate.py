"""Windowed signal-to-distortion ratio.

Per non-overlapping 1-second window w: 10*log10(sum ref^2 / sum (est-ref)^2),
capped at +/-100 dB.  A clip's score is the median over its non-silent
windows; a set of clips aggregates by a further median.
"""

from __future__ import annotations

import numpy as np

from .spectral import AudioClip

SDR_CAP_DB = 100.0
SILENCE_ENERGY = 1e-10


def sdr(estimate: AudioClip, reference: AudioClip,
        window_seconds: float = 1.0) -> float:
    if estimate.sample_rate != reference.sample_rate:
        raise ValueError(
            f"sample-rate mismatch: estimate {estimate.sample_rate} Hz, "
            f"reference {reference.sample_rate} Hz")
    if estimate.length != reference.length:
        raise ValueError(
            f"length mismatch: estimate {estimate.length}, reference {reference.length}")
    win = int(round(window_seconds * reference.sample_rate))
    scores = []
    for start in range(0, reference.length - win + 1, win):
        ref = reference.samples[:, start:start + win]
        est = estimate.samples[:, start:start + win]
        ref_energy = float(np.sum(ref * ref))
        if ref_energy <= SILENCE_ENERGY:
            continue
        err_energy = float(np.sum((est - ref) ** 2))
        if err_energy <= 0.0:
            scores.append(SDR_CAP_DB)
            continue
        value = 10.0 * np.log10(ref_energy / err_energy)
        scores.append(float(np.clip(value, -SDR_CAP_DB, SDR_CAP_DB)))
    if not scores:
        raise ValueError("reference is silent in every window")
    return float(np.median(scores))


def aggregate_sdr(per_clip_scores: list[float]) -> float:
    """Median over clips of per-clip median SDRs."""
    if not per_clip_scores:
        raise ValueError("no clip scores to aggregate")
    return float(np.median(per_clip_scores))
