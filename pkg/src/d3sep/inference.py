"""Separation of a mixture clip into source stems.

STFT -> patch-tiled per-source magnitude inference -> multichannel Wiener
filter -> inverse STFT.
"""

from __future__ import annotations

import numpy as np

from .blocks import SeparationModel, no_grad
from .spectral import AudioClip, istft, overlap_merge, patchify, stft
from .tensor import Tensor
from .wiener import mwf


def infer_magnitude(model: SeparationModel, spec, patch_frames: int = 256) -> np.ndarray:
    """Tile the spectrogram, run the model per patch, merge by averaging."""
    patches = patchify(spec, patch_frames)
    model.set_mode("eval")
    with no_grad(model):
        for p in patches:
            est = model(Tensor(p.magnitude[None]))
            p.magnitude = np.maximum(est.data[0], 0.0)
    return overlap_merge(patches, spec.frames)


def separate(models: dict, mixture: AudioClip,
             patch_frames: int = 256) -> dict:
    """Run every per-source model and Wiener-filter the mixture."""
    if mixture.channels != 2:
        raise ValueError(f"mixture must be stereo, got {mixture.channels} channels")
    spec = stft(mixture)
    names = sorted(models)
    mags = [infer_magnitude(models[name], spec, patch_frames) for name in names]
    # Bins outside every model's band (zero-padded above valid_bins) would
    # get zero Wiener gain and drop mixture energy; share the mixture
    # magnitude equally there so the stems still sum back to the mixture.
    unmodeled = sum(mags) == 0.0
    fill = np.abs(spec.coefficients) / len(mags)
    for mag in mags:
        mag[unmodeled] = fill[unmodeled]
    filtered = mwf(spec, mags)
    return {name: istft(est) for name, est in zip(names, filtered)}
