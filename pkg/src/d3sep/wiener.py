"""Multichannel Wiener filtering from per-source magnitude estimates.

One non-iterated pass: per-source power spectral densities come from the
network's magnitude estimates, per-frequency spatial covariances from
PSD-weighted averages of mixture outer products, and each source is extracted
with the regularized Wiener gain per time-frequency bin.
"""

from __future__ import annotations

import numpy as np

from .spectral import Stft


def mwf(mixture: Stft, source_magnitudes: list[np.ndarray],
        eps_scale: float = 1e-10) -> list[Stft]:
    """Extract complex per-source spectrograms from the mixture.

    source_magnitudes: per-source nonnegative [channels, frames, bins] arrays
    matching the mixture's shape.
    """
    x = mixture.coefficients  # [C, T, F]
    c, t, f = x.shape
    psds = []
    for j, mag in enumerate(source_magnitudes):
        if mag.shape != x.shape:
            raise ValueError(
                f"estimate {j} has shape {mag.shape}, mixture is {x.shape}")
        if np.any(mag < 0):
            raise ValueError(f"estimate {j} has negative magnitudes")
        psds.append(np.mean(mag.astype(np.float64) ** 2, axis=0))  # [T, F]

    xt = np.transpose(x, (1, 2, 0))  # [T, F, C]
    outer = xt[..., :, None] * np.conj(xt[..., None, :])  # [T, F, C, C]
    covs = []
    for v in psds:
        num = np.einsum("tf,tfab->fab", v, outer, optimize=True)
        den = v.sum(axis=0)[:, None, None] + 1e-30
        covs.append(num / den)  # [F, C, C]

    total = np.zeros((t, f, c, c), dtype=complex)
    for v, r in zip(psds, covs):
        total += v[:, :, None, None] * r[None, :, :, :]
    trace = np.real(np.einsum("tfaa->tf", total)) / c
    reg = eps_scale * trace + 1e-300
    total_reg = total + reg[:, :, None, None] * np.eye(c)[None, None, :, :]
    inv_total = np.linalg.inv(total_reg)

    outputs = []
    for v, r in zip(psds, covs):
        gain = v[:, :, None, None] * np.einsum(
            "fab,tfbc->tfac", r, inv_total, optimize=True)
        est = np.einsum("tfab,tfb->tfa", gain, xt, optimize=True)
        outputs.append(Stft(mixture.sample_rate, np.transpose(est, (2, 0, 1)),
                            mixture.original_length, mixture.window_size,
                            mixture.hop))
    return outputs
