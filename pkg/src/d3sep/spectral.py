"""Audio I/O, short-time Fourier analysis/synthesis and patch slicing.

Analysis uses a 4096-sample square-root Hann window with 75% overlap
(hop 1024), which satisfies perfect reconstruction when the same window is
applied at synthesis.  Signals are reflect-padded by half a window before
analysis and cropped after synthesis so round-trip error is uniform.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

WINDOW_SIZE = 4096
HOP = 1024
BINS = WINDOW_SIZE // 2 + 1


@dataclass
class AudioClip:
    sample_rate: int
    samples: np.ndarray  # [channels, length], float64 in [-1, 1]

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if not np.isfinite(self.samples).all():
            raise ValueError("audio contains non-finite samples")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]


@dataclass
class Stft:
    sample_rate: int
    coefficients: np.ndarray  # complex [channels, frames, bins]
    original_length: int
    window_size: int = WINDOW_SIZE
    hop: int = HOP

    @property
    def frames(self) -> int:
        return self.coefficients.shape[1]

    @property
    def bins(self) -> int:
        return self.coefficients.shape[2]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.coefficients)


@dataclass
class SpectrogramPatch:
    magnitude: np.ndarray  # [channels, frames, bins], nonnegative
    frame_offset: int


def read_wav(path) -> AudioClip:
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV encoding {data.dtype} in {path}")
    if samples.ndim == 1:
        samples = samples[None, :]
    else:
        samples = samples.T
    if samples.shape[0] == 1:
        samples = np.repeat(samples, 2, axis=0)
    if samples.shape[0] != 2:
        raise ValueError(f"{path} has {samples.shape[0]} channels; expected 1 or 2")
    return AudioClip(rate, samples)


def write_wav(clip: AudioClip, path, bits: int = 16):
    path = Path(path)
    if bits == 16:
        data = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype(np.int16)
    elif bits == 32:
        data = np.clip(np.round(clip.samples * 2147483647.0),
                       -2147483648, 2147483647).astype(np.int32)
    else:
        raise ValueError(f"unsupported bit depth {bits}")
    wavfile.write(path, clip.sample_rate, data.T)


def _sqrt_hann(size: int) -> np.ndarray:
    return np.sqrt(np.hanning(size + 1)[:size])


def stft(clip: AudioClip, window_size: int = WINDOW_SIZE, hop: int = HOP) -> Stft:
    if clip.length < hop:
        raise ValueError(f"signal of {clip.length} samples is shorter than one hop")
    window = _sqrt_hann(window_size)
    half = window_size // 2
    padded = np.pad(clip.samples, ((0, 0), (half, half)), mode="reflect")
    n = padded.shape[1]
    n_frames = int(np.ceil((n - window_size) / hop)) + 1
    total = (n_frames - 1) * hop + window_size
    padded = np.pad(padded, ((0, 0), (0, total - n)))
    frames = np.lib.stride_tricks.sliding_window_view(
        padded, window_size, axis=1)[:, ::hop, :]
    coeff = np.fft.rfft(frames * window, axis=-1)
    return Stft(clip.sample_rate, coeff, clip.length, window_size, hop)


def istft(spec: Stft) -> AudioClip:
    window = _sqrt_hann(spec.window_size)
    half = spec.window_size // 2
    frames = np.fft.irfft(spec.coefficients, n=spec.window_size, axis=-1) * window
    ch, n_frames, _ = frames.shape
    total = (n_frames - 1) * spec.hop + spec.window_size
    out = np.zeros((ch, total))
    norm = np.zeros(total)
    for t in range(n_frames):
        sl = slice(t * spec.hop, t * spec.hop + spec.window_size)
        out[:, sl] += frames[:, t, :]
        norm[sl] += window * window
    norm = np.maximum(norm, 1e-12)
    out /= norm[None, :]
    out = out[:, half:half + spec.original_length]
    return AudioClip(spec.sample_rate, out)


def patchify(spec: Stft, patch_frames: int = 256,
             hop_frames: int | None = None) -> list[SpectrogramPatch]:
    """Tile the magnitude plane into fixed-length patches.

    The tail patch is zero-padded; ``overlap_merge`` crops it back.
    """
    mag = spec.magnitude()
    total = mag.shape[1]
    if hop_frames is None:
        hop_frames = patch_frames // 2
    if hop_frames < 1:
        raise ValueError("hop_frames must be positive")
    patches = []
    offset = 0
    while True:
        chunk = mag[:, offset:offset + patch_frames, :]
        if chunk.shape[1] < patch_frames:
            chunk = np.pad(chunk, ((0, 0), (0, patch_frames - chunk.shape[1]), (0, 0)))
        patches.append(SpectrogramPatch(chunk, offset))
        if offset + patch_frames >= total:
            break
        offset += hop_frames
    return patches


def overlap_merge(patches: list[SpectrogramPatch], total_frames: int) -> np.ndarray:
    """Average overlapping patch frames back into a full magnitude plane."""
    if not patches:
        raise ValueError("no patches to merge")
    ch, pf, bins = patches[0].magnitude.shape
    end = max(p.frame_offset + pf for p in patches)
    acc = np.zeros((ch, end, bins))
    count = np.zeros(end)
    for p in patches:
        sl = slice(p.frame_offset, p.frame_offset + pf)
        acc[:, sl, :] += p.magnitude
        count[sl] += 1.0
    acc /= np.maximum(count, 1.0)[None, :, None]
    return acc[:, :total_frames, :]
