"""Synthetic two-source stereo scenes for desk-scale experiments.

Each scene mixes a "tonal" stem (sustained harmonic tone with vibrato) and a
"percussive" stem (band-passed noise bursts with sharp envelopes).  Both
stems are brick-wall limited below 2.5 kHz so a network operating on the lower
spectrogram bins sees essentially all of the energy.  The mixture is the
sample-exact sum of the stems.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .spectral import AudioClip, read_wav, write_wav

SOURCE_NAMES = ("tonal", "percussive")
SAMPLE_RATE = 44100
SCENE_SECONDS = 6.0
CUTOFF_HZ = 2500.0


@dataclass
class SyntheticScene:
    scene_id: int
    seed: int
    stems: dict  # name -> AudioClip
    mixture: AudioClip


def _brickwall_lowpass(x: np.ndarray, rate: int, cutoff: float) -> np.ndarray:
    spec = np.fft.rfft(x, axis=-1)
    freqs = np.fft.rfftfreq(x.shape[-1], 1.0 / rate)
    spec[:, freqs >= cutoff] = 0.0
    return np.fft.irfft(spec, n=x.shape[-1], axis=-1)


def _tonal_stem(rng: np.random.Generator, n: int, rate: int) -> np.ndarray:
    t = np.arange(n) / rate
    f0 = rng.uniform(150.0, 380.0)
    vib_rate = rng.uniform(4.0, 7.0)
    vib_depth = rng.uniform(0.004, 0.012)
    phase_mod = f0 * vib_depth / vib_rate * np.sin(2 * np.pi * vib_rate * t
                                                   + rng.uniform(0, 2 * np.pi))
    inst_phase = 2 * np.pi * (f0 * t + phase_mod)
    n_harm = int((CUTOFF_HZ - 200.0) // f0)
    x = np.zeros(n)
    for h in range(1, max(2, n_harm + 1)):
        amp = rng.uniform(0.5, 1.0) / h
        x += amp * np.sin(h * inst_phase + rng.uniform(0, 2 * np.pi))
    env = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.1, 0.4) * t
                             + rng.uniform(0, 2 * np.pi))
    x *= env
    x /= max(np.abs(x).max(), 1e-9)
    pan = rng.uniform(0.3, 0.7)
    stereo = np.stack([x * np.sqrt(1 - pan), x * np.sqrt(pan)])
    return 0.35 * stereo


def _percussive_stem(rng: np.random.Generator, n: int, rate: int) -> np.ndarray:
    x = np.zeros((2, n))
    n_bursts = rng.integers(12, 24)
    for _ in range(n_bursts):
        start = rng.integers(0, n - rate // 4)
        dur = int(rng.uniform(0.05, 0.18) * rate)
        decay = rng.uniform(15.0, 45.0)
        env = np.exp(-decay * np.arange(dur) / rate)
        burst = rng.standard_normal(dur) * env
        pan = rng.uniform(0.2, 0.8)
        x[0, start:start + dur] += burst * np.sqrt(1 - pan)
        x[1, start:start + dur] += burst * np.sqrt(pan)
    # Keep bursts away from the very low bins so the two stems stay
    # spectrally distinct.
    spec = np.fft.rfft(x, axis=-1)
    freqs = np.fft.rfftfreq(n, 1.0 / rate)
    spec[:, freqs < 500.0] = 0.0
    x = np.fft.irfft(spec, n=n, axis=-1)
    x /= max(np.abs(x).max(), 1e-9)
    return 0.35 * x


def _rms_normalize(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Comparable stem loudness (within +/-3 dB) keeps the mixture baseline
    # SDR near 0 dB for both sources.
    rms = np.sqrt(np.mean(x * x))
    # Low enough that burst peaks keep the summed mixture inside [-1, 1].
    target = 0.025 * 10.0 ** (rng.uniform(-1.5, 1.5) / 20.0)
    return x * (target / max(rms, 1e-9))


def synth_scene(scene_id: int, seed: int, rate: int = SAMPLE_RATE,
                seconds: float = SCENE_SECONDS) -> SyntheticScene:
    rng = np.random.default_rng((seed, scene_id))
    n = int(rate * seconds)
    stems = {
        "tonal": _brickwall_lowpass(_tonal_stem(rng, n, rate), rate, CUTOFF_HZ),
        "percussive": _brickwall_lowpass(_percussive_stem(rng, n, rate), rate,
                                         CUTOFF_HZ),
    }
    stems = {name: _rms_normalize(x, rng) for name, x in sorted(stems.items())}
    clips = {name: AudioClip(rate, data) for name, data in stems.items()}
    mixture = AudioClip(rate, stems["tonal"] + stems["percussive"])
    return SyntheticScene(scene_id, seed, clips, mixture)


def synth_dataset(seed: int, n_scenes: int) -> list[SyntheticScene]:
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    return [synth_scene(i, seed) for i in range(n_scenes)]


def write_dataset(scenes: list[SyntheticScene], root):
    root = Path(root)
    for scene in scenes:
        d = root / f"scene_{scene.scene_id:03d}"
        d.mkdir(parents=True, exist_ok=True)
        write_wav(scene.mixture, d / "mixture.wav", bits=32)
        for name, clip in scene.stems.items():
            write_wav(clip, d / f"{name}.wav", bits=32)


def load_dataset(root) -> list[SyntheticScene]:
    root = Path(root)
    scenes = []
    for d in sorted(root.glob("scene_*")):
        stems = {}
        for wav in sorted(d.glob("*.wav")):
            if wav.stem == "mixture":
                continue
            stems[wav.stem] = read_wav(wav)
        if not stems:
            raise ValueError(f"{d} contains no stem WAVs")
        mixture = read_wav(d / "mixture.wav")
        scenes.append(SyntheticScene(int(d.name.split("_")[1]), -1, stems, mixture))
    if not scenes:
        raise ValueError(f"no scene_* directories under {root}")
    return scenes


def spectral_flatness(clip: AudioClip, fmin: float = 600.0,
                      fmax: float = 2400.0) -> float:
    """Geometric over arithmetic mean of the power spectrum in the band both
    stem families occupy."""
    x = clip.samples.mean(axis=0)
    power = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(x.size, 1.0 / clip.sample_rate)
    band = power[(freqs > fmin) & (freqs < fmax)] + 1e-30
    return float(np.exp(np.mean(np.log(band))) / np.mean(band))
