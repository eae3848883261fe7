import numpy as np
import pytest

from d3sep.spectral import (BINS, HOP, WINDOW_SIZE, AudioClip, _sqrt_hann,
                            istft, overlap_merge, patchify, read_wav, stft,
                            write_wav)


def tone(freq, seconds=2.0, rate=44100, channels=2):
    t = np.arange(int(seconds * rate)) / rate
    wave = 0.4 * np.sin(2 * np.pi * freq * t)
    return AudioClip(rate, np.tile(wave, (channels, 1)))


def test_window_satisfies_overlap_constraint():
    # Squared sqrt-Hann windows at 1/4-window hop sum to a constant.
    w2 = _sqrt_hann(WINDOW_SIZE) ** 2
    acc = np.zeros(WINDOW_SIZE * 3)
    for start in range(0, len(acc) - WINDOW_SIZE + 1, HOP):
        acc[start:start + WINDOW_SIZE] += w2
    inner = acc[WINDOW_SIZE:-WINDOW_SIZE]
    np.testing.assert_allclose(inner, inner[0], atol=1e-12)


def test_roundtrip_reconstruction():
    rng = np.random.default_rng(0)
    clip = AudioClip(44100, rng.uniform(-0.5, 0.5, size=(2, 44100)))
    back = istft(stft(clip))
    assert back.samples.shape == clip.samples.shape
    np.testing.assert_allclose(back.samples, clip.samples, atol=1e-10)


def test_roundtrip_length_not_multiple_of_hop():
    rng = np.random.default_rng(1)
    clip = AudioClip(44100, rng.uniform(-0.5, 0.5, size=(2, 44100 + 777)))
    back = istft(stft(clip))
    assert back.length == clip.length
    np.testing.assert_allclose(back.samples, clip.samples, atol=1e-10)


def test_tone_peaks_at_expected_bin():
    freq = 430.66  # exactly bin 40 at 44.1 kHz with a 4096-point transform
    spec = stft(tone(freq))
    mag = spec.magnitude().mean(axis=(0, 1))
    assert mag.argmax() == round(freq * WINDOW_SIZE / 44100) == 40
    assert spec.bins == BINS


def test_energy_preserved_through_analysis():
    # With the overlap constraint satisfied, total spectral energy divided
    # by the transform length matches the padded time-domain energy.
    rng = np.random.default_rng(2)
    clip = AudioClip(44100, rng.uniform(-0.5, 0.5, size=(1, 8 * HOP)))
    spec = stft(clip)
    back = istft(spec)
    np.testing.assert_allclose(
        np.sum(back.samples ** 2), np.sum(clip.samples ** 2), rtol=1e-10)


def test_stft_rejects_tiny_signal():
    with pytest.raises(ValueError, match="hop"):
        stft(AudioClip(44100, np.zeros((2, 100))))


def test_clip_rejects_nan():
    with pytest.raises(ValueError, match="non-finite"):
        AudioClip(44100, np.array([[0.0, np.nan]]))


def test_wav_roundtrip_16bit(tmp_path):
    rng = np.random.default_rng(3)
    clip = AudioClip(44100, rng.uniform(-0.9, 0.9, size=(2, 2048)))
    path = tmp_path / "x.wav"
    write_wav(clip, path)
    back = read_wav(path)
    assert back.sample_rate == 44100
    assert back.samples.shape == clip.samples.shape
    np.testing.assert_allclose(back.samples, clip.samples, atol=2.0 / 32768)


def test_wav_roundtrip_32bit(tmp_path):
    rng = np.random.default_rng(4)
    clip = AudioClip(22050, rng.uniform(-0.9, 0.9, size=(2, 512)))
    path = tmp_path / "x.wav"
    write_wav(clip, path, bits=32)
    back = read_wav(path)
    np.testing.assert_allclose(back.samples, clip.samples, atol=1e-8)


def test_mono_wav_promoted_to_stereo(tmp_path):
    clip = AudioClip(8000, np.linspace(-0.5, 0.5, 256)[None, :])
    path = tmp_path / "mono.wav"
    write_wav(clip, path)
    back = read_wav(path)
    assert back.channels == 2
    np.testing.assert_array_equal(back.samples[0], back.samples[1])


def test_read_wav_missing_file(tmp_path):
    with pytest.raises((FileNotFoundError, ValueError)):
        read_wav(tmp_path / "missing.wav")


def test_patchify_covers_all_frames():
    rng = np.random.default_rng(5)
    clip = AudioClip(44100, rng.uniform(-0.5, 0.5, size=(2, 44100)))
    spec = stft(clip)
    patches = patchify(spec, patch_frames=16)
    assert all(p.magnitude.shape == (2, 16, BINS) for p in patches)
    assert patches[0].frame_offset == 0
    assert patches[-1].frame_offset + 16 >= spec.frames


def test_patchify_then_merge_is_identity():
    rng = np.random.default_rng(6)
    clip = AudioClip(44100, rng.uniform(-0.5, 0.5, size=(2, 44100)))
    spec = stft(clip)
    for patch_frames in (8, 16, 30):
        patches = patchify(spec, patch_frames=patch_frames)
        merged = overlap_merge(patches, spec.frames)
        np.testing.assert_allclose(merged, spec.magnitude(), atol=1e-12)


def test_patchify_rejects_bad_hop():
    spec = stft(AudioClip(44100, np.zeros((2, 8 * HOP))))
    with pytest.raises(ValueError):
        patchify(spec, patch_frames=8, hop_frames=0)


def test_overlap_merge_requires_patches():
    with pytest.raises(ValueError):
        overlap_merge([], 10)
