"""MSE training with Adam, learning-rate annealing and stem augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocks import SeparationModel
from .spectral import AudioClip, stft
from .synth import SyntheticScene
from .tensor import Tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 6
    lr_initial: float = 1e-3
    lr_after: float = 1e-4
    lr_switch_epoch: int = 40
    patch_frames: int = 256
    seed: int = 0
    augmentation: bool = True

    def __post_init__(self):
        if self.lr_switch_epoch >= self.epochs:
            raise ValueError("lr_switch_epoch must be < epochs")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def lr_for_epoch(self, epoch: int) -> float:
        """1-based epoch; the annealed rate applies from the switch epoch on."""
        return self.lr_initial if epoch < self.lr_switch_epoch else self.lr_after


def mse_loss(estimate: Tensor, target: Tensor) -> Tensor:
    if estimate.shape != target.shape:
        raise ValueError(
            f"mse shapes differ: {estimate.shape} vs {target.shape}")
    diff = estimate - target
    return (diff * diff).mean()


class Adam:
    """Standard bias-corrected Adam over a model's named parameters."""

    def __init__(self, params: list[tuple[str, Tensor]],
                 beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
                 eps: float = ADAM_EPS):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.moments = {name: (np.zeros_like(p.data), np.zeros_like(p.data))
                        for name, p in params}

    def step(self, lr: float):
        self.step_count += 1
        t = self.step_count
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise TrainingDiverged(f"non-finite gradient in {name}")
            m, v = self.moments[name]
            m[...] = self.beta1 * m + (1 - self.beta1) * g
            v[...] = self.beta2 * v + (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1 ** t)
            vhat = v / (1 - self.beta2 ** t)
            p.data -= lr * mhat / (np.sqrt(vhat) + self.eps)


def adam_step(params, state: Adam, lr: float):
    state.step(lr)


def augment(stems: dict, rng: np.random.Generator) -> dict:
    """Per-stem random gain in [0.25, 1.25] and channel swap with p=0.5."""
    out = {}
    for name in sorted(stems):
        clip = stems[name]
        gain = rng.uniform(0.25, 1.25)
        samples = clip.samples * gain
        if rng.random() < 0.5:
            samples = samples[::-1, :].copy()
        out[name] = AudioClip(clip.sample_rate, samples)
    return out


def _scene_stems(scene: SyntheticScene) -> dict:
    return scene.stems


def make_training_example(scenes: list[SyntheticScene], source: str,
                          rng: np.random.Generator, patch_frames: int,
                          augmentation: bool) -> tuple[np.ndarray, np.ndarray]:
    """One (mixture patch, source patch) magnitude pair.

    With augmentation on, each stem is drawn from an independently chosen
    scene (within-batch remixing), gain-scaled and possibly channel-swapped;
    the mixture is re-summed from the augmented stems.
    """
    if augmentation:
        names = sorted(scenes[0].stems)
        stems = {}
        for name in names:
            donor = scenes[rng.integers(len(scenes))]
            stems[name] = donor.stems[name]
        stems = augment(stems, rng)
        mix_samples = sum(s.samples for s in stems.values())
        mixture = AudioClip(scenes[0].mixture.sample_rate, mix_samples)
    else:
        scene = scenes[rng.integers(len(scenes))]
        stems = scene.stems
        mixture = scene.mixture
    mix_mag = stft(mixture).magnitude()
    src_mag = stft(stems[source]).magnitude()
    total = mix_mag.shape[1]
    if total >= patch_frames:
        off = int(rng.integers(0, total - patch_frames + 1))
        mix_patch = mix_mag[:, off:off + patch_frames, :]
        src_patch = src_mag[:, off:off + patch_frames, :]
    else:
        pad = patch_frames - total
        mix_patch = np.pad(mix_mag, ((0, 0), (0, pad), (0, 0)))
        src_patch = np.pad(src_mag, ((0, 0), (0, pad), (0, 0)))
    return mix_patch, src_patch


def train(model: SeparationModel, scenes: list[SyntheticScene], source: str,
          cfg: TrainConfig, log=None) -> list[float]:
    """Full schedule over the scene set; returns per-epoch mean loss."""
    if source not in scenes[0].stems:
        raise ValueError(f"source {source!r} not in dataset stems "
                         f"{sorted(scenes[0].stems)}")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(list(model.named_parameters()))
    model.set_mode("train")
    history = []
    steps = max(1, int(np.ceil(len(scenes) / cfg.batch_size)))
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_for_epoch(epoch)
        epoch_losses = []
        for _ in range(steps):
            mixes, targets = [], []
            for _ in range(cfg.batch_size):
                mix, tgt = make_training_example(
                    scenes, source, rng, cfg.patch_frames, cfg.augmentation)
                mixes.append(mix)
                targets.append(tgt)
            x = Tensor(np.stack(mixes))
            y = Tensor(np.stack(targets))
            model.zero_grad()
            loss = mse_loss(model(x), y)
            value = loss.item()
            if not np.isfinite(value) or value > 1e6:
                raise TrainingDiverged(
                    f"loss {value} at epoch {epoch}; training halted")
            loss.backward()
            opt.step(lr)
            epoch_losses.append(value)
        mean_loss = float(np.mean(epoch_losses))
        history.append(mean_loss)
        if log is not None:
            log(f"epoch {epoch:3d}  lr {lr:.4g}  loss {mean_loss:.6g}")
    return history
