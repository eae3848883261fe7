"""Dense dilated blocks and the config-driven multiband network builder.

A D2 block is a DenseNet-style block whose layers are multidilated
convolutions: layer l consumes the block input plus all previous layer
outputs, one kernel group per skip connection, group i dilated by 2**i.
A D3 block densely connects M D2 blocks at the block level, resetting the
dilation pattern to 1 inside every D2 block and forwarding only the last N
layers' channels between blocks (channel reduction).
"""

from __future__ import annotations

import contextlib
import hashlib
import json
from pathlib import Path

import numpy as np

from .layers import (BatchNorm2d, Conv2d, Module, MultiDilatedConv,
                     TransposedConv2x2, avg_pool_2x2, concat)
from .tensor import Tensor, concat_tensors, pad_axis, slice_axis

DILATION_MODES = ("multi", "standard", "none")


class ConfigError(ValueError):
    """A network description violates a structural invariant."""


def layer_dilations(layer: int, mode: str) -> list[int]:
    """Per-group dilation factors for 1-based dense layer ``layer``.

    multi: group i (skip index) gets 2**i; standard: one factor 2**(layer-1)
    for every group; none: all ones.
    """
    if mode == "multi":
        return [2 ** i for i in range(layer)]
    if mode == "standard":
        return [2 ** (layer - 1)] * layer
    if mode == "none":
        return [1] * layer
    raise ConfigError(f"unknown dilation mode {mode!r}")


class D2Block(Module):
    def __init__(self, in_ch: int, growth: int, num_layers: int,
                 kernel=(3, 3), mode: str = "multi", reduce_n: int | None = None,
                 rng: np.random.Generator | None = None):
        if mode not in DILATION_MODES:
            raise ConfigError(f"unknown dilation mode {mode!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_ch = in_ch
        self.growth = growth
        self.num_layers = num_layers
        self.dilation_mode = mode
        self.reduce_n = num_layers if reduce_n is None else reduce_n
        if not 1 <= self.reduce_n <= num_layers:
            raise ConfigError(
                f"channel reduction N={self.reduce_n} out of range 1..{num_layers}")
        self.norms = []
        self.convs = []
        for layer in range(1, num_layers + 1):
            groups = [in_ch] + [growth] * (layer - 1)
            self.norms.append(BatchNorm2d(sum(groups)))
            self.convs.append(MultiDilatedConv(groups, growth, kernel,
                                               layer_dilations(layer, mode),
                                               bias=False, rng=rng))

    @property
    def out_ch(self) -> int:
        return self.reduce_n * self.growth

    def layer_outputs(self, x: Tensor) -> list[Tensor]:
        feats = [x]
        for norm, conv in zip(self.norms, self.convs):
            y = norm(concat_tensors(feats, axis=1)).relu()
            groups = []
            start = 0
            for width in conv.group_channels:
                groups.append(slice_axis(y, 1, start, start + width))
                start += width
            feats.append(conv(groups))
        return feats[1:]

    def __call__(self, x: Tensor) -> Tensor:
        return channel_reduce(self.layer_outputs(x), self.reduce_n)


def channel_reduce(layer_outputs: list[Tensor], n: int) -> Tensor:
    """Concatenate the last ``n`` per-layer outputs along channels."""
    if not 1 <= n <= len(layer_outputs):
        raise ConfigError(f"N={n} out of range 1..{len(layer_outputs)}")
    return concat_tensors(layer_outputs[-n:], axis=1)


class D3Block(Module):
    def __init__(self, in_ch: int, growth: int, num_layers: int, num_blocks: int,
                 kernel=(3, 3), mode: str = "multi", reduce_n: int | None = None,
                 rng: np.random.Generator | None = None):
        self.in_ch = in_ch
        self.num_blocks = num_blocks
        self.blocks = []
        c = in_ch
        for _ in range(num_blocks):
            blk = D2Block(c, growth, num_layers, kernel, mode, reduce_n, rng)
            self.blocks.append(blk)
            c += blk.out_ch
        self.out_ch = self.blocks[-1].out_ch

    def __call__(self, x: Tensor) -> Tensor:
        feats = [x]
        out = None
        for blk in self.blocks:
            out = blk(concat_tensors(feats, axis=1) if len(feats) > 1 else feats[0])
            feats.append(out)
        return out


def d2_forward(x: Tensor, block: D2Block) -> Tensor:
    return block(x)


def d3_forward(x: Tensor, block: D3Block) -> Tensor:
    return block(x)


# ---------------------------------------------------------------------------
# multiband encoder-decoder network


def _block_cfg(raw: dict, mode: str, rng, in_ch: int) -> D3Block:
    for key in ("k", "L", "M"):
        if key not in raw:
            raise ConfigError(f"block config missing {key!r}: {raw}")
    return D3Block(in_ch, raw["k"], raw["L"], raw["M"], mode=mode,
                   reduce_n=raw.get("N"), rng=rng)


class _Stream(Module):
    """One band stream: initial conv, pooled encoder, optional bottleneck,
    upsampling decoder with stage-skip concatenation."""

    def __init__(self, cfg: dict, mode: str, rng: np.random.Generator):
        init_kernel = tuple(cfg.get("init_kernel", [3, 3]))
        self.init_conv = Conv2d(2, cfg["init_ch"], init_kernel, bias=True, rng=rng)
        c = cfg["init_ch"]
        self.encoder = []
        enc_out = []
        for raw in cfg["encoder"]:
            blk = _block_cfg(raw, mode, rng, c)
            self.encoder.append(blk)
            c = blk.out_ch
            enc_out.append(c)
        self.bottleneck = None
        if cfg.get("bottleneck"):
            self.bottleneck = _block_cfg(cfg["bottleneck"], mode, rng, c)
            c = self.bottleneck.out_ch
        n_dec = len(cfg["decoder"])
        expected = len(self.encoder) if self.bottleneck else len(self.encoder) - 1
        if n_dec != expected:
            raise ConfigError(
                f"decoder has {n_dec} blocks; encoder/bottleneck layout requires {expected}")
        self.upsamplers = []
        self.decoder = []
        for j, raw in enumerate(cfg["decoder"]):
            skip_idx = len(self.encoder) - 1 - j if self.bottleneck \
                else len(self.encoder) - 2 - j
            up = TransposedConv2x2(c, c, rng=rng)
            self.upsamplers.append(up)
            blk = _block_cfg(raw, mode, rng, c + enc_out[skip_idx])
            self.decoder.append(blk)
            c = blk.out_ch
        self.out_ch = c

    def __call__(self, x: Tensor) -> Tensor:
        h = self.init_conv(x)
        skips = []
        for i, blk in enumerate(self.encoder):
            if i > 0:
                h = avg_pool_2x2(h)
            h = blk(h)
            skips.append(h)
        if self.bottleneck is not None:
            h = avg_pool_2x2(h)
            h = self.bottleneck(h)
            start = len(self.encoder) - 1
        else:
            h = skips[-1]
            start = len(self.encoder) - 2
        for j, (up, blk) in enumerate(zip(self.upsamplers, self.decoder)):
            skip = skips[start - j]
            h = up(h)
            # Crop upsampled extents back down when pooling replicated an odd edge.
            if h.shape[2] > skip.shape[2]:
                h = slice_axis(h, 2, 0, skip.shape[2])
            if h.shape[3] > skip.shape[3]:
                h = slice_axis(h, 3, 0, skip.shape[3])
            h = blk(concat([h, skip], "channel"))
        return h


class SeparationModel(Module):
    """Maps [N, 2, T, F] mixture magnitudes to same-shape source magnitudes."""

    def __init__(self, config: dict, seed: int = 0):
        validate_config(config)
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        mode = config.get("mode", "multi")
        self.valid_bins = config.get("valid_bins")
        self.bands = config.get("bands")
        self.streams = {}
        self._stream_names = sorted(config["streams"])
        for name in self._stream_names:
            self.streams[name] = _Stream(config["streams"][name], mode, rng)
        merged_ch = self._merged_channels()
        fd = config["final_d2"]
        self.final_block = D2Block(merged_ch, fd["k"], fd["L"], mode=mode,
                                   reduce_n=fd.get("N"), rng=rng)
        self.gate_conv = Conv2d(self.final_block.out_ch, config.get("gate_ch", 2),
                                tuple(config.get("gate_kernel", [3, 3])),
                                bias=True, rng=rng)

    def _merged_channels(self) -> int:
        if self.bands is None:
            return self.streams["full"].out_ch
        band_ch = max(self.streams["low"].out_ch, self.streams["high"].out_ch)
        return band_ch + self.streams["full"].out_ch

    def named_parameters(self, prefix: str = ""):
        for name in self._stream_names:
            yield from self.streams[name].named_parameters(
                f"{prefix}.streams.{name}" if prefix else f"streams.{name}")
        yield from self.final_block.named_parameters(
            f"{prefix}.final_block" if prefix else "final_block")
        yield from self.gate_conv.named_parameters(
            f"{prefix}.gate_conv" if prefix else "gate_conv")

    def named_state(self, prefix: str = ""):
        for name in self._stream_names:
            yield from self.streams[name].named_state(
                f"{prefix}.streams.{name}" if prefix else f"streams.{name}")
        yield from self.final_block.named_state(
            f"{prefix}.final_block" if prefix else "final_block")
        yield from self.gate_conv.named_state(
            f"{prefix}.gate_conv" if prefix else "gate_conv")

    def set_mode(self, mode: str):
        for stream in self.streams.values():
            stream.set_mode(mode)
        self.final_block.set_mode(mode)
        self.gate_conv.set_mode(mode)

    def param_count(self) -> int:
        return sum(p.size for _, p in self.named_parameters())

    def __call__(self, x: Tensor) -> Tensor:
        n, c, t, f = x.shape
        if c != 2:
            raise ConfigError(f"model expects 2-channel input, got {c}")
        f_used = f
        if self.valid_bins is not None and f > self.valid_bins:
            f_used = self.valid_bins
        mix = slice_axis(x, 3, 0, f_used) if f_used != f else x
        if self.bands is None:
            merged = self.streams["full"](mix)
        else:
            lo0, lo1 = self.bands["low"]
            hi0, hi1 = self.bands["high"]
            if f_used < hi1:
                raise ConfigError(
                    f"input has {f_used} usable bins; band split needs {hi1}")
            low = self.streams["low"](slice_axis(mix, 3, lo0 - 1, lo1))
            high = self.streams["high"](slice_axis(mix, 3, hi0 - 1, hi1))
            band_ch = max(low.shape[1], high.shape[1])
            if low.shape[1] < band_ch:
                low = pad_axis(low, 1, 0, band_ch - low.shape[1])
            if high.shape[1] < band_ch:
                high = pad_axis(high, 1, 0, band_ch - high.shape[1])
            band = concat([low, high], "frequency")
            full = self.streams["full"](mix)
            merged = concat([band, full], "channel")
        h = self.final_block(merged)
        mask = self.gate_conv(h).sigmoid()
        est = mask * mix
        if f_used != f:
            est = pad_axis(est, 3, 0, f - f_used)
        return est


def validate_config(config: dict):
    if "streams" not in config or not config["streams"]:
        raise ConfigError("config has no streams")
    bands = config.get("bands")
    if bands is None:
        if set(config["streams"]) != {"full"}:
            raise ConfigError("config without bands must have exactly one 'full' stream")
    else:
        if set(config["streams"]) != {"low", "high", "full"}:
            raise ConfigError("banded config requires streams low, high and full")
        lo0, lo1 = bands["low"]
        hi0, hi1 = bands["high"]
        if lo0 != 1 or hi0 != lo1 + 1:
            raise ConfigError(
                f"bands must partition [1, valid_bins] contiguously, got {bands}")
        if config.get("valid_bins") != hi1:
            raise ConfigError(
                f"valid_bins {config.get('valid_bins')} != high band end {hi1}")
    if config.get("gate_ch", 2) != 2:
        raise ConfigError("gate conv must output 2 channels")
    for name, scfg in config["streams"].items():
        if "init_ch" not in scfg or "encoder" not in scfg or "decoder" not in scfg:
            raise ConfigError(f"stream {name!r} missing init_ch/encoder/decoder")
        n_enc = len(scfg["encoder"])
        n_dec = len(scfg["decoder"])
        expected = n_enc if scfg.get("bottleneck") else n_enc - 1
        if n_dec != expected:
            raise ConfigError(
                f"stream {name!r}: decoder has {n_dec} blocks but must pair with "
                f"encoder stages ({expected} expected)")
    if "final_d2" not in config:
        raise ConfigError("config missing final_d2")


def build_network(config: dict, seed: int = 0) -> SeparationModel:
    return SeparationModel(config, seed)


def config_fingerprint(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@contextlib.contextmanager
def no_grad(model: Module):
    """Temporarily disable gradient tracking on every model parameter.

    Frees intermediate activations during inference-only forward passes.
    """
    params = list(model.named_parameters())
    for _, p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for _, p in params:
            p.requires_grad = True


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(model: SeparationModel, path, epoch: int = 0):
    path = Path(path)
    arrays = {f"state/{k}": v.data for k, v in model.named_state()}
    meta = {
        "config": model.config,
        "fingerprint": config_fingerprint(model.config),
        "seed": model.seed,
        "epoch": epoch,
    }
    np.savez(path, __meta__=np.frombuffer(
        json.dumps(meta).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path, config: dict | None = None) -> tuple[SeparationModel, int]:
    path = Path(path)
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if config is not None and config_fingerprint(config) != meta["fingerprint"]:
            raise ConfigError(
                "checkpoint was written for a different network configuration "
                f"(fingerprint {meta['fingerprint'][:12]}... != "
                f"{config_fingerprint(config)[:12]}...)")
        model = SeparationModel(meta["config"], seed=meta["seed"])
        for key, tensor in model.named_state():
            stored = data[f"state/{key}"]
            if stored.shape != tensor.data.shape:
                raise ConfigError(f"checkpoint entry {key} has shape {stored.shape}, "
                                  f"model expects {tensor.data.shape}")
            tensor.data[...] = stored
        return model, meta["epoch"]
