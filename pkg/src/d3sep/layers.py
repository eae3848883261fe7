"""Convolutional and normalization primitives.

All spatial operations act on [N, C, T, F] tensors (batch, channels, frames,
frequency bins) and preserve the spatial extents via symmetric zero padding
("same" convolution), except the explicit 2x2 pooling / upsampling pair.

The multidilated convolution sums per-group dilated convolutions, one group
per dense skip connection, so a single layer sees several resolutions at once.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .tensor import ShapeMismatchError, Tensor, concat_tensors


# ---------------------------------------------------------------------------
# module system


class Module:
    """Minimal parameter container with recursive traversal."""

    def named_parameters(self, prefix: str = ""):
        for key, child in self._named_children(prefix):
            if isinstance(child, Tensor):
                if child.requires_grad:
                    yield key, child
            else:
                yield from child.named_parameters(key)

    def named_state(self, prefix: str = ""):
        """Parameters plus persistent buffers (running statistics)."""
        for key, child in self._named_children(prefix):
            if isinstance(child, Tensor):
                yield key, child
            else:
                yield from child.named_state(key)

    def _named_children(self, prefix: str = ""):
        for name, child in vars(self).items():
            key = name if not prefix else f"{prefix}.{name}"
            if isinstance(child, (Tensor, Module)):
                yield key, child
            elif isinstance(child, (list, tuple)):
                for i, item in enumerate(child):
                    if isinstance(item, (Tensor, Module)):
                        yield f"{key}.{i}", item

    def set_mode(self, mode: str):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        for child in vars(self).values():
            if isinstance(child, Module):
                child.set_mode(mode)
            elif isinstance(child, (list, tuple)):
                for item in child:
                    if isinstance(item, Module):
                        item.set_mode(mode)
        if hasattr(self, "mode"):
            self.mode = mode

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.zero_grad()


def conv_init(rng: np.random.Generator, out_ch: int, in_ch: int,
              kt: int, kf: int) -> np.ndarray:
    """Fan-in-scaled uniform kernel initialization."""
    bound = 1.0 / np.sqrt(in_ch * kt * kf)
    return rng.uniform(-bound, bound, size=(out_ch, in_ch, kt, kf))


# ---------------------------------------------------------------------------
# functional ops


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           dilation: tuple[int, int] = (1, 1)) -> Tensor:
    """Dilated "same" convolution with zero padding.

    kernel: [out_ch, in_ch, k_t, k_f] with odd spatial extents.
    """
    n, c, t, f = x.shape
    out_ch, in_ch, kt, kf = kernel.shape
    dt, df = int(dilation[0]), int(dilation[1])
    if kt % 2 == 0 or kf % 2 == 0:
        raise ValueError(f"kernel spatial extents must be odd, got {(kt, kf)}")
    if dt < 1 or df < 1:
        raise ValueError(f"dilation components must be >= 1, got {(dt, df)}")
    if c != in_ch:
        raise ShapeMismatchError(
            f"conv2d channel mismatch: input has {c} channels, kernel expects {in_ch}")
    pt = dt * (kt - 1) // 2
    pf = df * (kf - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (pf, pf)))
    out_data = np.zeros((n, out_ch, t, f))
    for i in range(kt):
        for j in range(kf):
            patch = xp[:, :, i * dt:i * dt + t, j * df:j * df + f]
            out_data += np.einsum("oc,nctf->notf", kernel.data[:, :, i, j], patch,
                                  optimize=True)
    if bias is not None:
        out_data += bias.data[None, :, None, None]
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    out = Tensor(out_data, _parents=parents)

    def bwd(g):
        if x.requires_grad:
            gpad = np.zeros_like(xp)
            for i in range(kt):
                for j in range(kf):
                    gpad[:, :, i * dt:i * dt + t, j * df:j * df + f] += np.einsum(
                        "oc,notf->nctf", kernel.data[:, :, i, j], g, optimize=True)
            x._accumulate(np.ascontiguousarray(
                gpad[:, :, pt:pt + t, pf:pf + f]))
        if kernel.requires_grad:
            gk = np.zeros_like(kernel.data)
            for i in range(kt):
                for j in range(kf):
                    patch = xp[:, :, i * dt:i * dt + t, j * df:j * df + f]
                    gk[:, :, i, j] = np.einsum("notf,nctf->oc", g, patch,
                                               optimize=True)
            kernel._accumulate(gk)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    out._backward = bwd if out.requires_grad else None
    return out


def multidilated_conv(y_groups: Sequence[Tensor], kernels: Sequence[Tensor],
                      dilations: Sequence[tuple[int, int]],
                      bias: Tensor | None = None) -> Tensor:
    """Sum of per-group dilated convolutions producing one output map set."""
    if not (len(y_groups) == len(kernels) == len(dilations)):
        raise ValueError(
            f"group count mismatch: {len(y_groups)} inputs, "
            f"{len(kernels)} kernels, {len(dilations)} dilations")
    out = None
    for gi, (y, k, d) in enumerate(zip(y_groups, kernels, dilations)):
        term = conv2d(y, k, None, d)
        out = term if out is None else out + term
    if bias is not None:
        b = Tensor(np.broadcast_to(bias.data[None, :, None, None], out.shape).copy(),
                   _parents=(bias,))

        def bias_bwd(g, _bias=bias):
            _bias._accumulate(g.sum(axis=(0, 2, 3)))

        b._backward = bias_bwd if b.requires_grad else None
        out = out + b
    return out


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: Tensor, running_var: Tensor,
               eps: float = 1e-5, momentum: float = 0.1,
               mode: str = "train") -> Tensor:
    """Per-channel batch normalization over the (N, T, F) axes.

    Train mode uses batch statistics and updates the running buffers in
    place; eval mode is a fixed affine transform from the running buffers.
    """
    n, c, t, f = x.shape
    if n * t * f == 0:
        raise ValueError("batch_norm on a zero-size batch")
    if gamma.shape != (c,):
        raise ShapeMismatchError(f"gamma shape {gamma.shape} != ({c},)")
    if mode == "eval":
        ivstd = 1.0 / np.sqrt(running_var.data + eps)
        scale = gamma.data * ivstd
        out_data = (x.data - running_mean.data[None, :, None, None]) \
            * scale[None, :, None, None] + beta.data[None, :, None, None]
        xhat = (x.data - running_mean.data[None, :, None, None]) * ivstd[None, :, None, None]
        out = Tensor(out_data, _parents=(x, gamma, beta))

        def bwd_eval(g):
            if x.requires_grad:
                x._accumulate(g * scale[None, :, None, None])
            if gamma.requires_grad:
                gamma._accumulate(np.einsum("nctf,nctf->c", g, xhat, optimize=True))
            if beta.requires_grad:
                beta._accumulate(g.sum(axis=(0, 2, 3)))

        out._backward = bwd_eval if out.requires_grad else None
        return out

    m = n * t * f
    mu = x.data.mean(axis=(0, 2, 3))
    xc = x.data - mu[None, :, None, None]
    var = np.einsum("nctf,nctf->c", xc, xc, optimize=True) / m
    ivstd = 1.0 / np.sqrt(var + eps)
    xhat = xc
    xhat *= ivstd[None, :, None, None]
    out_data = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    running_mean.data[:] = (1.0 - momentum) * running_mean.data + momentum * mu
    running_var.data[:] = (1.0 - momentum) * running_var.data + momentum * var
    out = Tensor(out_data, _parents=(x, gamma, beta))

    def bwd_train(g):
        if gamma.requires_grad:
            gamma._accumulate(np.einsum("nctf,nctf->c", g, xhat, optimize=True))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxhat = g * gamma.data[None, :, None, None]
            sum_dxhat = dxhat.sum(axis=(0, 2, 3))
            sum_dxhat_xhat = np.einsum("nctf,nctf->c", dxhat, xhat, optimize=True)
            dx = (dxhat - (sum_dxhat[None, :, None, None]
                           + xhat * sum_dxhat_xhat[None, :, None, None]) / m) \
                * ivstd[None, :, None, None]
            x._accumulate(dx)

    out._backward = bwd_train if out.requires_grad else None
    return out


def avg_pool_2x2(x: Tensor) -> Tensor:
    """2x2 mean pooling; odd extents are edge-replicated to even first."""
    n, c, t, f = x.shape
    pad_t, pad_f = t % 2, f % 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (0, pad_t), (0, pad_f)), mode="edge")
    out_data = 0.25 * (xp[:, :, 0::2, 0::2] + xp[:, :, 1::2, 0::2]
                       + xp[:, :, 0::2, 1::2] + xp[:, :, 1::2, 1::2])
    out = Tensor(out_data, _parents=(x,))

    def bwd(g):
        gpad = np.zeros_like(xp)
        q = 0.25 * g
        gpad[:, :, 0::2, 0::2] += q
        gpad[:, :, 1::2, 0::2] += q
        gpad[:, :, 0::2, 1::2] += q
        gpad[:, :, 1::2, 1::2] += q
        gx = gpad[:, :, :t, :f].copy()
        if pad_t:
            gx[:, :, t - 1, :] += gpad[:, :, t, :f]
        if pad_f:
            gx[:, :, :, f - 1] += gpad[:, :, :t, f]
        if pad_t and pad_f:
            gx[:, :, t - 1, f - 1] += gpad[:, :, t, f]
        x._accumulate(gx)

    out._backward = bwd if out.requires_grad else None
    return out


def transposed_conv_2x2(x: Tensor, kernel: Tensor,
                        bias: Tensor | None = None) -> Tensor:
    """Stride-2 learned 2x upsampling; kernel [in_ch, out_ch, 2, 2]."""
    n, c, t, f = x.shape
    in_ch, out_ch, kt, kf = kernel.shape
    if (kt, kf) != (2, 2):
        raise ValueError(f"transposed conv kernel must be 2x2, got {(kt, kf)}")
    if c != in_ch:
        raise ShapeMismatchError(
            f"transposed conv channel mismatch: input {c}, kernel expects {in_ch}")
    out_data = np.zeros((n, out_ch, 2 * t, 2 * f))
    for i in range(2):
        for j in range(2):
            out_data[:, :, i::2, j::2] = np.einsum(
                "co,nctf->notf", kernel.data[:, :, i, j], x.data, optimize=True)
    if bias is not None:
        out_data += bias.data[None, :, None, None]
    parents = (x, kernel) if bias is None else (x, kernel, bias)
    out = Tensor(out_data, _parents=parents)

    def bwd(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for i in range(2):
                for j in range(2):
                    gx += np.einsum("co,notf->nctf", kernel.data[:, :, i, j],
                                    g[:, :, i::2, j::2], optimize=True)
            x._accumulate(gx)
        if kernel.requires_grad:
            gk = np.zeros_like(kernel.data)
            for i in range(2):
                for j in range(2):
                    gk[:, :, i, j] = np.einsum("notf,nctf->co", g[:, :, i::2, j::2],
                                               x.data, optimize=True)
            kernel._accumulate(gk)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    out._backward = bwd if out.requires_grad else None
    return out


_CONCAT_AXES = {"channel": 1, "frequency": 3}


def concat(xs: Sequence[Tensor], axis: str) -> Tensor:
    """Concatenate along the named axis ('channel' or 'frequency')."""
    if axis not in _CONCAT_AXES:
        raise ValueError(f"axis must be one of {sorted(_CONCAT_AXES)}, got {axis!r}")
    return concat_tensors(xs, _CONCAT_AXES[axis])


# ---------------------------------------------------------------------------
# layer classes


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel=(3, 3), dilation=(1, 1),
                 bias: bool = True, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        kt, kf = kernel
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.dilation = tuple(dilation)
        self.kernel = Tensor(conv_init(rng, out_ch, in_ch, kt, kf), requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernel, self.bias, self.dilation)


class MultiDilatedConv(Module):
    """One kernel group per dense skip connection, each with its own dilation.

    ``group_channels[i]`` is the channel width of group i; group i defaults to
    dilation 2**i on both axes unless an explicit override list is given.
    """

    def __init__(self, group_channels: Sequence[int], out_ch: int, kernel=(3, 3),
                 dilations: Sequence[int] | None = None, bias: bool = False,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        kt, kf = kernel
        self.group_channels = list(group_channels)
        self.out_ch = out_ch
        if dilations is None:
            dilations = [2 ** i for i in range(len(group_channels))]
        if len(dilations) != len(group_channels):
            raise ValueError(
                f"{len(dilations)} dilations for {len(group_channels)} groups")
        self.dilations = [int(d) for d in dilations]
        total_in = sum(group_channels)
        # One fan-in scale across all groups so a 1-dilation multidilated conv
        # matches a plain conv over the concatenated input.
        full = conv_init(rng, out_ch, total_in, kt, kf)
        self.kernels = []
        start = 0
        for ci in group_channels:
            self.kernels.append(Tensor(full[:, start:start + ci].copy(),
                                       requires_grad=True))
            start += ci
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True) if bias else None

    def __call__(self, y_groups: Sequence[Tensor]) -> Tensor:
        if len(y_groups) != len(self.kernels):
            raise ShapeMismatchError(
                f"expected {len(self.kernels)} input groups, got {len(y_groups)}")
        for i, (y, ci) in enumerate(zip(y_groups, self.group_channels)):
            if y.shape[1] != ci:
                raise ShapeMismatchError(
                    f"group {i} has {y.shape[1]} channels, expected {ci}")
        return multidilated_conv(y_groups, self.kernels,
                                 [(d, d) for d in self.dilations], self.bias)


class BatchNorm2d(Module):
    def __init__(self, ch: int, eps: float = 1e-5, momentum: float = 0.1):
        self.ch = ch
        self.eps = eps
        self.momentum = momentum
        self.mode = "train"
        self.gamma = Tensor(np.ones(ch), requires_grad=True)
        self.beta = Tensor(np.zeros(ch), requires_grad=True)
        self.running_mean = Tensor(np.zeros(ch))
        self.running_var = Tensor(np.ones(ch))

    def __call__(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.running_mean,
                          self.running_var, self.eps, self.momentum, self.mode)


def composite_psi(x: Tensor, bn: BatchNorm2d) -> Tensor:
    """Batch normalization followed by rectification."""
    return bn(x).relu()


class TransposedConv2x2(Module):
    def __init__(self, in_ch: int, out_ch: int, bias: bool = True,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(in_ch * 4)
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = Tensor(rng.uniform(-bound, bound, size=(in_ch, out_ch, 2, 2)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return transposed_conv_2x2(x, self.kernel, self.bias)
