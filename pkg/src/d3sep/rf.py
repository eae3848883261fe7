"""Exact receptive-field coverage analysis for dense dilated blocks.

Every input-to-output chain through an L-layer dense block is enumerated and
its composed kernel support computed as a Minkowski sum of dilated tap
offsets.  A "blind spot" is an in-span input offset no tap combination
touches; naive per-layer dilation produces them, per-skip multidilation does
not.  Analysis is one-dimensional: dilations are equal on both axes, so 2-D
coverage is the Cartesian product of the per-axis sets.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMES = ("naive", "multi", "none")


@dataclass(frozen=True)
class PathSpec:
    """Chain of hops from the block input to the observed layer's output.

    Each hop (layer, source) means layer ``layer`` consumed the composite
    output with skip index ``source``; sources chain consistently, starting
    at the block input (index 0).
    """
    hops: tuple[tuple[int, int], ...]

    def __post_init__(self):
        prev_layer = 0
        for layer, source in self.hops:
            if source != prev_layer:
                raise ValueError(f"inconsistent chain at hop {(layer, source)}")
            if layer <= prev_layer:
                raise ValueError(f"layer indices must increase, got {self.hops}")
            prev_layer = layer

    def label(self) -> str:
        nodes = [self.hops[-1][0]] + [src for _, src in reversed(self.hops)]
        return "<-".join(str(n) for n in nodes)


@dataclass
class CoverageMap:
    offsets: frozenset
    axis: str = "time"

    @property
    def span(self) -> tuple[int, int]:
        if not self.offsets:
            return (0, -1)
        return (min(self.offsets), max(self.offsets))

    @property
    def span_width(self) -> int:
        lo, hi = self.span
        return hi - lo + 1

    @property
    def blind_spot_count(self) -> int:
        return self.span_width - len(self.offsets)

    @property
    def max_gap(self) -> int:
        """Longest run of uncovered positions inside the span."""
        lo, hi = self.span
        longest = run = 0
        for pos in range(lo, hi + 1):
            if pos in self.offsets:
                longest = max(longest, run)
                run = 0
            else:
                run += 1
        return max(longest, run)


def enumerate_paths(num_layers: int) -> list[PathSpec]:
    """All 2**(L-1) chains from the input to layer L's output."""
    if num_layers < 1:
        raise ValueError("block needs at least one layer")
    paths = []
    # Choose which intermediate layers 1..L-1 the chain passes through.
    for bits in range(2 ** (num_layers - 1)):
        vias = [l for l in range(1, num_layers) if bits >> (l - 1) & 1]
        nodes = [0] + vias + [num_layers]
        hops = tuple((nodes[i + 1], nodes[i]) for i in range(len(nodes) - 1))
        paths.append(PathSpec(hops))
    return paths


def hop_dilation(layer: int, source: int, scheme: str) -> int:
    if scheme == "naive":
        return 2 ** (layer - 1)
    if scheme == "multi":
        return 2 ** source
    if scheme == "none":
        return 1
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def composite_coverage(index: int, kernel_size: int, scheme: str,
                       _cache: dict | None = None) -> frozenset:
    """Full receptive field of composite output ``index`` (0 = block input).

    Group convolutions are summed into shared output channels, so every
    channel of composite i carries the union of all chains reaching it.
    """
    if kernel_size % 2 == 0:
        raise ValueError("kernel size must be odd")
    cache = _cache if _cache is not None else {}
    if index in cache:
        return cache[index]
    if index == 0:
        cov = frozenset({0})
    else:
        half = kernel_size // 2
        merged = set()
        for src in range(index):
            d = hop_dilation(index, src, scheme)
            taps = [t * d for t in range(-half, half + 1)]
            src_cov = composite_coverage(src, kernel_size, scheme, cache)
            merged.update(o + t for o in src_cov for t in taps)
        cov = frozenset(merged)
    cache[index] = cov
    return cov


def path_coverage(path: PathSpec, kernel_size: int = 3,
                  scheme: str = "multi") -> CoverageMap:
    """Coverage of one input-to-output chain.

    A hop (l <- i) applies the layer-l kernel group at dilated tap positions
    over channel samples of composite i; each such sample sees composite i's
    full receptive field, because the groups feeding a composite are summed
    into its channels and cannot be separated per chain.
    """
    if kernel_size % 2 == 0:
        raise ValueError("kernel size must be odd")
    half = kernel_size // 2
    cache: dict = {}
    offsets = {0}
    for layer, source in path.hops:
        d = hop_dilation(layer, source, scheme)
        taps = [t * d for t in range(-half, half + 1)]
        src_cov = composite_coverage(source, kernel_size, scheme, cache)
        offsets = {o + t for o in src_cov for t in taps}
    return CoverageMap(frozenset(offsets))


@dataclass
class BlockReport:
    num_layers: int
    kernel_size: int
    scheme: str
    paths: list[PathSpec]
    coverages: list[CoverageMap]
    union: CoverageMap = field(init=False)

    def __post_init__(self):
        merged = frozenset().union(*(c.offsets for c in self.coverages))
        self.union = CoverageMap(merged)

    @property
    def total_blind_spots(self) -> int:
        return sum(c.blind_spot_count for c in self.coverages)

    def rows(self) -> list[dict]:
        out = []
        for i, (p, c) in enumerate(zip(self.paths, self.coverages)):
            lo, hi = c.span
            out.append({
                "scheme": self.scheme, "L": self.num_layers,
                "kernel": self.kernel_size, "path_id": i,
                "path_hops": p.label(), "span_min": lo, "span_max": hi,
                "covered": len(c.offsets), "blind_spots": c.blind_spot_count,
            })
        return out

    def summary(self) -> str:
        lo, hi = self.union.span
        lines = [
            f"scheme={self.scheme} L={self.num_layers} kernel={self.kernel_size}: "
            f"{len(self.paths)} paths, union span [{lo}, {hi}] "
            f"width {self.union.span_width}, union blind spots "
            f"{self.union.blind_spot_count}, per-path blind spots total "
            f"{self.total_blind_spots}, max gap "
            f"{max(c.max_gap for c in self.coverages)}"]
        for row in self.rows():
            lines.append(
                f"  path {row['path_hops']:<20} span [{row['span_min']}, "
                f"{row['span_max']}] covered {row['covered']} "
                f"blind {row['blind_spots']}")
        return "\n".join(lines)


def block_report(num_layers: int, kernel_size: int = 3,
                 scheme: str = "multi") -> BlockReport:
    paths = enumerate_paths(num_layers)
    covs = [path_coverage(p, kernel_size, scheme) for p in paths]
    return BlockReport(num_layers, kernel_size, scheme, paths, covs)


CSV_COLUMNS = ["scheme", "L", "kernel", "path_id", "path_hops",
               "span_min", "span_max", "covered", "blind_spots"]


def write_report_csv(report: BlockReport, path):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(report.rows())


def empirical_coverage(block, num_layers: int | None = None,
                       extent: int | None = None,
                       threshold: float = 1e-12) -> CoverageMap:
    """Recover the covered offsets of a concrete D2 block by autodiff probe.

    Takes the gradient of one centered output unit with respect to an input
    line along the time axis and thresholds its magnitude.  The block is
    evaluated with batch norm in eval mode so rectification is the only
    nonlinearity in the way.
    """
    from .tensor import Tensor

    num_layers = num_layers if num_layers is not None else block.num_layers
    if extent is None:
        extent = 2 ** (num_layers + 2) + 1
    center = extent // 2
    block.set_mode("eval")
    rng = np.random.default_rng(7)
    x = Tensor(rng.uniform(0.5, 1.5, size=(1, block.in_ch, extent, 1)),
               requires_grad=True)
    outs = block.layer_outputs(x)
    unit = outs[-1]
    loss = slice_axis_scalar(unit, center)
    loss.backward()
    grad = np.abs(x.grad).max(axis=(0, 1, 3))
    covered = frozenset(int(i - center) for i in np.nonzero(grad > threshold)[0])
    return CoverageMap(covered)


def slice_axis_scalar(t, center: int):
    """Sum of all channels of one output position (a scalar loss)."""
    from .tensor import slice_axis
    return slice_axis(t, 2, center, center + 1).sum()


def positive_probe_block(in_ch: int, growth: int, num_layers: int,
                         mode: str = "multi", seed: int = 0):
    """D2 block with strictly positive kernels for coverage probing.

    Positive kernels on positive input keep every pre-activation positive, so
    rectification never masks a genuinely covered offset.
    """
    from .blocks import D2Block

    block = D2Block(in_ch, growth, num_layers, mode=mode,
                    rng=np.random.default_rng(seed))
    for _, p in block.named_parameters():
        if p.data.ndim == 4:
            p.data[...] = np.abs(p.data) + 1e-3
    return block
