"""Parameter counts, multiplication counts, and the latency harness.

Costs are reported three ways: `params` (storage), `macs` (vector-matrix
weight multiplications, the hardware-independent proxy: one per rulebook
pair for plain convolution, one per non-empty (output, group) segment for
the shrunk spatial-wise path), and wall-clock `latency_ms` for the forward
pass. Latency is machine-specific; only orderings and ratios are meaningful.
Rulebook construction is excluded from the timed region unless explicitly
included.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import List, Union

import numpy as np

from .conv import conv_forward_plain, init_plain_layer, init_swp_layer, swp_forward_shrunk
from .core import SceneSpec, random_scene
from .errors import InvalidKernelSize, PartitionMismatch
from .kernelmap import (
    GroupedKernelMap,
    KernelMap,
    N_GROUPS,
    build_kernel_map_submanifold,
    enumerate_offsets,
    group_kernel_map,
)

PLAIN = "plain"
SWP = "swp"

DEFAULT_EXTENT = ((0, 199), (0, 199), (0, 199))
DEFAULT_VOXELS = 80_000
DEFAULT_CHANNELS = 16


@dataclass
class BenchConfig:
    kernels: List[int]
    modes: List[str]
    scene: SceneSpec
    c_in: int = DEFAULT_CHANNELS
    c_out: int = DEFAULT_CHANNELS
    warmup: int = 10
    repeats: int = 10
    include_map: bool = False

    def __post_init__(self):
        if self.warmup < 1 or self.repeats < 1:
            raise ValueError("warmup and repeats must each be >= 1")
        for mode in self.modes:
            if mode not in (PLAIN, SWP):
                raise ValueError(f"unknown mode {mode!r}")
        for size in self.kernels:
            if size < 1 or size % 2 == 0:
                raise InvalidKernelSize(f"kernel sizes must be odd, got {size}")


@dataclass
class BenchRow:
    kernel: int
    mode: str
    params: int
    macs: int
    pairs: int
    latency_ms: float


def param_count(mode: str, size: int, c_in: int, c_out: int) -> int:
    """Parameters of one layer: L^3*c_in*c_out plain, 27*c_in*c_out + L^3*c_in swp."""
    if size < 1 or size % 2 == 0:
        raise InvalidKernelSize(f"kernel size must be odd and positive, got {size}")
    if mode == PLAIN:
        return size**3 * c_in * c_out
    if mode == SWP:
        if size < 3:
            raise InvalidKernelSize(f"swp needs kernel size >= 3, got {size}")
        return N_GROUPS * c_in * c_out + size**3 * c_in
    raise ValueError(f"unknown mode {mode!r}")


def mac_count(kmap: Union[KernelMap, GroupedKernelMap], mode: str, c_in: int, c_out: int) -> int:
    """Weight multiplications of one forward pass on this rulebook."""
    if mode == PLAIN:
        if not isinstance(kmap, KernelMap):
            raise PartitionMismatch("plain mac count needs a per-offset kernel map")
        return kmap.total_pairs * c_in * c_out
    if mode == SWP:
        if not isinstance(kmap, GroupedKernelMap):
            raise PartitionMismatch("swp mac count needs a grouped kernel map")
        return kmap.n_segments * c_in * c_out
    raise ValueError(f"unknown mode {mode!r}")


def _time_mean_ms(fn, warmup: int, repeats: int) -> float:
    for _ in range(warmup):
        fn()
    total = 0.0
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        total += time.perf_counter() - t0
    return total / repeats * 1e3


def bench_run(config: BenchConfig) -> List[BenchRow]:
    """One row per kernel x mode on the config's scene.

    params/macs/pairs are deterministic functions of the scene and kernel;
    only latency_ms varies between runs.
    """
    scene = random_scene(config.scene, dtype=np.float32)
    rows: List[BenchRow] = []
    for size in config.kernels:
        pattern = enumerate_offsets(size)
        kmap = build_kernel_map_submanifold(scene, pattern)
        for mode in config.modes:
            if mode == PLAIN:
                layer = init_plain_layer(pattern, config.c_in, config.c_out, config.scene.seed)
                if config.include_map:
                    def fn(scene=scene, pattern=pattern, layer=layer):
                        m = build_kernel_map_submanifold(scene, pattern)
                        return conv_forward_plain(scene, layer, m)
                else:
                    def fn(scene=scene, layer=layer, kmap=kmap):
                        return conv_forward_plain(scene, layer, kmap)
                macs = mac_count(kmap, PLAIN, config.c_in, config.c_out)
                pairs = kmap.total_pairs
                params = param_count(PLAIN, size, config.c_in, config.c_out)
            else:
                layer = init_swp_layer(size, config.c_in, config.c_out, config.scene.seed)
                grouped = group_kernel_map(kmap, layer.gmap)
                if config.include_map:
                    def fn(scene=scene, pattern=pattern, layer=layer):
                        m = build_kernel_map_submanifold(scene, pattern)
                        g = group_kernel_map(m, layer.gmap)
                        return swp_forward_shrunk(scene, layer, g)
                else:
                    def fn(scene=scene, layer=layer, grouped=grouped):
                        return swp_forward_shrunk(scene, layer, grouped)
                macs = mac_count(grouped, SWP, config.c_in, config.c_out)
                pairs = grouped.total_pairs
                params = param_count(SWP, size, config.c_in, config.c_out)
            latency = _time_mean_ms(fn, config.warmup, config.repeats)
            rows.append(BenchRow(size, mode, params, macs, pairs, latency))
    return rows


CSV_HEADER = "kernel,mode,params,macs,pairs,latency_ms"


def rows_to_csv(rows: List[BenchRow]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(f"{r.kernel},{r.mode},{r.params},{r.macs},{r.pairs},{r.latency_ms:.3f}")
    return "\n".join(lines) + "\n"
