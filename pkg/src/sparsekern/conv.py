"""Sparse convolution layers: plain, and spatial-wise partition (SWP).

A plain layer owns one c_in x c_out weight matrix per kernel offset. An SWP
layer shares 27 weight matrices across the offsets of a large dense kernel
(via the sign partition) and adds a learnable per-offset embedding row to
every gathered input, restoring position sensitivity lost to the sharing.
No layer has a bias term.

Both SWP execution paths evaluate the same canonical expression: gathered
(x + e) rows are aggregated per (output row, group) segment, then each
non-empty segment costs exactly one vector-matrix product. The training
entry point derives the segment ordering from a per-offset rulebook on the
fly; the shrunk entry point consumes a precomputed GroupedKernelMap. Given
equal inputs the two are bitwise identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import _kernels
from .core import SparseTensor
from .errors import FormatError, InvalidKernelSize, PartitionMismatch, ShapeError
from .kernelmap import (
    GROUP_GRID,
    N_GROUPS,
    GroupMap,
    GroupedKernelMap,
    KernelMap,
    OffsetPattern,
    enumerate_offsets,
    partition_offsets,
)
from .rng import SplitMix64

SPWT_MAGIC = b"SPWT1\n"
_DTYPE_CODES = {0: np.float32, 1: np.float64}
_CODE_OF_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass
class PlainConvLayer:
    """Per-offset weights for a plain sparse convolution."""

    weights: np.ndarray  # (|K|, c_in, c_out)
    pattern: OffsetPattern

    def __post_init__(self):
        if self.weights.ndim != 3 or self.weights.shape[0] != len(self.pattern):
            raise ShapeError(
                f"weights {self.weights.shape} do not match pattern of {len(self.pattern)} offsets"
            )

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    @property
    def c_out(self) -> int:
        return self.weights.shape[2]

    @property
    def param_count(self) -> int:
        return self.weights.size


@dataclass
class SwpConvLayer:
    """Shared group weights + kernel-wise position embedding."""

    weights: np.ndarray  # (27, c_in, c_out)
    embed: np.ndarray  # (L^3, c_in)
    gmap: GroupMap
    pattern: OffsetPattern

    def __post_init__(self):
        if not self.pattern.is_dense or self.pattern.size != self.gmap.size:
            raise PartitionMismatch(
                f"pattern ({self.pattern.kind}, size {self.pattern.size}) does not "
                f"match group map size {self.gmap.size}"
            )
        if self.weights.ndim != 3 or self.weights.shape[0] != N_GROUPS:
            raise ShapeError(f"group weights must be (27, c_in, c_out), got {self.weights.shape}")
        if self.embed.shape != (len(self.pattern), self.weights.shape[1]):
            raise ShapeError(
                f"embedding must be ({len(self.pattern)}, {self.weights.shape[1]}), "
                f"got {self.embed.shape}"
            )

    @property
    def c_in(self) -> int:
        return self.weights.shape[1]

    @property
    def c_out(self) -> int:
        return self.weights.shape[2]

    @property
    def param_count(self) -> int:
        return self.weights.size + self.embed.size

    def tiled_weights(self) -> np.ndarray:
        """Per-offset weight view W~[k] = W[group(k)] (constant within groups)."""
        return self.weights[self.gmap.assign]


AnyConvLayer = Union[PlainConvLayer, SwpConvLayer]


@dataclass
class LayerGrads:
    """Gradients mirroring a layer's parameters plus the input features."""

    d_weights: np.ndarray
    d_embed: Optional[np.ndarray]
    d_input: np.ndarray


def init_plain_layer(
    pattern: Union[int, OffsetPattern], c_in: int, c_out: int, seed: int, dtype=np.float32
) -> PlainConvLayer:
    """Plain layer with weights uniform in +-(|K|*c_in)^-1/2."""
    if isinstance(pattern, int):
        pattern = enumerate_offsets(pattern)
    rng = SplitMix64(seed)
    bound = float(len(pattern) * c_in) ** -0.5
    w = bound * rng.symmetric_array(len(pattern) * c_in * c_out)
    return PlainConvLayer(w.reshape(len(pattern), c_in, c_out).astype(dtype), pattern)


def init_swp_layer(size: int, c_in: int, c_out: int, seed: int, dtype=np.float32) -> SwpConvLayer:
    """SWP layer: shared weights uniform in +-(27*c_in)^-1/2, embedding zero.

    Zero embedding makes a fresh SWP layer numerically equal to the plain
    layer carrying its tiled weights.
    """
    if size < 3 or size % 2 == 0:
        raise InvalidKernelSize(f"spatial-wise partition needs odd size >= 3, got {size}")
    pattern = enumerate_offsets(size)
    gmap = partition_offsets(size)
    rng = SplitMix64(seed)
    bound = float(N_GROUPS * c_in) ** -0.5
    w = bound * rng.symmetric_array(N_GROUPS * c_in * c_out)
    embed = np.zeros((len(pattern), c_in), dtype=dtype)
    return SwpConvLayer(w.reshape(N_GROUPS, c_in, c_out).astype(dtype), embed, gmap, pattern)


def _check_forward_shapes(x: SparseTensor, layer: AnyConvLayer, kmap) -> None:
    if x.channels != layer.c_in:
        raise ShapeError(f"input has {x.channels} channels, layer expects {layer.c_in}")
    if kmap.n_in != x.n_voxels:
        raise ShapeError(
            f"kernel map was built for {kmap.n_in} voxels, input has {x.n_voxels}"
        )


def _check_same_pattern(a: OffsetPattern, b: OffsetPattern) -> None:
    if (a.size, a.kind, a.base, a.dilation) != (b.size, b.kind, b.base, b.dilation):
        raise ShapeError(
            f"layer pattern ({a.kind}, size {a.size}) does not match kernel map "
            f"pattern ({b.kind}, size {b.size})"
        )


def conv_forward_plain(x: SparseTensor, layer: PlainConvLayer, kmap: KernelMap) -> np.ndarray:
    """y[j] = sum over pairs (i -> j) at offset k of x[i] @ W[k].

    Output rows with no pairs stay zero (possible for regular maps only;
    submanifold maps always carry the identity pair).
    """
    if not isinstance(kmap, KernelMap):
        raise PartitionMismatch("plain forward needs a per-offset kernel map")
    _check_forward_shapes(x, layer, kmap)
    _check_same_pattern(layer.pattern, kmap.pattern)
    feats = x.features
    w = np.ascontiguousarray(layer.weights, dtype=feats.dtype)
    out = np.zeros((kmap.n_out, layer.c_out), dtype=feats.dtype)
    if kmap.total_pairs:
        _kernels.plain_forward(feats, w, kmap.in_rows, kmap.out_rows, kmap.off_ptr, out)
    return out


def _grouped_order_from_offsets(kmap: KernelMap, gmap: GroupMap):
    """Flatten a per-offset rulebook into canonical (group, out, in) order.

    Independent construction from kernelmap.group_kernel_map: one global
    lexsort instead of a per-group merge. Both must (and do) agree, which is
    what makes the two SWP paths bitwise interchangeable.
    """
    counts = np.diff(kmap.off_ptr)
    off_of_pair = np.repeat(np.arange(len(kmap.pattern), dtype=np.int32), counts)
    grp = gmap.assign[off_of_pair]
    order = np.lexsort((kmap.in_rows, kmap.out_rows, grp))
    gin = kmap.in_rows[order]
    goff = off_of_pair[order]
    gout = kmap.out_rows[order]
    ggrp = grp[order]
    if len(gout):
        new_seg = np.ones(len(gout), dtype=bool)
        new_seg[1:] = (gout[1:] != gout[:-1]) | (ggrp[1:] != ggrp[:-1])
        starts = np.nonzero(new_seg)[0]
        seg_ptr = np.append(starts, len(gout)).astype(np.int64)
        seg_rows = gout[starts]
        seg_grp = ggrp[starts]
    else:
        seg_ptr = np.zeros(1, dtype=np.int64)
        seg_rows = np.empty(0, np.int32)
        seg_grp = np.empty(0, np.int32)
    return gin, goff, seg_ptr, seg_rows, seg_grp


def _swp_eval(feats, layer, n_out, gin, goff, seg_ptr, seg_rows, seg_grp) -> np.ndarray:
    w = np.ascontiguousarray(layer.weights, dtype=feats.dtype)
    e = np.ascontiguousarray(layer.embed, dtype=feats.dtype)
    out = np.zeros((n_out, layer.c_out), dtype=feats.dtype)
    if len(gin):
        _kernels.swp_forward(feats, w, e, gin, goff, seg_ptr, seg_rows, seg_grp, out)
    return out


def swp_forward_train(x: SparseTensor, layer: SwpConvLayer, kmap: KernelMap) -> np.ndarray:
    """SWP forward from a per-offset rulebook (the large-kernel view).

    y[j] = sum over pairs (i -> j) at offset k of (x[i] + e[k]) @ W[group(k)];
    the embedding contributes only at offsets where an input actually exists.
    """
    if not isinstance(kmap, KernelMap):
        raise PartitionMismatch("training forward needs a per-offset kernel map")
    if not kmap.pattern.is_dense or kmap.pattern.size != layer.gmap.size:
        raise PartitionMismatch(
            f"kernel map pattern ({kmap.pattern.kind}, size {kmap.pattern.size}) does "
            f"not match the layer partition (size {layer.gmap.size})"
        )
    _check_forward_shapes(x, layer, kmap)
    gin, goff, seg_ptr, seg_rows, seg_grp = _grouped_order_from_offsets(kmap, layer.gmap)
    return _swp_eval(x.features, layer, kmap.n_out, gin, goff, seg_ptr, seg_rows, seg_grp)


def swp_forward_shrunk(
    x: SparseTensor, layer: SwpConvLayer, grouped: GroupedKernelMap
) -> np.ndarray:
    """SWP forward from a pre-grouped rulebook (the shrunk small-kernel view).

    Exactly one weight multiplication per non-empty (output row, group)
    segment; equals swp_forward_train bitwise.
    """
    if not isinstance(grouped, GroupedKernelMap):
        raise PartitionMismatch("shrunk forward needs a grouped kernel map")
    if grouped.gmap.size != layer.gmap.size:
        raise PartitionMismatch(
            f"grouped map partition size {grouped.gmap.size} does not match "
            f"layer size {layer.gmap.size}"
        )
    _check_forward_shapes(x, layer, grouped)
    return _swp_eval(
        x.features,
        layer,
        grouped.n_out,
        grouped.in_rows,
        grouped.off_idx,
        grouped.seg_ptr,
        grouped.seg_rows,
        grouped.seg_grp,
    )


def conv_backward_plain(
    x: SparseTensor, layer: PlainConvLayer, kmap: KernelMap, d_out: np.ndarray
) -> LayerGrads:
    """Exact adjoint of conv_forward_plain for loss gradients d_out."""
    _check_forward_shapes(x, layer, kmap)
    _check_same_pattern(layer.pattern, kmap.pattern)
    d_out = np.ascontiguousarray(d_out, dtype=x.features.dtype)
    if d_out.shape != (kmap.n_out, layer.c_out):
        raise ShapeError(
            f"d_out shape {d_out.shape} != ({kmap.n_out}, {layer.c_out})"
        )
    feats = x.features
    w = np.ascontiguousarray(layer.weights, dtype=feats.dtype)
    d_in = np.zeros_like(feats)
    d_w = np.zeros_like(w)
    if kmap.total_pairs:
        _kernels.plain_backward(
            feats, w, d_out, kmap.in_rows, kmap.out_rows, kmap.off_ptr, d_in, d_w
        )
    return LayerGrads(d_w, None, d_in)


def swp_backward(
    x: SparseTensor, layer: SwpConvLayer, kmap: KernelMap, d_out: np.ndarray
) -> LayerGrads:
    """Adjoint of the SWP forward.

    d_w[g] collects (x[i]+e[k])^T dY[j] over every pair whose offset is in
    group g; d_e[k] collects dY[j] W[g]^T over pairs at offset k only, so
    offsets never active in the scene keep exactly zero embedding gradient.
    """
    if not isinstance(kmap, KernelMap):
        raise PartitionMismatch("swp backward needs a per-offset kernel map")
    if not kmap.pattern.is_dense or kmap.pattern.size != layer.gmap.size:
        raise PartitionMismatch(
            f"kernel map pattern ({kmap.pattern.kind}, size {kmap.pattern.size}) does "
            f"not match the layer partition (size {layer.gmap.size})"
        )
    _check_forward_shapes(x, layer, kmap)
    d_out = np.ascontiguousarray(d_out, dtype=x.features.dtype)
    if d_out.shape != (kmap.n_out, layer.c_out):
        raise ShapeError(f"d_out shape {d_out.shape} != ({kmap.n_out}, {layer.c_out})")
    feats = x.features
    w = np.ascontiguousarray(layer.weights, dtype=feats.dtype)
    e = np.ascontiguousarray(layer.embed, dtype=feats.dtype)
    d_in = np.zeros_like(feats)
    d_w = np.zeros_like(w)
    d_e = np.zeros_like(e)
    if kmap.total_pairs:
        _kernels.swp_backward(
            feats,
            w,
            e,
            d_out,
            kmap.in_rows,
            kmap.out_rows,
            kmap.off_ptr,
            layer.gmap.assign,
            d_in,
            d_w,
            d_e,
        )
    return LayerGrads(d_w, d_e, d_in)


def layer_forward(x: SparseTensor, layer: AnyConvLayer, kmap: KernelMap) -> np.ndarray:
    """Dispatch to the right forward for the layer kind (per-offset map)."""
    if isinstance(layer, SwpConvLayer):
        return swp_forward_train(x, layer, kmap)
    return conv_forward_plain(x, layer, kmap)


def layer_backward(
    x: SparseTensor, layer: AnyConvLayer, kmap: KernelMap, d_out: np.ndarray
) -> LayerGrads:
    if isinstance(layer, SwpConvLayer):
        return swp_backward(x, layer, kmap, d_out)
    return conv_backward_plain(x, layer, kmap, d_out)


# --- SPWT checkpoint format ------------------------------------------------
#
# One file holds one or more layer records, each:
#   magic "SPWT1\n" | u32 version=1 | u32 kernel size L | u32 group grid
#   (0 = plain, 3 = spatial-wise partition) | u32 c_in | u32 c_out | u8 dtype
#   (0=f32, 1=f64) | W row-major | E row-major (partition layers only).
# Plain records carry W of shape (L^3, c_in, c_out); partition records carry
# W of shape (27, c_in, c_out) and E of shape (L^3, c_in). Little-endian.

_HEADER_LEN = 27  # magic + 5*u32 + u8


def _layer_record(layer: AnyConvLayer) -> bytes:
    if not layer.pattern.is_dense:
        raise ValueError("checkpoints support dense kernel patterns only")
    dtype = np.dtype(layer.weights.dtype)
    code = _CODE_OF_DTYPE[dtype]
    grid = 0 if isinstance(layer, PlainConvLayer) else GROUP_GRID
    head = SPWT_MAGIC + struct.pack(
        "<IIIIIB", 1, layer.pattern.size, grid, layer.c_in, layer.c_out, code
    )
    body = np.ascontiguousarray(layer.weights, dtype=f"<f{dtype.itemsize}").tobytes()
    if isinstance(layer, SwpConvLayer):
        body += np.ascontiguousarray(layer.embed, dtype=f"<f{dtype.itemsize}").tobytes()
    return head + body


def write_spwt(layers: Union[AnyConvLayer, Sequence[AnyConvLayer]], path) -> None:
    if isinstance(layers, (PlainConvLayer, SwpConvLayer)):
        layers = [layers]
    with open(path, "wb") as fh:
        for layer in layers:
            fh.write(_layer_record(layer))


def read_spwt(path) -> list[AnyConvLayer]:
    """All layer records in a checkpoint, in file order."""
    with open(path, "rb") as fh:
        data = fh.read()
    layers: list[AnyConvLayer] = []
    pos = 0
    while pos < len(data):
        layers.append(_parse_record(data, pos))
        pos += _record_length(data, pos)
    if not layers:
        raise FormatError("empty checkpoint", 0)
    return layers


def _header(data: bytes, pos: int):
    if data[pos : pos + 6] != SPWT_MAGIC:
        raise FormatError("bad magic", pos)
    if len(data) < pos + _HEADER_LEN:
        raise FormatError("truncated header", len(data))
    version, size, grid, c_in, c_out, code = struct.unpack_from("<IIIIIB", data, pos + 6)
    if version != 1:
        raise FormatError(f"unsupported version {version}", pos + 6)
    if grid not in (0, GROUP_GRID):
        raise FormatError(f"unsupported group grid {grid}", pos + 14)
    if size < 1 or size % 2 == 0:
        raise FormatError(f"invalid kernel size {size}", pos + 10)
    if grid == GROUP_GRID and size < 3:
        raise FormatError(f"partition record needs kernel size >= 3, got {size}", pos + 10)
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}", pos + 26)
    if c_in == 0 or c_out == 0:
        raise FormatError("zero channel count", pos + 18)
    return size, grid, c_in, c_out, np.dtype(_DTYPE_CODES[code])


def _record_length(data: bytes, pos: int) -> int:
    size, grid, c_in, c_out, dtype = _header(data, pos)
    k = size**3
    if grid == 0:
        n_values = k * c_in * c_out
    else:
        n_values = N_GROUPS * c_in * c_out + k * c_in
    return _HEADER_LEN + n_values * dtype.itemsize


def _parse_record(data: bytes, pos: int) -> AnyConvLayer:
    size, grid, c_in, c_out, dtype = _header(data, pos)
    k = size**3
    body = pos + _HEADER_LEN
    fmt = f"<f{dtype.itemsize}"
    if grid == 0:
        n_w = k * c_in * c_out
        end = body + n_w * dtype.itemsize
        if len(data) < end:
            raise FormatError("truncated weights", len(data))
        w = np.frombuffer(data, dtype=fmt, count=n_w, offset=body)
        return PlainConvLayer(
            w.reshape(k, c_in, c_out).astype(dtype), enumerate_offsets(size)
        )
    n_w = N_GROUPS * c_in * c_out
    n_e = k * c_in
    end = body + (n_w + n_e) * dtype.itemsize
    if len(data) < end:
        raise FormatError("truncated weights", len(data))
    w = np.frombuffer(data, dtype=fmt, count=n_w, offset=body)
    e = np.frombuffer(data, dtype=fmt, count=n_e, offset=body + n_w * dtype.itemsize)
    return SwpConvLayer(
        w.reshape(N_GROUPS, c_in, c_out).astype(dtype),
        e.reshape(k, c_in).astype(dtype),
        partition_offsets(size),
        enumerate_offsets(size),
    )
