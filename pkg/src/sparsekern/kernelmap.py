"""Kernel offset patterns, the spatial-wise group partition, and rulebooks.

A rulebook (KernelMap) lists, per kernel offset, the (input row, output row)
pairs that the gather-scatter convolution executes. Pair lists are kept in
canonical order -- ascending output row, then input row -- so accumulation
is deterministic no matter how the execution is scheduled.

The group partition maps every offset of a large dense kernel onto a 3x3x3
grid of weight groups by the per-axis sign of its components, which is the
unique separable partition with a 1x1x1 center for odd sizes; the zero
offset is always alone in its group.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Tuple

import numpy as np

from .core import SparseTensor
from .errors import InvalidKernelSize, InvalidStride, PartitionMismatch

# Above this bounding-box volume the occupancy bitmap would get heavy and
# membership falls back to pure binary search.
_BITMAP_VOLUME_CAP = 1 << 28

GROUP_GRID = 3
N_GROUPS = GROUP_GRID**3


@dataclass(frozen=True)
class OffsetPattern:
    """Ordered kernel offset set. `size` is the spatial span per axis."""

    offsets: np.ndarray  # (K, 3) int32, lexicographic
    size: int
    kind: str  # "dense" | "dilated"
    base: int
    dilation: int

    def __post_init__(self):
        self.offsets.setflags(write=False)

    def __len__(self) -> int:
        return len(self.offsets)

    @property
    def is_dense(self) -> bool:
        return self.kind == "dense"


def _check_odd(value: int, what: str) -> None:
    if value < 1 or value % 2 == 0:
        raise InvalidKernelSize(f"{what} must be an odd positive integer, got {value}")


def _dense_offsets(size: int) -> np.ndarray:
    reach = (size - 1) // 2
    axis = np.arange(-reach, reach + 1, dtype=np.int32)
    grid = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack(grid, axis=-1).reshape(-1, 3)


def enumerate_offsets(size: int) -> OffsetPattern:
    """Dense cubic pattern: size^3 offsets with components in +-(size-1)/2."""
    _check_odd(size, "kernel size")
    return OffsetPattern(_dense_offsets(size), size, "dense", size, 1)


def enumerate_dilated(base: int, dilation: int) -> OffsetPattern:
    """Dilated pattern: the dense `base` offsets scaled by `dilation`.

    Keeps base^3 offsets but spans dilation*(base-1)+1 cells per axis.
    """
    _check_odd(base, "base kernel size")
    if dilation < 1:
        raise InvalidKernelSize(f"dilation must be >= 1, got {dilation}")
    offsets = _dense_offsets(base) * np.int32(dilation)
    span = dilation * (base - 1) + 1
    return OffsetPattern(offsets, span, "dilated", base, dilation)


@dataclass(frozen=True)
class GroupMap:
    """Offset-index -> group-index assignment for the 3x3x3 partition."""

    size: int
    assign: np.ndarray  # (size^3,) int32 in [0, 27)
    small: int = GROUP_GRID
    center_size: int = 1

    def __post_init__(self):
        self.assign.setflags(write=False)

    @property
    def center_group(self) -> int:
        # sign (0,0,0) under the (s+1) base-3 encoding
        return 13

    def members(self, group: int) -> np.ndarray:
        return np.nonzero(self.assign == group)[0]


def partition_offsets(size: int) -> GroupMap:
    """Sign-rule partition of the dense `size` kernel into 27 groups.

    Per axis a component maps to -1/0/+1 by its sign; the group index is the
    base-3 encoding of the three signs. The center group therefore holds
    exactly the zero offset.
    """
    _check_odd(size, "kernel size")
    if size < 3:
        raise InvalidKernelSize(f"partition needs kernel size >= 3, got {size}")
    offsets = _dense_offsets(size)
    signs = np.sign(offsets).astype(np.int32)
    assign = (signs[:, 0] + 1) * 9 + (signs[:, 1] + 1) * 3 + (signs[:, 2] + 1)
    return GroupMap(size=size, assign=assign.astype(np.int32))


def group_of_signs(sx: int, sy: int, sz: int) -> int:
    """Group index for a per-axis sign triple in {-1, 0, +1}^3."""
    return (sx + 1) * 9 + (sy + 1) * 3 + (sz + 1)


@dataclass
class KernelMap:
    """Per-offset gather-scatter pairs plus the output coordinate set.

    Pairs are stored flattened: offset k owns the slice
    in_rows[off_ptr[k]:off_ptr[k+1]] (and likewise out_rows), already in
    canonical (output row, input row) order.
    """

    pattern: OffsetPattern
    stride: int
    out_coords: np.ndarray  # (M, 3) int32, canonical order
    in_rows: np.ndarray  # (P,) int32
    out_rows: np.ndarray  # (P,) int32
    off_ptr: np.ndarray  # (K+1,) int64
    n_in: int
    submanifold: bool

    @property
    def n_out(self) -> int:
        return len(self.out_coords)

    @property
    def total_pairs(self) -> int:
        return len(self.in_rows)

    def pairs_at(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        s, e = self.off_ptr[k], self.off_ptr[k + 1]
        return self.in_rows[s:e], self.out_rows[s:e]

    def iter_offsets(self) -> Iterator[Tuple[int, np.ndarray, np.ndarray]]:
        for k in range(len(self.pattern)):
            i, o = self.pairs_at(k)
            yield k, i, o


class _SiteLookup:
    """Vectorised membership + row lookup over a canonical coordinate set.

    Coordinates are linearised inside their bounding box; because the set is
    lexicographically sorted the keys are strictly increasing, so row lookup
    is a binary search. When the box volume is small enough an occupancy
    bitmap answers membership in O(1) per query first.
    """

    def __init__(self, coords: np.ndarray):
        self.lo = coords.min(axis=0).astype(np.int64)
        self.hi = coords.max(axis=0).astype(np.int64)
        self.span = self.hi - self.lo + 1
        volume = int(self.span[0]) * int(self.span[1]) * int(self.span[2])
        if volume >= 2**62:  # linearised keys must stay well inside int64
            raise SparsekernError(
                f"coordinate bounding box {tuple(int(s) for s in self.span)} too large to index"
            )
        m = coords.astype(np.int64) - self.lo
        self.keys = (m[:, 0] * self.span[1] + m[:, 1]) * self.span[2] + m[:, 2]
        if volume <= _BITMAP_VOLUME_CAP:
            bitmap = np.zeros((volume >> 3) + 1, dtype=np.uint8)
            np.bitwise_or.at(
                bitmap, self.keys >> 3, (np.uint8(1) << (self.keys & 7).astype(np.uint8))
            )
            self.bitmap = bitmap
        else:
            self.bitmap = None

    def query_offset(
        self, coords: np.ndarray, offset: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Rows (query_row, site_row) such that coords[query_row]+offset is active."""
        ox, oy, oz = (int(v) for v in offset)
        inb = (
            (coords[:, 0] >= self.lo[0] - ox)
            & (coords[:, 0] <= self.hi[0] - ox)
            & (coords[:, 1] >= self.lo[1] - oy)
            & (coords[:, 1] <= self.hi[1] - oy)
            & (coords[:, 2] >= self.lo[2] - oz)
            & (coords[:, 2] <= self.hi[2] - oz)
        )
        dk = (ox * self.span[1] + oy) * self.span[2] + oz
        if self.bitmap is not None:
            qk = np.where(inb, self.keys + dk, 0)
            hit = inb & (((self.bitmap[qk >> 3] >> (qk & 7).astype(np.uint8)) & 1) == 1)
            qrows = np.nonzero(hit)[0]
            srows = np.searchsorted(self.keys, self.keys[qrows] + dk)
        else:
            qk = self.keys + dk
            pos = np.searchsorted(self.keys, qk)
            np.minimum(pos, len(self.keys) - 1, out=pos)
            hit = inb & (self.keys[pos] == qk)
            qrows = np.nonzero(hit)[0]
            srows = pos[qrows]
        return qrows.astype(np.int32), srows.astype(np.int32)

    def rows_of(self, coords: np.ndarray) -> np.ndarray:
        """Rows of coordinates known to be present."""
        m = coords.astype(np.int64) - self.lo
        keys = (m[:, 0] * self.span[1] + m[:, 1]) * self.span[2] + m[:, 2]
        return np.searchsorted(self.keys, keys).astype(np.int32)


def build_kernel_map_submanifold(tensor: SparseTensor, pattern: OffsetPattern) -> KernelMap:
    """Rulebook whose outputs are exactly the input sites (stride 1).

    For output row j and offset k there is a pair (i -> j) iff the site at
    coords[j] + k is active, with i its row.
    """
    coords = tensor.coords
    lookup = _SiteLookup(coords)
    k_count = len(pattern)
    ins, outs, counts = [], [], np.zeros(k_count, dtype=np.int64)
    for k in range(k_count):
        orows, irows = lookup.query_offset(coords, pattern.offsets[k])
        ins.append(irows)
        outs.append(orows)
        counts[k] = len(irows)
    off_ptr = np.zeros(k_count + 1, dtype=np.int64)
    np.cumsum(counts, out=off_ptr[1:])
    return KernelMap(
        pattern=pattern,
        stride=1,
        out_coords=coords,
        in_rows=np.concatenate(ins) if ins else np.empty(0, np.int32),
        out_rows=np.concatenate(outs) if outs else np.empty(0, np.int32),
        off_ptr=off_ptr,
        n_in=tensor.n_voxels,
        submanifold=True,
    )


def build_kernel_map_regular(
    tensor: SparseTensor, pattern: OffsetPattern, stride: int
) -> KernelMap:
    """Rulebook for regular sparse convolution with the given stride.

    The output set is every q for which some input p and offset k satisfy
    p == stride*q + k; each such (p, k, q) contributes a pair.
    """
    if stride < 1:
        raise InvalidStride(f"stride must be >= 1, got {stride}")
    coords = tensor.coords.astype(np.int64)
    n = len(coords)
    k_count = len(pattern)
    per_offset_q: list[np.ndarray] = []
    per_offset_in: list[np.ndarray] = []
    for k in range(k_count):
        t = coords - pattern.offsets[k].astype(np.int64)
        exact = np.all(t % stride == 0, axis=1)
        q = t[exact] // stride
        per_offset_q.append(q)
        per_offset_in.append(np.nonzero(exact)[0].astype(np.int32))
    all_q = np.concatenate(per_offset_q)
    if len(all_q) == 0:
        # possible for stride > 1 with a tiny pattern: no input is divisible
        return KernelMap(
            pattern=pattern,
            stride=stride,
            out_coords=np.empty((0, 3), np.int32),
            in_rows=np.empty(0, np.int32),
            out_rows=np.empty(0, np.int32),
            off_ptr=np.zeros(k_count + 1, dtype=np.int64),
            n_in=n,
            submanifold=False,
        )
    order = np.lexsort((all_q[:, 2], all_q[:, 1], all_q[:, 0]))
    sq = all_q[order]
    uniq = np.ones(len(sq), dtype=bool)
    uniq[1:] = np.any(sq[1:] != sq[:-1], axis=1)
    out_coords = sq[uniq].astype(np.int32)
    out_lookup = _SiteLookup(out_coords)
    ins, outs, counts = [], [], np.zeros(k_count, dtype=np.int64)
    for k in range(k_count):
        q = per_offset_q[k]
        orows = out_lookup.rows_of(q) if len(q) else np.empty(0, np.int32)
        ins.append(per_offset_in[k])
        outs.append(orows)
        counts[k] = len(orows)
    off_ptr = np.zeros(k_count + 1, dtype=np.int64)
    np.cumsum(counts, out=off_ptr[1:])
    return KernelMap(
        pattern=pattern,
        stride=stride,
        out_coords=out_coords,
        in_rows=np.concatenate(ins),
        out_rows=np.concatenate(outs),
        off_ptr=off_ptr,
        n_in=n,
        submanifold=False,
    )


@dataclass
class GroupedKernelMap:
    """Rulebook re-bucketed by weight group for the shrunk execution path.

    Pairs are flattened in (group, output row, input row) order; a segment is
    a maximal run sharing (group, output row). seg_ptr delimits segments in
    the pair arrays, seg_rows/seg_grp give each segment's output row and
    group, and grp_ptr delimits each group's segment range.
    """

    gmap: GroupMap
    stride: int
    out_coords: np.ndarray
    n_in: int
    in_rows: np.ndarray  # (P,) int32
    off_idx: np.ndarray  # (P,) int32  pattern offset of each pair
    seg_ptr: np.ndarray  # (S+1,) int64
    seg_rows: np.ndarray  # (S,) int32
    seg_grp: np.ndarray  # (S,) int32
    grp_ptr: np.ndarray  # (28,) int64  segment ranges per group

    @property
    def n_out(self) -> int:
        return len(self.out_coords)

    @property
    def total_pairs(self) -> int:
        return len(self.in_rows)

    @property
    def n_segments(self) -> int:
        return len(self.seg_rows)

    def out_rows(self) -> np.ndarray:
        """Per-pair output rows, reconstructed from the segment table."""
        lengths = np.diff(self.seg_ptr)
        return np.repeat(self.seg_rows, lengths)

    def group_pair_count(self, group: int) -> int:
        s, e = self.grp_ptr[group], self.grp_ptr[group + 1]
        if s == e:
            return 0
        return int(self.seg_ptr[e] - self.seg_ptr[s])


def group_kernel_map(kmap: KernelMap, gmap: GroupMap) -> GroupedKernelMap:
    """Re-bucket a dense-kernel rulebook by weight group.

    Per group, the member offsets' pair lists are merged and re-sorted into
    canonical (output row, input row) order; the pair multiset is preserved.
    """
    if not kmap.pattern.is_dense:
        raise PartitionMismatch("grouping requires a dense kernel pattern")
    if kmap.pattern.size != gmap.size:
        raise PartitionMismatch(
            f"kernel map is size {kmap.pattern.size} but group map is {gmap.size}"
        )
    in_parts, off_parts, seg_rows, seg_grp, seg_len = [], [], [], [], []
    grp_ptr = np.zeros(N_GROUPS + 1, dtype=np.int64)
    for g in range(N_GROUPS):
        members = gmap.members(g)
        gi = [kmap.pairs_at(k)[0] for k in members]
        go = [kmap.pairs_at(k)[1] for k in members]
        gk = [np.full(len(gi[m]), members[m], dtype=np.int32) for m in range(len(members))]
        if gi:
            iin = np.concatenate(gi)
            iout = np.concatenate(go)
            ioff = np.concatenate(gk)
        else:
            iin = iout = np.empty(0, np.int32)
            ioff = np.empty(0, np.int32)
        order = np.lexsort((iin, iout))
        iin, iout, ioff = iin[order], iout[order], ioff[order]
        in_parts.append(iin)
        off_parts.append(ioff)
        if len(iout):
            new_seg = np.ones(len(iout), dtype=bool)
            new_seg[1:] = iout[1:] != iout[:-1]
            starts = np.nonzero(new_seg)[0]
            lengths = np.diff(np.append(starts, len(iout)))
            seg_rows.append(iout[starts])
            seg_grp.append(np.full(len(starts), g, dtype=np.int32))
            seg_len.append(lengths)
            grp_ptr[g + 1] = grp_ptr[g] + len(starts)
        else:
            grp_ptr[g + 1] = grp_ptr[g]
    all_len = (
        np.concatenate(seg_len) if seg_len else np.empty(0, np.int64)
    )
    seg_ptr = np.zeros(len(all_len) + 1, dtype=np.int64)
    np.cumsum(all_len, out=seg_ptr[1:])
    return GroupedKernelMap(
        gmap=gmap,
        stride=kmap.stride,
        out_coords=kmap.out_coords,
        n_in=kmap.n_in,
        in_rows=np.concatenate(in_parts) if in_parts else np.empty(0, np.int32),
        off_idx=np.concatenate(off_parts) if off_parts else np.empty(0, np.int32),
        seg_ptr=seg_ptr,
        seg_rows=(
            np.concatenate(seg_rows) if seg_rows else np.empty(0, np.int32)
        ),
        seg_grp=(
            np.concatenate(seg_grp) if seg_grp else np.empty(0, np.int32)
        ),
        grp_ptr=grp_ptr,
    )
