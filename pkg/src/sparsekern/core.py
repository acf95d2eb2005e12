"""Sparse voxel containers, scene generation, voxelization and SPVX i/o.

A sparse tensor is a set of unique integer voxel coordinates paired with a
feature matrix. Coordinates are kept in lexicographic (x, then y, then z)
order -- the canonical form -- so that row numbering, hashing and
serialization are all deterministic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import DuplicateCoord, EmptyScene, FormatError, InfeasibleScene
from .rng import SplitMix64, sample_without_replacement

Coord3 = Tuple[int, int, int]
Extent = Tuple[Tuple[int, int], Tuple[int, int], Tuple[int, int]]

SPVX_MAGIC = b"SPVX1\n"
_DTYPE_CODES = {0: np.float32, 1: np.float64}
_CODE_OF_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def build_index(coords: np.ndarray | Sequence[Coord3]) -> dict[Coord3, int]:
    """Hash index mapping each coordinate to its row.

    Raises DuplicateCoord naming the first repeated coordinate. Lookup of an
    absent coordinate is a plain dict miss (``.get`` returns None).
    """
    arr = np.asarray(coords, dtype=np.int32).reshape(-1, 3)
    index: dict[Coord3, int] = {}
    for row, (x, y, z) in enumerate(arr.tolist()):
        key = (x, y, z)
        if key in index:
            raise DuplicateCoord(key)
        index[key] = row
    return index


def _lex_order(coords: np.ndarray) -> np.ndarray:
    return np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))


def _is_lex_sorted_strict(coords: np.ndarray) -> bool:
    if len(coords) < 2:
        return True
    a, b = coords[:-1], coords[1:]
    gt = (a[:, 0] > b[:, 0]) | (
        (a[:, 0] == b[:, 0])
        & ((a[:, 1] > b[:, 1]) | ((a[:, 1] == b[:, 1]) & (a[:, 2] >= b[:, 2])))
    )
    return not bool(gt.any())


class SparseTensor:
    """Unique voxel coordinates + feature rows + spatial hash index.

    `coords` is an (N, 3) int32 array in canonical lexicographic order and
    `features` an (N, C) float matrix whose row i belongs to coords[i].
    Instances are immutable after construction and safe to share.
    """

    __slots__ = ("coords", "features", "index")

    def __init__(self, coords, features):
        coords = np.ascontiguousarray(np.asarray(coords, dtype=np.int32).reshape(-1, 3))
        features = np.ascontiguousarray(np.atleast_2d(np.asarray(features)))
        if features.dtype not in (np.float32, np.float64):
            features = features.astype(np.float64)
        if len(coords) != len(features):
            raise ValueError(
                f"{len(coords)} coords but {len(features)} feature rows"
            )
        if len(coords) == 0:
            raise EmptyScene("a sparse tensor needs at least one voxel")
        if not _is_lex_sorted_strict(coords):
            order = _lex_order(coords)
            coords = np.ascontiguousarray(coords[order])
            features = np.ascontiguousarray(features[order])
        self.coords = coords
        self.features = features
        self.index = build_index(coords)  # raises DuplicateCoord
        self.coords.setflags(write=False)

    @property
    def n_voxels(self) -> int:
        return len(self.coords)

    @property
    def channels(self) -> int:
        return self.features.shape[1]

    def row_of(self, coord: Coord3) -> int | None:
        """Row for `coord`, or None when the site is inactive."""
        return self.index.get((int(coord[0]), int(coord[1]), int(coord[2])))

    def with_features(self, features: np.ndarray) -> "SparseTensor":
        """Same coordinate set, different feature matrix."""
        return SparseTensor(self.coords, features)

    def astype(self, dtype) -> "SparseTensor":
        return SparseTensor(self.coords, self.features.astype(dtype))

    def __eq__(self, other):
        return (
            isinstance(other, SparseTensor)
            and np.array_equal(self.coords, other.coords)
            and self.features.dtype == other.features.dtype
            and np.array_equal(self.features, other.features)
        )

    def __repr__(self):
        return (
            f"SparseTensor(n={self.n_voxels}, channels={self.channels}, "
            f"dtype={self.features.dtype})"
        )


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for a reproducible random scene.

    extent is a per-axis inclusive coordinate range; identical specs always
    produce bitwise identical tensors.
    """

    n_voxels: int
    extent: Extent
    channels: int
    seed: int

    def dims(self) -> Tuple[int, int, int]:
        return tuple(int(hi - lo + 1) for lo, hi in self.extent)  # type: ignore[return-value]

    def volume(self) -> int:
        dx, dy, dz = self.dims()
        return dx * dy * dz

    def validate(self) -> None:
        if self.n_voxels <= 0:
            raise InfeasibleScene("n_voxels must be positive")
        if self.channels <= 0:
            raise InfeasibleScene("channels must be positive")
        for lo, hi in self.extent:
            if hi < lo:
                raise InfeasibleScene(f"degenerate extent axis [{lo}, {hi}]")
        if self.n_voxels > self.volume():
            raise InfeasibleScene(
                f"{self.n_voxels} voxels cannot fit in {self.volume()} cells"
            )


def random_scene(spec: SceneSpec, dtype=np.float32) -> SparseTensor:
    """Scatter `spec.n_voxels` unique voxels uniformly over the extent.

    Pure function of the spec: coordinates come from a partial Fisher-Yates
    sample of the linearised extent (x-major), then are sorted into canonical
    order; features are drawn uniform in [-1, 1) row-major *after* sorting.
    """
    spec.validate()
    rng = SplitMix64(spec.seed)
    dx, dy, dz = spec.dims()
    lin = sample_without_replacement(rng, spec.volume(), spec.n_voxels)
    x = lin // (dy * dz) + spec.extent[0][0]
    rem = lin % (dy * dz)
    y = rem // dz + spec.extent[1][0]
    z = rem % dz + spec.extent[2][0]
    coords = np.stack([x, y, z], axis=1).astype(np.int32)
    coords = coords[_lex_order(coords)]
    feats = rng.symmetric_array(spec.n_voxels * spec.channels)
    feats = feats.reshape(spec.n_voxels, spec.channels).astype(dtype)
    return SparseTensor(coords, feats)


def voxelize(
    points: np.ndarray,
    features: np.ndarray,
    voxel_size,
    vrange,
) -> SparseTensor:
    """Quantise a point cloud onto a voxel grid.

    Points outside the half-open range [min, max) on any axis are discarded;
    a surviving point lands in cell floor((p - min) / voxel_size) per axis,
    and each cell's feature is the arithmetic mean of its points' features.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[0] != points.shape[0]:
        raise ValueError("points and features row counts differ")
    size = np.broadcast_to(np.asarray(voxel_size, dtype=np.float64), (3,))
    if np.any(size <= 0):
        raise ValueError("voxel_size must be positive on every axis")
    rng_arr = np.asarray(vrange, dtype=np.float64).reshape(3, 2)
    if np.any(rng_arr[:, 1] <= rng_arr[:, 0]):
        raise ValueError("range must be non-degenerate on every axis")

    keep = np.all((points >= rng_arr[:, 0]) & (points < rng_arr[:, 1]), axis=1)
    points = points[keep]
    features = features[keep]
    if len(points) == 0:
        raise EmptyScene("no points inside the voxelization range")

    cells = np.floor((points - rng_arr[:, 0]) / size).astype(np.int64)
    order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0]))
    cells = cells[order]
    features = features[order]
    new_cell = np.ones(len(cells), dtype=bool)
    new_cell[1:] = np.any(cells[1:] != cells[:-1], axis=1)
    starts = np.nonzero(new_cell)[0]
    counts = np.diff(np.append(starts, len(cells)))
    sums = np.add.reduceat(features, starts, axis=0)
    means = sums / counts[:, None]
    return SparseTensor(cells[starts].astype(np.int32), means)


def load_points_csv(path) -> Tuple[np.ndarray, np.ndarray]:
    """Read "x,y,z,f1,...,fC" rows (one header line) into point/feature arrays."""
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # header-only files become EmptyScene below
        raw = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=np.float64, ndmin=2)
    if raw.size == 0:
        raise EmptyScene(f"no data rows in {path}")
    if raw.shape[1] < 4:
        raise FormatError(f"expected at least 4 CSV columns, got {raw.shape[1]}", 0)
    if np.isnan(raw).any():
        raise FormatError("non-numeric field in CSV body", 0)
    return raw[:, :3], raw[:, 3:]


def serialize(tensor: SparseTensor) -> bytes:
    """SPVX binary encoding (see module docs; little-endian throughout)."""
    n, c = tensor.n_voxels, tensor.channels
    code = _CODE_OF_DTYPE[np.dtype(tensor.features.dtype)]
    head = SPVX_MAGIC + struct.pack("<IIIB", 1, n, c, code)
    coords = np.ascontiguousarray(tensor.coords, dtype="<i4")
    feats = np.ascontiguousarray(tensor.features, dtype=f"<f{tensor.features.dtype.itemsize}")
    return head + coords.tobytes() + feats.tobytes()


def deserialize(data: bytes) -> SparseTensor:
    """Decode an SPVX stream, validating structure and canonical order.

    FormatError carries the byte offset of the first violation: 0 for a bad
    magic, the truncation point for short streams, and the start of the
    offending coordinate record for ordering violations.
    """
    if data[:6] != SPVX_MAGIC:
        raise FormatError("bad magic", 0)
    if len(data) < 19:
        raise FormatError("truncated header", len(data))
    version, n, c, code = struct.unpack_from("<IIIB", data, 6)
    if version != 1:
        raise FormatError(f"unsupported version {version}", 6)
    if code not in _DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}", 18)
    if n == 0 or c == 0:
        raise FormatError("empty tensor", 10)
    dtype = np.dtype(_DTYPE_CODES[code])
    coords_at = 19
    feats_at = coords_at + n * 12
    end = feats_at + n * c * dtype.itemsize
    if len(data) < feats_at:
        raise FormatError("truncated coordinates", len(data))
    if len(data) < end:
        raise FormatError("truncated features", len(data))
    if len(data) > end:
        raise FormatError("trailing bytes after payload", end)
    coords = np.frombuffer(data, dtype="<i4", count=n * 3, offset=coords_at)
    coords = coords.reshape(n, 3).astype(np.int32)
    if not _is_lex_sorted_strict(coords):
        a, b = coords[:-1], coords[1:]
        gt = (a[:, 0] > b[:, 0]) | (
            (a[:, 0] == b[:, 0])
            & ((a[:, 1] > b[:, 1]) | ((a[:, 1] == b[:, 1]) & (a[:, 2] >= b[:, 2])))
        )
        bad = int(np.nonzero(gt)[0][0]) + 1
        raise FormatError("coordinates not in canonical order", coords_at + bad * 12)
    feats = np.frombuffer(data, dtype=f"<f{dtype.itemsize}", count=n * c, offset=feats_at)
    return SparseTensor(coords, feats.reshape(n, c).astype(dtype))


def write_spvx(tensor: SparseTensor, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(tensor))


def read_spvx(path) -> SparseTensor:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
