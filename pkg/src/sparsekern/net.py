"""Desk-scale sequential nets, receptive-field analysis, and toy training.

A net is an ordered list of blocks; each block applies one sparse conv layer
(plain, SWP, or dilated plain) through either a submanifold stride-1 map or
a regular stride-2 map, optionally followed by a rectifier, optionally with
a residual connection (out = rectifier(conv(x)) + x). The residual addition
sits after the rectifier so the identity path is never masked.

The effective receptive field of one output feature is computed exactly as
backpropagation: seed a one-hot gradient at the target entry, pull it back
to the input voxels, take per-voxel gradient norms and normalise them to
[0, 1] by the maximum.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .conv import (
    AnyConvLayer,
    LayerGrads,
    PlainConvLayer,
    SwpConvLayer,
    init_plain_layer,
    init_swp_layer,
    layer_backward,
    layer_forward,
)
from .core import Coord3, SparseTensor
from .errors import ChannelChainError, LabelError, TargetNotFound
from .kernelmap import (
    KernelMap,
    build_kernel_map_regular,
    build_kernel_map_submanifold,
)

SUBMANIFOLD = "submanifold"
REGULAR = "regular"
_REGULAR_STRIDE = 2


@dataclass
class Block:
    """One conv layer plus activation/residual wiring."""

    layer: AnyConvLayer
    map_kind: str = SUBMANIFOLD
    activation: bool = False
    residual: bool = False

    def __post_init__(self):
        if self.map_kind not in (SUBMANIFOLD, REGULAR):
            raise ChannelChainError(f"unknown map kind {self.map_kind!r}")
        if self.residual:
            if self.map_kind != SUBMANIFOLD:
                raise ChannelChainError("residual blocks need a submanifold map")
            if self.layer.c_in != self.layer.c_out:
                raise ChannelChainError(
                    f"residual block needs c_in == c_out, got "
                    f"{self.layer.c_in} != {self.layer.c_out}"
                )


@dataclass
class Net:
    """Ordered blocks with a consistent channel chain."""

    blocks: List[Block]

    def __post_init__(self):
        for prev, nxt in zip(self.blocks, self.blocks[1:]):
            if prev.layer.c_out != nxt.layer.c_in:
                raise ChannelChainError(
                    f"block outputs {prev.layer.c_out} channels but the next "
                    f"expects {nxt.layer.c_in}"
                )

    @property
    def c_in(self) -> int:
        return self.blocks[0].layer.c_in

    @property
    def c_out(self) -> int:
        return self.blocks[-1].layer.c_out


@dataclass
class ErfResult:
    """Normalised per-input-voxel gradient magnitudes for one output entry."""

    coords: np.ndarray  # input coordinates, canonical order
    values: np.ndarray  # (N,) in [0, 1]
    target: Coord3
    channel: int
    all_zero: bool  # gradient vanished everywhere; values left at zero


@dataclass
class _BlockCache:
    x_in: SparseTensor
    kmap: KernelMap
    pre_act: np.ndarray  # conv output before rectifier
    out: SparseTensor


def _block_kmap(block: Block, x: SparseTensor) -> KernelMap:
    if block.map_kind == SUBMANIFOLD:
        return build_kernel_map_submanifold(x, block.layer.pattern)
    return build_kernel_map_regular(x, block.layer.pattern, _REGULAR_STRIDE)


def _forward_cached(
    net: Net, x: SparseTensor, kmaps: Optional[Sequence[KernelMap]] = None
) -> List[_BlockCache]:
    if x.channels != net.c_in:
        raise ChannelChainError(
            f"input has {x.channels} channels, net expects {net.c_in}"
        )
    caches: List[_BlockCache] = []
    cur = x
    for bi, block in enumerate(net.blocks):
        kmap = kmaps[bi] if kmaps is not None else _block_kmap(block, cur)
        pre = layer_forward(cur, block.layer, kmap)
        feats = np.maximum(pre, 0) if block.activation else pre
        if block.residual:
            feats = feats + cur.features
        out = SparseTensor(kmap.out_coords if not kmap.submanifold else cur.coords, feats)
        caches.append(_BlockCache(cur, kmap, pre, out))
        cur = out
    return caches


def net_forward(net: Net, x: SparseTensor) -> List[SparseTensor]:
    """Apply the blocks in order; returns every block's output tensor."""
    return [c.out for c in _forward_cached(net, x)]


def _backward(
    net: Net, caches: List[_BlockCache], d_final: np.ndarray
) -> Tuple[List[LayerGrads], np.ndarray]:
    """Pull a gradient at the last output back to the input features."""
    d_out = d_final
    grads: List[Optional[LayerGrads]] = [None] * len(net.blocks)
    for bi in range(len(net.blocks) - 1, -1, -1):
        block = net.blocks[bi]
        cache = caches[bi]
        d_pre = d_out * (cache.pre_act > 0) if block.activation else d_out
        g = layer_backward(cache.x_in, block.layer, cache.kmap, d_pre)
        if block.residual:
            g = LayerGrads(g.d_weights, g.d_embed, g.d_input + d_out)
        grads[bi] = g
        d_out = g.d_input
    return grads, d_out  # type: ignore[return-value]


def erf_compute(net: Net, x: SparseTensor, target: Coord3, channel: int) -> ErfResult:
    """Gradient of one output feature with respect to every input voxel.

    Seeds dY = 1 at (target, channel) in the final output, backpropagates to
    the input, takes the Euclidean norm over channels per voxel, and divides
    by the maximum norm when it is positive.
    """
    caches = _forward_cached(net, x)
    final = caches[-1].out
    row = final.row_of(target)
    if row is None:
        raise TargetNotFound(f"coordinate {tuple(target)} not in the final output")
    if not 0 <= channel < final.channels:
        raise TargetNotFound(
            f"channel {channel} outside [0, {final.channels}) at the final output"
        )
    d_final = np.zeros_like(final.features)
    d_final[row, channel] = 1.0
    _, d_input = _backward(net, caches, d_final)
    norms = np.sqrt(np.sum(d_input.astype(np.float64) ** 2, axis=1))
    max_norm = float(norms.max()) if len(norms) else 0.0
    if max_norm > 0.0:
        values = norms / max_norm
        all_zero = False
    else:
        values = np.zeros_like(norms)
        all_zero = True
    return ErfResult(
        coords=x.coords,
        values=values,
        target=(int(target[0]), int(target[1]), int(target[2])),
        channel=int(channel),
        all_zero=all_zero,
    )


def softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> Tuple[float, np.ndarray]:
    """Mean per-voxel softmax cross-entropy and its gradient in the logits."""
    n, n_classes = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise LabelError(f"need {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= n_classes:
        bad = labels[(labels < 0) | (labels >= n_classes)][0]
        raise LabelError(f"label {bad} outside [0, {n_classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(picked)))
    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    return loss, d_logits.astype(logits.dtype)


def _updated_layer(layer: AnyConvLayer, grads: LayerGrads, lr: float) -> AnyConvLayer:
    if isinstance(layer, SwpConvLayer):
        return SwpConvLayer(
            layer.weights - lr * grads.d_weights,
            layer.embed - lr * grads.d_embed,
            layer.gmap,
            layer.pattern,
        )
    return PlainConvLayer(layer.weights - lr * grads.d_weights, layer.pattern)


def train_step(
    net: Net,
    x: SparseTensor,
    labels: np.ndarray,
    learning_rate: float,
    kmaps: Optional[Sequence[KernelMap]] = None,
) -> Tuple[Net, float]:
    """One plain gradient-descent step on per-voxel softmax cross-entropy.

    Returns a new net (nets are value-semantic) and the pre-step loss.
    Pass prebuilt `kmaps` to avoid rebuilding rulebooks every step on a
    fixed scene.
    """
    caches = _forward_cached(net, x, kmaps)
    logits = caches[-1].out.features
    loss, d_logits = softmax_cross_entropy(logits, labels)
    if learning_rate == 0.0:
        return net, loss
    grads, _ = _backward(net, caches, d_logits)
    new_blocks = [
        replace(block, layer=_updated_layer(block.layer, g, learning_rate))
        for block, g in zip(net.blocks, grads)
    ]
    return Net(new_blocks), loss


def build_kmaps(net: Net, x: SparseTensor) -> List[KernelMap]:
    """Rulebooks for every block on a fixed scene (reusable across steps)."""
    kmaps: List[KernelMap] = []
    cur = x
    for block in net.blocks:
        kmap = _block_kmap(block, cur)
        kmaps.append(kmap)
        if not kmap.submanifold:
            cur = SparseTensor(
                kmap.out_coords,
                np.zeros((kmap.n_out, block.layer.c_out), cur.features.dtype),
            )
    return kmaps


def make_desk_net(
    variant: str,
    *,
    in_channels: int = 8,
    hidden: int = 16,
    kernel_size: Optional[int] = None,
    n_classes: Optional[int] = None,
    seed: int = 0,
    dtype=np.float64,
) -> Net:
    """Three-block analog net: channels in->16->16, variant kernels up front.

    `variant` "plain" stacks small plain kernels; "swp" replaces the first
    two blocks with spatial-wise partition layers (default size 7) and keeps
    the last block plain size 3. With `n_classes` a 1x1x1 plain classifier
    head is appended so the net can drive the training loss.
    """
    if variant not in ("plain", "swp"):
        raise ValueError(f"variant must be 'plain' or 'swp', got {variant!r}")
    if kernel_size is None:
        kernel_size = 7 if variant == "swp" else 3

    def stage(l_size, c_in, c_out, salt, residual):
        if variant == "swp":
            layer: AnyConvLayer = init_swp_layer(l_size, c_in, c_out, seed + salt, dtype)
        else:
            layer = init_plain_layer(l_size, c_in, c_out, seed + salt, dtype)
        return Block(layer, SUBMANIFOLD, activation=True, residual=residual)

    blocks = [
        stage(kernel_size, in_channels, hidden, 1, residual=False),
        stage(kernel_size, hidden, hidden, 2, residual=True),
        Block(
            init_plain_layer(3, hidden, hidden, seed + 3, dtype),
            SUBMANIFOLD,
            activation=True,
            residual=True,
        ),
    ]
    if n_classes is not None:
        blocks.append(
            Block(init_plain_layer(1, hidden, n_classes, seed + 4, dtype), SUBMANIFOLD)
        )
    return Net(blocks)


# --- ERF export -------------------------------------------------------------


def write_erf_csv(result: ErfResult, path) -> None:
    """Rows "x,y,z,value" in canonical coordinate order."""
    with open(path, "w") as fh:
        fh.write("x,y,z,value\n")
        for (cx, cy, cz), v in zip(result.coords.tolist(), result.values.tolist()):
            fh.write(f"{cx},{cy},{cz},{v:.17g}\n")


_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


def erf_projection(result: ErfResult, axis: str = "z") -> np.ndarray:
    """8-bit orthographic max-projection of the ERF along `axis`.

    The two remaining coordinate axes, in (x, y, z) order, map to image
    (rows, cols); row/col 0 corresponds to the minimum coordinate.
    """
    if axis not in _AXIS_INDEX:
        raise ValueError(f"axis must be one of x/y/z, got {axis!r}")
    drop = _AXIS_INDEX[axis]
    keep = [a for a in range(3) if a != drop]
    rows = result.coords[:, keep[0]]
    cols = result.coords[:, keep[1]]
    r0, c0 = rows.min(), cols.min()
    img = np.zeros((int(rows.max() - r0) + 1, int(cols.max() - c0) + 1), dtype=np.float64)
    np.maximum.at(img, (rows - r0, cols - c0), result.values)
    return np.round(img * 255.0).astype(np.uint8)


def write_erf_pgm(result: ErfResult, path, axis: str = "z") -> None:
    """Plain (P2) PGM of the projection; diffable and viewer-friendly."""
    img = erf_projection(result, axis)
    h, w = img.shape
    with open(path, "w") as fh:
        fh.write(f"P2\n{w} {h}\n255\n")
        for row in img:
            fh.write(" ".join(str(int(v)) for v in row))
            fh.write("\n")
