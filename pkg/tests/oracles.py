"""Independent reference computations the engine is checked against.

Everything here deliberately avoids the engine's rulebook machinery: the
convolution oracle works on a zero-padded dense array, pair enumeration goes
through a plain dict, and gradients come from central finite differences.
"""

from __future__ import annotations

import numpy as np


def dense_conv(
    in_coords,
    feats,
    offsets,
    weights,
    out_coords,
    embed=None,
    stride: int = 1,
) -> np.ndarray:
    """Brute-force sparse convolution on a dense zero-padded grid (f64).

    y[q] = sum_k act(stride*q + k) * (x[stride*q + k] + e_k) @ W[k], where
    act marks active sites; the embedding term exists only at active sites.
    """
    in_coords = np.asarray(in_coords, dtype=np.int64)
    feats = np.asarray(feats, dtype=np.float64)
    out_coords = np.asarray(out_coords, dtype=np.int64).reshape(-1, 3)
    weights = np.asarray(weights, dtype=np.float64)
    lo = in_coords.min(axis=0)
    dims = in_coords.max(axis=0) - lo + 1
    c_in = feats.shape[1]
    c_out = weights.shape[2]
    dense = np.zeros((*dims, c_in), dtype=np.float64)
    active = np.zeros(tuple(dims), dtype=bool)
    rel = in_coords - lo
    dense[rel[:, 0], rel[:, 1], rel[:, 2]] = feats
    active[rel[:, 0], rel[:, 1], rel[:, 2]] = True
    y = np.zeros((len(out_coords), c_out), dtype=np.float64)
    for k, off in enumerate(np.asarray(offsets, dtype=np.int64)):
        site = stride * out_coords + off - lo
        inb = np.all((site >= 0) & (site < dims), axis=1)
        s = site[inb]
        vals = dense[s[:, 0], s[:, 1], s[:, 2]]
        act = active[s[:, 0], s[:, 1], s[:, 2]]
        if embed is not None:
            vals = vals + np.asarray(embed, dtype=np.float64)[k][None, :]
        y[inb] += (vals * act[:, None]) @ weights[k]
    return y


def brute_force_pairs(coords, offsets) -> set[tuple[int, int, int]]:
    """Submanifold pair set {(k, in_row, out_row)} via a plain dict."""
    coords = np.asarray(coords, dtype=np.int64)
    index = {tuple(c): r for r, c in enumerate(coords.tolist())}
    pairs = set()
    for k, off in enumerate(np.asarray(offsets, dtype=np.int64).tolist()):
        for j, c in enumerate(coords.tolist()):
            site = (c[0] + off[0], c[1] + off[1], c[2] + off[2])
            i = index.get(site)
            if i is not None:
                pairs.add((k, i, j))
    return pairs


def brute_force_regular_outputs(coords, offsets, stride: int) -> set[tuple[int, int, int]]:
    """Output set {q : exists p, k with p == stride*q + k}, enumerated from inputs."""
    out = set()
    for p in np.asarray(coords, dtype=np.int64).tolist():
        for off in np.asarray(offsets, dtype=np.int64).tolist():
            t = (p[0] - off[0], p[1] - off[1], p[2] - off[2])
            if all(v % stride == 0 for v in t):
                out.add((t[0] // stride, t[1] // stride, t[2] // stride))
    return out


def fd_grad(loss_fn, param: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss in every entry of `param`.

    Perturbs `param` in place, so the loss closure must read the same array
    object the caller passed.
    """
    grad = np.zeros(param.shape, dtype=np.float64)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        up = loss_fn()
        flat[idx] = orig - step
        down = loss_fn()
        flat[idx] = orig
        gflat[idx] = (up - down) / (2.0 * step)
    return grad


def rel_err(actual: np.ndarray, expected: np.ndarray) -> float:
    """‖a − b‖ / ‖b‖ with a zero-safe denominator."""
    num = float(np.linalg.norm(np.asarray(actual, np.float64) - np.asarray(expected, np.float64)))
    den = float(np.linalg.norm(np.asarray(expected, np.float64)))
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return num / den
