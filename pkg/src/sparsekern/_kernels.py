"""Compiled gather-scatter-multiply loops.

All kernels are sequential scalar loops compiled with strict IEEE semantics
(no fastmath), so results are bitwise deterministic and independent of any
thread cap. Pair lists arrive in canonical order; accumulation happens in
exactly that order.
"""

import numba
import numpy as np  # noqa: F401  (numba typing)


@numba.njit(cache=True)
def plain_forward(feats, weights, in_rows, out_rows, off_ptr, out):
    """out[j] += feats[i] @ weights[k] over the pairs of each offset k."""
    n_off = off_ptr.shape[0] - 1
    c_in = feats.shape[1]
    c_out = out.shape[1]
    for k in range(n_off):
        w = weights[k]
        for p in range(off_ptr[k], off_ptr[k + 1]):
            xi = feats[in_rows[p]]
            yj = out[out_rows[p]]
            for b in range(c_out):
                acc = 0.0
                for a in range(c_in):
                    acc += xi[a] * w[a, b]
                yj[b] += acc


@numba.njit(cache=True)
def swp_forward(feats, weights, embed, in_rows, off_idx, seg_ptr, seg_rows, seg_grp, out):
    """Shrunk evaluation: one weight product per (output row, group) segment.

    Each segment first aggregates its gathered features plus the per-offset
    embedding rows, then multiplies the aggregate by its group's weight.
    Segments are ordered by (group, output row), so per output row the group
    contributions accumulate in group-index order.
    """
    n_seg = seg_ptr.shape[0] - 1
    c_in = feats.shape[1]
    c_out = out.shape[1]
    agg = np.empty(c_in, dtype=feats.dtype)
    for s in range(n_seg):
        for a in range(c_in):
            agg[a] = 0.0
        for p in range(seg_ptr[s], seg_ptr[s + 1]):
            xi = feats[in_rows[p]]
            ek = embed[off_idx[p]]
            for a in range(c_in):
                agg[a] += xi[a] + ek[a]
        w = weights[seg_grp[s]]
        yj = out[seg_rows[s]]
        for b in range(c_out):
            acc = 0.0
            for a in range(c_in):
                acc += agg[a] * w[a, b]
            yj[b] += acc


@numba.njit(cache=True)
def plain_backward(feats, weights, d_out, in_rows, out_rows, off_ptr, d_in, d_w):
    """Adjoint of plain_forward: d_in[i] += dY[j] W[k]^T, d_w[k] += x[i]^T dY[j]."""
    n_off = off_ptr.shape[0] - 1
    c_in = feats.shape[1]
    c_out = d_out.shape[1]
    for k in range(n_off):
        w = weights[k]
        dw = d_w[k]
        for p in range(off_ptr[k], off_ptr[k + 1]):
            i = in_rows[p]
            j = out_rows[p]
            xi = feats[i]
            gj = d_out[j]
            di = d_in[i]
            for a in range(c_in):
                acc = 0.0
                for b in range(c_out):
                    g = gj[b]
                    acc += g * w[a, b]
                    dw[a, b] += xi[a] * g
                di[a] += acc


@numba.njit(cache=True)
def swp_backward(feats, weights, embed, d_out, in_rows, out_rows, off_ptr, assign, d_in, d_w, d_e):
    """Adjoint of the shared-weight layer, walked per offset.

    For a pair (i -> j) at offset k in group g = assign[k]:
      d_w[g]  += (x[i] + e[k])^T dY[j]
      d_e[k]  += dY[j] @ W[g]^T      (zero stays zero at inactive offsets)
      d_in[i] += dY[j] @ W[g]^T
    """
    n_off = off_ptr.shape[0] - 1
    c_in = feats.shape[1]
    c_out = d_out.shape[1]
    for k in range(n_off):
        g = assign[k]
        w = weights[g]
        dw = d_w[g]
        de = d_e[k]
        ek = embed[k]
        for p in range(off_ptr[k], off_ptr[k + 1]):
            i = in_rows[p]
            xi = feats[i]
            gj = d_out[out_rows[p]]
            di = d_in[i]
            for a in range(c_in):
                acc = 0.0
                va = xi[a] + ek[a]
                for b in range(c_out):
                    gb = gj[b]
                    acc += gb * w[a, b]
                    dw[a, b] += va * gb
                di[a] += acc
                de[a] += acc
