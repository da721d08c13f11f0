"""Compiled element kernels.

The fused and multipass backends call the *same* element-level helpers in the
same order; only where intermediates live differs (element-local scratch
versus global arrays).  Floating-point results are therefore identical between
the two backends and independent of the thread count.

Every helper returns the number of multiplies and adds it executed, computed
from the loop bounds it actually ran; the kernels accumulate these into a
per-element counter when one is supplied.

Element tensors are ``[t, s, r]``.  ``A`` matrices are ``(m, k)`` and map a
length-``k`` axis to length ``m``; transposed passes receive ``B.T``/``D.T``.
"""
from __future__ import annotations

import numpy as np
from numba import njit, prange

_OPTS = dict(cache=True, nogil=True)


@njit(**_OPTS)
def contract_r(A, X, Y, accumulate):
    m, k = A.shape
    n2, n1 = X.shape[0], X.shape[1]
    for c in range(n2):
        for b in range(n1):
            for i in range(m):
                acc = Y[c, b, i] if accumulate else 0.0
                for j in range(k):
                    acc += A[i, j] * X[c, b, j]
                Y[c, b, i] = acc
    return 2 * m * k * n2 * n1


@njit(**_OPTS)
def contract_s(A, X, Y, accumulate):
    m, k = A.shape
    n2, n0 = X.shape[0], X.shape[2]
    for c in range(n2):
        for i in range(m):
            if not accumulate:
                for a in range(n0):
                    Y[c, i, a] = 0.0
            for j in range(k):
                aij = A[i, j]
                for a in range(n0):
                    Y[c, i, a] += aij * X[c, j, a]
    return 2 * m * k * n2 * n0


@njit(**_OPTS)
def contract_t(A, X, Y, accumulate):
    m, k = A.shape
    n1, n0 = X.shape[1], X.shape[2]
    for i in range(m):
        if not accumulate:
            for b in range(n1):
                for a in range(n0):
                    Y[i, b, a] = 0.0
        for j in range(k):
            aij = A[i, j]
            for b in range(n1):
                for a in range(n0):
                    Y[i, b, a] += aij * X[j, b, a]
    return 2 * m * k * n1 * n0


# --- element pipelines ------------------------------------------------------

@njit(**_OPTS)
def load_elem(u, idx, e, ue):
    n = ue.shape[0]
    l = 0
    for c in range(n):
        for b in range(n):
            for a in range(n):
                ue[c, b, a] = u[idx[e, l]]
                l += 1


@njit(**_OPTS)
def interp_elem(ue, B, t1, t2, g):
    f = contract_r(B, ue, t1, False)
    f += contract_s(B, t1, t2, False)
    f += contract_t(B, t2, g, False)
    return f


@njit(**_OPTS)
def interp_t_elem(v, Bt, t1, t2, we):
    f = contract_t(Bt, v, t2, False)
    f += contract_s(Bt, t2, t1, False)
    f += contract_r(Bt, t1, we, False)
    return f


@njit(**_OPTS)
def grad_elem(ue, B, D, collocated, t1a, t1b, t2a, t2b, t2c, gr, gs, gt):
    if collocated:
        f = contract_r(D, ue, gr, False)
        f += contract_s(D, ue, gs, False)
        f += contract_t(D, ue, gt, False)
        return f
    # r sweep: D and B pass; s sweep: three combinations; t sweep: finish
    f = contract_r(D, ue, t1a, False)
    f += contract_r(B, ue, t1b, False)
    f += contract_s(B, t1a, t2a, False)
    f += contract_s(D, t1b, t2b, False)
    f += contract_s(B, t1b, t2c, False)
    f += contract_t(B, t2a, gr, False)
    f += contract_t(B, t2b, gs, False)
    f += contract_t(D, t2c, gt, False)
    return f


@njit(**_OPTS)
def grad_t_elem(vr, vs, vt, Bt, Dt, collocated, t1a, t1b, t2a, t2b, t2c, we):
    if collocated:
        f = contract_t(Dt, vt, we, False)
        f += contract_s(Dt, vs, we, True)
        f += contract_r(Dt, vr, we, True)
        return f
    f = contract_t(Bt, vr, t2a, False)
    f += contract_t(Bt, vs, t2b, False)
    f += contract_t(Dt, vt, t2c, False)
    f += contract_s(Bt, t2a, t1a, False)
    f += contract_s(Dt, t2b, t1b, False)
    f += contract_s(Bt, t2c, t1b, True)
    f += contract_r(Dt, t1a, we, False)
    f += contract_r(Bt, t1b, we, True)
    return f


@njit(**_OPTS)
def qf_mass(W, g, v):
    q2, q1, q0 = g.shape
    for c in range(q2):
        for b in range(q1):
            for a in range(q0):
                v[c, b, a] = W[c, b, a] * g[c, b, a]
    return q2 * q1 * q0


@njit(**_OPTS)
def qf_diff(G, gr, gs, gt, vr, vs, vt):
    """Pointwise symmetric 3x3 multiply; outputs may alias inputs."""
    q2, q1, q0 = gr.shape
    for c in range(q2):
        for b in range(q1):
            for a in range(q0):
                ur = gr[c, b, a]
                us = gs[c, b, a]
                ut = gt[c, b, a]
                vr[c, b, a] = G[0, c, b, a] * ur + G[1, c, b, a] * us + G[2, c, b, a] * ut
                vs[c, b, a] = G[1, c, b, a] * ur + G[3, c, b, a] * us + G[4, c, b, a] * ut
                vt[c, b, a] = G[2, c, b, a] * ur + G[4, c, b, a] * us + G[5, c, b, a] * ut
    return 15 * q2 * q1 * q0


# --- fused single-sweep operators -------------------------------------------

def _chunk(ch, nchunk, nelem):
    return ch * nelem // nchunk, (ch + 1) * nelem // nchunk


_chunk = njit(**_OPTS)(_chunk)


@njit(parallel=True, **_OPTS)
def fused_mass(u, idx, W, B, Bt, s_ue, s_t1, s_t2, s_q, ev, counts):
    nelem = idx.shape[0]
    nchunk = s_ue.shape[0]
    for ch in prange(nchunk):
        e0, e1 = _chunk(ch, nchunk, nelem)
        ue, t1, t2, g = s_ue[ch], s_t1[ch, 0], s_t2[ch, 0], s_q[ch, 0]
        for e in range(e0, e1):
            load_elem(u, idx, e, ue)
            f = interp_elem(ue, B, t1, t2, g)
            f += qf_mass(W[e], g, g)
            f += interp_t_elem(g, Bt, t1, t2, ev[e])
            if counts.shape[0] > 0:
                counts[e] = f


@njit(parallel=True, **_OPTS)
def fused_mass_collocated(u, idx, W, ev, counts):
    for e in prange(idx.shape[0]):
        we = ev[e]
        load_elem(u, idx, e, we)
        f = qf_mass(W[e], we, we)
        if counts.shape[0] > 0:
            counts[e] = f


@njit(parallel=True, **_OPTS)
def fused_diff(u, idx, G, B, D, Bt, Dt, collocated, s_ue, s_t1, s_t2, s_q, ev, counts):
    nelem = idx.shape[0]
    nchunk = s_ue.shape[0]
    for ch in prange(nchunk):
        e0, e1 = _chunk(ch, nchunk, nelem)
        ue = s_ue[ch]
        t1a, t1b = s_t1[ch, 0], s_t1[ch, 1]
        t2a, t2b, t2c = s_t2[ch, 0], s_t2[ch, 1], s_t2[ch, 2]
        gr, gs, gt = s_q[ch, 0], s_q[ch, 1], s_q[ch, 2]
        for e in range(e0, e1):
            load_elem(u, idx, e, ue)
            f = grad_elem(ue, B, D, collocated, t1a, t1b, t2a, t2b, t2c, gr, gs, gt)
            f += qf_diff(G[e], gr, gs, gt, gr, gs, gt)
            f += grad_t_elem(gr, gs, gt, Bt, Dt, collocated, t1a, t1b, t2a, t2b, t2c, ev[e])
            if counts.shape[0] > 0:
                counts[e] = f


# --- multipass: one sweep per stage over global arrays ------------------------

@njit(parallel=True, **_OPTS)
def pass_gather(u, idx, ue):
    for e in prange(idx.shape[0]):
        load_elem(u, idx, e, ue[e])


@njit(parallel=True, **_OPTS)
def pass_interp(ue, B, s_t1, s_t2, g, counts):
    nelem = ue.shape[0]
    nchunk = s_t1.shape[0]
    for ch in prange(nchunk):
        e0, e1 = _chunk(ch, nchunk, nelem)
        for e in range(e0, e1):
            f = interp_elem(ue[e], B, s_t1[ch, 0], s_t2[ch, 0], g[e])
            if counts.shape[0] > 0:
                counts[e] += f


@njit(parallel=True, **_OPTS)
def pass_interp_t(v, Bt, s_t1, s_t2, ev, counts):
    nelem = v.shape[0]
    nchunk = s_t1.shape[0]
    for ch in prange(nchunk):
        e0, e1 = _chunk(ch, nchunk, nelem)
        for e in range(e0, e1):
            f = interp_t_elem(v[e], Bt, s_t1[ch, 0], s_t2[ch, 0], ev[e])
            if counts.shape[0] > 0:
                counts[e] += f


@njit(parallel=True, **_OPTS)
def pass_qf_mass(W, g, v, counts):
    for e in prange(g.shape[0]):
        f = qf_mass(W[e], g[e], v[e])
        if counts.shape[0] > 0:
            counts[e] += f


@njit(parallel=True, **_OPTS)
def pass_grad(ue, B, D, collocated, s_t1, s_t2, gq, counts):
    nelem = ue.shape[0]
    nchunk = s_t1.shape[0]
    for ch in prange(nchunk):
        e0, e1 = _chunk(ch, nchunk, nelem)
        for e in range(e0, e1):
            f = grad_elem(ue[e], B, D, collocated, s_t1[ch, 0], s_t1[ch, 1],
                          s_t2[ch, 0], s_t2[ch, 1], s_t2[ch, 2],
                          gq[0, e], gq[1, e], gq[2, e])
            if counts.shape[0] > 0:
                counts[e] += f


@njit(parallel=True, **_OPTS)
def pass_qf_diff(G, gq, vq, counts):
    for e in prange(G.shape[0]):
        f = qf_diff(G[e], gq[0, e], gq[1, e], gq[2, e], vq[0, e], vq[1, e], vq[2, e])
        if counts.shape[0] > 0:
            counts[e] += f


@njit(parallel=True, **_OPTS)
def pass_grad_t(vq, Bt, Dt, collocated, s_t1, s_t2, ev, counts):
    nelem = ev.shape[0]
    nchunk = s_t1.shape[0]
    for ch in prange(nchunk):
        e0, e1 = _chunk(ch, nchunk, nelem)
        for e in range(e0, e1):
            f = grad_t_elem(vq[0, e], vq[1, e], vq[2, e], Bt, Dt, collocated,
                            s_t1[ch, 0], s_t1[ch, 1], s_t2[ch, 0], s_t2[ch, 1],
                            s_t2[ch, 2], ev[e])
            if counts.shape[0] > 0:
                counts[e] += f


# --- ordered reductions -------------------------------------------------------

@njit(parallel=True, **_OPTS)
def scatter_ordered(ev_flat, offsets, order, out):
    """``out[g] = sum of ev_flat[order[offsets[g]:offsets[g+1]]]`` left to right."""
    for g in prange(out.shape[0]):
        acc = 0.0
        for k in range(offsets[g], offsets[g + 1]):
            acc += ev_flat[order[k]]
        out[g] = acc


_DOT_BLOCK = 4096


@njit(parallel=True, **_OPTS)
def det_dot(x, y, partials):
    """Dot product with a fixed block partition, independent of thread count."""
    n = x.shape[0]
    nb = partials.shape[0]
    for blk in prange(nb):
        lo = blk * _DOT_BLOCK
        hi = min(lo + _DOT_BLOCK, n)
        acc = 0.0
        for i in range(lo, hi):
            acc += x[i] * y[i]
        partials[blk] = acc
    total = 0.0
    for blk in range(nb):
        total += partials[blk]
    return total


def dot_blocks(n: int) -> int:
    return max(1, -(-n // _DOT_BLOCK))


@njit(parallel=True, **_OPTS)
def axpy(alpha, x, y):
    for i in prange(y.shape[0]):
        y[i] += alpha * x[i]


@njit(parallel=True, **_OPTS)
def xpay(x, beta, y):
    """``y <- x + beta * y``."""
    for i in prange(y.shape[0]):
        y[i] = x[i] + beta * y[i]


def empty_counts() -> np.ndarray:
    return np.zeros(0, dtype=np.int64)
