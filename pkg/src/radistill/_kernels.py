"""Compiled inner loops for grid lookups (weighted gather / scatter, hash corners)."""
from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def blend_forward(table, idx, w):
    m, c = idx.shape
    f = table.shape[1]
    out = np.zeros((m, f), dtype=table.dtype)
    for i in range(m):
        for k in range(c):
            row = idx[i, k]
            wk = w[i, k]
            for j in range(f):
                out[i, j] += wk * table[row, j]
    return out


@numba.njit(cache=True)
def blend_backward(idx, w, g, rows):
    m, c = idx.shape
    f = g.shape[1]
    out = np.zeros((rows, f), dtype=g.dtype)
    for i in range(m):
        for k in range(c):
            row = idx[i, k]
            wk = w[i, k]
            for j in range(f):
                out[row, j] += wk * g[i, j]
    return out


@numba.njit(cache=True)
def hash_corners(u, res, table_size, p0, p1, p2):
    """Flat table rows (N, L, 8) and trilinear weights for unit coords ``u``."""
    n = u.shape[0]
    levels = res.shape[0]
    mask = np.uint32(table_size - 1)
    idx = np.empty((n, levels, 8), dtype=np.int64)
    w = np.empty((n, levels, 8), dtype=np.float64)
    for i in range(n):
        for lv in range(levels):
            r = res[lv]
            px = u[i, 0] * r
            py = u[i, 1] * r
            pz = u[i, 2] * r
            bx = np.floor(px)
            by = np.floor(py)
            bz = np.floor(pz)
            fx = px - bx
            fy = py - by
            fz = pz - bz
            ix = np.uint32(np.int64(bx))
            iy = np.uint32(np.int64(by))
            iz = np.uint32(np.int64(bz))
            for c in range(8):
                ox = (c >> 2) & 1
                oy = (c >> 1) & 1
                oz = c & 1
                h = (np.uint32(ix + ox) * p0) ^ (np.uint32(iy + oy) * p1) ^ (np.uint32(iz + oz) * p2)
                idx[i, lv, c] = np.int64(h & mask) + lv * table_size
                wx = fx if ox else 1.0 - fx
                wy = fy if oy else 1.0 - fy
                wz = fz if oz else 1.0 - fz
                w[i, lv, c] = wx * wy * wz
    return idx, w
