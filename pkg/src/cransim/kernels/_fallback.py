"""Pure-NumPy versions of the interpolation kernels.

Same semantics as the compiled core; processed in chunks to bound the
memory used by the (n_out, n_taps) gather matrices.
"""

import numpy as np

_CHUNK = 16384


def _gather(x, base, n_taps):
    idx = base[:, None] + np.arange(n_taps)[None, :]
    valid = (idx >= 0) & (idx < x.size)
    vals = np.where(valid, x[np.clip(idx, 0, max(x.size - 1, 0))], 0.0)
    return vals


def sinc_interp(x, pos, table):
    x = np.asarray(x, dtype=np.complex128)
    pos = np.asarray(pos, dtype=np.float64)
    n_phase = table.shape[0] - 1
    n_taps = table.shape[1]
    half = n_taps // 2
    out = np.zeros(pos.size, dtype=np.complex128)
    if x.size == 0:
        return out
    for lo in range(0, pos.size, _CHUNK):
        p = pos[lo:lo + _CHUNK]
        k = np.floor(p).astype(np.int64)
        f = (p - k) * n_phase
        i0 = np.minimum(f.astype(np.int64), n_phase - 1)
        w = (f - i0)[:, None]
        coef = table[i0] + w * (table[i0 + 1] - table[i0])
        vals = _gather(x, k - half + 1, n_taps)
        out[lo:lo + _CHUNK] = np.einsum("ij,ij->i", coef, vals)
    return out


def farrow(x, coeffs, start, step, n_out):
    x = np.asarray(x, dtype=np.complex128)
    n_taps, n_coef = coeffs.shape
    half = n_taps // 2
    out = np.zeros(int(n_out), dtype=np.complex128)
    if x.size == 0:
        return out
    for lo in range(0, out.size, _CHUNK):
        m = np.arange(lo, min(lo + _CHUNK, out.size), dtype=np.float64)
        p = start + m * step
        k = np.floor(p).astype(np.int64)
        mu = p - k
        vals = _gather(x, k - half + 1, n_taps)
        branches = vals @ coeffs  # (n, order+1) subfilter outputs
        acc = branches[:, -1]
        for q in range(n_coef - 2, -1, -1):
            acc = acc * mu + branches[:, q]
        out[lo:lo + acc.size] = acc
    return out
