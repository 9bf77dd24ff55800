"""Pure-numpy versions of the compiled kernels in ``_ckernels.pyx``."""

import numpy as np


def stencil_matvec(diag, u, inv_a2, d, n, out=None):
    shape = (n,) * d
    uu = np.asarray(u, dtype=np.float64).reshape(shape)
    res = np.asarray(diag).reshape(shape) * uu
    for axis in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[axis] = slice(0, n - 1)
        hi[axis] = slice(1, n)
        lo, hi = tuple(lo), tuple(hi)
        res[lo] -= inv_a2 * uu[hi]
        res[hi] -= inv_a2 * uu[lo]
    res = res.reshape(-1)
    if out is None:
        return res
    out[:] = res
    return out


def sturm_count(diag, off, x):
    # Python loop; only the fallback path pays for it.
    off2 = off * off
    count = 0
    q = 0.0
    for i, di in enumerate(np.asarray(diag, dtype=np.float64)):
        if i == 0:
            q = di - x
        else:
            if q == 0.0:
                q = 1e-300
            q = di - x - off2 / q
        if q < 0.0:
            count += 1
    return count
