"""Hot assembly kernels, JIT-compiled when numba is available.

The element tangent contraction dominates assembly cost; the fused loop
keeps each quadrature point's intermediate in cache instead of streaming
batched small matrix products through memory.  A pure-numpy fallback with
identical semantics is used when numba is missing.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap


@njit(cache=True, fastmath=True)
def _tangent_contract_jit(Dh, w, theta, zmap, scale, K):
    """K[b,(l c),(m k)] += scale * sum_q w[b,q] D^T Theta D at each point.

    ``Dh`` holds the 12 derivative signatures per local basis function,
    ``theta`` the 36x36 per-point stress tangent, ``zmap`` the (component,
    signature) -> state-index table.
    """
    nb, nqp = Dh.shape[0], Dh.shape[1]
    X = np.empty((27, 3, 3, 12))
    Tg = np.empty((12, 3, 3, 12))
    for b in range(nb):
        for q in range(nqp):
            ws = w[b, q] * scale
            D = Dh[b, q]
            T = theta[b, q]
            for s in range(12):
                for c in range(3):
                    zc = zmap[c, s]
                    for k in range(3):
                        for t in range(12):
                            Tg[s, c, k, t] = T[zc, zmap[k, t]]
            for l in range(27):
                for c in range(3):
                    for k in range(3):
                        for t in range(12):
                            acc = 0.0
                            for s in range(12):
                                acc += D[l, s] * Tg[s, c, k, t]
                            X[l, c, k, t] = acc
            for l in range(27):
                for c in range(3):
                    row = l * 3 + c
                    for m in range(27):
                        for k in range(3):
                            acc = 0.0
                            for t in range(12):
                                acc += X[l, c, k, t] * D[m, t]
                            K[b, row, m * 3 + k] += ws * acc
    return K


# flat gather indices reordering a 36x36 tangent into (s, c, k, t) layout
def _gather_indices(zmap):
    out = np.empty(12 * 3 * 3 * 12, dtype=np.int64)
    for s in range(12):
        for c in range(3):
            for k in range(3):
                for t in range(12):
                    out[((s * 3 + c) * 3 + k) * 12 + t] = (
                        zmap[c, s] * 36 + zmap[k, t]
                    )
    return out


def _tangent_contract_numpy(Dh, w, theta, zmap, scale, K):
    nb, nqp = Dh.shape[0], Dh.shape[1]
    N = nb * nqp
    th = theta.reshape(N, 36 * 36)[:, _gather_indices(zmap)]
    Dhw = (Dh * w[:, :, None, None]).reshape(N, 27, 12)
    X = np.matmul(Dhw, th.reshape(N, 12, 9 * 12))
    Xs = np.ascontiguousarray(
        X.reshape(nb, nqp, 27, 3, 3, 12).transpose(0, 4, 2, 3, 1, 5)
    ).reshape(nb, 3 * 81, nqp * 12)
    right = np.ascontiguousarray(Dh.transpose(0, 1, 3, 2)).reshape(
        nb, nqp * 12, 27
    )
    Y = np.matmul(Xs, right)
    K += scale * np.ascontiguousarray(
        Y.reshape(nb, 3, 81, 27).transpose(0, 2, 3, 1)
    ).reshape(nb, 81, 81)
    return K


def tangent_contract(Dh, w, theta, zmap, scale, K):
    if HAVE_NUMBA:
        return _tangent_contract_jit(Dh, w, theta, zmap, scale, K)
    return _tangent_contract_numpy(Dh, w, theta, zmap, scale, K)
