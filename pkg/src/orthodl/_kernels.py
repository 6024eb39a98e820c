"""Compiled inner loops for batched subgradient descent.

Every kernel treats the columns of its (n, B) arguments as independent runs
and performs exactly the same floating point operations for a column no
matter how many other columns share the batch. That is what makes batched
solves bitwise identical to one-at-a-time solves.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def sparse_value_grad(indptr, indices, data, tau, Q, G, f, z):
    """Unscaled objective sums and sign-sums for sparse samples.

    The samples are stored CSC-style: sample i has entries
    ``data[indptr[i]:indptr[i+1]]`` at rows ``indices[...]``. On return
    ``f[b] = sum_i |q_b^T y_i|`` and ``G[:, b] = sum_i s_ib y_i`` where
    ``s_ib`` is the sign of ``q_b^T y_i`` with zero below ``tau[i]``.
    """
    n, B = Q.shape
    m = indptr.shape[0] - 1
    for r in range(n):
        for b in range(B):
            G[r, b] = 0.0
    for b in range(B):
        f[b] = 0.0
    for i in range(m):
        for b in range(B):
            z[b] = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            d = data[p]
            row = indices[p]
            for b in range(B):
                z[b] += d * Q[row, b]
        t = tau[i]
        for b in range(B):
            a = abs(z[b])
            f[b] += a
            if a <= t:
                z[b] = 0.0
            elif z[b] > 0.0:
                z[b] = 1.0
            else:
                z[b] = -1.0
        for p in range(indptr[i], indptr[i + 1]):
            d = data[p]
            row = indices[p]
            for b in range(B):
                G[row, b] += z[b] * d


@njit(cache=True)
def sign_pass(Z, tau, f):
    """In place: ``Z[i, b] <- sign(Z[i, b])`` (zero below tau[i]); ``f[b] = sum_i |Z[i, b]|``."""
    m, B = Z.shape
    for b in range(B):
        f[b] = 0.0
    for i in range(m):
        t = tau[i]
        for b in range(B):
            v = Z[i, b]
            a = abs(v)
            f[b] += a
            if a <= t:
                Z[i, b] = 0.0
            elif v > 0.0:
                Z[i, b] = 1.0
            else:
                Z[i, b] = -1.0


@njit(cache=True)
def tangent_project(Q, G, active, gnorm):
    """Replace G[:, b] by (I - q q^T) G[:, b] and store its norm, for active b."""
    n, B = Q.shape
    for b in range(B):
        if not active[b]:
            continue
        s = 0.0
        for r in range(n):
            s += Q[r, b] * G[r, b]
        ss = 0.0
        for r in range(n):
            v = G[r, b] - s * Q[r, b]
            G[r, b] = v
            ss += v * v
        gnorm[b] = np.sqrt(ss)


@njit(cache=True)
def retract_step(Q, V, eta, active, gnorm):
    """q <- (q - eta v) / ||q - eta v|| for active columns.

    Returns the largest relative deviation from the identity
    ||q - eta v||^2 = 1 + eta^2 ||v||^2 seen in the batch.
    """
    n, B = Q.shape
    worst = 0.0
    for b in range(B):
        if not active[b]:
            continue
        ss = 0.0
        for r in range(n):
            v = Q[r, b] - eta * V[r, b]
            Q[r, b] = v
            ss += v * v
        expect = 1.0 + eta * eta * gnorm[b] * gnorm[b]
        dev = abs(ss - expect) / expect
        if dev > worst:
            worst = dev
        nrm = np.sqrt(ss)
        for r in range(n):
            Q[r, b] /= nrm
    return worst
