"""Pure-numpy implementations of the hot kernels.

Every function here mirrors a routine in ``_ckernels.pyx`` with the same
signature. The ``num_threads`` arguments are accepted and ignored.
"""
import numpy as np


def absorb(A1, B):
    """Solve ``(I - A1) X = B`` for strictly upper triangular ``A1``."""
    A1 = np.asarray(A1, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    M = A1.shape[0]
    out = np.empty_like(B)
    for s in range(M - 1, -1, -1):
        out[s] = B[s] + A1[s, s + 1:] @ out[s + 1:]
    return out


def project_simplex_columns(V):
    """Euclidean projection of every column of ``V`` onto the probability simplex."""
    V = np.asarray(V, dtype=np.float64)
    if V.ndim == 1:
        return project_simplex_columns(V[:, None])[:, 0]
    n = V.shape[0]
    U = -np.sort(-V, axis=0)
    css = np.cumsum(U, axis=0) - 1.0
    ind = np.arange(1, n + 1)[:, None]
    cond = U - css / ind > 0
    rho = np.count_nonzero(cond, axis=0)
    theta = css[rho - 1, np.arange(V.shape[1])] / rho
    return np.maximum(V - theta[None, :], 0.0)


def weighted_l1_cdist(X, Y, w, num_threads=1):
    """``out[i, j] = sum_v w[v] * |X[i, v] - Y[j, v]|``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    out = np.empty((X.shape[0], Y.shape[0]))
    for i in range(X.shape[0]):
        out[i] = np.abs(Y - X[i]) @ w
    return out


def seal_batch(E, w, D, num_threads=1):
    """Weighted-l1 losses and prediction subgradients for a batch of differences.

    ``E`` is the (rows x K) lifting matrix, ``D`` holds one difference
    ``prediction - target`` per row. Returns ``(losses, grad, signs)`` where
    ``signs[b] = sign(E @ D[b])`` with ``sign(0) = 0``.
    """
    E = np.asarray(E, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    Z = D @ E.T
    signs = np.sign(Z)
    losses = np.abs(Z) @ w
    grad = (signs * w) @ E
    return losses, grad, signs
