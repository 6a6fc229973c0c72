"""Symmetric banded matrices in LAPACK upper storage.

``ab[kd + i - j, j] = A[i, j]`` for ``j - kd <= i <= j``.
"""

import numpy as np
from scipy.linalg import LinAlgError
from scipy.linalg.blas import dsbmv
from scipy.linalg.lapack import dpbsv


def to_band(A, kd):
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    ab = np.zeros((kd + 1, n))
    for d in range(kd + 1):
        ab[kd - d, d:] = np.diagonal(A, d)
    return ab


def to_dense(ab):
    kd = ab.shape[0] - 1
    n = ab.shape[1]
    A = np.zeros((n, n))
    for d in range(kd + 1):
        v = ab[kd - d, d:]
        idx = np.arange(n - d)
        A[idx, idx + d] = v
        A[idx + d, idx] = v
    return A


def widen(ab, kd):
    """Re-store ``ab`` with a larger half-bandwidth ``kd``."""
    old = ab.shape[0] - 1
    if kd < old:
        raise ValueError("cannot narrow a band")
    out = np.zeros((kd + 1, ab.shape[1]))
    out[kd - old:] = ab
    return out


def matvec(ab, x):
    return dsbmv(ab.shape[0] - 1, 1.0, ab, x)


def add_block(ab, start, block):
    """Add the dense symmetric ``block`` at rows/cols ``start:start+len(block)``."""
    kd = ab.shape[0] - 1
    m = block.shape[0]
    for d in range(min(kd, m - 1) + 1):
        ab[kd - d, start + d:start + m] += np.diagonal(block, d)


def cholesky_solve(ab, rhs):
    """Solve ``A x = rhs`` for symmetric positive definite banded ``A``."""
    _, x, info = dpbsv(ab, rhs)
    if info > 0:
        raise LinAlgError(f"banded matrix not positive definite (leading minor {info})")
    if info < 0:
        raise ValueError(f"illegal argument {-info} to dpbsv")
    return x
