"""Pure-Python fallbacks for :mod:`egpdgraph._kernels`."""
import numpy as np
from scipy import sparse


def csr_matmat(indptr, indices, data, dense):
    n_rows = len(indptr) - 1
    A = sparse.csr_matrix((data, indices, indptr), shape=(n_rows, dense.shape[0]))
    return np.asarray(A @ dense)


def stationary_fill(starts, lengths, n_time):
    blocks = []
    total = 0
    for start, length in zip(starts, lengths):
        blocks.append((start + np.arange(min(length, n_time - total))) % n_time)
        total += len(blocks[-1])
        if total >= n_time:
            break
    return np.concatenate(blocks).astype(np.int64)
