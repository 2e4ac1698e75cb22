# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: CSR-times-dense products and stationary-bootstrap index fill."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def csr_matmat(const cnp.int32_t[::1] indptr, const cnp.int32_t[::1] indices,
               const double[::1] data, const double[:, ::1] dense):
    """Return ``A @ dense`` for ``A`` given in CSR form."""
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t n_cols = dense.shape[1]
    out_arr = np.zeros((n_rows, n_cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, k, c, j
    cdef double w
    with nogil:
        for i in range(n_rows):
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                w = data[k]
                for c in range(n_cols):
                    out[i, c] += w * dense[j, c]
    return out_arr


def stationary_fill(const cnp.int64_t[::1] starts, const cnp.int64_t[::1] lengths,
                    Py_ssize_t n_time):
    """Concatenate wrapped blocks ``start, start+1, ...`` and truncate to ``n_time``."""
    out_arr = np.empty(n_time, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef Py_ssize_t pos = 0, b = 0, m
    cdef cnp.int64_t t
    with nogil:
        while pos < n_time:
            t = starts[b]
            for m in range(lengths[b]):
                if pos >= n_time:
                    break
                out[pos] = t
                pos += 1
                t += 1
                if t >= n_time:
                    t = 0
            b += 1
    return out_arr
