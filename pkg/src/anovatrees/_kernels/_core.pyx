# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled per-row tree kernels: one fused pass over the rows.

Semantics match _py exactly, including the order in which leverages are
multiplied, so both backends produce bit-identical output.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def row_cells(double[:, ::1] x, long[::1] cols, double[::1] splits,
              double[::1] levs):
    """Cell bitmask and height multiplier of every row for one tree."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = cols.shape[0]
    masks_arr = np.empty(n, dtype=np.uint32)
    mult_arr = np.empty(n, dtype=np.float64)
    cdef unsigned int[::1] masks = masks_arr
    cdef double[::1] mult = mult_arr
    cdef Py_ssize_t i, k
    cdef unsigned int m
    cdef double a
    with nogil:
        for i in range(n):
            m = 0
            a = 1.0
            for k in range(d):
                if x[i, cols[k]] > splits[k]:
                    m |= 1u << k
                    a *= levs[k]
            masks[i] = m
            mult[i] = a
    return masks_arr, mult_arr


def row_mults(double[:, ::1] x, long[::1] cols, double[::1] splits,
              double[::1] levs):
    """Height multiplier of every row (mask not needed: prediction path)."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d = cols.shape[0]
    mult_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] mult = mult_arr
    cdef Py_ssize_t i, k
    cdef double a
    with nogil:
        for i in range(n):
            a = 1.0
            for k in range(d):
                if x[i, cols[k]] > splits[k]:
                    a *= levs[k]
            mult[i] = a
    return mult_arr
