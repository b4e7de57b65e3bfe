# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the training hot kernels (see _ref.py for the contract)."""

import numpy as np

cimport cython
from libc.math cimport sqrt


def pool_forward(int[::1] gids, int[::1] counts, double[:, ::1] emb, double[:, ::1] out):
    cdef Py_ssize_t n_seg = counts.shape[0]
    cdef Py_ssize_t dim = emb.shape[1]
    cdef Py_ssize_t s, d, c, k
    cdef Py_ssize_t pos = 0
    cdef int row
    with nogil:
        for s in range(n_seg):
            for d in range(dim):
                out[s, d] = 0.0
            c = counts[s]
            for k in range(c):
                row = gids[pos]
                for d in range(dim):
                    out[s, d] += emb[row, d]
                pos += 1


def pool_backward(int[::1] gids, int[::1] counts, double[:, ::1] dpooled, double[:, ::1] demb):
    cdef Py_ssize_t n_seg = counts.shape[0]
    cdef Py_ssize_t dim = demb.shape[1]
    cdef Py_ssize_t s, d, c, k
    cdef Py_ssize_t pos = 0
    cdef int row
    with nogil:
        for s in range(n_seg):
            c = counts[s]
            for k in range(c):
                row = gids[pos]
                for d in range(dim):
                    demb[row, d] += dpooled[s, d]
                pos += 1


def adam_dense(double[::1] param, double[::1] grad, double[::1] m, double[::1] v,
               double lr, double beta1, double beta2, double eps, double bc1, double bc2):
    cdef Py_ssize_t n = param.shape[0]
    cdef Py_ssize_t i
    cdef double g
    with nogil:
        for i in range(n):
            g = grad[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
            param[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)


def adam_rows(double[:, ::1] param, double[:, ::1] grad, double[:, ::1] m, double[:, ::1] v,
              long[::1] rows, double lr, double beta1, double beta2, double eps,
              double bc1, double bc2):
    cdef Py_ssize_t n_rows = rows.shape[0]
    cdef Py_ssize_t dim = param.shape[1]
    cdef Py_ssize_t i, d
    cdef long r
    cdef double g
    with nogil:
        for i in range(n_rows):
            r = rows[i]
            for d in range(dim):
                g = grad[r, d]
                m[r, d] = beta1 * m[r, d] + (1.0 - beta1) * g
                v[r, d] = beta2 * v[r, d] + (1.0 - beta2) * g * g
                param[r, d] -= lr * (m[r, d] / bc1) / (sqrt(v[r, d] / bc2) + eps)
