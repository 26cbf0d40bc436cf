# cython: boundscheck=False, wraparound=False, cdivision=True
"""Cython implementation of the Jacobian-assembly kernel.

Element-wise form of the power-injection partials:
    Ibus_i      = sum_k Y_ik V_k
    dS/dVa[i,k] = 1j * V_i * conj(d_ik * Ibus_i - Y_ik * V_k)
    dS/dVm[i,k] = V_i * conj(Y_ik * V_k / |V_k|) + d_ik * conj(Ibus_i) * V_i / |V_i|
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def dSbus_dV(cnp.ndarray[cnp.complex128_t, ndim=2] ybus,
             cnp.ndarray[cnp.complex128_t, ndim=1] v):
    cdef Py_ssize_t n = v.shape[0]
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] ibus = np.empty(n, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] ds_dva = np.empty((n, n), dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] ds_dvm = np.empty((n, n), dtype=np.complex128)
    cdef Py_ssize_t i, k
    cdef double complex acc, vi, yv, term
    cdef double vmag

    for i in range(n):
        acc = 0
        for k in range(n):
            acc = acc + ybus[i, k] * v[k]
        ibus[i] = acc

    for i in range(n):
        vi = v[i]
        for k in range(n):
            yv = ybus[i, k] * v[k]
            if i == k:
                term = ibus[i] - yv
            else:
                term = -yv
            ds_dva[i, k] = 1j * vi * term.conjugate()
            vmag = abs(v[k])
            ds_dvm[i, k] = vi * (yv / vmag).conjugate()
            if i == k:
                ds_dvm[i, k] = ds_dvm[i, k] + ibus[i].conjugate() * vi / abs(vi)

    return ds_dva, ds_dvm


IMPLEMENTATION = "cython"
