# cython: boundscheck=False, wraparound=False, cdivision=True
"""Fused elementwise kernels for the autodiff hot path.

Single pass over contiguous f64 buffers; avoids the intermediate
temporaries the numpy fallback allocates.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, expm1, log, log1p, tanh

cnp.import_array()

NAME = "compiled"


def tanh_fwd(cnp.ndarray x):
    cdef cnp.ndarray[double, ndim=1] xf = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(xf)
    cdef Py_ssize_t i, n = xf.shape[0]
    for i in range(n):
        out[i] = tanh(xf[i])
    return out.reshape(np.shape(x))


def tanh_bwd(cnp.ndarray y, cnp.ndarray g):
    cdef cnp.ndarray[double, ndim=1] yf = np.ascontiguousarray(y, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] gf = np.ascontiguousarray(g, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(yf)
    cdef Py_ssize_t i, n = yf.shape[0]
    for i in range(n):
        out[i] = gf[i] * (1.0 - yf[i] * yf[i])
    return out.reshape(np.shape(y))


def softplus_fwd(cnp.ndarray x):
    cdef cnp.ndarray[double, ndim=1] xf = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(xf)
    cdef Py_ssize_t i, n = xf.shape[0]
    cdef double v
    for i in range(n):
        v = xf[i]
        if v > 0.0:
            out[i] = v + log1p(exp(-v))
        else:
            out[i] = log1p(exp(v))
    return out.reshape(np.shape(x))


def softplus_bwd(cnp.ndarray x, cnp.ndarray g):
    cdef cnp.ndarray[double, ndim=1] xf = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] gf = np.ascontiguousarray(g, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(xf)
    cdef Py_ssize_t i, n = xf.shape[0]
    for i in range(n):
        out[i] = gf[i] * 0.5 * (1.0 + tanh(0.5 * xf[i]))
    return out.reshape(np.shape(x))


def elu_bij_fwd(cnp.ndarray x):
    cdef cnp.ndarray[double, ndim=1] xf = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(xf)
    cdef Py_ssize_t i, n = xf.shape[0]
    for i in range(n):
        out[i] = xf[i] if xf[i] >= 0.0 else expm1(xf[i])
    return out.reshape(np.shape(x))


INV_FLOOR = 1e-6  # C1 linear continuation below y = -1 + INV_FLOOR


def elu_bij_inv(cnp.ndarray y):
    cdef cnp.ndarray[double, ndim=1] yf = np.ascontiguousarray(y, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(yf)
    cdef Py_ssize_t i, n = yf.shape[0]
    cdef double lo = -1.0 + 1e-6
    cdef double v
    for i in range(n):
        v = yf[i]
        if v >= 0.0:
            out[i] = v
        elif v >= lo:
            out[i] = log1p(v)
        else:
            out[i] = log(1e-6) + (v - lo) / 1e-6
    return out.reshape(np.shape(y))


def elu_bij_bwd(cnp.ndarray x, cnp.ndarray g):
    cdef cnp.ndarray[double, ndim=1] xf = np.ascontiguousarray(x, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] gf = np.ascontiguousarray(g, dtype=np.float64).ravel()
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(xf)
    cdef Py_ssize_t i, n = xf.shape[0]
    for i in range(n):
        out[i] = gf[i] * (1.0 if xf[i] >= 0.0 else exp(xf[i]))
    return out.reshape(np.shape(x))
