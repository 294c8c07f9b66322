"""Differentiable matrix functions built from autodiff primitives.

The SPD exponential-map reconstruction inside the geometric Hamiltonian model
must be differentiated (twice) w.r.t. network parameters and the base point.
Rather than wiring custom eigendecomposition backward rules, the matrix
exponential uses scaling-and-squaring with a Taylor polynomial and the
square-root factors use the coupled Newton-Schulz iteration: both are plain
compositions of matmul/add/scale, so gradients of any order fall out of the
tape.
"""
from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad

TAYLOR_TERMS = 14
NEWTON_SCHULZ_ITERS = 40


def _eye_like(n: int, batch_shape: tuple) -> ad.Variable:
    eye = np.eye(n)
    if batch_shape:
        eye = np.broadcast_to(eye, batch_shape + (n, n)).copy()
    return ad.Variable(eye)


def expm(a: ad.Variable) -> ad.Variable:
    """Matrix exponential of (batched) square matrices via scaling-and-squaring.

    Accuracy is set for symmetric matrices of moderate norm (the tangent
    images produced by the inertia network); the Taylor degree gives ~1e-16
    truncation error once the scaled norm is below 1/2.
    """
    a = ad._as_variable(a)
    n = a.value.shape[-1]
    batch = a.value.shape[:-2]
    norm = float(np.max(np.sqrt(np.sum(a.value**2, axis=(-2, -1))))) if a.value.size else 0.0
    s = max(0, int(math.ceil(math.log2(norm / 0.5))) if norm > 0.5 else 0)
    b = ad.mul(a, 0.5**s)

    # Horner evaluation of sum_{k<=K} B^k / k!
    eye = _eye_like(n, batch)
    acc = eye
    for k in range(TAYLOR_TERMS, 0, -1):
        acc = ad.add(eye, ad.mul(ad.matmul(b, acc), 1.0 / k))
    for _ in range(s):
        acc = ad.matmul(acc, acc)
    return acc


def sqrtm_invsqrtm(a: ad.Variable, iters: int = NEWTON_SCHULZ_ITERS) -> tuple[ad.Variable, ad.Variable]:
    """Coupled Newton-Schulz iteration for A^{1/2} and A^{-1/2}, A SPD.

    Normalizes by trace(A) (an upper bound on the largest eigenvalue for SPD
    input) so the iteration contracts. Quadratic convergence; the fixed
    iteration count is generous for the well-conditioned base points seen in
    training. Fully differentiable.
    """
    a = ad._as_variable(a)
    n = a.value.shape[-1]
    batch = a.value.shape[:-2]
    eye = _eye_like(n, batch)

    trace = ad.sum_(ad.mul(a, eye), axis=(-2, -1), keepdims=True)
    y = ad.div(a, trace)
    z = eye
    three_eye = ad.mul(eye, 3.0)
    for _ in range(iters):
        t = ad.mul(ad.sub(three_eye, ad.matmul(z, y)), 0.5)
        y = ad.matmul(y, t)
        z = ad.matmul(t, z)
    root_trace = ad.sqrt(trace)
    sqrt_a = ad.mul(y, root_trace)
    invsqrt_a = ad.div(z, root_trace)
    return sqrt_a, invsqrt_a


def spd_exp_map(m0: ad.Variable, xi: ad.Variable) -> ad.Variable:
    """Differentiable Exp_{M0}(Xi) = M0^{1/2} exp(M0^{-1/2} Xi M0^{-1/2}) M0^{1/2}."""
    r, rinv = sqrtm_invsqrtm(m0)
    inner = ad.matmul(ad.matmul(rinv, xi), rinv)
    return ad.matmul(ad.matmul(r, expm(inner)), r)


def sym_from_packed(raw: ad.Variable, n: int) -> ad.Variable:
    """Map n(n+1)/2 packed values to a symmetric (batched) n x n matrix."""
    tri = n * (n + 1) // 2
    if raw.value.shape[-1] != tri:
        raise ad.ShapeError(f"expected {tri} packed values for n={n}, got {raw.value.shape[-1]}")
    scatter = np.zeros((tri, n * n))
    k = 0
    for i in range(n):
        for j in range(i, n):
            scatter[k, i * n + j] = 1.0
            if i != j:
                scatter[k, j * n + i] = 1.0
            k += 1
    flat = ad.matmul(ad.reshape(raw, raw.value.shape[:-1] + (1, tri)), ad.Variable(scatter))
    return ad.reshape(flat, raw.value.shape[:-1] + (n, n))


def tril_from_packed(raw_diag: ad.Variable, raw_off: ad.Variable, n: int) -> ad.Variable:
    """Assemble a lower-triangular matrix from softplus-positive diagonal and raw off-diagonal parts."""
    diag_scatter = np.zeros((n, n * n))
    for i in range(n):
        diag_scatter[i, i * n + i] = 1.0
    off = n * (n - 1) // 2
    off_scatter = np.zeros((max(off, 1), n * n))
    k = 0
    for i in range(n):
        for j in range(i):
            off_scatter[k, i * n + j] = 1.0
            k += 1
    batch = raw_diag.value.shape[:-1]
    flat = ad.matmul(ad.reshape(raw_diag, batch + (1, n)), ad.Variable(diag_scatter))
    if off > 0:
        flat = ad.add(flat, ad.matmul(ad.reshape(raw_off, batch + (1, off)), ad.Variable(off_scatter)))
    return ad.reshape(flat, batch + (n, n))
