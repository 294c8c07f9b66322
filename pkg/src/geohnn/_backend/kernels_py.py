"""Pure-numpy implementations of the elementwise hot kernels.

These mirror the signatures of the compiled module exactly; the backend
selector picks one of the two at import time.
"""
import numpy as np

NAME = "python"


def tanh_fwd(x):
    return np.tanh(x)


def tanh_bwd(y, g):
    # y is the forward output, g the incoming adjoint
    return g * (1.0 - y * y)


def softplus_fwd(x):
    return np.logaddexp(0.0, x)


def softplus_bwd(x, g):
    return g * 0.5 * (1.0 + np.tanh(0.5 * x))


def elu_bij_fwd(x):
    out = np.where(x >= 0.0, x, np.expm1(x))
    return out


INV_FLOOR = 1e-6  # C1 linear continuation below y = -1 + INV_FLOOR


def elu_bij_inv(y):
    lo = -1.0 + INV_FLOOR
    safe = np.clip(y, lo, None)
    out = np.where(y >= 0.0, y, np.log1p(safe))
    return np.where(y < lo, np.log(INV_FLOOR) + (y - lo) / INV_FLOOR, out)


def elu_bij_bwd(x, g):
    return g * np.where(x >= 0.0, 1.0, np.exp(x))
