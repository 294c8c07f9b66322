"""SPD and biorthogonal manifold geometry, plus Riemannian Adam.

Matrix functions (exp, log, sqrt of symmetric matrices) go through a
symmetric eigendecomposition with eigenvalue clamping at 1e-12 for log
and sqrt, which is robust at the matrix sizes used here (n <= ~64).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SYM_TOL = 1e-10
EIG_CLAMP = 1e-12


class ManifoldError(ValueError):
    pass


def sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def check_spd(mat: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate the SPD invariants: relative symmetry and positive spectrum."""
    mat = np.asarray(mat, dtype=np.float64)
    nrm = np.linalg.norm(mat)
    if nrm > 0 and np.linalg.norm(mat - mat.T) > SYM_TOL * max(nrm, 1.0):
        raise ManifoldError(f"{name} is not symmetric to tolerance")
    w = np.linalg.eigvalsh(sym(mat))
    if w.min() <= 0.0:
        raise ManifoldError(f"{name} is not positive definite (min eig {w.min():.3e})")
    return mat


def check_symmetric(mat: np.ndarray, name: str = "tangent") -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    nrm = np.linalg.norm(mat)
    if nrm > 0 and np.linalg.norm(mat - mat.T) > SYM_TOL * max(nrm, 1.0):
        raise ManifoldError(f"{name} is not symmetric to tolerance")
    return mat


def _eig_apply(mat: np.ndarray, fn) -> np.ndarray:
    w, v = np.linalg.eigh(sym(mat))
    return (v * fn(w)) @ v.T


def sym_expm(mat: np.ndarray) -> np.ndarray:
    return _eig_apply(mat, np.exp)


def sym_logm(mat: np.ndarray) -> np.ndarray:
    return _eig_apply(mat, lambda w: np.log(np.clip(w, EIG_CLAMP, None)))


def sym_sqrtm(mat: np.ndarray) -> np.ndarray:
    return _eig_apply(mat, lambda w: np.sqrt(np.clip(w, EIG_CLAMP, None)))


def sym_invsqrtm(mat: np.ndarray) -> np.ndarray:
    return _eig_apply(mat, lambda w: 1.0 / np.sqrt(np.clip(w, EIG_CLAMP, None)))


# ---------------------------------------------------------------------------
# SPD manifold with the affine-invariant metric


def spd_exp(m0: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Exponential map at ``m0``: M0^{1/2} exp(M0^{-1/2} Xi M0^{-1/2}) M0^{1/2}."""
    r = sym_sqrtm(m0)
    rinv = sym_invsqrtm(m0)
    return sym(r @ sym_expm(rinv @ xi @ rinv) @ r)


def spd_log(m0: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`spd_exp` at ``m0``."""
    r = sym_sqrtm(m0)
    rinv = sym_invsqrtm(m0)
    return sym(r @ sym_logm(rinv @ m @ rinv) @ r)


def aim_distance(m1: np.ndarray, m2: np.ndarray) -> float:
    """Affine-invariant distance ||log(M1^{-1/2} M2 M1^{-1/2})||_F."""
    rinv = sym_invsqrtm(m1)
    return float(np.linalg.norm(sym_logm(rinv @ m2 @ rinv)))


def spd_riemannian_grad(m: np.ndarray, euclidean_grad: np.ndarray) -> np.ndarray:
    """Project a Euclidean gradient to the AIM tangent space: M sym(G) M."""
    return m @ sym(euclidean_grad) @ m


def spd_retract(m: np.ndarray, step: np.ndarray) -> np.ndarray:
    """Exact-exponential retraction."""
    return spd_exp(m, step)


def spd_vector_transport(src: np.ndarray, dst: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Isometric transport for AIM: conjugation by E = (dst src^{-1})^{1/2}."""
    e = sym_sqrtm(dst) @ sym_invsqrtm(src)
    return sym(e @ v @ e.T)


# ---------------------------------------------------------------------------
# biorthogonal manifold


def biorth_retract(raw_phi: np.ndarray, raw_psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One-sided retraction onto {Psi^T Phi = I}: Psi <- Psi (Psi^T Phi)^{-T}."""
    gram = raw_psi.T @ raw_phi
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > 1e12:
        raise ManifoldError(f"biorthogonal retraction failed: cross-Gram condition {cond:.3e}")
    psi = np.linalg.solve(gram, raw_psi.T).T
    return raw_phi.copy(), psi


def biorth_residual(phi: np.ndarray, psi: np.ndarray) -> float:
    r = psi.T @ phi - np.eye(phi.shape[1])
    return float(np.linalg.norm(r))


def biorth_init(rows: int, cols: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Initialize a pair as (Q, Q) from a QR factorization, so Psi^T Phi = I exactly."""
    q, _ = np.linalg.qr(rng.normal(size=(rows, cols)))
    return q.copy(), q.copy()


# ---------------------------------------------------------------------------
# Riemannian Adam

EUCLIDEAN = "euclidean"
SPD = "spd"
BIORTHOGONAL = "biorthogonal"


@dataclass
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class ManifoldParam:
    """One optimizer-managed parameter with its moment slots.

    ``value`` is an ndarray for euclidean/spd kinds and a (phi, psi) tuple for
    biorthogonal pairs. SPD first moments live in the tangent space at the
    current point; the SPD second moment is the transport-invariant scalar
    EMA of the squared Riemannian gradient norm.
    """

    kind: str
    value: object
    step_count: int = 0
    m1: object = None
    m2: object = None

    def __post_init__(self):
        if self.kind not in (EUCLIDEAN, SPD, BIORTHOGONAL):
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if self.m1 is None:
            if self.kind == BIORTHOGONAL:
                phi, psi = self.value
                self.m1 = (np.zeros_like(phi), np.zeros_like(psi))
                self.m2 = (np.zeros_like(phi), np.zeros_like(psi))
            elif self.kind == SPD:
                self.m1 = np.zeros_like(self.value)
                self.m2 = 0.0
            else:
                self.m1 = np.zeros_like(self.value)
                self.m2 = np.zeros_like(self.value)


def _adam_direction(m1, m2, t, hyper: AdamHyper):
    bc1 = 1.0 - hyper.beta1**t
    bc2 = 1.0 - hyper.beta2**t
    return (m1 / bc1) / (np.sqrt(m2 / bc2) + hyper.eps)


def riemannian_adam_step(param: ManifoldParam, euclidean_grad, hyper: AdamHyper) -> ManifoldParam:
    """One Adam step keeping the parameter on its manifold (in place)."""
    b1, b2 = hyper.beta1, hyper.beta2
    param.step_count += 1
    t = param.step_count

    if param.kind == EUCLIDEAN:
        g = np.asarray(euclidean_grad)
        if g.shape != np.shape(param.value):
            raise ValueError(f"gradient shape {g.shape} != param shape {np.shape(param.value)}")
        param.m1 = b1 * param.m1 + (1 - b1) * g
        param.m2 = b2 * param.m2 + (1 - b2) * g * g
        step = _adam_direction(param.m1, param.m2, t, hyper)
        # decoupled weight decay
        param.value = param.value - hyper.lr * step - hyper.lr * hyper.weight_decay * param.value
        return param

    if param.kind == SPD:
        rgrad = spd_riemannian_grad(param.value, np.asarray(euclidean_grad))
        param.m1 = b1 * param.m1 + (1 - b1) * rgrad
        param.m2 = b2 * param.m2 + (1 - b2) * float(np.sum(rgrad * rgrad))
        step = _adam_direction(param.m1, param.m2, t, hyper)
        new_point = spd_retract(param.value, -hyper.lr * step)
        param.m1 = spd_vector_transport(param.value, new_point, param.m1)
        param.value = new_point
        return param

    # biorthogonal: Euclidean Adam on (phi, psi), then retract
    phi, psi = param.value
    gphi, gpsi = euclidean_grad
    m1p, m1s = param.m1
    m2p, m2s = param.m2
    m1p = b1 * m1p + (1 - b1) * gphi
    m1s = b1 * m1s + (1 - b1) * gpsi
    m2p = b2 * m2p + (1 - b2) * gphi * gphi
    m2s = b2 * m2s + (1 - b2) * gpsi * gpsi
    raw_phi = phi - hyper.lr * _adam_direction(m1p, m2p, t, hyper)
    raw_psi = psi - hyper.lr * _adam_direction(m1s, m2s, t, hyper)
    param.m1 = (m1p, m1s)
    param.m2 = (m2p, m2s)
    param.value = biorth_retract(raw_phi, raw_psi)
    return param


class RiemannianAdam:
    """Adam over a dict of :class:`ManifoldParam`.

    Weight decay only applies to Euclidean parameters; shrinkage has no
    meaning on the SPD or biorthogonal manifolds.
    """

    def __init__(self, params: dict[str, ManifoldParam], hyper: AdamHyper):
        self.params = params
        self.hyper = hyper

    def step(self, grads: dict[str, object]) -> None:
        for name, param in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            riemannian_adam_step(param, g, self.hyper)
