"""Learnable dynamics models: baseline MLP and the four Hamiltonian variants.

Every Hamiltonian variant evaluates H on a batch and derives the vector field
(q_dot, p_dot) = (dH/dp, -dH/dq) by differentiating through the tape, so the
training losses built on the field can be differentiated once more w.r.t. the
parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import matfun
from .manifolds import EUCLIDEAN, SPD, ManifoldParam
from .nets import MLPSpec, init_mlp, mlp_forward

MODEL_KINDS = ("baseline-mlp", "vanilla-hnn", "double-head-hnn", "cholesky-hnn", "geo-hnn")

DEFAULT_HIDDEN = [128, 128]
DEFAULT_EPS_SYM = 1e-4
CHOLESKY_DIAG_FLOOR = 1e-6


class UnsupportedOperation(RuntimeError):
    pass


def symmetrize_shift(g: ad.Variable, eps: float) -> ad.Variable:
    """0.5 (G + G^T) + eps I, the double-head inertia post-processing."""
    g = ad._as_variable(g)
    n = g.value.shape[-1]
    eye = ad.Variable(np.eye(n) * eps)
    return ad.add(ad.mul(ad.add(g, ad.transpose(g)), 0.5), eye)


@dataclass
class DynamicsModel:
    """One of the five model families; see :data:`MODEL_KINDS`.

    ``params`` maps flat parameter names to manifold-aware slots the
    Riemannian optimizer updates in place.
    """

    kind: str
    dof: int
    hidden: list[int]
    activation: str
    seed: int
    eps_sym: float = DEFAULT_EPS_SYM
    params: dict[str, ManifoldParam] = field(default_factory=dict)
    specs: dict[str, MLPSpec] = field(default_factory=dict)

    # -- construction -------------------------------------------------------

    @classmethod
    def create(cls, kind: str, dof: int, hidden=None, activation: str = "tanh",
               seed: int = 0, eps_sym: float = DEFAULT_EPS_SYM) -> "DynamicsModel":
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}, expected one of {MODEL_KINDS}")
        hidden = list(hidden) if hidden is not None else list(DEFAULT_HIDDEN)
        model = cls(kind=kind, dof=dof, hidden=hidden, activation=activation,
                    seed=seed, eps_sym=eps_sym)
        n = dof
        tri = n * (n + 1) // 2
        if kind == "baseline-mlp":
            model.specs["f"] = MLPSpec([2 * n] + hidden + [2 * n], activation, seed)
        elif kind == "vanilla-hnn":
            model.specs["h"] = MLPSpec([2 * n] + hidden + [1], activation, seed)
        else:
            model.specs["v"] = MLPSpec([n] + hidden + [1], activation, seed)
            if kind == "double-head-hnn":
                model.specs["m"] = MLPSpec([n] + hidden + [n * n], activation, seed + 1)
            elif kind == "cholesky-hnn":
                model.specs["m"] = MLPSpec([n] + hidden + [tri], activation, seed + 1)
            elif kind == "geo-hnn":
                model.specs["m"] = MLPSpec([n] + hidden + [tri], activation, seed + 1)
                model.params["m0"] = ManifoldParam(SPD, np.eye(n))
        for name, spec in model.specs.items():
            model.params.update(init_mlp(spec, prefix=f"{name}."))
        return model

    # -- parameter plumbing --------------------------------------------------

    def make_pvars(self, tape: ad.Tape | None) -> dict[str, ad.Variable]:
        """Wrap parameters as Variables; tracked leaves when a tape is given."""
        out = {}
        for name, p in self.params.items():
            out[name] = tape.var(p.value) if tape is not None else ad.Variable(np.asarray(p.value))
        return out

    # -- forward -------------------------------------------------------------

    def inverse_inertia(self, qv: ad.Variable, pvars: dict[str, ad.Variable]) -> ad.Variable:
        """Batched M(q)^{-1} of shape (B, n, n) for the split-energy variants."""
        n = self.dof
        if self.kind == "double-head-hnn":
            raw = mlp_forward(self.specs["m"], pvars, qv, "m.")
            a = ad.reshape(raw, raw.value.shape[:-1] + (n, n))
            gram = ad.matmul(a, ad.transpose(a))
            return symmetrize_shift(gram, self.eps_sym)
        if self.kind == "cholesky-hnn":
            raw = mlp_forward(self.specs["m"], pvars, qv, "m.")
            diag = ad.add(ad.softplus(ad.slice_(raw, (Ellipsis, slice(0, n)))), CHOLESKY_DIAG_FLOOR)
            off = ad.slice_(raw, (Ellipsis, slice(n, None)))
            tril = matfun.tril_from_packed(diag, off, n)
            return ad.matmul(tril, ad.transpose(tril))
        if self.kind == "geo-hnn":
            raw = mlp_forward(self.specs["m"], pvars, qv, "m.")
            xi = matfun.sym_from_packed(raw, n)
            return matfun.spd_exp_map(pvars["m0"], xi)
        raise UnsupportedOperation(f"model kind {self.kind!r} has no inertia matrix")

    def hamiltonian_v(self, qv: ad.Variable, pv: ad.Variable, pvars: dict[str, ad.Variable]) -> ad.Variable:
        """H(q, p) for a batch; shape (B,)."""
        if self.kind == "baseline-mlp":
            raise UnsupportedOperation("hamiltonian unsupported for model kind 'baseline-mlp'")
        if self.kind == "vanilla-hnn":
            h = mlp_forward(self.specs["h"], pvars, ad.concat([qv, pv], axis=-1), "h.")
            return ad.reshape(h, h.value.shape[:-1])
        minv = self.inverse_inertia(qv, pvars)
        kinetic = ad.mul(ad.quadratic_form(pv, minv), 0.5)
        v = mlp_forward(self.specs["v"], pvars, qv, "v.")
        return ad.add(kinetic, ad.reshape(v, v.value.shape[:-1]))

    def vector_field_v(self, qv: ad.Variable, pv: ad.Variable, pvars: dict[str, ad.Variable],
                       create_graph: bool = True) -> tuple[ad.Variable, ad.Variable]:
        """(q_dot, p_dot) for a batch of tracked states."""
        if self.kind == "baseline-mlp":
            out = mlp_forward(self.specs["f"], pvars, ad.concat([qv, pv], axis=-1), "f.")
            n = self.dof
            qdot = ad.slice_(out, (Ellipsis, slice(0, n)))
            pdot = ad.slice_(out, (Ellipsis, slice(n, 2 * n)))
            return qdot, pdot
        h = self.hamiltonian_v(qv, pv, pvars)
        dq, dp = ad.grad(ad.sum_(h), [qv, pv], create_graph=create_graph)
        return dp, ad.neg(dq)


# ---------------------------------------------------------------------------
# numpy-level conveniences


def _batched(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


def hamiltonian_eval(model: DynamicsModel, q, p) -> np.ndarray | float:
    """Evaluate H(q, p); accepts a single state or a batch."""
    qb, single = _batched(q)
    pb, _ = _batched(p)
    if qb.shape[-1] != model.dof or pb.shape[-1] != model.dof:
        raise ad.ShapeError(f"state dims {qb.shape[-1]}/{pb.shape[-1]} != dof {model.dof}")
    pvars = model.make_pvars(None)
    h = model.hamiltonian_v(ad.Variable(qb), ad.Variable(pb), pvars)
    return float(h.value[0]) if single else h.value


def time_derivatives(model: DynamicsModel, q, p) -> tuple[np.ndarray, np.ndarray]:
    """(q_dot, p_dot) as arrays; accepts a single state or a batch."""
    qb, single = _batched(q)
    pb, _ = _batched(p)
    tape = ad.Tape()
    qv, pv = tape.var(qb), tape.var(pb)
    pvars = model.make_pvars(None)
    qdot, pdot = model.vector_field_v(qv, pv, pvars, create_graph=False)
    if single:
        return qdot.value[0], pdot.value[0]
    return qdot.value, pdot.value
