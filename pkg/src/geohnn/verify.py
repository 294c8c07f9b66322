"""Self-check property suite behind the ``verify`` CLI subcommand.

Each property measures a quantity, compares it against a bound, and reports
a row of the table. The whole suite is designed to run in seconds on a fresh
checkout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import manifolds as mf
from . import matfun
from . import systems as sy
from . import training as tr
from .autoencoders import ConstrainedAutoencoder
from .models import DynamicsModel, symmetrize_shift, time_derivatives, hamiltonian_eval


@dataclass
class PropertyResult:
    name: str
    passed: bool
    measured: float
    bound: float
    detail: str = ""

    def row(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<38} {status:<6} measured={self.measured:.3e}  bound={self.bound:.3e}  {self.detail}"


def _result(name, measured, bound, detail="", larger_is_better=False):
    ok = measured >= bound if larger_is_better else measured <= bound
    return PropertyResult(name, bool(ok), float(measured), float(bound), detail)


# ---------------------------------------------------------------------------
# individual properties


def prop_grad_first_order():
    def f(x):
        return np.sum(np.tanh(x) ** 2 + 0.3 * x)

    def f_var(xv):
        return ad.sum_(ad.add(ad.square(ad.tanh(xv)), ad.mul(xv, 0.3)))

    x = np.linspace(-2, 2, 7)
    err = ad.check_grad(f_var, x)
    return _result("autodiff/first-order-vs-fd", err, 1e-6)


def prop_grad_second_order():
    tape = ad.Tape()
    xv = tape.var(np.array([2.0]))
    y = ad.mul(ad.mul(xv, xv), xv)
    (g,) = ad.grad(ad.sum_(y), [xv], create_graph=True)
    (g2,) = ad.grad(ad.sum_(g), [xv])
    return _result("autodiff/second-order-cubic", abs(g2.value[0] - 12.0), 1e-12)


def prop_grad_through_hamilton():
    rng = np.random.default_rng(5)
    batch = {"q": rng.normal(size=(2, 2)), "p": rng.normal(size=(2, 2)),
             "dq": rng.normal(size=(2, 2)), "dp": rng.normal(size=(2, 2))}
    worst = 0.0
    for kind in ("vanilla-hnn", "geo-hnn"):
        model = DynamicsModel.create(kind, dof=2, hidden=[6, 6], seed=1)
        tape = ad.Tape()
        pv = model.make_pvars(tape)
        pv["__tape__"] = tape
        loss = tr._derivative_matching_v(model, pv, batch)
        name = "h.W0" if kind == "vanilla-hnn" else "v.W0"
        g = ad.grad(loss, [pv[name]])[0].value
        eps = 1e-6
        base = model.params[name].value.copy()
        model.params[name].value = base + eps * (np.arange(base.size).reshape(base.shape) == 0)
        lp = tr.loss_derivative_matching(model, batch).total
        model.params[name].value = base - eps * (np.arange(base.size).reshape(base.shape) == 0)
        lm = tr.loss_derivative_matching(model, batch).total
        model.params[name].value = base
        fd = (lp - lm) / (2 * eps)
        worst = max(worst, abs(fd - g.flat[0]) / max(1e-12, abs(fd)))
    return _result("training/grad-through-hamilton-vs-fd", worst, 1e-4)


def spd_closure_double_head(eps=None, head=None):
    """Min eigenvalue of the double-head inertia output vs its floor.

    ``eps`` and ``head`` exist for fault-injection tests: a negative-definite
    head with eps=0 must make this property fail.
    """
    eps = 1e-4 if eps is None else eps
    rng = np.random.default_rng(2)
    worst = np.inf
    heads = [head] if head is not None else [rng.normal(size=(4, 4)) for _ in range(20)]
    for g in heads:
        if head is None:
            g = g @ g.T  # the model head always emits a Gram matrix
        out = symmetrize_shift(ad.Variable(g), eps).value
        worst = min(worst, float(np.linalg.eigvalsh(out).min()))
    return _result("spd/double-head-min-eig", worst, eps - 1e-12, larger_is_better=True)


def prop_spd_closure_cholesky():
    rng = np.random.default_rng(3)
    model = DynamicsModel.create("cholesky-hnn", dof=3, hidden=[8, 8], seed=0)
    q = rng.normal(size=(10, 3))
    minv = model.inverse_inertia(ad.Variable(q), model.make_pvars(None)).value
    worst = min(float(np.linalg.eigvalsh(m).min()) for m in minv)
    return _result("spd/cholesky-min-eig", worst, 0.0, larger_is_better=True)


def prop_spd_closure_geo():
    rng = np.random.default_rng(4)
    model = DynamicsModel.create("geo-hnn", dof=3, hidden=[8, 8], seed=0)
    model.params["m0"].value = mf.sym(np.eye(3) + 0.2 * rng.normal(size=(3, 3)) @ np.eye(3))
    model.params["m0"].value = model.params["m0"].value @ model.params["m0"].value.T + 0.1 * np.eye(3)
    q = rng.normal(size=(10, 3))
    minv = model.inverse_inertia(ad.Variable(q), model.make_pvars(None)).value
    worst = min(float(np.linalg.eigvalsh(m).min()) for m in minv)
    return _result("spd/geo-exp-map-min-eig", worst, 0.0, larger_is_better=True)


def prop_spd_exp_log_roundtrip():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(4, 4))
    m0 = a @ a.T + 0.5 * np.eye(4)
    xi = mf.sym(rng.normal(size=(4, 4)))
    back = mf.spd_log(m0, mf.spd_exp(m0, xi))
    return _result("spd/exp-log-roundtrip", float(np.abs(back - xi).max()), 1e-8)


def prop_aim_distance_axioms():
    rng = np.random.default_rng(7)
    mats = []
    for _ in range(3):
        a = rng.normal(size=(3, 3))
        mats.append(a @ a.T + 0.3 * np.eye(3))
    m1, m2, _ = mats
    sym_err = abs(mf.aim_distance(m1, m2) - mf.aim_distance(m2, m1))
    self_err = mf.aim_distance(m1, m1)
    return _result("spd/aim-distance-axioms", max(sym_err, self_err), 1e-9)


def prop_matrix_functions():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(3, 3))
    m = a @ a.T + 0.5 * np.eye(3)
    xi = mf.sym(rng.normal(size=(3, 3)) * 0.5)
    e_taylor = matfun.expm(ad.Variable(xi)).value
    e_ref = mf.sym_expm(xi)
    s, si = matfun.sqrtm_invsqrtm(ad.Variable(m))
    err = max(float(np.abs(e_taylor - e_ref).max()),
              float(np.abs(s.value @ s.value - m).max()),
              float(np.abs(s.value @ si.value - np.eye(3)).max()))
    return _result("matfun/expm-sqrtm-vs-eigh", err, 1e-10)


def prop_biorth_retraction():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(10):
        phi = rng.normal(size=(6, 2))
        psi = rng.normal(size=(6, 2))
        phi2, psi2 = mf.biorth_retract(phi, psi)
        worst = max(worst, mf.biorth_residual(phi2, psi2))
    return _result("biorth/retraction-residual", worst, 1e-12)


def prop_biorth_adam_persistence(steps=200):
    rng = np.random.default_rng(10)
    param = mf.ManifoldParam(mf.BIORTHOGONAL, mf.biorth_init(6, 2, rng))
    hyper = mf.AdamHyper(lr=1e-2)
    target = rng.normal(size=(6, 2))
    for _ in range(steps):
        phi, psi = param.value
        mf.riemannian_adam_step(param, (phi - target, psi + 0.1 * target), hyper)
    return _result("biorth/residual-after-adam", mf.biorth_residual(*param.value), 1e-8,
                   detail=f"{steps} steps")


def prop_ae_latent_roundtrip():
    rng = np.random.default_rng(11)
    ae = ConstrainedAutoencoder([8, 5, 3], seed=3)
    # nudge the pairs off their initialization, then retract
    for name, p in ae.params.items():
        if p.kind == mf.BIORTHOGONAL:
            phi, psi = p.value
            p.value = mf.biorth_retract(phi + 0.1 * rng.normal(size=phi.shape),
                                        psi + 0.1 * rng.normal(size=psi.shape))
    z = rng.normal(size=(20, 3))
    pv = ae.make_pvars(None)
    back = ae.encode_v(ae.decode_v(ad.Variable(z), pv), pv).value
    return _result("ae/latent-roundtrip", float(np.abs(back - z).max()), 1e-10)


def prop_activation_inverse():
    # relative tolerance: near x=-10 the forward output sits within one ulp of
    # -1, so the inverse amplifies that representation error by e^10
    x = np.linspace(-10, 10, 4001)
    y = ad.elu_bijection(ad.Variable(x)).value
    back = ad.elu_bijection_inverse(ad.Variable(y)).value
    rel = np.abs(back - x) / np.maximum(1.0, np.abs(x))
    return _result("ae/activation-inverse-on-[-10,10]", float(rel.max()), 1e-12)


def prop_symplectic_orthogonality():
    rng = np.random.default_rng(12)
    model = DynamicsModel.create("geo-hnn", dof=2, hidden=[8, 8], seed=2)
    worst = 0.0
    for _ in range(5):
        q, p = rng.normal(size=2), rng.normal(size=2)
        qd, pd = time_derivatives(model, q, p)
        # gradient of H recovered from the field itself
        dh_dq, dh_dp = -pd, qd
        worst = max(worst, abs(float(np.dot(qd, dh_dq) + np.dot(pd, dh_dp))))
    return _result("models/field-orthogonal-to-gradH", worst, 1e-10)


def prop_rk4_energy_conservation():
    spec = sy.SystemSpec("two-body")
    q0, p0 = sy.sample_initial_condition(spec, np.random.default_rng(13))
    traj = sy.simulate(spec, q0, p0, 1e-3, 5000, store_every=50)
    drift = float(np.abs(traj.energy - traj.energy[0]).max() / abs(traj.energy[0]))
    return _result("systems/rk4-energy-drift", drift, 1e-6)


def prop_symplectic_euler_bounded():
    # semi-implicit Euler on the analytic unit mass-spring H = (q^2 + p^2)/2
    # the energy deviation is measured against the current energy; relative
    # to E(t) the exact supremum of the oscillation is dt/2
    dt, steps = 0.1, 10_000
    q, p = 1.0, 0.0
    e0 = 0.5
    worst = 0.0
    for _ in range(steps):
        p = p - dt * q
        q = q + dt * p
        e = 0.5 * (q * q + p * p)
        worst = max(worst, abs(e - e0) / e)
    return _result("training/symplectic-euler-energy-bound", worst, 5e-2,
                   detail=f"dt={dt}, {steps} steps")


PROPERTIES = [
    ("autodiff/first-order-vs-fd", prop_grad_first_order),
    ("autodiff/second-order-cubic", prop_grad_second_order),
    ("training/grad-through-hamilton-vs-fd", prop_grad_through_hamilton),
    ("spd/double-head-min-eig", spd_closure_double_head),
    ("spd/cholesky-min-eig", prop_spd_closure_cholesky),
    ("spd/geo-exp-map-min-eig", prop_spd_closure_geo),
    ("spd/exp-log-roundtrip", prop_spd_exp_log_roundtrip),
    ("spd/aim-distance-axioms", prop_aim_distance_axioms),
    ("matfun/expm-sqrtm-vs-eigh", prop_matrix_functions),
    ("biorth/retraction-residual", prop_biorth_retraction),
    ("biorth/residual-after-adam", prop_biorth_adam_persistence),
    ("ae/latent-roundtrip", prop_ae_latent_roundtrip),
    ("ae/activation-inverse-on-[-10,10]", prop_activation_inverse),
    ("models/field-orthogonal-to-gradH", prop_symplectic_orthogonality),
    ("systems/rk4-energy-drift", prop_rk4_energy_conservation),
    ("training/symplectic-euler-energy-bound", prop_symplectic_euler_bounded),
]


def run_verify(name_filter: str | None = None) -> tuple[list[PropertyResult], bool]:
    results = []
    for name, func in PROPERTIES:
        if name_filter and name_filter not in name:
            continue
        results.append(func())
    return results, all(r.passed for r in results)
