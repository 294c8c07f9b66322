"""Losses, the rollout integrator, and the optimizer loop with early stopping.

Two training modes share one ``fit`` entry point:

* low-dimensional models are trained by derivative matching on stored
  (state, time-derivative) pairs;
* reduced-order models are trained on windows of consecutive states with the
  multistep + latent + reconstruction + regularization objective.
"""
from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autoencoders import ReducedOrderModel
from .manifolds import BIORTHOGONAL, EUCLIDEAN, AdamHyper, ManifoldParam, RiemannianAdam
from .models import DynamicsModel
from .systems import Dataset

LR_SET = (1e-3, 5e-4, 1e-4, 5e-5, 1e-5)


class RolloutDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch: int = 128
    max_epochs: int = 1000
    patience: int = 50
    min_delta: float = 1e-6  # relative improvement threshold
    weight_decay: float = 5e-4
    reg_coeff: float = 0.0
    rollout_steps: int = 8
    dt: float = 0.1
    seed: int = 0
    runs: int = 5
    # term weights, exposed for ablation only; defaults keep the sum unweighted
    w_multistep: float = 1.0
    w_latent: float = 1.0
    w_recon: float = 1.0
    # reduced-order training centers states on the training mean before encoding
    center_data: bool = True

    def __post_init__(self):
        for name in ("lr", "batch", "max_epochs", "patience", "dt", "rollout_steps", "runs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.min_delta < 0 or self.weight_decay < 0 or self.reg_coeff < 0:
            raise ValueError("min_delta, weight_decay and reg_coeff must be >= 0")


@dataclass
class LossReport:
    total: float = 0.0
    multistep: float = 0.0
    latent: float = 0.0
    recon: float = 0.0
    reg: float = 0.0
    derivative_mse: float = 0.0

    FIELDS = ("total", "multistep", "latent", "recon", "reg", "derivative_mse")

    def as_row(self) -> list[float]:
        return [getattr(self, f) for f in self.FIELDS]


# ---------------------------------------------------------------------------
# integrator


def symplectic_euler_step_v(model: DynamicsModel, qv: ad.Variable, pv: ad.Variable,
                            pvars, dt: float, create_graph: bool = True):
    """One semi-implicit Euler step on tape variables.

    The momentum update uses the field at (q, p); the position update uses the
    field at (q, p'). Differentiable w.r.t. the model parameters.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    _, pdot = model.vector_field_v(qv, pv, pvars, create_graph=create_graph)
    p_next = ad.add(pv, ad.mul(pdot, dt))
    qdot, _ = model.vector_field_v(qv, p_next, pvars, create_graph=create_graph)
    q_next = ad.add(qv, ad.mul(qdot, dt))
    return q_next, p_next


def symplectic_euler_step(model: DynamicsModel, q, p, dt: float, step_index: int = 0):
    """Numpy-level single step; raises :class:`RolloutDiverged` on non-finite output."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    single = q.ndim == 1
    tape = ad.Tape()
    qv = tape.var(np.atleast_2d(q))
    pv = tape.var(np.atleast_2d(p))
    pvars = model.make_pvars(None)
    qn, pn = symplectic_euler_step_v(model, qv, pv, pvars, dt, create_graph=False)
    qn, pn = qn.value, pn.value
    if not (np.all(np.isfinite(qn)) and np.all(np.isfinite(pn))):
        raise RolloutDiverged(f"rollout diverged at step {step_index}")
    if single:
        return qn[0], pn[0]
    return qn, pn


# ---------------------------------------------------------------------------
# loss terms (Variable level, used inside fit; numpy wrappers below)


def _mean_sq(v: ad.Variable) -> ad.Variable:
    return ad.mean_(ad.sum_(ad.square(v), axis=-1))


def _derivative_matching_v(model: DynamicsModel, pvars, batch: dict) -> ad.Variable:
    tape = pvars["__tape__"]
    qv, pv = tape.var(batch["q"]), tape.var(batch["p"])
    qdot, pdot = model.vector_field_v(qv, pv, pvars, create_graph=True)
    err_q = ad.sub(qdot, ad.Variable(batch["dq"]))
    err_p = ad.sub(pdot, ad.Variable(batch["dp"]))
    return ad.add(_mean_sq(err_q), _mean_sq(err_p))


def _reg_v(params: dict[str, ManifoldParam], pvars, lam: float) -> ad.Variable | None:
    """lambda * sum of squared euclidean parameters (manifold params excluded)."""
    if lam == 0.0:
        return None
    total = None
    for name, p in params.items():
        if p.kind != EUCLIDEAN:
            continue
        v = pvars[name]
        term = ad.sum_(ad.square(ad.reshape(v, (-1,))))
        total = term if total is None else ad.add(total, term)
    return None if total is None else ad.mul(total, lam)


def _rom_losses_v(rom: ReducedOrderModel, pvars_nested, windows: dict, cfg: TrainConfig):
    """Multistep, latent and reconstruction terms for windows of N+1 states.

    ``windows['q']``/``windows['p']`` have shape (B, N+1, n). One latent
    rollout supplies both the multistep and the latent term.
    """
    q_true = windows["q"]
    p_true = windows["p"]
    n_steps = q_true.shape[1] - 1
    if n_steps < 1:
        raise ValueError(f"windows must hold at least 2 states, got {q_true.shape[1]}")
    aeq, aep, lat = pvars_nested["aeq"], pvars_nested["aep"], pvars_nested["lat"]
    tape = pvars_nested["__tape__"]

    # encoded ground truth at every step: (N+1) tensors of shape (B, r)
    z_q_true = [rom.encode_q_v(ad.Variable(q_true[:, t]), aeq) for t in range(n_steps + 1)]
    z_p_true = [rom.encode_p_v(ad.Variable(p_true[:, t]), aep) for t in range(n_steps + 1)]

    # latent rollout from the encoded initial state
    zq = rom.encode_q_v(tape.var(q_true[:, 0]), aeq)
    zp = rom.encode_p_v(tape.var(p_true[:, 0]), aep)
    multistep = None
    latent = None
    for t in range(1, n_steps + 1):
        zq, zp = symplectic_euler_step_v(rom.latent_model, zq, zp, lat, cfg.dt)
        dec_q = rom.decode_q_v(zq, aeq)
        dec_p = rom.decode_p_v(zp, aep)
        ms = ad.add(_mean_sq(ad.sub(dec_q, ad.Variable(q_true[:, t]))),
                    _mean_sq(ad.sub(dec_p, ad.Variable(p_true[:, t]))))
        lt = ad.add(_mean_sq(ad.sub(zq, z_q_true[t])),
                    _mean_sq(ad.sub(zp, z_p_true[t])))
        multistep = ms if multistep is None else ad.add(multistep, ms)
        latent = lt if latent is None else ad.add(latent, lt)
    multistep = ad.mul(multistep, 1.0 / n_steps)
    latent = ad.mul(latent, 1.0 / n_steps)

    recon = None
    for t in range(n_steps + 1):
        rq = rom.decode_q_v(z_q_true[t], aeq)
        rp = rom.decode_p_v(z_p_true[t], aep)
        rc = ad.add(_mean_sq(ad.sub(rq, ad.Variable(q_true[:, t]))),
                    _mean_sq(ad.sub(rp, ad.Variable(p_true[:, t]))))
        recon = rc if recon is None else ad.add(recon, rc)
    recon = ad.mul(recon, 1.0 / (n_steps + 1))
    return multistep, latent, recon


# numpy-facing wrappers ------------------------------------------------------


def loss_derivative_matching(model: DynamicsModel, batch: dict, reg_coeff: float = 0.0) -> LossReport:
    tape = ad.Tape()
    pvars = model.make_pvars(tape)
    pvars["__tape__"] = tape
    mse = _derivative_matching_v(model, pvars, batch)
    reg = _reg_v(model.params, pvars, reg_coeff)
    total = mse if reg is None else ad.add(mse, reg)
    return LossReport(total=float(total.value), derivative_mse=float(mse.value),
                      reg=0.0 if reg is None else float(reg.value))


def loss_multistep(rom, windows, cfg: TrainConfig | None = None) -> float:
    cfg = cfg or TrainConfig()
    tape = ad.Tape()
    pv = rom.make_pvars(tape)
    pv["__tape__"] = tape
    ms, _, _ = _rom_losses_v(rom, pv, windows, cfg)
    return float(ms.value)


def loss_latent(rom, windows, cfg: TrainConfig | None = None) -> float:
    cfg = cfg or TrainConfig()
    tape = ad.Tape()
    pv = rom.make_pvars(tape)
    pv["__tape__"] = tape
    _, lt, _ = _rom_losses_v(rom, pv, windows, cfg)
    return float(lt.value)


def loss_recon(rom, windows, cfg: TrainConfig | None = None) -> float:
    cfg = cfg or TrainConfig()
    tape = ad.Tape()
    pv = rom.make_pvars(tape)
    pv["__tape__"] = tape
    _, _, rc = _rom_losses_v(rom, pv, windows, cfg)
    return float(rc.value)


def loss_reg(params: dict[str, ManifoldParam], lam: float) -> float:
    total = 0.0
    for p in params.values():
        if p.kind == EUCLIDEAN:
            total += float(np.sum(np.asarray(p.value) ** 2))
    return lam * total


def rom_loss_report(rom, windows, cfg: TrainConfig) -> LossReport:
    tape = ad.Tape()
    pv = rom.make_pvars(tape)
    pv["__tape__"] = tape
    ms, lt, rc = _rom_losses_v(rom, pv, windows, cfg)
    reg = loss_reg(rom.param_groups(), cfg.reg_coeff)
    total = (cfg.w_multistep * float(ms.value) + cfg.w_latent * float(lt.value)
             + cfg.w_recon * float(rc.value) + reg)
    return LossReport(total=total, multistep=float(ms.value), latent=float(lt.value),
                      recon=float(rc.value), reg=reg)


# ---------------------------------------------------------------------------
# data marshalling


def flatten_pairs(trajectories) -> dict:
    """Stack (state, derivative) samples from every trajectory."""
    n = trajectories[0].system.dof
    states = np.concatenate([t.states for t in trajectories], axis=0)
    derivs = np.concatenate([t.derivs for t in trajectories], axis=0)
    return {"q": states[:, :n], "p": states[:, n:],
            "dq": derivs[:, :n], "dp": derivs[:, n:]}


def make_windows(trajectories, n_steps: int) -> dict:
    """All windows of n_steps+1 consecutive stored states, stride 1."""
    n = trajectories[0].system.dof
    qs, ps = [], []
    for t in trajectories:
        T = len(t.times)
        if T < n_steps + 1:
            raise ValueError(f"trajectory of {T} states is shorter than a window of {n_steps + 1}")
        for s in range(T - n_steps):
            qs.append(t.states[s:s + n_steps + 1, :n])
            ps.append(t.states[s:s + n_steps + 1, n:])
    return {"q": np.array(qs), "p": np.array(ps)}


# ---------------------------------------------------------------------------
# optimizer loop


@dataclass
class FitResult:
    model: object
    history: list
    best_val_epoch: int
    best_val_loss: float
    diverged: bool = False
    seconds: float = 0.0

    HISTORY_HEADER = (["epoch"] + [f"train_{f}" for f in LossReport.FIELDS]
                      + [f"val_{f}" for f in LossReport.FIELDS] + ["seconds"])


def _snapshot(params: dict[str, ManifoldParam]) -> dict:
    out = {}
    for name, p in params.items():
        if p.kind == BIORTHOGONAL:
            out[name] = (p.value[0].copy(), p.value[1].copy())
        else:
            out[name] = np.asarray(p.value).copy()
    return out


def _restore(params: dict[str, ManifoldParam], snap: dict) -> None:
    for name, p in params.items():
        if p.kind == BIORTHOGONAL:
            p.value = (snap[name][0].copy(), snap[name][1].copy())
        else:
            p.value = snap[name].copy()


def _flatten_rom_pvars(pvars_nested: dict) -> dict[str, ad.Variable]:
    flat = {}
    for group in ("aeq", "aep", "lat"):
        for name, v in pvars_nested[group].items():
            flat[f"{group}.{name}"] = v
    return flat


def _collect_grads(loss: ad.Variable, params: dict[str, ManifoldParam],
                   flat_pvars: dict[str, ad.Variable]) -> dict:
    """Gradient of the scalar loss w.r.t. every parameter, keyed like ``params``."""
    names, wrt = [], []
    for pname, p in params.items():
        if p.kind == BIORTHOGONAL:
            names.append((pname, "phi"))
            wrt.append(flat_pvars[f"{pname}.phi"])
            names.append((pname, "psi"))
            wrt.append(flat_pvars[f"{pname}.psi"])
        else:
            names.append((pname, None))
            wrt.append(flat_pvars[pname])
    gs = ad.grad(loss, wrt, create_graph=False)
    grads: dict[str, object] = {}
    pair_parts: dict[str, dict] = {}
    for (pname, part), g in zip(names, gs):
        if part is None:
            grads[pname] = g.value
        else:
            pair_parts.setdefault(pname, {})[part] = g.value
    for pname, parts in pair_parts.items():
        grads[pname] = (parts["phi"], parts["psi"])
    return grads


def fit(model_or_rom, dataset: Dataset, cfg: TrainConfig) -> FitResult:
    """Train with mini-batch Riemannian Adam and patience-based early stopping.

    Deterministic for a fixed config; returns the parameters of the best
    validation epoch. A non-finite loss aborts with the last finite
    checkpoint restored.
    """
    is_rom = isinstance(model_or_rom, ReducedOrderModel)
    params = model_or_rom.param_groups() if is_rom else model_or_rom.params
    hyper = AdamHyper(lr=cfg.lr, weight_decay=cfg.weight_decay)
    opt = RiemannianAdam(params, hyper)
    rng = np.random.default_rng(cfg.seed)

    if is_rom:
        train_data = make_windows(dataset.subset("train"), cfg.rollout_steps)
        val_data = make_windows(dataset.subset("val"), cfg.rollout_steps)
        n_train = len(train_data["q"])
        if cfg.center_data:
            model_or_rom.shift_q = train_data["q"].reshape(-1, train_data["q"].shape[-1]).mean(axis=0)
            model_or_rom.shift_p = train_data["p"].reshape(-1, train_data["p"].shape[-1]).mean(axis=0)
    else:
        train_data = flatten_pairs(dataset.subset("train"))
        val_data = flatten_pairs(dataset.subset("val"))
        n_train = len(train_data["q"])

    def train_batch_loss(idx):
        tape = ad.Tape()
        if is_rom:
            pv = model_or_rom.make_pvars(tape)
            pv["__tape__"] = tape
            windows = {k: v[idx] for k, v in train_data.items()}
            ms, lt, rc = _rom_losses_v(model_or_rom, pv, windows, cfg)
            loss = ad.add(ad.add(ad.mul(ms, cfg.w_multistep), ad.mul(lt, cfg.w_latent)),
                          ad.mul(rc, cfg.w_recon))
            flat = _flatten_rom_pvars(pv)
        else:
            pv = model_or_rom.make_pvars(tape)
            pv["__tape__"] = tape
            batch = {k: v[idx] for k, v in train_data.items()}
            loss = _derivative_matching_v(model_or_rom, pv, batch)
            flat = {k: v for k, v in pv.items() if k != "__tape__"}
        reg = _reg_v(params, flat, cfg.reg_coeff)
        if reg is not None:
            loss = ad.add(loss, reg)
        return loss, flat

    def eval_report(data) -> LossReport:
        if is_rom:
            return rom_loss_report(model_or_rom, data, cfg)
        return loss_derivative_matching(model_or_rom, data, cfg.reg_coeff)

    history = []
    best_val = np.inf
    best_epoch = 0
    best_snap = _snapshot(params)
    bad_epochs = 0
    diverged = False
    t_start = time.perf_counter()

    was_checked = ad.config.checked
    ad.config.checked = False
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            t_epoch = time.perf_counter()
            order = rng.permutation(n_train)
            train_totals = []
            for start in range(0, n_train, cfg.batch):
                idx = order[start:start + cfg.batch]
                loss, flat = train_batch_loss(idx)
                if not np.isfinite(loss.value):
                    diverged = True
                    break
                train_totals.append(float(loss.value))
                opt.step(_collect_grads(loss, params, flat))
            if diverged:
                _restore(params, best_snap)
                break

            val_report = eval_report(val_data)
            train_report = LossReport(total=float(np.mean(train_totals)))
            if not np.isfinite(val_report.total):
                diverged = True
                _restore(params, best_snap)
                break
            elapsed = time.perf_counter() - t_epoch
            history.append([epoch, *train_report.as_row(), *val_report.as_row(), elapsed])

            improved = val_report.total < best_val * (1.0 - cfg.min_delta) or not np.isfinite(best_val)
            if improved:
                best_val = val_report.total
                best_epoch = epoch
                best_snap = _snapshot(params)
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= cfg.patience:
                    break
    finally:
        ad.config.checked = was_checked

    _restore(params, best_snap)
    return FitResult(model=model_or_rom, history=history, best_val_epoch=best_epoch,
                     best_val_loss=best_val, diverged=diverged,
                     seconds=time.perf_counter() - t_start)
