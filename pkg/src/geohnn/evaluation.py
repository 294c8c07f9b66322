"""Rollouts and evaluation metrics: long-term trajectory error, relative
energy drift, and per-degree-of-freedom error tables, with CSV and SVG output.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autoencoders import ReducedOrderModel
from .models import DynamicsModel, hamiltonian_eval


@dataclass
class RolloutResult:
    times: np.ndarray
    predicted: np.ndarray  # (T, 2n), possibly truncated on divergence
    reference: np.ndarray | None
    model_energies: np.ndarray | None
    true_energies: np.ndarray | None
    diverged: bool = False
    dof: int = 0


@dataclass
class MetricSeries:
    name: str
    times: np.ndarray
    values: np.ndarray
    flagged: bool = False  # e.g. absolute instead of relative drift

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValueError("times and values must have the same length")


def _field(model: DynamicsModel, q: np.ndarray, p: np.ndarray):
    tape = ad.Tape()
    qv, pv = tape.var(q), tape.var(p)
    pvars = model.make_pvars(None)
    qd, pd = model.vector_field_v(qv, pv, pvars, create_graph=False)
    return qd.value, pd.value


def _roll_states(model: DynamicsModel, q0: np.ndarray, p0: np.ndarray,
                 dt: float, steps: int):
    """Batched semi-implicit Euler rollout; returns (qs, ps, n_valid, diverged)."""
    B, n = q0.shape
    qs = np.empty((steps + 1, B, n))
    ps = np.empty((steps + 1, B, n))
    qs[0], ps[0] = q0, p0
    q, p = q0, p0
    for step in range(1, steps + 1):
        _, pdot = _field(model, q, p)
        p = p + dt * pdot
        qdot, _ = _field(model, q, p)
        q = q + dt * qdot
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            return qs[:step], ps[:step], step, True
        qs[step], ps[step] = q, p
    return qs, ps, steps + 1, False


def rollout(model_or_rom, s0, dt: float, steps: int,
            reference: np.ndarray | None = None) -> RolloutResult:
    """Roll the learned dynamics forward from the full-order state ``s0``.

    For a reduced-order model the initial state is encoded, integrated in the
    latent space, and decoded at every step. On divergence the series is
    truncated at the last finite state and flagged.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    s0 = np.asarray(s0, dtype=np.float64)
    if s0.ndim != 1:
        raise ValueError("s0 must be a single flat phase-space state")
    is_rom = isinstance(model_or_rom, ReducedOrderModel)

    if is_rom:
        rom = model_or_rom
        n = rom.ae_q.full_dim
        q0, p0 = s0[None, :n], s0[None, n:]
        aeq, aep = rom.ae_q.make_pvars(None), rom.ae_p.make_pvars(None)
        zq = rom.encode_q_v(ad.Variable(q0), aeq).value
        zp = rom.encode_p_v(ad.Variable(p0), aep).value
        zqs, zps, n_valid, diverged = _roll_states(rom.latent_model, zq, zp, dt, steps)
        dec_q = rom.decode_q_v(ad.Variable(zqs[:, 0]), aeq).value
        dec_p = rom.decode_p_v(ad.Variable(zps[:, 0]), aep).value
        pred = np.concatenate([dec_q, dec_p], axis=1)
        model_h = hamiltonian_eval(rom.latent_model, zqs[:, 0], zps[:, 0])
    else:
        model = model_or_rom
        n = model.dof
        q0, p0 = s0[None, :n], s0[None, n:]
        qs, ps, n_valid, diverged = _roll_states(model, q0, p0, dt, steps)
        pred = np.concatenate([qs[:, 0], ps[:, 0]], axis=1)
        if model.kind == "baseline-mlp":
            model_h = None
        else:
            model_h = hamiltonian_eval(model, qs[:, 0], ps[:, 0])

    times = np.arange(n_valid) * dt
    ref = None
    if reference is not None:
        ref = np.asarray(reference, dtype=np.float64)[:n_valid]
        if len(ref) != n_valid:
            raise ValueError("reference shorter than the rollout")
    return RolloutResult(times=times, predicted=pred, reference=ref,
                         model_energies=model_h, true_energies=None,
                         diverged=diverged, dof=n)


def rollout_batch(model_or_rom, s0_batch: np.ndarray, dt: float, steps: int):
    """Vectorized rollout for many initial states; returns (times, states).

    ``states`` has shape (T, B, 2n); diverged batches are truncated jointly.
    """
    s0_batch = np.asarray(s0_batch, dtype=np.float64)
    is_rom = isinstance(model_or_rom, ReducedOrderModel)
    if is_rom:
        rom = model_or_rom
        n = rom.ae_q.full_dim
        aeq, aep = rom.ae_q.make_pvars(None), rom.ae_p.make_pvars(None)
        zq = rom.encode_q_v(ad.Variable(s0_batch[:, :n]), aeq).value
        zp = rom.encode_p_v(ad.Variable(s0_batch[:, n:]), aep).value
        zqs, zps, n_valid, diverged = _roll_states(rom.latent_model, zq, zp, dt, steps)
        T, B, r = zqs.shape
        dec_q = rom.decode_q_v(ad.Variable(zqs.reshape(T * B, r)), aeq).value.reshape(T, B, n)
        dec_p = rom.decode_p_v(ad.Variable(zps.reshape(T * B, r)), aep).value.reshape(T, B, n)
        states = np.concatenate([dec_q, dec_p], axis=2)
    else:
        n = model_or_rom.dof
        qs, ps, n_valid, diverged = _roll_states(model_or_rom, s0_batch[:, :n], s0_batch[:, n:], dt, steps)
        states = np.concatenate([qs, ps], axis=2)
    return np.arange(n_valid) * dt, states, diverged


# ---------------------------------------------------------------------------
# metrics


def trajectory_error(result: RolloutResult) -> MetricSeries:
    """Pointwise ||q_err||_2 + ||p_err||_2 against the reference trajectory."""
    if result.reference is None:
        raise ValueError("rollout has no reference trajectory")
    n = result.dof
    dq = result.predicted[:, :n] - result.reference[:, :n]
    dp = result.predicted[:, n:] - result.reference[:, n:]
    vals = np.linalg.norm(dq, axis=1) + np.linalg.norm(dp, axis=1)
    return MetricSeries("trajectory_error", result.times, vals)


def energy_drift(result: RolloutResult, reference_hamiltonian) -> MetricSeries:
    """Relative drift |H(t) − H(0)| / |H(0)| of the reference energy along the
    predicted trajectory; falls back to absolute drift (flagged) when the
    initial energy is numerically zero.
    """
    n = result.dof
    h = np.asarray(reference_hamiltonian(result.predicted[:, :n], result.predicted[:, n:]),
                   dtype=np.float64)
    h0 = h[0]
    if abs(h0) > 1e-12:
        vals = np.abs(h - h0) / abs(h0)
        flagged = False
    else:
        vals = np.abs(h - h0)
        flagged = True
    return MetricSeries("energy_drift", result.times, vals, flagged=flagged)


def per_dof_report(rom_or_model, trajectories, dt: float) -> dict:
    """Per-DoF mean absolute errors on a held-out set.

    Prediction errors come from rollouts started at each trajectory's initial
    state; reconstruction errors (reduced-order models only) from the
    encode/decode round trip of the true states. Means and standard
    deviations are taken across trajectories.
    """
    n = trajectories[0].system.dof
    steps = len(trajectories[0].times) - 1
    s0 = np.array([t.states[0] for t in trajectories])
    _, pred, _ = rollout_batch(rom_or_model, s0, dt, steps)
    T = pred.shape[0]
    truth = np.stack([t.states[:T] for t in trajectories], axis=1)  # (T, B, 2n)
    abs_err = np.abs(pred - truth)
    per_traj = abs_err.mean(axis=0)  # (B, 2n) MAE per trajectory per dof

    report = {
        "prediction": {
            "q_mae": per_traj[:, :n].mean(axis=0).tolist(),
            "p_mae": per_traj[:, n:].mean(axis=0).tolist(),
            "q_mean": float(per_traj[:, :n].mean()),
            "p_mean": float(per_traj[:, n:].mean()),
            "q_std": float(per_traj[:, :n].mean(axis=1).std()),
            "p_std": float(per_traj[:, n:].mean(axis=1).std()),
        }
    }

    if isinstance(rom_or_model, ReducedOrderModel):
        rom = rom_or_model
        aeq, aep = rom.ae_q.make_pvars(None), rom.ae_p.make_pvars(None)
        flat = truth.reshape(-1, 2 * n)
        rq = rom.decode_q_v(rom.encode_q_v(ad.Variable(flat[:, :n]), aeq), aeq).value
        rp = rom.decode_p_v(rom.encode_p_v(ad.Variable(flat[:, n:]), aep), aep).value
        rec_err = np.abs(np.concatenate([rq, rp], axis=1) - flat).reshape(T, -1, 2 * n)
        rec_traj = rec_err.mean(axis=0)
        report["reconstruction"] = {
            "q_mae": rec_traj[:, :n].mean(axis=0).tolist(),
            "p_mae": rec_traj[:, n:].mean(axis=0).tolist(),
            "q_mean": float(rec_traj[:, :n].mean()),
            "p_mean": float(rec_traj[:, n:].mean()),
            "q_std": float(rec_traj[:, :n].mean(axis=1).std()),
            "p_std": float(rec_traj[:, n:].mean(axis=1).std()),
        }
    return report


# ---------------------------------------------------------------------------
# artifact writers


def write_series_csv(path, series_list: list[MetricSeries]) -> None:
    """Columns: t plus one column per series (aligned on the first's times)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    times = series_list[0].times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [s.name for s in series_list])
        for i, t in enumerate(times):
            w.writerow([f"{t:.17g}"] + [f"{s.values[i]:.17g}" if i < len(s.values) else ""
                                         for s in series_list])


def write_per_dof_csv(path, report: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["section", "dof", "coordinate", "mae"])
        for section, data in report.items():
            for i, v in enumerate(data["q_mae"]):
                w.writerow([section, i + 1, "q", f"{v:.17g}"])
            for i, v in enumerate(data["p_mae"]):
                w.writerow([section, i + 1, "p", f"{v:.17g}"])


def write_svg_lines(path, series_list: list[MetricSeries], title: str = "",
                    width: int = 640, height: int = 400, log_y: bool = True) -> None:
    """Standalone SVG line chart, log-scale y by default. No dependencies."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    margin = 50
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    floor = 1e-16

    all_t = np.concatenate([s.times for s in series_list if len(s.times)])
    all_v = np.concatenate([s.values for s in series_list if len(s.values)])
    if log_y:
        all_v = np.log10(np.clip(np.abs(all_v), floor, None))
    t_lo, t_hi = float(all_t.min()), float(all_t.max())
    v_lo, v_hi = float(all_v.min()), float(all_v.max())
    if t_hi == t_lo:
        t_hi = t_lo + 1.0
    if v_hi == v_lo:
        v_hi = v_lo + 1.0

    def sx(t):
        return margin + (t - t_lo) / (t_hi - t_lo) * (width - 2 * margin)

    def sy(v):
        return height - margin - (v - v_lo) / (v_hi - v_lo) * (height - 2 * margin)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
             f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
             f'y2="{height - margin}" stroke="black"/>',
             f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>']
    # y-axis tick labels at integer log values (or quartiles when linear)
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = v_lo + frac * (v_hi - v_lo)
        label = f"1e{v:.1f}" if log_y else f"{v:.3g}"
        parts.append(f'<text x="{margin - 6}" y="{sy(v) + 4}" text-anchor="end" '
                     f'font-size="10">{label}</text>')
        parts.append(f'<text x="{sx(t_lo + frac * (t_hi - t_lo))}" y="{height - margin + 14}" '
                     f'text-anchor="middle" font-size="10">{t_lo + frac * (t_hi - t_lo):.3g}</text>')
    for k, s in enumerate(series_list):
        vals = np.log10(np.clip(np.abs(s.values), floor, None)) if log_y else s.values
        pts = " ".join(f"{sx(t):.2f},{sy(v):.2f}" for t, v in zip(s.times, vals))
        color = colors[k % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        parts.append(f'<text x="{width - margin + 4}" y="{margin + 14 * k}" font-size="10" '
                     f'fill="{color}">{s.name}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts))


def write_summary_json(path, summary: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True))
