"""Command-line interface: dataset generation, training, evaluation, rollouts,
report aggregation, and the self-check property suite.

Exit codes: 0 success, 1 property/acceptance failure, 2 usage error, 3 I/O
failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime
import difflib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import checkpoint as ck
from . import evaluation as ev
from . import systems as sy
from . import training as tr
from .autoencoders import ConstrainedAutoencoder, ReducedOrderModel, VanillaAutoencoder
from .models import MODEL_KINDS, DynamicsModel


class UsageError(ValueError):
    pass


def _max_workers() -> int:
    try:
        return max(1, int(os.environ.get("GEOHNN_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# gen-data


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except Exception:
        raise UsageError(f"bad --grid value {text!r}, expected WxH like 4x4")


def cmd_gen_data(args) -> int:
    if args.system not in sy.SystemSpec.KINDS:
        hints = difflib.get_close_matches(args.system, sy.SystemSpec.KINDS)
        hint = f" (did you mean {', '.join(hints)}?)" if hints else ""
        raise UsageError(f"unknown system {args.system!r}{hint}; "
                         f"choices: {', '.join(sy.SystemSpec.KINDS)}")
    params = {}
    if args.grid:
        if args.system != "cloth":
            raise UsageError("--grid only applies to the cloth system")
        params["w"], params["h"] = _parse_grid(args.grid)
    spec = sy.SystemSpec(args.system, params)
    ds = sy.generate_dataset(spec, args.n_traj, args.t_span, args.dt, seed=args.seed)
    sy.save_dataset(ds, args.out)
    print(f"wrote {args.n_traj} trajectories of {args.system} (dof={spec.dof}) to {args.out}")
    print(json.dumps({k: v for k, v in ds.manifest.items() if k != "split"}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# train

TRAIN_CONFIG_KEYS = {
    "lr": "lr", "batch": "batch", "max-epochs": "max_epochs", "patience": "patience",
    "min-delta": "min_delta", "weight-decay": "weight_decay", "reg-coeff": "reg_coeff",
    "rollout-steps": "rollout_steps", "dt": "dt", "seed": "seed", "runs": "runs",
}


def _build_model(config: dict, dof: int, seed: int):
    hidden = config.get("hidden", [64, 64])
    activation = config.get("activation", "tanh")
    rom_cfg = config.get("rom")
    if rom_cfg is None:
        kind = config.get("model-kind", "geo-hnn")
        if kind not in MODEL_KINDS:
            raise UsageError(f"unknown model-kind {kind!r}; choices: {', '.join(MODEL_KINDS)}")
        return DynamicsModel.create(kind, dof, hidden=hidden, activation=activation, seed=seed)
    latent = rom_cfg.get("latent-dim", 2)
    ae_kind = rom_cfg.get("ae", "constrained")
    widths = [dof] + list(rom_cfg.get("ae-hidden", [])) + [latent]
    if ae_kind == "constrained":
        ae_q = ConstrainedAutoencoder(widths, seed=seed)
        ae_p = ConstrainedAutoencoder(widths, seed=seed + 1)
    elif ae_kind == "vanilla":
        ae_q = VanillaAutoencoder(widths, seed=seed)
        ae_p = VanillaAutoencoder(widths, seed=seed + 1)
    else:
        raise UsageError(f"unknown autoencoder kind {ae_kind!r} (constrained|vanilla)")
    lat_kind = rom_cfg.get("latent-model", "geo-hnn")
    lat_hidden = rom_cfg.get("latent-hidden", hidden)
    latent_model = DynamicsModel.create(lat_kind, latent, hidden=lat_hidden,
                                        activation=activation, seed=seed + 2)
    return ReducedOrderModel(ae_q=ae_q, ae_p=ae_p, latent_model=latent_model)


def _train_one_seed(config: dict, seed: int, out_dir: str) -> dict:
    ds = sy.load_dataset(config["dataset"])
    dof = sy.SystemSpec.from_dict(ds.manifest["system"]).dof
    kwargs = {attr: config[key] for key, attr in TRAIN_CONFIG_KEYS.items() if key in config}
    kwargs["seed"] = seed
    cfg = tr.TrainConfig(**kwargs)
    model = _build_model(config, dof, seed)
    result = tr.fit(model, ds, cfg)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ck.save(model, out / "checkpoint.json",
            extra={"dataset": str(config["dataset"]), "seed": seed,
                   "best_val_epoch": result.best_val_epoch,
                   "best_val_loss": result.best_val_loss,
                   "diverged": result.diverged,
                   "seconds": result.seconds,
                   "model_kind": config.get("model-kind", "rom")})
    with open(out / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(tr.FitResult.HISTORY_HEADER)
        for row in result.history:
            w.writerow([row[0]] + [f"{v:.17g}" for v in row[1:]])
    return {"seed": seed, "epochs": len(result.history), "best_val": result.best_val_loss,
            "seconds": result.seconds, "diverged": result.diverged}


def cmd_train(args) -> int:
    config = json.loads(Path(args.config).read_text())
    # flag > config file > default
    for key in TRAIN_CONFIG_KEYS:
        flag = getattr(args, key.replace("-", "_"), None)
        if flag is not None:
            config[key] = flag
    out_root = Path(args.out or config.get("out", "runs"))
    seeds = ([int(s) for s in args.seeds.split(",")] if args.seeds
             else [int(config.get("seed", 0))])

    jobs = [(config, seed, str(out_root / f"seed-{seed}") if len(seeds) > 1 else str(out_root))
            for seed in seeds]
    workers = min(_max_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            summaries = list(pool.map(_train_one_seed, *zip(*jobs)))
    else:
        summaries = [_train_one_seed(*job) for job in jobs]
    for s in summaries:
        status = "DIVERGED" if s["diverged"] else "ok"
        print(f"seed {s['seed']}: {s['epochs']} epochs, best val {s['best_val']:.6g}, "
              f"{s['seconds']:.1f}s [{status}]")
    return 0


# ---------------------------------------------------------------------------
# eval


def _split_indices(ds: sy.Dataset, split: str):
    if split not in ds.split:
        raise UsageError(f"unknown split {split!r} (train|val|test)")
    return ds.split[split]


def evaluate_checkpoint(model, ds: sy.Dataset, split: str, out_dir, dt: float | None = None) -> dict:
    spec = sy.SystemSpec.from_dict(ds.manifest["system"])
    dt = dt or ds.manifest["dt"]
    trajs = ds.subset(split)
    steps = len(trajs[0].times) - 1
    s0 = np.array([t.states[0] for t in trajs])
    times, pred, diverged = ev.rollout_batch(model, s0, dt, steps)
    T = pred.shape[0]
    truth = np.stack([t.states[:T] for t in trajs], axis=1)
    n = spec.dof

    err = (np.linalg.norm(pred[:, :, :n] - truth[:, :, :n], axis=2)
           + np.linalg.norm(pred[:, :, n:] - truth[:, :, n:], axis=2))
    traj_err = ev.MetricSeries("trajectory_error", times, err.mean(axis=1))

    h = np.stack([np.asarray(sy.true_hamiltonian(spec, pred[:, b, :n], pred[:, b, n:]))
                  for b in range(pred.shape[1])], axis=1)
    h0 = h[0]
    safe = np.where(np.abs(h0) > 1e-12, np.abs(h0), 1.0)
    drift = ev.MetricSeries("energy_drift", times, (np.abs(h - h0) / safe).mean(axis=1))

    out = Path(out_dir)
    ev.write_series_csv(out / "trajectory_error.csv", [traj_err])
    ev.write_series_csv(out / "energy_drift.csv", [drift])
    ev.write_svg_lines(out / "trajectory_error.svg", [traj_err], title="trajectory error")
    ev.write_svg_lines(out / "energy_drift.svg", [drift], title="relative energy drift")
    summary = {
        "split": split,
        "n_trajectories": len(trajs),
        "final_trajectory_error": float(traj_err.values[-1]),
        "max_energy_drift": float(drift.values.max()),
        "diverged": bool(diverged),
        "horizon": float(times[-1]) if len(times) else 0.0,
    }
    if isinstance(model, ReducedOrderModel):
        report = ev.per_dof_report(model, trajs, dt)
        ev.write_per_dof_csv(out / "per_dof.csv", report)
        summary["per_dof"] = {sec: {k: v for k, v in data.items() if not k.endswith("_mae")}
                              for sec, data in report.items()}
    ev.write_summary_json(out / "summary.json", summary)
    return summary


def cmd_eval(args) -> int:
    split = args.split
    if split == "train" and not args.allow_train_split:
        print("refusing to evaluate on the training split; pass --allow-train-split "
              "if you really want this", file=sys.stderr)
        return 2
    model = ck.load(args.checkpoint)
    ds = sy.load_dataset(args.data)
    _split_indices(ds, split)
    summary = evaluate_checkpoint(model, ds, split, args.out, dt=args.dt)
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return 0


# ---------------------------------------------------------------------------
# rollout


def cmd_rollout(args) -> int:
    model = ck.load(args.checkpoint)
    try:
        s0 = np.array([float(x) for x in args.ic.split(",")])
    except ValueError:
        raise UsageError(f"bad --ic value {args.ic!r}, expected comma-separated floats")
    result = ev.rollout(model, s0, args.dt, args.steps)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = result.dof
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"q_{i+1}" for i in range(n)] + [f"p_{i+1}" for i in range(n)])
        for i, t in enumerate(result.times):
            w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in result.predicted[i]])
    status = "diverged (truncated)" if result.diverged else "ok"
    print(f"wrote {len(result.times)} states to {out} [{status}]")
    return 0


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    root = Path(args.runs_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"runs dir {root} does not exist")
    runs = []
    for ck_path in sorted(root.rglob("checkpoint.json")):
        extra = ck.load_extra(ck_path)
        run = {"dir": str(ck_path.parent), "seed": extra.get("seed"),
               "seconds": extra.get("seconds"), "best_val_loss": extra.get("best_val_loss"),
               "diverged": extra.get("diverged", False),
               "model_kind": extra.get("model_kind")}
        metrics_path = ck_path.parent / "metrics" / "summary.json"
        if not metrics_path.exists():
            metrics_path = ck_path.parent / "summary.json"
        if metrics_path.exists():
            run["metrics"] = json.loads(metrics_path.read_text())
        runs.append(run)
    if not runs:
        raise FileNotFoundError(f"no checkpoints under {root}")

    def agg(values):
        vals = [v for v in values if v is not None and np.isfinite(v)]
        if not vals:
            return None
        return {"mean": float(np.mean(vals)), "std": float(np.std(vals)), "n": len(vals)}

    summary = {
        "generated-at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "runs": len(runs),
        "train_seconds": agg([r["seconds"] for r in runs]),
        "best_val_loss": agg([r["best_val_loss"] for r in runs]),
        "diverged_runs": sum(1 for r in runs if r["diverged"]),
    }
    for key in ("final_trajectory_error", "max_energy_drift"):
        summary[key] = agg([r.get("metrics", {}).get(key) for r in runs])
    by_kind = {}
    for r in runs:
        by_kind.setdefault(r.get("model_kind") or "unknown", []).append(r["seconds"])
    summary["wall_clock_by_model"] = {k: agg(v) for k, v in by_kind.items()}
    out = root / "summary.json"
    out.write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# verify


def cmd_verify(args) -> int:
    from .verify import run_verify

    results, ok = run_verify(args.filter)
    for r in results:
        print(r.row())
    if not results:
        print(f"no properties match filter {args.filter!r}", file=sys.stderr)
        return 2
    print(f"{sum(r.passed for r in results)}/{len(results)} properties passed")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geohnn",
                                     description="Hamiltonian dynamics learning with geometric priors")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a ground-truth dataset")
    g.add_argument("--system", required=True)
    g.add_argument("--n-traj", type=int, default=100)
    g.add_argument("--t-span", type=float, default=5.0)
    g.add_argument("--dt", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--grid", help="cloth grid as WxH, e.g. 4x4")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model from a JSON experiment config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="output directory (overrides config)")
    t.add_argument("--seeds", help="comma-separated seeds; fans out one run per seed")
    for key in TRAIN_CONFIG_KEYS:
        kind = int if key in ("batch", "max-epochs", "patience", "rollout-steps", "seed", "runs") else float
        t.add_argument(f"--{key}", type=kind, default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--allow-train-split", action="store_true")
    e.add_argument("--dt", type=float, default=None)
    e.add_argument("--out", default="metrics")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("rollout", help="roll a checkpoint forward from an initial state")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--ic", required=True, help="comma-separated q then p")
    r.add_argument("--steps", type=int, required=True)
    r.add_argument("--dt", type=float, default=0.1)
    r.add_argument("--out", default="rollout.csv")
    r.set_defaults(func=cmd_rollout)

    p = sub.add_parser("report", help="aggregate multi-seed runs into summary.json")
    p.add_argument("--runs-dir", required=True)
    p.set_defaults(func=cmd_report)

    v = sub.add_parser("verify", help="run the property self-check suite")
    v.add_argument("--filter", default=None)
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, PermissionError, IsADirectoryError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
