"""Ground-truth benchmark systems: Hamiltonians, RK4 reference integration,
and dataset generation.

All analytic Hamiltonians and their partials are vectorized over a leading
batch axis so dataset generation can integrate every trajectory of a system
in one sweep.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


class SingularConfiguration(ValueError):
    pass


class BlowUpError(RuntimeError):
    pass


@dataclass(frozen=True)
class SystemSpec:
    """Tagged description of one benchmark system."""

    kind: str
    params: dict = field(default_factory=dict)

    KINDS = ("mass-spring", "coupled-oscillators", "two-body", "pendulum", "cloth")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown system {self.kind!r}; expected one of {self.KINDS}")
        defaults = {
            "mass-spring": {"m": 1.0, "k": 1.0},
            "coupled-oscillators": {"count": 3, "mass": 1.0, "k": 1.0},
            "two-body": {"m1": 1.0, "m2": 1.0, "g": 1.0},
            "pendulum": {"m": 1.0, "l": 1.0, "g": 9.8},
            "cloth": {"w": 4, "h": 4, "node_mass": 1.0, "k": 10.0, "rest_length": 1.0},
        }[self.kind]
        merged = {**defaults, **self.params}
        for key, val in merged.items():
            if key not in ("count", "w", "h") and val <= 0:
                raise ValueError(f"{self.kind}: parameter {key} must be positive, got {val}")
        object.__setattr__(self, "params", merged)

    @property
    def dof(self) -> int:
        p = self.params
        return {
            "mass-spring": 1,
            "coupled-oscillators": p.get("count", 3),
            "two-body": 4,
            "pendulum": 1,
            "cloth": 2 * p.get("w", 4) * p.get("h", 4),
        }[self.kind]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "SystemSpec":
        return cls(d["kind"], dict(d.get("params", {})))


def _cloth_edges(w: int, h: int) -> np.ndarray:
    """4-neighbor grid edges as an (E, 2) array of node indices."""
    edges = []
    for row in range(h):
        for col in range(w):
            i = row * w + col
            if col + 1 < w:
                edges.append((i, i + 1))
            if row + 1 < h:
                edges.append((i, i + w))
    return np.array(edges, dtype=np.intp)


def true_hamiltonian(spec: SystemSpec, q, p) -> np.ndarray | float:
    """Total energy; batched over a leading axis when q/p are 2-D."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    single = q.ndim == 1
    qb, pb = np.atleast_2d(q), np.atleast_2d(p)
    if qb.shape[-1] != spec.dof:
        raise ValueError(f"state dim {qb.shape[-1]} != system dof {spec.dof}")
    prm = spec.params

    if spec.kind == "mass-spring":
        h = pb[:, 0] ** 2 / (2 * prm["m"]) + 0.5 * prm["k"] * qb[:, 0] ** 2
    elif spec.kind == "pendulum":
        m, l, g = prm["m"], prm["l"], prm["g"]
        h = pb[:, 0] ** 2 / (2 * m * l * l) - m * g * l * np.cos(qb[:, 0])
    elif spec.kind == "coupled-oscillators":
        m, k = prm["mass"], prm["k"]
        kinetic = np.sum(pb**2, axis=1) / (2 * m)
        # springs to both walls plus nearest-neighbor couplings
        stretch = np.diff(qb, axis=1)
        h = kinetic + 0.5 * k * (qb[:, 0] ** 2 + qb[:, -1] ** 2 + np.sum(stretch**2, axis=1))
    elif spec.kind == "two-body":
        m1, m2, g = prm["m1"], prm["m2"], prm["g"]
        x1, x2 = qb[:, 0:2], qb[:, 2:4]
        r = np.linalg.norm(x1 - x2, axis=1)
        if np.any(r < 1e-12):
            raise SingularConfiguration("two-body: singular configuration (coincident positions)")
        kinetic = np.sum(pb[:, 0:2] ** 2, axis=1) / (2 * m1) + np.sum(pb[:, 2:4] ** 2, axis=1) / (2 * m2)
        h = kinetic - g * m1 * m2 / r
    else:  # cloth
        w, hh = prm["w"], prm["h"]
        m, k, l0 = prm["node_mass"], prm["k"], prm["rest_length"]
        n_nodes = w * hh
        pos = qb.reshape(-1, n_nodes, 2)
        edges = _cloth_edges(w, hh)
        diff = pos[:, edges[:, 0]] - pos[:, edges[:, 1]]
        length = np.linalg.norm(diff, axis=2)
        h = np.sum(pb**2, axis=1) / (2 * m) + 0.5 * k * np.sum((length - l0) ** 2, axis=1)

    return float(h[0]) if single else h


def true_derivatives(spec: SystemSpec, q, p) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Hamilton's equations (q_dot, p_dot), batched like the input."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    single = q.ndim == 1
    qb, pb = np.atleast_2d(q), np.atleast_2d(p)
    prm = spec.params

    if spec.kind == "mass-spring":
        qdot = pb / prm["m"]
        pdot = -prm["k"] * qb
    elif spec.kind == "pendulum":
        m, l, g = prm["m"], prm["l"], prm["g"]
        qdot = pb / (m * l * l)
        pdot = -m * g * l * np.sin(qb)
    elif spec.kind == "coupled-oscillators":
        m, k = prm["mass"], prm["k"]
        qdot = pb / m
        grad = np.zeros_like(qb)
        grad[:, 0] += k * qb[:, 0]  # wall springs act on the two end masses
        grad[:, -1] += k * qb[:, -1]
        stretch = np.diff(qb, axis=1)
        grad[:, :-1] -= k * stretch
        grad[:, 1:] += k * stretch
        pdot = -grad
    elif spec.kind == "two-body":
        m1, m2, g = prm["m1"], prm["m2"], prm["g"]
        x1, x2 = qb[:, 0:2], qb[:, 2:4]
        d = x1 - x2
        r = np.linalg.norm(d, axis=1, keepdims=True)
        if np.any(r < 1e-12):
            raise SingularConfiguration("two-body: singular configuration (coincident positions)")
        qdot = np.concatenate([pb[:, 0:2] / m1, pb[:, 2:4] / m2], axis=1)
        force = g * m1 * m2 * d / r**3  # dV/dx1
        pdot = np.concatenate([-force, force], axis=1)
    else:  # cloth
        w, hh = prm["w"], prm["h"]
        m, k, l0 = prm["node_mass"], prm["k"], prm["rest_length"]
        n_nodes = w * hh
        pos = qb.reshape(-1, n_nodes, 2)
        edges = _cloth_edges(w, hh)
        diff = pos[:, edges[:, 0]] - pos[:, edges[:, 1]]
        length = np.linalg.norm(diff, axis=2, keepdims=True)
        safe = np.clip(length, 1e-12, None)
        f_edge = k * (length - l0) * diff / safe  # dV/d(pos_i) along each edge
        grad_pos = np.zeros_like(pos)
        np.add.at(grad_pos, (slice(None), edges[:, 0]), f_edge)
        np.add.at(grad_pos, (slice(None), edges[:, 1]), -f_edge)
        qdot = pb / m
        pdot = -grad_pos.reshape(qb.shape)

    if single:
        return qdot[0], pdot[0]
    return qdot, pdot


def rk4_step(spec: SystemSpec, q, p, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Classical 4th-order step on the true vector field."""
    if h <= 0:
        raise ValueError("step size must be positive")
    k1q, k1p = true_derivatives(spec, q, p)
    k2q, k2p = true_derivatives(spec, q + 0.5 * h * k1q, p + 0.5 * h * k1p)
    k3q, k3p = true_derivatives(spec, q + 0.5 * h * k2q, p + 0.5 * h * k2p)
    k4q, k4p = true_derivatives(spec, q + h * k3q, p + h * k3p)
    qn = q + (h / 6.0) * (k1q + 2 * k2q + 2 * k3q + k4q)
    pn = p + (h / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
    return qn, pn


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (T, 2n)
    derivs: np.ndarray  # (T, 2n)
    energy: np.ndarray  # (T,)
    system: SystemSpec
    seed: int = 0

    @property
    def q(self) -> np.ndarray:
        return self.states[:, : self.system.dof]

    @property
    def p(self) -> np.ndarray:
        return self.states[:, self.system.dof:]


def simulate(spec: SystemSpec, q0, p0, h: float, steps: int, store_every: int = 1) -> Trajectory:
    """Integrate one trajectory with RK4, storing every ``store_every`` steps."""
    q = np.asarray(q0, dtype=np.float64).copy()
    p = np.asarray(p0, dtype=np.float64).copy()
    times, rows = [], []
    for step in range(steps + 1):
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise BlowUpError(f"trajectory blew up at step {step}")
        if step % store_every == 0:
            times.append(step * h)
            rows.append((q.copy(), p.copy()))
        if step < steps:
            q, p = rk4_step(spec, q, p, h)
    qs = np.array([r[0] for r in rows])
    ps = np.array([r[1] for r in rows])
    qdot, pdot = true_derivatives(spec, qs, ps)
    return Trajectory(
        times=np.array(times),
        states=np.concatenate([qs, ps], axis=1),
        derivs=np.concatenate([qdot, pdot], axis=1),
        energy=np.asarray(true_hamiltonian(spec, qs, ps)),
        system=spec,
    )


def sample_initial_condition(spec: SystemSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-system initial condition samplers."""
    n = spec.dof
    prm = spec.params
    if spec.kind in ("mass-spring", "coupled-oscillators"):
        return rng.uniform(-1, 1, size=n), rng.uniform(-1, 1, size=n)
    if spec.kind == "pendulum":
        return rng.uniform(-np.pi / 2, np.pi / 2, size=1), rng.uniform(-1, 1, size=1)
    if spec.kind == "two-body":
        m1, m2, g = prm["m1"], prm["m2"], prm["g"]
        radius = rng.uniform(0.8, 1.2)
        angle = rng.uniform(0, 2 * np.pi)
        speed = math.sqrt(g * (m1 + m2) / radius) * rng.uniform(0.9, 1.1)
        # symmetric two-body setup about the barycenter
        u = np.array([math.cos(angle), math.sin(angle)])
        t = np.array([-u[1], u[0]])
        x1 = radius * m2 / (m1 + m2) * u
        x2 = -radius * m1 / (m1 + m2) * u
        v1 = speed * m2 / (m1 + m2) * t
        v2 = -speed * m1 / (m1 + m2) * t
        q = np.concatenate([x1, x2])
        p = np.concatenate([m1 * v1, m2 * v2])
        return q, p
    # cloth: rest grid plus small nodal displacements, zero momentum
    w, h = prm["w"], prm["h"]
    l0 = prm["rest_length"]
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    rest = np.stack([cols * l0, rows * l0], axis=-1).reshape(-1)
    q = rest + rng.normal(scale=0.05 * l0, size=rest.shape)
    return q, np.zeros_like(q)


@dataclass
class Dataset:
    trajectories: list[Trajectory]
    split: dict[str, list[int]]
    manifest: dict

    def subset(self, name: str) -> list[Trajectory]:
        return [self.trajectories[i] for i in self.split[name]]


def generate_dataset(spec: SystemSpec, n_traj: int, t_span: float, dt: float,
                     seed: int = 0, h: float = 1e-3, max_retries: int = 10) -> Dataset:
    """Deterministic dataset with an 80/10/10 trajectory-level split.

    Ground truth is integrated at fine step ``h`` and subsampled to the stored
    spacing ``dt``.
    """
    if n_traj < 10:
        raise ValueError("need at least 10 trajectories for a nonempty 80/10/10 split")
    store_every = max(1, round(dt / h))
    steps = round(t_span / h)
    n = spec.dof

    # integrate all trajectories as one batch; blown-up rows get fresh initial
    # conditions and another pass
    attempts = np.zeros(n_traj, dtype=int)
    q0 = np.empty((n_traj, n))
    p0 = np.empty((n_traj, n))
    for i in range(n_traj):
        q0[i], p0[i] = sample_initial_condition(spec, np.random.default_rng((seed, i, 0)))

    def integrate_batch(qb, pb):
        """Returns stored (qs, ps) plus a mask of rows that went non-finite."""
        n_store = steps // store_every + 1
        qs = np.empty((n_store, *qb.shape))
        ps = np.empty((n_store, *pb.shape))
        blown = np.zeros(len(qb), dtype=bool)
        park_q, park_p = sample_initial_condition(spec, np.random.default_rng(0))
        q, p = qb.copy(), pb.copy()
        for step in range(steps + 1):
            if step % store_every == 0:
                qs[step // store_every] = q
                ps[step // store_every] = p
            if step < steps:
                q, p = rk4_step(spec, q, p, h)
                bad = ~(np.isfinite(q).all(axis=1) & np.isfinite(p).all(axis=1))
                if np.any(bad):
                    # park bad rows at a benign state so the batch stays
                    # finite; they get fresh initial conditions afterwards
                    q[bad] = park_q
                    p[bad] = park_p
                    blown |= bad
        return qs, ps, blown

    qs_all, ps_all, blown = integrate_batch(q0, p0)
    while np.any(blown):
        redo = np.flatnonzero(blown)
        attempts[redo] += 1
        if np.any(attempts[redo] > max_retries):
            raise BlowUpError(f"trajectory blew up after {max_retries} resampling attempts")
        for i in redo:
            q0[i], p0[i] = sample_initial_condition(spec, np.random.default_rng((seed, int(i), int(attempts[i]))))
        qs_new, ps_new, sub_blown = integrate_batch(q0[redo], p0[redo])
        qs_all[:, redo] = qs_new
        ps_all[:, redo] = ps_new
        blown = np.zeros(n_traj, dtype=bool)
        blown[redo] = sub_blown

    times = np.arange(steps // store_every + 1) * (store_every * h)
    trajectories = []
    for i in range(n_traj):
        qs, ps = qs_all[:, i], ps_all[:, i]
        qdot, pdot = true_derivatives(spec, qs, ps)
        trajectories.append(Trajectory(
            times=times.copy(),
            states=np.concatenate([qs, ps], axis=1),
            derivs=np.concatenate([qdot, pdot], axis=1),
            energy=np.asarray(true_hamiltonian(spec, qs, ps)),
            system=spec,
            seed=i,
        ))

    order = np.random.default_rng((seed, 0x5B11)).permutation(n_traj)
    n_train = int(round(0.8 * n_traj))
    n_val = int(round(0.1 * n_traj))
    split = {
        "train": sorted(int(i) for i in order[:n_train]),
        "val": sorted(int(i) for i in order[n_train:n_train + n_val]),
        "test": sorted(int(i) for i in order[n_train + n_val:]),
    }
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "system": spec.to_dict(),
        "n_traj": n_traj,
        "t_span": t_span,
        "dt": dt,
        "h": h,
        "seed": seed,
        "split": split,
    }
    return Dataset(trajectories, split, manifest)


# ---------------------------------------------------------------------------
# on-disk format: manifest.json + one CSV per trajectory


def save_dataset(ds: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(ds.manifest, indent=2, sort_keys=True))
    n = SystemSpec.from_dict(ds.manifest["system"]).dof
    header = (["t"] + [f"q_{i+1}" for i in range(n)] + [f"p_{i+1}" for i in range(n)]
              + [f"dq_{i+1}" for i in range(n)] + [f"dp_{i+1}" for i in range(n)] + ["energy"])
    for idx, traj in enumerate(ds.trajectories):
        with open(out / f"traj_{idx:04d}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for j in range(len(traj.times)):
                row = [traj.times[j], *traj.states[j], *traj.derivs[j], traj.energy[j]]
                writer.writerow([f"{v:.17g}" for v in row])


def load_dataset(path) -> Dataset:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported dataset schema version {manifest.get('schema_version')}")
    spec = SystemSpec.from_dict(manifest["system"])
    n = spec.dof
    trajectories = []
    for idx in range(manifest["n_traj"]):
        data = np.loadtxt(root / f"traj_{idx:04d}.csv", delimiter=",", skiprows=1, ndmin=2)
        trajectories.append(Trajectory(
            times=data[:, 0],
            states=data[:, 1:1 + 2 * n],
            derivs=data[:, 1 + 2 * n:1 + 4 * n],
            energy=data[:, 1 + 4 * n],
            system=spec,
            seed=idx,
        ))
    return Dataset(trajectories, manifest["split"], manifest)
