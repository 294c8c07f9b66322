"""Autoencoders for phase-space reduction and the reduced-order model wrapper.

The constrained autoencoder is built from paired layers

    encoder layer:  rho(h)   = inv_act(Psi^T (h - b))
    decoder layer:  phi(hat) = Phi act(hat) + b

with Psi^T Phi = I enforced on the biorthogonal manifold and inv_act the exact
inverse of act. Encoding after decoding is therefore the identity on the
latent space for any retracted weights — the projection property the
symplectic reduction needs — while decode(encode(x)) is the induced projector
onto the decoder image.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .manifolds import BIORTHOGONAL, EUCLIDEAN, ManifoldParam, biorth_init
from .nets import MLPSpec, init_mlp, mlp_forward


@dataclass
class InvertibleActivation:
    """C1 bijection R -> (-1, inf) with a closed-form inverse."""

    kind: str = "elu-bijection"
    alpha: float = 1.0

    def forward(self, x: ad.Variable) -> ad.Variable:
        return ad.elu_bijection(x)

    def inverse(self, y: ad.Variable) -> ad.Variable:
        return ad.elu_bijection_inverse(y)


@dataclass
class ConstrainedAutoencoder:
    """Stack of biorthogonally paired layers; widths decrease encoder-side."""

    widths: list[int]  # [full_dim, ..., latent_dim], non-increasing
    seed: int = 0
    use_activation: bool = True
    params: dict[str, ManifoldParam] = field(default_factory=dict)
    act: InvertibleActivation = field(default_factory=InvertibleActivation)

    def __post_init__(self):
        if any(a < b for a, b in zip(self.widths[:-1], self.widths[1:])):
            raise ValueError(f"encoder widths must not increase, got {self.widths}")
        if not self.params:
            rng = np.random.default_rng(self.seed)
            for l, (n_out, n_in) in enumerate(zip(self.widths[:-1], self.widths[1:])):
                # layer l maps latent-side dim n_in up to n_out on decode
                self.params[f"pair{l}"] = ManifoldParam(BIORTHOGONAL, biorth_init(n_out, n_in, rng))
                self.params[f"bias{l}"] = ManifoldParam(EUCLIDEAN, np.zeros(n_out))

    @property
    def full_dim(self) -> int:
        return self.widths[0]

    @property
    def latent_dim(self) -> int:
        return self.widths[-1]

    def make_pvars(self, tape: ad.Tape | None) -> dict[str, ad.Variable]:
        out = {}
        for name, p in self.params.items():
            if p.kind == BIORTHOGONAL:
                phi, psi = p.value
                if tape is not None:
                    out[f"{name}.phi"], out[f"{name}.psi"] = tape.var(phi), tape.var(psi)
                else:
                    out[f"{name}.phi"], out[f"{name}.psi"] = ad.Variable(phi), ad.Variable(psi)
            else:
                out[name] = tape.var(p.value) if tape is not None else ad.Variable(np.asarray(p.value))
        return out

    def encode_v(self, x: ad.Variable, pvars: dict[str, ad.Variable]) -> ad.Variable:
        h = x
        for l in range(len(self.widths) - 1):
            psi = pvars[f"pair{l}.psi"]
            b = pvars[f"bias{l}"]
            h = ad.matmul(ad.sub(h, b), psi)
            if self.use_activation:
                h = self.act.inverse(h)
        return h

    def decode_v(self, z: ad.Variable, pvars: dict[str, ad.Variable]) -> ad.Variable:
        h = z
        for l in range(len(self.widths) - 2, -1, -1):
            phi = pvars[f"pair{l}.phi"]
            b = pvars[f"bias{l}"]
            if self.use_activation:
                h = self.act.forward(h)
            h = ad.add(ad.matmul(h, ad.transpose(phi)), b)
        return h


@dataclass
class VanillaAutoencoder:
    """Unconstrained MLP encoder/decoder pair; no projection guarantee."""

    widths: list[int]  # [full_dim, hidden..., latent_dim]
    seed: int = 0
    activation: str = "tanh"
    params: dict[str, ManifoldParam] = field(default_factory=dict)
    enc_spec: MLPSpec = None
    dec_spec: MLPSpec = None

    def __post_init__(self):
        ws = list(self.widths)
        if len(ws) < 2:
            raise ValueError("need at least [full_dim, latent_dim]")
        enc = ws if len(ws) >= 3 else [ws[0], max(ws[0], 2), ws[-1]]
        self.enc_spec = MLPSpec(enc, self.activation, self.seed)
        self.dec_spec = MLPSpec(list(reversed(enc)), self.activation, self.seed + 1)
        if not self.params:
            self.params.update(init_mlp(self.enc_spec, "enc."))
            self.params.update(init_mlp(self.dec_spec, "dec."))

    @property
    def full_dim(self) -> int:
        return self.widths[0]

    @property
    def latent_dim(self) -> int:
        return self.widths[-1]

    def make_pvars(self, tape: ad.Tape | None) -> dict[str, ad.Variable]:
        return {
            name: (tape.var(p.value) if tape is not None else ad.Variable(np.asarray(p.value)))
            for name, p in self.params.items()
        }

    def encode_v(self, x: ad.Variable, pvars) -> ad.Variable:
        return mlp_forward(self.enc_spec, pvars, x, "enc.")

    def decode_v(self, z: ad.Variable, pvars) -> ad.Variable:
        return mlp_forward(self.dec_spec, pvars, z, "dec.")


def encode(ae, x) -> np.ndarray:
    """Numpy convenience; accepts a single vector or a batch."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    out = ae.encode_v(ad.Variable(arr[None] if single else arr), ae.make_pvars(None)).value
    return out[0] if single else out


def decode(ae, z) -> np.ndarray:
    arr = np.asarray(z, dtype=np.float64)
    single = arr.ndim == 1
    out = ae.decode_v(ad.Variable(arr[None] if single else arr), ae.make_pvars(None)).value
    return out[0] if single else out


@dataclass
class ReducedOrderModel:
    """Independent position/momentum autoencoders plus a latent Hamiltonian model.

    ``shift_q``/``shift_p`` center the full-order states before encoding (and
    are added back after decoding); training sets them to the training-split
    means so encoder inputs stay in the well-conditioned range of the
    invertible activation.
    """

    ae_q: object
    ae_p: object
    latent_model: object  # DynamicsModel with dof == latent_dim
    shift_q: np.ndarray = None
    shift_p: np.ndarray = None

    def __post_init__(self):
        if self.ae_q.full_dim != self.ae_p.full_dim or self.ae_q.latent_dim != self.ae_p.latent_dim:
            raise ValueError("position and momentum autoencoders must share dims")
        if self.latent_model.dof != self.ae_q.latent_dim:
            raise ValueError("latent model dof must equal the autoencoder latent dim")
        if self.shift_q is None:
            self.shift_q = np.zeros(self.ae_q.full_dim)
        if self.shift_p is None:
            self.shift_p = np.zeros(self.ae_p.full_dim)

    # full-state <-> latent maps used by losses and rollouts
    def encode_q_v(self, x: ad.Variable, aeq_pvars) -> ad.Variable:
        return self.ae_q.encode_v(ad.sub(x, ad.Variable(self.shift_q)), aeq_pvars)

    def encode_p_v(self, x: ad.Variable, aep_pvars) -> ad.Variable:
        return self.ae_p.encode_v(ad.sub(x, ad.Variable(self.shift_p)), aep_pvars)

    def decode_q_v(self, z: ad.Variable, aeq_pvars) -> ad.Variable:
        return ad.add(self.ae_q.decode_v(z, aeq_pvars), ad.Variable(self.shift_q))

    def decode_p_v(self, z: ad.Variable, aep_pvars) -> ad.Variable:
        return ad.add(self.ae_p.decode_v(z, aep_pvars), ad.Variable(self.shift_p))

    def param_groups(self) -> dict[str, ManifoldParam]:
        out = {}
        for prefix, obj in (("aeq.", self.ae_q), ("aep.", self.ae_p), ("lat.", self.latent_model)):
            for name, p in obj.params.items():
                out[prefix + name] = p
        return out

    def make_pvars(self, tape: ad.Tape | None) -> dict[str, dict[str, ad.Variable]]:
        return {
            "aeq": self.ae_q.make_pvars(tape),
            "aep": self.ae_p.make_pvars(tape),
            "lat": self.latent_model.make_pvars(tape),
        }


def reduced_time_derivatives(rom: ReducedOrderModel, q_lat, p_lat) -> tuple[np.ndarray, np.ndarray]:
    """Hamilton's equations of the latent model evaluated at latent coordinates."""
    from .models import time_derivatives

    return time_derivatives(rom.latent_model, q_lat, p_lat)
