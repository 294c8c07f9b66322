"""Plain fully-connected networks used as building blocks for all models."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .manifolds import EUCLIDEAN, ManifoldParam


@dataclass
class MLPSpec:
    widths: list[int]  # [in, hidden..., out]
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if len(self.widths) < 3:
            raise ValueError("MLP needs at least one hidden layer")
        if any(w <= 0 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if self.activation not in ("tanh", "softplus"):
            raise ValueError(f"unsupported activation {self.activation!r}")


def init_mlp(spec: MLPSpec, prefix: str = "") -> dict[str, ManifoldParam]:
    """Uniform fan-in initialization; weights stored as (out, in) matrices."""
    rng = np.random.default_rng(spec.seed)
    params = {}
    for i, (n_in, n_out) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
        bound = 1.0 / np.sqrt(n_in)
        params[f"{prefix}W{i}"] = ManifoldParam(EUCLIDEAN, rng.uniform(-bound, bound, size=(n_out, n_in)))
        params[f"{prefix}b{i}"] = ManifoldParam(EUCLIDEAN, rng.uniform(-bound, bound, size=(n_out,)))
    return params


def mlp_forward(spec: MLPSpec, pvars: dict[str, ad.Variable], x: ad.Variable, prefix: str = "") -> ad.Variable:
    """Forward pass for a batch ``x`` of shape (B, n_in)."""
    act = ad.tanh if spec.activation == "tanh" else ad.softplus
    n_layers = len(spec.widths) - 1
    h = x
    for i in range(n_layers):
        w = pvars[f"{prefix}W{i}"]
        b = pvars[f"{prefix}b{i}"]
        h = ad.add(ad.matmul(h, ad.transpose(w)), b)
        if i < n_layers - 1:
            h = act(h)
    return h
