"""Bit-exact JSON checkpoints for dynamics models and reduced-order models.

Every f64 is serialized as a hex-float string (``float.hex``), so a
save/load round trip reproduces parameters to the last bit.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .autoencoders import ConstrainedAutoencoder, ReducedOrderModel, VanillaAutoencoder
from .manifolds import BIORTHOGONAL, ManifoldParam
from .models import DynamicsModel

SCHEMA_VERSION = 1


class CheckpointError(ValueError):
    pass


def _encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "hex": [v.hex() for v in a.ravel().tolist()]}


def _decode_array(d: dict) -> np.ndarray:
    vals = np.array([float.fromhex(h) for h in d["hex"]], dtype=np.float64)
    return vals.reshape(d["shape"])


def _encode_params(params: dict[str, ManifoldParam]) -> dict:
    out = {}
    for name, p in params.items():
        if p.kind == BIORTHOGONAL:
            out[name] = {"kind": p.kind, "phi": _encode_array(p.value[0]),
                         "psi": _encode_array(p.value[1])}
        else:
            out[name] = {"kind": p.kind, "value": _encode_array(p.value)}
    return out


def _decode_params(target: dict[str, ManifoldParam], blob: dict) -> None:
    if set(target) != set(blob):
        missing = set(target) ^ set(blob)
        raise CheckpointError(f"parameter names do not match the model: {sorted(missing)}")
    for name, entry in blob.items():
        p = target[name]
        if p.kind != entry["kind"]:
            raise CheckpointError(f"parameter {name}: kind {entry['kind']} != expected {p.kind}")
        if p.kind == BIORTHOGONAL:
            p.value = (_decode_array(entry["phi"]), _decode_array(entry["psi"]))
        else:
            p.value = _decode_array(entry["value"])


def _model_blob(model: DynamicsModel) -> dict:
    return {
        "type": "dynamics-model",
        "kind": model.kind,
        "dof": model.dof,
        "hidden": list(model.hidden),
        "activation": model.activation,
        "seed": model.seed,
        "eps_sym": model.eps_sym,
        "params": _encode_params(model.params),
    }


def _model_from_blob(blob: dict) -> DynamicsModel:
    model = DynamicsModel.create(blob["kind"], blob["dof"], hidden=blob["hidden"],
                                 activation=blob["activation"], seed=blob["seed"],
                                 eps_sym=blob["eps_sym"])
    _decode_params(model.params, blob["params"])
    return model


def _ae_blob(ae) -> dict:
    if isinstance(ae, ConstrainedAutoencoder):
        blob = {"type": "constrained-ae", "widths": list(ae.widths), "seed": ae.seed,
                "use_activation": ae.use_activation}
    elif isinstance(ae, VanillaAutoencoder):
        blob = {"type": "vanilla-ae", "widths": list(ae.widths), "seed": ae.seed,
                "activation": ae.activation}
    else:
        raise CheckpointError(f"unsupported autoencoder type {type(ae).__name__}")
    blob["params"] = _encode_params(ae.params)
    return blob


def _ae_from_blob(blob: dict):
    if blob["type"] == "constrained-ae":
        ae = ConstrainedAutoencoder(list(blob["widths"]), seed=blob["seed"],
                                    use_activation=blob["use_activation"])
    elif blob["type"] == "vanilla-ae":
        ae = VanillaAutoencoder(list(blob["widths"]), seed=blob["seed"],
                                activation=blob["activation"])
    else:
        raise CheckpointError(f"unknown autoencoder type {blob['type']!r}")
    _decode_params(ae.params, blob["params"])
    return ae


def save(model_or_rom, path, extra: dict | None = None) -> None:
    """Write a checkpoint; ``extra`` holds non-essential metadata (history etc.)."""
    if isinstance(model_or_rom, ReducedOrderModel):
        rom = model_or_rom
        body = {
            "type": "reduced-order-model",
            "ae_q": _ae_blob(rom.ae_q),
            "ae_p": _ae_blob(rom.ae_p),
            "latent_model": _model_blob(rom.latent_model),
            "shift_q": _encode_array(rom.shift_q),
            "shift_p": _encode_array(rom.shift_p),
        }
    elif isinstance(model_or_rom, DynamicsModel):
        body = _model_blob(model_or_rom)
    else:
        raise CheckpointError(f"cannot checkpoint object of type {type(model_or_rom).__name__}")
    doc = {"schema_version": SCHEMA_VERSION, "model": body, "extra": extra or {}}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))


def load(path):
    """Rebuild the checkpointed model; refuses unknown schema versions."""
    doc = json.loads(Path(path).read_text())
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise CheckpointError(
            f"checkpoint schema version {version!r} is not supported (expected {SCHEMA_VERSION})")
    body = doc["model"]
    if body["type"] == "dynamics-model":
        return _model_from_blob(body)
    if body["type"] == "reduced-order-model":
        return ReducedOrderModel(
            ae_q=_ae_from_blob(body["ae_q"]),
            ae_p=_ae_from_blob(body["ae_p"]),
            latent_model=_model_from_blob(body["latent_model"]),
            shift_q=_decode_array(body["shift_q"]),
            shift_p=_decode_array(body["shift_p"]),
        )
    raise CheckpointError(f"unknown model type {body['type']!r}")


def load_extra(path) -> dict:
    doc = json.loads(Path(path).read_text())
    return doc.get("extra", {})
