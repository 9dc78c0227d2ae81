"""Checkpoints: a JSON manifest next to raw little-endian float64 arrays.

Layout of a checkpoint directory::

    manifest.json   dims, layout, normalization, hyperparameters, metadata
    params.bin      flat ParamVector values
    inputs.bin      normalized training inputs (N x p, C order)

Every file is written to a temporary name and renamed into place, the
manifest last, so a reader never sees a half-written checkpoint.  Nothing
time-dependent goes into the manifest: the same run produces the same bytes.
"""

import hashlib
import json
import os

import numpy as np

from .elbo import ElboBreakdown
from .errors import DataError
from .model import Normalization, TensorizationSpec
from .posterior import Layout, ParamVector, unpack
from .train import TrainedModel

FORMAT = "gprn-checkpoint"
VERSION = 1
_DTYPE = np.dtype("<f8")


def _atomic_write(path, data):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _sha256(data):
    return hashlib.sha256(data).hexdigest()


def save_checkpoint(model, directory):
    os.makedirs(directory, exist_ok=True)
    params = np.ascontiguousarray(model.params.values, dtype=_DTYPE).tobytes()
    inputs = np.ascontiguousarray(model.X, dtype=_DTYPE).tobytes()
    hyper = model.hyper
    norm = model.normalization
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "dims": list(model.spec.dims),
        "layout": model.params.layout.to_dict(),
        "inputs_shape": list(model.X.shape),
        "jitter": model.jitter,
        "normalization": None if norm is None else
            {"mean": np.asarray(norm.mean).tolist(), "std": np.asarray(norm.std).tolist()},
        "hyperparameters": {
            "lengthscale_f": hyper.theta_f.lengthscale, "amplitude_f": hyper.theta_f.amplitude,
            "lengthscale_w": hyper.theta_w.lengthscale, "amplitude_w": hyper.theta_w.amplitude,
            "sigma_f": hyper.sigma_f, "sigma_y": hyper.sigma_y,
        },
        "final_elbo": None if model.final_elbo is None else model.final_elbo.as_dict(),
        "metadata": model.metadata,
        "files": {"params.bin": _sha256(params), "inputs.bin": _sha256(inputs)},
    }
    _atomic_write(os.path.join(directory, "params.bin"), params)
    _atomic_write(os.path.join(directory, "inputs.bin"), inputs)
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    _atomic_write(os.path.join(directory, "manifest.json"), text.encode("utf-8"))
    return directory


def _read(directory, name, digest):
    with open(os.path.join(directory, name), "rb") as fh:
        data = fh.read()
    if _sha256(data) != digest:
        raise DataError(f"checkpoint file {name} does not match its manifest checksum")
    return data


def load_checkpoint(directory):
    try:
        with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read checkpoint manifest in {directory}: {exc}") from exc
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise DataError(f"{directory} is not a version-{VERSION} checkpoint")
    try:
        layout = Layout.from_dict(manifest["layout"])
        files = manifest["files"]
        values = np.frombuffer(_read(directory, "params.bin", files["params.bin"]), dtype=_DTYPE)
        X = np.frombuffer(_read(directory, "inputs.bin", files["inputs.bin"]), dtype=_DTYPE)
        X = X.reshape(manifest["inputs_shape"]).astype(float)
        params = ParamVector(values.astype(float), layout)
    except (KeyError, ValueError, OSError) as exc:
        raise DataError(f"corrupt checkpoint in {directory}: {exc}") from exc
    norm = manifest["normalization"]
    if norm is not None:
        norm = Normalization(np.array(norm["mean"], dtype=float), np.array(norm["std"], dtype=float))
    final = manifest.get("final_elbo")
    if final is not None:
        final = ElboBreakdown(final["kl_w"], final["kl_f"], final["exp_loglik"])
    unpack(params)  # validates the factors
    return TrainedModel(
        params=params, spec=TensorizationSpec(tuple(manifest["dims"])), X=X,
        jitter=float(manifest["jitter"]), normalization=norm, final_elbo=final,
        metadata=manifest.get("metadata", {}),
    )
