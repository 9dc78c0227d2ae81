import json
import os

import numpy as np
import pytest

from gprn.checkpoint import load_checkpoint, save_checkpoint
from gprn.data import normalize
from gprn.elbo import elbo
from gprn.errors import DataError
from gprn.model import Dataset, GprnHyper, TensorizationSpec, sample_gprn
from gprn.train import AdamConfig, train


@pytest.fixture(scope="module")
def trained():
    X = np.random.default_rng(0).uniform(-2, 2, (12, 2))
    spec = TensorizationSpec((2, 2))
    data, _, _ = sample_gprn(X, GprnHyper.from_values(sigma_y=0.05), 2, spec, 1)
    data, _ = normalize(data)
    model, _ = train(data, AdamConfig(epochs=20, learning_rate=1e-2), 2, spec, seed=0)
    return model, data


def test_round_trip_is_bit_exact(trained, tmp_path):
    model, data = trained
    save_checkpoint(model, tmp_path / "ck")
    back = load_checkpoint(tmp_path / "ck")
    np.testing.assert_array_equal(back.params.values, model.params.values)
    np.testing.assert_array_equal(back.X, model.X)
    assert back.spec == model.spec and back.jitter == model.jitter
    np.testing.assert_array_equal(back.normalization.mean, model.normalization.mean)
    np.testing.assert_array_equal(back.normalization.std, model.normalization.std)
    assert back.final_elbo == model.final_elbo
    qF, qW, hyper = back.posteriors
    recomputed = elbo(qF, qW, hyper, Dataset(back.X, data.Y), jitter=back.jitter)
    assert recomputed.total == model.final_elbo.total


def test_same_model_same_bytes(trained, tmp_path):
    model, _ = trained
    save_checkpoint(model, tmp_path / "a")
    save_checkpoint(model, tmp_path / "b")
    for name in ("manifest.json", "params.bin", "inputs.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert not [f for f in os.listdir(tmp_path / "a") if f.endswith(".tmp")]


def test_manifest_is_inspectable(trained, tmp_path):
    model, _ = trained
    save_checkpoint(model, tmp_path / "ck")
    manifest = json.loads((tmp_path / "ck" / "manifest.json").read_text())
    assert manifest["dims"] == [2, 2]
    assert manifest["layout"]["K"] == 2
    assert manifest["hyperparameters"]["sigma_y"] == model.hyper.sigma_y
    raw = np.fromfile(tmp_path / "ck" / "params.bin", dtype="<f8")
    np.testing.assert_array_equal(raw, model.params.values)


def test_corruption_detected(trained, tmp_path):
    model, _ = trained
    save_checkpoint(model, tmp_path / "ck")
    path = tmp_path / "ck" / "params.bin"
    data = bytearray(path.read_bytes())
    data[3] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(DataError, match="checksum"):
        load_checkpoint(tmp_path / "ck")


def test_missing_or_foreign_manifest(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path)
    (tmp_path / "manifest.json").write_text('{"format": "other"}')
    with pytest.raises(DataError):
        load_checkpoint(tmp_path)
