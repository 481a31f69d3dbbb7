import json

import numpy as np
import pytest

from regime_mv import benchmarks, model_io
from regime_mv.errors import ModelError
from regime_mv.market_model import PiecewiseConstant


def same_model(a, b):
    assert (a.ell, a.m, a.n1, a.horizon, a.delta) == (b.ell, b.m, b.n1, b.horizon, b.delta)
    assert np.array_equal(a.generator, b.generator)
    ca, cb = a.coefficients, b.coefficients
    for name in ca._fields:
        assert np.array_equal(getattr(ca, name), getattr(cb, name)), name


@pytest.mark.parametrize("make", [benchmarks.scalar_model, benchmarks.shock_model])
def test_roundtrip_benchmarks(make):
    model = make()
    back = model_io.loads(model_io.dumps(model))
    same_model(model, back)
    assert model_io.dumps(back) == model_io.dumps(model)


def test_roundtrip_random(rng):
    for _ in range(10):
        model = benchmarks.random_model(rng, breakpoint=True)
        same_model(model, model_io.loads(model_io.dumps(model)))


def test_file_roundtrip(tmp_path, shock):
    path = tmp_path / "m.json"
    model_io.save_model(shock, path)
    same_model(shock, model_io.load_model(path))


def test_shock_keys_one_based(shock):
    doc = model_io.model_to_dict(shock)
    assert set(doc["shock"]) == {"1,2", "2,1"}
    assert doc["shock"]["1,2"][0]["value"] == [-0.1, -0.05]


def test_bare_values_and_breakpoints():
    doc = {"ell": 1, "m": 1, "n1": 1, "horizon": 2.0, "generator": [[0.0]],
           "rate": [0.01], "drift": [[{"t_from": 0.0, "value": [0.1]},
                                      {"t_from": 1.0, "value": [0.2]}]],
           "vol": [[[0.2]]]}
    model = model_io.model_from_dict(doc)
    assert model.drift[0](0.5)[0] == 0.1 and model.drift[0](1.5)[0] == 0.2
    assert model.drift[0](1.0)[0] == 0.1  # left-continuous at the breakpoint
    assert isinstance(model.rate[0], PiecewiseConstant) and not model.shock


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d.pop("drift"), "lacks keys"),
    (lambda d: d.update(colour="red"), "unknown"),
    (lambda d: d.update(ell="two"), "integers"),
    (lambda d: d.update(rate=[0.03]), "one table per regime"),
    (lambda d: d["shock"].update({"1,1": [0.0, 0.0]}), "out of range"),
    (lambda d: d["shock"].update({"x": [0.0, 0.0]}), "form"),
    (lambda d: d["jump_components"].append({"atoms": []}), "no atoms"),
    (lambda d: d["jump_components"][0]["atoms"][0].pop("weight"), "malformed"),
    (lambda d: d.update(vol=[[[0.2, 0.0]], [[0.3, 0.0]]]), "expected \\(2, 2\\)"),
])
def test_errors(shock, mutate, message):
    doc = model_io.model_to_dict(shock)
    mutate(doc)
    with pytest.raises(ModelError, match=message):
        model_io.loads(json.dumps(doc))


@pytest.mark.parametrize("text", ["{", "[1, 2]"])
def test_not_an_object(text):
    with pytest.raises(ModelError):
        model_io.loads(text)
