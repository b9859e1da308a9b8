import json
import shutil

import numpy as np
import pytest

from ddopt import bundle as B

DEMAND_MEAN = [32.2, 32.4, 21.8, 20.6, 36.8, 42.0, 24.6]


@pytest.fixture
def tmp_bundle(tmp_path, transport_dir):
    dst = tmp_path / "transport"
    shutil.copytree(transport_dir, dst)
    return dst


def _edit(path, fn):
    doc = json.loads(path.read_text())
    fn(doc)
    path.write_text(json.dumps(doc))


def test_load_transport(transport):
    assert [(d.symbol, d.shape) for d in transport.decisions] == [("x", (5, 7))]
    ps = {p.symbol: p for p in transport.training.parameters}
    assert (ps["inventory"].is_random, ps["inventory"].shape) == (False, (5,))
    assert (ps["demand"].is_random, ps["demand"].shape) == (True, (7,))
    assert (ps["cost"].is_random, ps["cost"].shape) == (True, (5, 7))
    assert ps["demand"].sample.shape == (5, 7)


def test_transport_validates(transport):
    rep = B.validate_bundle(transport)
    assert rep.ok and rep.errors == []
    # the published nominal cost matrix is not the average of its samples
    assert set(rep.codes()) == {"MeanMismatch"}
    assert {w.symbol for w in rep.warnings} == {"cost"}


def test_demand_value_is_sample_mean(transport):
    d = transport.training.param("demand")
    assert np.allclose(d.sample.mean(axis=0), DEMAND_MEAN, atol=1e-12)


def test_missing_truth(tmp_bundle):
    (tmp_bundle / B.TRUTH).unlink()
    with pytest.raises(B.MissingFile):
        B.load_bundle(tmp_bundle)


def test_unknown_symbol(tmp_bundle):
    _edit(tmp_bundle / B.TRUTH, lambda d: d["constraints"].append("np.sum(x, axis=1) <= capacity"))
    with pytest.raises(B.UnknownSymbol) as e:
        B.load_bundle(tmp_bundle)
    assert e.value.name == "capacity"


def test_mean_mismatch_warns(tmp_bundle):
    def bump(d):
        d["parameters"][1]["value"][0] += 0.5
    _edit(tmp_bundle / B.TRAINING, bump)
    bnd = B.load_bundle(tmp_bundle)
    rep = B.validate_bundle(bnd)
    assert rep.ok
    assert any(w.code == "MeanMismatch" and w.symbol == "demand" for w in rep.warnings)


def test_sample_shape_mismatch(tmp_bundle):
    def cut(d):
        d["parameters"][1]["sample"] = [row[:6] for row in d["parameters"][1]["sample"]]
    _edit(tmp_bundle / B.TRAINING, cut)
    with pytest.raises(B.ShapeMismatch):
        B.load_bundle(tmp_bundle)


@pytest.mark.parametrize("mutate,code", [
    (lambda d: d["parameters"][0].update(type="Binary"), "BinaryParameter"),
    (lambda d: d["parameters"][0].update(sample=[[1, 2, 3, 4, 5]]), "UnexpectedSample"),
    (lambda d: d.update(sample_size=4), "SampleSizeMismatch"),
    (lambda d: d["parameters"][0].update(value=[84.5, 35, 50, 40, 200]), "NonIntegerValue"),
    (lambda d: d["parameters"][0].update(value=[-1, 35, 50, 40, 200]), "NegativeValue"),
    (lambda d: d["parameters"].append(dict(d["parameters"][0])), "DuplicateSymbol"),
    (lambda d: d["parameters"][0].update(type="Complex"), "BadType"),
    (lambda d: d["parameters"][0].update(value=[float("inf"), 35, 50, 40, 200]), "NonFinite"),
    (lambda d: d.update(sample_size=0), "BadSampleSize"),
])
def test_validation_errors(tmp_bundle, mutate, code):
    _edit(tmp_bundle / B.TRAINING, mutate)
    bnd = B.read_bundle(tmp_bundle)
    assert code in B.validate_bundle(bnd).codes()


def test_parameter_set_mismatch(tmp_bundle):
    _edit(tmp_bundle / B.TESTING, lambda d: d["parameters"].pop(0))
    assert "ParameterSetMismatch" in B.validate_bundle(B.read_bundle(tmp_bundle)).codes()


def test_randomness_mismatch(tmp_bundle):
    _edit(tmp_bundle / B.TESTING, lambda d: d["parameters"][1].update(is_random=0, sample=None))
    assert "RandomnessMismatch" in B.validate_bundle(B.read_bundle(tmp_bundle)).codes()


def test_malformed_json(tmp_bundle):
    (tmp_bundle / B.TRUTH).write_text("{not json")
    with pytest.raises(B.MalformedDocument):
        B.read_bundle(tmp_bundle)


def test_write_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        B.write_sample_set(B.SampleSet("training", 0, []), tmp_path / "s.json")


def test_written_layout_matches_published(transport, tmp_path, transport_dir):
    B.write_sample_set(transport.training, tmp_path / "t.json")
    ours = json.loads((tmp_path / "t.json").read_text())
    published = json.loads((transport_dir / B.TRAINING).read_text())
    assert ours == published
    assert [list(p) for p in ours["parameters"]] == [list(p) for p in published["parameters"]]


def test_bundle_roundtrip(transport, tmp_path):
    transport.training.extra["note"] = "kept"
    transport.training.parameters[1].extra["unit"] = "items"
    B.write_bundle(transport, tmp_path / "copy")
    again = B.read_bundle(tmp_path / "copy")
    assert B.sample_sets_equal(transport.training, again.training)
    assert B.sample_sets_equal(transport.testing, again.testing)
    assert again.decisions == transport.decisions
    assert again.truth == transport.truth
    assert again.description == transport.description


def test_role_guard(transport):
    with pytest.raises(B.RoleError):
        B.require_role(transport.testing, "training")
    assert B.require_role(transport.training, "training") is transport.training
