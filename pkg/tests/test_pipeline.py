import io
import json
import math

import numpy as np
import pytest

from conftest import random_cheb_nodes
from anovacheb.anova import global_sensitivity_indices
from anovacheb.core import AnovaTermSet, CoefficientVector, Dataset, Density, GroupedIndexSet, NodeSet, build_superposition_term_set
from anovacheb.errors import FormatError, ShapeError, UsageError, VersionError
from anovacheb.pipeline import (
    ApproximationModel,
    evaluate,
    fit_initial,
    load_model,
    model_from_dict,
    model_to_dict,
    refit,
    save_model,
    two_stage,
)
from anovacheb.solver import LsqrConfig
from anovacheb.testbench import sample_uniform
from anovacheb.transform import GroupedTransform

TIGHT = LsqrConfig(max_iterations=500, rel_tolerance=1e-14)


def additive(x):
    # only {1}, {2}, {1, 3} carry variance
    return np.cos(2 * x[:, 0]) + x[:, 1] ** 3 + x[:, 0] * x[:, 2]


@pytest.fixture
def cheb_data(rng):
    X = random_cheb_nodes(rng, 1500, 4)
    return Dataset(X, additive(X.nodes))


def test_fit_initial_shape_and_metadata(cheb_data):
    m = fit_initial(cheb_data, 2, (10, 4))
    assert m.index_set.cardinality() == 1 + 4 * 9 + 6 * 9
    assert m.density == Density.CHEBYSHEV and m.theta is None
    for key in ("stage", "M", "cardinality", "iterations", "converged", "trainError", "ds", "N"):
        assert key in m.metadata
    assert m.metadata["stage"] == "initial" and m.metadata["N"] == [10, 4]
    assert "weighted" not in m.metadata
    with pytest.raises(UsageError):
        fit_initial(cheb_data, 0, ())
    with pytest.raises(UsageError):
        fit_initial(cheb_data, 2, (10,))
    with pytest.raises(UsageError):
        fit_initial(cheb_data, 1, (1,))


def test_two_stage_recovers_structure(cheb_data):
    initial, report, final = two_stage(cheb_data, 2, (12, 6), (0.01, 0.01), (16, 8), TIGHT)
    assert set(final.terms) == {(), (1,), (2,), (3,), (1, 3)}
    assert final.index_set.term_set.closure_added == ((3,),)
    assert final.metadata["stage"] == "refit"
    assert final.metadata["initial"]["stage"] == "initial"
    assert abs(sum(report.gsi.values()) - 1.0) < 1e-12
    x = np.cos(np.pi * np.random.default_rng(1).random((200, 4)))
    err = np.abs(final.evaluate(x) - additive(x)).max()
    assert err < 1e-8


def test_refit_checks(cheb_data):
    initial = fit_initial(cheb_data, 1, (6,))
    with pytest.raises(UsageError, match="not in the initial fit"):
        refit(cheb_data, AnovaTermSet(4, ((1, 2),)), (6, 4), initial=initial)
    with pytest.raises(UsageError, match="no bandlimit"):
        refit(cheb_data, AnovaTermSet(4, ((1,), (2,))), {(1,): 5})
    m = refit(cheb_data, AnovaTermSet(4, ((1,), (2,))), {(1,): 5, 1: 3})
    assert m.index_set.bandlimits[(1,)] == 5 and m.index_set.bandlimits[(2,)] == 3


def test_evaluate_matches_transform(cheb_data, rng):
    m = fit_initial(cheb_data, 2, (8, 3))
    x = np.cos(np.pi * rng.random((30, 4)))
    ref = GroupedTransform(x, m.index_set, mode="direct").apply(m.coefficients.values)
    np.testing.assert_allclose(evaluate(m, x), ref, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(m.evaluate(x[0]), ref[:1], rtol=1e-12)
    with pytest.raises(ShapeError):
        m.evaluate(np.zeros((2, 3)))


def test_uniform_model_shrinks_query_points(rng):
    X = sample_uniform(2, 800, 3)
    y = X.nodes[:, 0] ** 2 - X.nodes[:, 1]
    m = fit_initial(Dataset(X, y), 2, (6, 3), TIGHT)
    assert m.theta == 1e-4 and m.metadata["weighted"] is True
    x = rng.uniform(-1, 1, (20, 2))
    ref = GroupedTransform(0.9999 * x, m.index_set).apply(m.coefficients.values)
    np.testing.assert_allclose(m.evaluate(x), ref, rtol=1e-13, atol=1e-14)
    # fitted on shrunk nodes, evaluated on shrunk points: a polynomial target comes back unchanged
    np.testing.assert_allclose(m.evaluate(x), x[:, 0] ** 2 - x[:, 1], atol=1e-9)
    plain = fit_initial(Dataset(X, y), 2, (6, 3), TIGHT, weighted=False)
    assert plain.metadata["weighted"] is False


def test_save_load_round_trip_is_exact(cheb_data, tmp_path):
    initial, report, final = two_stage(cheb_data, 2, (8, 4), (0.01, 0.01), (10, 5))
    path = tmp_path / "m.json"
    save_model(final, path)
    back = load_model(path)
    assert np.array_equal(back.coefficients.values, final.coefficients.values)
    assert back.terms == final.terms and back.index_set.bandlimits == final.index_set.bandlimits
    assert back.index_set.term_set.closure_added == final.index_set.term_set.closure_added
    assert back.metadata == json.loads(json.dumps(final.metadata))
    buf = io.StringIO()
    save_model(back, buf)
    assert buf.getvalue() == path.read_text()
    x = np.cos(np.pi * np.random.default_rng(0).random((10, 4)))
    assert np.array_equal(back.evaluate(x), final.evaluate(x))


def test_uniform_round_trip_keeps_theta(tmp_path):
    X = sample_uniform(1, 100, 0)
    m = fit_initial(Dataset(X, X.nodes[:, 0]), 1, (4,))
    back = model_from_dict(model_to_dict(m))
    assert back.theta == m.theta and back.density == Density.UNIFORM


def test_load_errors():
    doc = json.loads(json.dumps(model_to_dict(ApproximationModel(
        fit_initial(Dataset(NodeSet(np.array([[0.1], [0.5], [-0.3]])), [1.0, 2.0, 3.0]), 1, (2,)).coefficients))))
    with pytest.raises(VersionError):
        model_from_dict(dict(doc, formatVersion=2))
    with pytest.raises(FormatError):
        model_from_dict({k: v for k, v in doc.items() if k != "formatVersion"})
    with pytest.raises(FormatError):
        model_from_dict([])
    broken = json.loads(json.dumps(doc))
    broken["terms"][1]["coefficients"] = "x"
    with pytest.raises(FormatError, match="coefficients"):
        model_from_dict(broken)
    broken["terms"][1]["coefficients"] = [1.0, 2.0]
    with pytest.raises(FormatError):
        model_from_dict(broken)
    with pytest.raises(FormatError, match="line 1"):
        load_model(io.StringIO("{not json"))
    # a version error is still a format error for callers that only catch the base class
    assert issubclass(VersionError, FormatError)
    assert global_sensitivity_indices(model_from_dict(doc).coefficients).total_variance >= 0


def test_in_span_training_error_and_zero_data(rng):
    I = GroupedIndexSet.with_order_bandlimits(build_superposition_term_set(4, 2), (6, 3))
    assert I.cardinality() == 1 + 4 * 5 + 6 * 4
    X = random_cheb_nodes(rng, 10 * I.cardinality(), 4)
    assert not np.any(fit_initial(Dataset(X, np.zeros(X.M)), 2, (6, 3)).coefficients.values)
    y = GroupedTransform(X, I).apply(rng.standard_normal(I.cardinality()))
    # the default tolerance bounds the backward error, which lets the residual land a few times above 1e-8
    cfg = LsqrConfig(rel_tolerance=1e-10)
    assert fit_initial(Dataset(X, y), 2, (6, 3), cfg).metadata["trainError"] <= 1e-8


def test_evaluate_reproduces_fit_residual(cheb_data):
    m = fit_initial(cheb_data, 2, (8, 4))
    resid = np.linalg.norm(cheb_data.values - m.evaluate(cheb_data.nodes))
    np.testing.assert_allclose(resid, m.metadata["residualNorm"], rtol=1e-10)


def test_refit_on_initial_set_matches_initial_fit(cheb_data):
    m = fit_initial(cheb_data, 2, (8, 4), TIGHT)
    again = refit(cheb_data, m.index_set.term_set, (8, 4), TIGHT, initial=m)
    assert rel_diff(again.coefficients.values, m.coefficients.values) < 1e-10


def rel_diff(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_refit_on_empty_term_is_weighted_mean(rng):
    X = sample_uniform(3, 500, 7)
    y = rng.standard_normal(500)
    m = refit(Dataset(X, y), AnovaTermSet(3, ()), (), TIGHT)
    w2 = np.prod(1 / (np.pi * np.sqrt(1 - (0.9999 * X.nodes) ** 2)), axis=1)
    np.testing.assert_allclose(m.coefficients.values, [np.sum(w2 * y) / np.sum(w2)], rtol=1e-12)
    c = refit(Dataset(random_cheb_nodes(rng, 50, 3), y[:50]), AnovaTermSet(3, ()), (), TIGHT)
    np.testing.assert_allclose(c.coefficients.values, [y[:50].mean()], rtol=1e-12)


def test_evaluate_trivial_models(rng):
    I = GroupedIndexSet.with_order_bandlimits(AnovaTermSet(3, ((2,),)), (2,))
    x = np.cos(np.pi * rng.random((9, 3)))
    const = ApproximationModel(CoefficientVector(I, [4.0, 0.0]))
    np.testing.assert_array_equal(const.evaluate(x), np.full(9, 4.0))
    linear = ApproximationModel(CoefficientVector(I, [0.0, 0.3]))
    np.testing.assert_allclose(linear.evaluate(x), math.sqrt(2) * 0.3 * x[:, 1], rtol=1e-14)
