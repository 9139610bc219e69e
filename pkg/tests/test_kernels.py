import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ick import kernels as kern
from ick.errors import ShapeMismatch
from ick.linalg import sym_eigvals
import oracles
from oracles import central_diff, rel_err

SM_VALUES = {"weights": [0.6, 0.4], "means": [0.3, 1.1], "scales": [0.2, 0.05]}


def sm_spec(source=0, Q=2, values=SM_VALUES):
    spec = kern.spectral_mixture(Q, source=source)
    named = {}
    for q in range(Q):
        named[f"weight{q}"] = values["weights"][q]
        named[f"mean{q}"] = values["means"][q]
        named[f"scale{q}"] = values["scales"][q]
    return spec, kern.pack(spec, named)


def all_leaves():
    out = [
        (kern.linear(), kern.pack(kern.linear(), {"variance": 1.7})),
        (kern.rbf(), kern.pack(kern.rbf(), {"variance": 1.3, "lengthscale": 0.8})),
        (kern.periodic(), kern.pack(kern.periodic(), {"variance": 0.9, "lengthscale": 1.2, "period": 2.5})),
    ]
    out.append(sm_spec())
    return out


def test_rbf_values():
    spec, th = kern.rbf(), np.zeros(2)
    assert kern.kernel_eval(spec, th, [0.3], [0.3]) == 1.0
    assert np.isclose(kern.kernel_eval(spec, th, [0.0], [1.0]), np.exp(-0.5), atol=1e-12)
    assert np.isclose(np.exp(-0.5), 0.606530, atol=1e-6)


def test_periodic_is_periodic():
    spec = kern.periodic()
    th = kern.pack(spec, {"period": 3.0, "lengthscale": 0.7})
    x = 0.37
    assert np.isclose(kern.kernel_eval(spec, th, [x], [x + 3.0]), kern.kernel_eval(spec, th, [x], [x]), atol=1e-12)


def test_sm_at_zero_lag_is_weight_sum():
    spec, th = sm_spec()
    assert np.isclose(kern.kernel_eval(spec, th, [0.4], [0.4]), 1.0)


@pytest.mark.parametrize("dim", [1, 3])
def test_forms_match_handwritten(dim):
    rng = np.random.default_rng(dim)
    X, Y = rng.standard_normal((5, dim)), rng.standard_normal((4, dim))
    spec = kern.rbf()
    th = kern.pack(spec, {"variance": 1.3, "lengthscale": 0.8})
    np.testing.assert_allclose(kern.kernel_matrix(spec, th, X, Y), oracles.gram(lambda a, b: oracles.rbf(a, b, 1.3, 0.8), X, Y), atol=1e-12)
    spec = kern.periodic()
    th = kern.pack(spec, {"variance": 0.9, "lengthscale": 1.2, "period": 2.5})
    np.testing.assert_allclose(
        kern.kernel_matrix(spec, th, X, Y), oracles.gram(lambda a, b: oracles.periodic(a, b, 0.9, 1.2, 2.5), X, Y), atol=1e-12
    )
    spec, th = sm_spec()
    ref = oracles.gram(lambda a, b: oracles.spectral_mixture(a, b, SM_VALUES["weights"], SM_VALUES["means"], SM_VALUES["scales"]), X, Y)
    np.testing.assert_allclose(kern.kernel_matrix(spec, th, X, Y), ref, atol=1e-12)
    spec = kern.linear()
    th = kern.pack(spec, {"variance": 1.7})
    np.testing.assert_allclose(kern.kernel_matrix(spec, th, X, Y), 1.7 * X @ Y.T, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 3))
def test_symmetry_and_stationarity(seed, which):
    spec, th = all_leaves()[which]
    rng = np.random.default_rng(seed)
    x, y, shift = rng.standard_normal((3, 2))
    assert kern.kernel_eval(spec, th, x, y) == kern.kernel_eval(spec, th, y, x)
    if spec.kind != "linear":
        assert abs(kern.kernel_eval(spec, th, x + shift, y + shift) - kern.kernel_eval(spec, th, x, y)) < 1e-12


def test_single_point_matrix():
    for spec, th in all_leaves():
        x = np.array([[0.3, -0.2]])
        K = kern.kernel_matrix(spec, th, x, x)
        assert K.shape == (1, 1)
        assert K[0, 0] == kern.kernel_eval(spec, th, x[0], x[0])


def test_composites_are_elementwise():
    rng = np.random.default_rng(4)
    x1, x2 = rng.uniform(0, 1, 7), rng.uniform(0, 2, 7)
    lin = kern.linear(source=0)
    sm, th_sm = sm_spec(source=1)
    th = np.concatenate([[0.2], th_sm])
    K1 = kern.kernel_matrix(lin, th[:1], x1)
    K2 = kern.kernel_matrix(sm, th_sm, x2)
    prod = kern.KernelSpec("product", children=(lin, sm))
    add = kern.KernelSpec("sum", children=(lin, sm))
    np.testing.assert_allclose(kern.kernel_matrix(prod, th, [x1, x2]), K1 * K2, atol=1e-12)
    np.testing.assert_allclose(kern.kernel_matrix(add, th, [x1, x2]), K1 + K2, atol=1e-12)


def test_rbf_psd_on_random_points():
    X = np.random.default_rng(0).uniform(-2, 2, (16, 2))
    ev = sym_eigvals(kern.kernel_matrix(kern.rbf(), np.zeros(2), X))
    assert ev[-1] >= -1e-8 * ev[0]


def test_sm_multidim_psd():
    X = np.random.default_rng(1).uniform(-2, 2, (30, 2))
    spec, th = sm_spec()
    ev = sym_eigvals(kern.kernel_matrix(spec, th, X))
    assert ev[-1] >= -1e-8 * ev[0]


def test_param_grad_zero_upstream():
    X = np.random.default_rng(0).standard_normal((4, 1))
    for spec, th in all_leaves():
        np.testing.assert_array_equal(kern.kernel_param_grad(spec, th, X, X, np.zeros((4, 4))), 0)


def test_linear_variance_grad_by_hand():
    spec = kern.linear()
    th = kern.pack(spec, {"variance": 2.0})
    x = np.array([[0.6, 0.8]])
    g = kern.kernel_param_grad(spec, th, x, x, np.eye(1))
    assert np.isclose(g[0], 2.0 * 1.0)


def composite_cases():
    sm, th_sm = sm_spec(source=1)
    per = kern.periodic(source=1, fixed=())
    th_per = kern.pack(per, {"period": 1.7, "lengthscale": 0.9})
    lin = kern.linear(source=0)
    return [
        (kern.KernelSpec("product", children=(lin, sm)), np.concatenate([[0.3], th_sm])),
        (kern.KernelSpec("sum", children=(kern.rbf(source=0), per)), np.concatenate([[0.1, -0.2], th_per])),
    ]


@pytest.mark.parametrize("case", range(6))
def test_param_grad_matches_fd(case):
    rng = np.random.default_rng(case)
    if case < 4:
        spec, th = all_leaves()[case]
        X, Y = rng.standard_normal((5, 2)), rng.standard_normal((6, 2))
    else:
        spec, th = composite_cases()[case - 4]
        X = [rng.uniform(0, 1, 5), rng.uniform(0, 2, 5)]
        Y = [rng.uniform(0, 1, 6), rng.uniform(0, 2, 6)]
    U = rng.standard_normal((5, 6))
    g = kern.kernel_param_grad(spec, th, X, Y, U)
    fd = central_diff(lambda t: np.sum(U * kern.kernel_matrix(spec, t, X, Y)), th, 1e-5)
    assert g.shape == th.shape
    assert rel_err(g, fd) < 1e-5


def test_shape_errors():
    with pytest.raises(ShapeMismatch):
        kern.kernel_matrix(kern.rbf(), np.zeros(3), np.zeros((2, 1)))
    with pytest.raises(ShapeMismatch):
        kern.kernel_param_grad(kern.rbf(), np.zeros(2), np.zeros((2, 1)), np.zeros((3, 1)), np.zeros((2, 2)))
    with pytest.raises(ShapeMismatch):
        kern.kernel_eval(kern.rbf(), np.zeros(2), [0.0, 1.0], [0.0])


def test_json_round_trip():
    for spec, th in all_leaves() + composite_cases():
        doc = json.loads(json.dumps(kern.to_json(spec, th)))
        spec2, th2 = kern.from_json(doc)
        assert spec2 == spec
        np.testing.assert_allclose(th2, th, atol=1e-12)


def test_json_defaults_and_period_requirement():
    spec, th = kern.from_json({"type": "RBF"})
    np.testing.assert_array_equal(th, [0.0, 0.0])
    with pytest.raises(ValueError):
        kern.from_json({"type": "ExpSineSquared"})
    spec, th = kern.from_json({"type": "ExpSineSquared", "params": {"period": 365}})
    assert np.isclose(kern.unpack(spec, th)["period"], 365)
    assert spec.fixed_mask().tolist() == [False, False, True]


def test_sm_default_init():
    spec = kern.spectral_mixture(3)
    vals = kern.unpack(spec, kern.default_params(spec, X=np.linspace(0, 2, 10), n_grid=9))
    assert np.allclose([vals[f"weight{q}"] for q in range(3)], 1 / 3)
    means = [vals[f"mean{q}"] for q in range(3)]
    assert np.allclose(means, [0.5, 1.25, 2.0])
    assert np.allclose([vals[f"scale{q}"] for q in range(3)], 1.0)
