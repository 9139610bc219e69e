import numpy as np
import pytest

from ick import kernels as kern
from ick.errors import MissingSource, ShapeMismatch
from ick.latentmap import NystromMap, RffMap
from ick.linalg import make_rng
from ick.model import (
    IckModel,
    KernelBranch,
    KernelBranchSpec,
    ModelSpec,
    NNBranch,
    NNBranchSpec,
    OptimizerState,
    TrainConfig,
    chained_product,
    compute_loss,
    cross_entropy,
    ick_predict,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
    softmax,
    train,
)
from ick.nn import MlpConfig, mlp_init
from oracles import central_diff, rel_err


def nn_branch(p, d_in=2, seed=0, act="relu", source=0):
    cfg = MlpConfig((d_in, 6, p), activation=act)
    return NNBranch(cfg, mlp_init(cfg, make_rng(seed)), source)


def rbf_branch(p, source=1):
    spec = kern.rbf()
    th = kern.pack(spec, {"variance": 1.3, "lengthscale": 0.7})
    return KernelBranch(NystromMap(spec, th, np.linspace(0, 2, p)), source)


def per_branch(p, source=2):
    spec = kern.periodic(fixed=())
    th = kern.pack(spec, {"period": 1.5, "lengthscale": 0.9, "variance": 1.1})
    return KernelBranch(RffMap(spec, th, p // 2, seed=4), source)


def toy_inputs(n, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal((n, 2)), rng.uniform(0, 2, n), rng.uniform(0, 3, n)]


def test_chained_product_examples():
    assert chained_product([np.array([[1.0, 2.0]]), np.array([[3.0, 4.0]])])[0] == 11.0
    Zs = [np.array([[1.0, 2.0]]), np.array([[2.0, 1.0]]), np.array([[1.0, 1.0]])]
    assert chained_product(Zs)[0] == 4.0


def test_batch_matches_pointwise_and_branch_order():
    model = IckModel([nn_branch(4), rbf_branch(4), per_branch(4)])
    Xs = toy_inputs(5)
    yhat = model.predict(Xs)
    for i in range(5):
        assert np.isclose(ick_predict(model, [X[i] for X in Xs]), yhat[i], atol=1e-12)
    rev = IckModel(list(reversed(model.branches)))
    np.testing.assert_allclose(rev.predict(Xs), yhat, atol=1e-12)


def test_missing_source_and_p_mismatch():
    model = IckModel([nn_branch(2), rbf_branch(2)])
    with pytest.raises(MissingSource):
        model.predict([np.zeros((3, 2))])
    with pytest.raises(ShapeMismatch):
        IckModel([nn_branch(2), rbf_branch(3)])


def test_loss_examples():
    assert compute_loss([1.0, 2.0], [1.0, 2.0]) == (0.0, pytest.approx(np.zeros(2)))
    loss, g = compute_loss([2.0], [0.0])
    assert loss == 4.0 and g[0] == 4.0
    with pytest.raises(ShapeMismatch):
        compute_loss([1.0], [1.0, 2.0])


@pytest.mark.parametrize("kind", ["mse", "mae"])
def test_loss_grad_fd(kind):
    rng = np.random.default_rng(1)
    pred, y = rng.standard_normal(8), rng.standard_normal(8)
    _, g = compute_loss(pred, y, kind)
    fd = central_diff(lambda v: compute_loss(v, y, kind)[0], pred, 1e-7)
    np.testing.assert_allclose(g, fd, atol=1e-6)


def test_optimizer_examples():
    cfg = TrainConfig(optimizer="sgd", lr=0.1, momentum=0.0)
    assert optimizer_step(OptimizerState(), np.array([1.0]), np.array([2.0]), cfg)[0] == pytest.approx(0.8)
    cfg = TrainConfig(optimizer="adam", lr=1e-3)
    g = np.array([0.3, -5.0])
    new = optimizer_step(OptimizerState(), np.zeros(2), g, cfg)
    # first bias-corrected step: mhat = g, vhat = g^2
    np.testing.assert_allclose(new, -1e-3 * g / (np.abs(g) + 1e-8), atol=1e-12)
    assert np.allclose(np.abs(new), 1e-3, atol=1e-6)
    p = np.array([0.5, -2.0])
    for opt in ("sgd", "adam"):
        np.testing.assert_array_equal(optimizer_step(OptimizerState(), p, np.zeros(2), TrainConfig(optimizer=opt)), p)


def test_optimizer_masks_and_decay():
    cfg = TrainConfig(optimizer="sgd", lr=0.1, momentum=0.0, weight_decay=0.5)
    p = np.array([1.0, 1.0, 1.0])
    out = optimizer_step(
        OptimizerState(), p, np.zeros(3), cfg, decay_mask=np.array([True, False, True]), trainable_mask=np.array([True, True, False])
    )
    np.testing.assert_allclose(out, [0.95, 1.0, 1.0])


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig.from_json({"bogus": 1})


def linear_toy():
    x = np.random.default_rng(0).uniform(-1, 1, 100)
    spec = kern.linear()
    model = IckModel([KernelBranch(NystromMap(spec, np.zeros(1), [[1.0]]), source=0)])
    return model, [x], 3.0 * x


def test_linear_branch_learns_slope():
    model, Xs, y = linear_toy()
    _, trace = train(model, Xs, TrainConfig(lr=0.05, epochs=200, batch_size=50), y=y)
    assert trace[-1] <= 1e-3


def test_training_is_deterministic():
    runs = []
    for _ in range(2):
        model = IckModel([nn_branch(4), rbf_branch(4)])
        Xs = toy_inputs(40)[:2]
        y = np.sin(3 * Xs[1])
        runs.append(train(model, Xs, TrainConfig(epochs=5, batch_size=8, seed=3), y=y)[1])
    assert runs[0] == runs[1]


@pytest.mark.parametrize("M", [2, 3])
@pytest.mark.parametrize("p", [2, 4])
def test_end_to_end_grad_fd(M, p):
    branches = [nn_branch(p, act="tanh"), rbf_branch(p), per_branch(p)][:M]
    model = IckModel(branches)
    Xs = toy_inputs(6, seed=M + p)
    y = np.random.default_rng(9).standard_normal(6)
    yhat, outs = model.forward(Xs)
    _, dy = compute_loss(yhat, y)
    g = model.backward(outs, dy)
    theta = model.get_flat()

    def probe(v):
        model.set_flat(v)
        return compute_loss(model.predict(Xs), y)[0]

    fd = central_diff(probe, theta, 1e-6)
    model.set_flat(theta)
    if M == 3:
        # the harmonic draw carries no lengthscale gradient by construction
        off = model.n_params - branches[2].n_params + 1
        fd[off] = 0.0
    assert rel_err(g, fd) < 1e-5


def test_softmax_and_cross_entropy():
    np.testing.assert_allclose(softmax([2.0, 2.0, 2.0]), np.full(3, 1 / 3))
    pr = softmax([1000.0, 0.0])
    assert np.all(np.isfinite(pr)) and pr[0] == pytest.approx(1.0) and pr[1] == pytest.approx(0.0)
    rng = np.random.default_rng(2)
    L, lab = rng.standard_normal((5, 3)), np.array([0, 2, 1, 1, 0])
    _, G = cross_entropy(L, lab)
    fd = central_diff(lambda v: cross_entropy(v.reshape(5, 3), lab)[0], L.ravel(), 1e-6).reshape(5, 3)
    np.testing.assert_allclose(G, fd, atol=1e-8)


def test_checkpoint_round_trip(tmp_path):
    model = IckModel([nn_branch(4), rbf_branch(4), per_branch(4)])
    Xs = toy_inputs(30)
    model, trace = train(model, Xs, TrainConfig(epochs=2, batch_size=10), y=np.cos(Xs[1]))
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, model, seed=7, trace=trace)
    loaded, doc = load_checkpoint(path)
    assert doc["seed"] == 7
    np.testing.assert_allclose(loaded.predict(Xs), model.predict(Xs), atol=1e-12)
    np.testing.assert_array_equal(loaded.optimizer_state.m, model.optimizer_state.m)
    bad = tmp_path / "bad.json"
    bad.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(bad)


def test_model_spec_build_and_json():
    spec = ModelSpec(
        4,
        (
            NNBranchSpec(hidden=(8,), source=0),
            KernelBranchSpec(kern.rbf(), (0.0, 0.0), source=1),
        ),
    )
    Xs = toy_inputs(20)[:2]
    a, b = spec.build(1, Xs), spec.build(1, Xs)
    np.testing.assert_array_equal(a.predict(Xs), b.predict(Xs))
    last = spec.build(1, Xs, nn_trainable="last")
    assert last.trainable_mask().sum() < a.trainable_mask().sum()
    doc = {
        "p": 4,
        "branches": [
            {"type": "nn", "hidden": [8], "source": 0},
            {"type": "kernel", "source": 1, "kernel": {"type": "RBF"}, "latent": {"method": "rff", "seed": 2}},
        ],
    }
    m = ModelSpec.from_json(doc, Xs).build(0, Xs)
    assert m.predict(Xs).shape == (20,)
    with pytest.raises(ValueError):
        ModelSpec.from_json({"p": 4, "branches": [{"type": "tree"}]})
