import numpy as np
import pytest

from deeprep import autodiff as ad, model, tensor_core as tc
from deeprep.autodiff import Node
from deeprep.model import CtbParams, HyperParams

from gradcheck import numeric_grad, rel_error
from test_autodiff import conv_loop_oracle


def lrelu(x, slope=0.01):
    return np.where(x > 0, x, slope * x)


def random_block(rng, n_in, n_out):
    return CtbParams(rng.normal(size=(n_in, 3, 3)) / 3, rng.normal(size=(n_out, n_in)) / np.sqrt(n_in))


def random_params(dims, seed=0, directions=(1, 2, 3)):
    h = HyperParams(seed=seed, directions=directions)
    return model.init_params(dims, h, np.random.default_rng(seed + 100).random(dims))


def ctb_oracle(x, p):
    return lrelu(tc.mode3_product(lrelu(conv_loop_oracle(x, p.kernels), p.slope), p.W2), p.slope)


# --- forward composition -----------------------------------------------------


def test_ctb_matches_numpy_composition():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 5, 3))
    p = random_block(rng, 3, 2)
    np.testing.assert_allclose(model.ctb_forward(Node(x), p).value, ctb_oracle(x, p), atol=1e-12)


def test_identity_block_acts_as_double_leaky_relu():
    x = np.random.default_rng(1).normal(size=(3, 3, 4))
    y = model.ctb_forward(Node(x), CtbParams.identity(4)).value
    np.testing.assert_allclose(y, lrelu(lrelu(x)), atol=1e-15)


@pytest.mark.parametrize("i", [1, 2, 3])
def test_directional_forward_storage_convention(i):
    # stored latent Z = permute(X, i): result equals ipermute(ctb(permute(X, i)), i)
    rng = np.random.default_rng(i)
    X = rng.normal(size=(3, 4, 5))
    p = random_block(rng, X.shape[i - 1], X.shape[i - 1])
    Z = tc.permute(X, i)
    got = model.directional_forward(Node(Z), i, p).value
    np.testing.assert_allclose(got, tc.ipermute(ctb_oracle(Z, p), i), atol=1e-12)
    assert got.shape == X.shape


def test_directional_forward_mode3_is_ctb():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 3, 2))
    p = random_block(rng, 2, 2)
    assert np.array_equal(model.directional_forward(Node(x), 3, p).value, model.ctb_forward(Node(x), p).value)


def test_directional_forward_rejects_mismatch():
    with pytest.raises(ValueError):
        model.directional_forward(Node(np.zeros((2, 2, 3))), 3, CtbParams.identity(2))


def test_aggregate_is_block_over_concatenation():
    rng = np.random.default_rng(5)
    xs = [rng.normal(size=(3, 4, 2)) for _ in range(3)]
    p = random_block(rng, 6, 2)
    got = model.aggregate(*map(Node, xs), p).value
    np.testing.assert_allclose(got, ctb_oracle(np.concatenate(xs, axis=2), p), atol=1e-12)


def test_aggregate_rejects_wrong_block():
    xs = [Node(np.zeros((2, 2, 2))) for _ in range(3)]
    with pytest.raises(ValueError):
        model.aggregate(*xs, CtbParams.identity(6))


def test_ctb_params_validation():
    with pytest.raises(ValueError):
        CtbParams(np.zeros((2, 3, 2)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        CtbParams(np.zeros((2, 3, 3)), np.zeros((2, 3)))


# --- loss assembly -----------------------------------------------------------


def loss_oracle(p, o, m, h):
    w = h.direction_weights
    Xs = {i: tc.ipermute(ctb_oracle(p.latents[i], p.theta[i]), i) for i in (1, 2, 3)}
    X = ctb_oracle(np.concatenate([Xs[1], Xs[2], Xs[3]], axis=2), p.theta_g)

    def nuc(z):
        return sum(np.linalg.svd(z[:, :, k], compute_uv=False).sum() for k in range(z.shape[2]))

    def fid(y):
        return np.sum(np.where(m, y - o, 0.0) ** 2)

    return h.beta * sum(w[i] * nuc(p.latents[i]) for i in (1, 2, 3)) + h.gamma * sum(fid(Xs[i]) for i in (1, 2, 3)) + fid(X)


def test_loss_matches_oracle():
    dims = (4, 5, 3)
    p = random_params(dims, seed=1)
    rng = np.random.default_rng(6)
    o, m = rng.random(dims), rng.random(dims) < 0.5
    h = HyperParams(beta=0.3, theta=0.5, gamma=0.2)
    assert model.loss(p, o, m, h).value == pytest.approx(loss_oracle(p, o, m, h), rel=1e-12)


def test_loss_zero_when_fit_and_unregularised():
    dims = (3, 3, 3)
    p = random_params(dims)
    o = model.predict(p)
    m = np.random.default_rng(7).random(dims) < 0.5
    assert model.loss(p, o, m, HyperParams(beta=0.0, gamma=0.0)).value == 0.0


def test_loss_equal_thirds_at_theta_one():
    dims = (3, 4, 3)
    p = random_params(dims, seed=2)
    rng = np.random.default_rng(8)
    o, m = rng.random(dims), rng.random(dims) < 0.5
    g = model.build_graph(p, o, m, HyperParams(beta=1.0, theta=1.0, gamma=0.0))
    nuc = sum(g.terms[f"nuclear{i}"].value for i in (1, 2, 3))
    assert g.loss.value == pytest.approx(nuc / 3 + g.terms["fidelity"].value, rel=1e-12)


def test_nuclear_terms_use_stored_third_axis():
    p = random_params((3, 4, 5), seed=3)
    g = model.build_graph(p, np.zeros((3, 4, 5)), np.ones((3, 4, 5), bool), HyperParams())
    for i in (1, 2, 3):
        X = tc.ipermute(p.latents[i], i)
        expected = sum(np.linalg.svd(tc.frontal_slice(X, i, k), compute_uv=False).sum() for k in range(X.shape[i - 1]))
        assert g.terms[f"nuclear{i}"].value == pytest.approx(expected, rel=1e-12)


def test_direction_weights():
    w = HyperParams(theta=0.1).direction_weights
    assert sum(w.values()) == pytest.approx(1.0)
    assert w[1] == w[2] == pytest.approx(1 / 2.1)
    big = HyperParams(theta=1e8).direction_weights
    assert big[1] < 1e-7 and big[2] < 1e-7 and abs(big[3] - 1) < 1e-7
    assert HyperParams(theta=float("inf")).direction_weights == {1: 0.0, 2: 0.0, 3: 1.0}


@pytest.mark.parametrize("i", [1, 2, 3])
def test_single_direction_loss(i):
    dims = (3, 4, 3)
    p = random_params(dims, seed=4, directions=(i,))
    rng = np.random.default_rng(9)
    o, m = rng.random(dims), rng.random(dims) < 0.5
    h = HyperParams(beta=0.7, directions=(i,))
    g = model.build_graph(p, o, m, h)
    assert np.array_equal(g.output.value, g.directional[i].value)
    assert g.loss.value == pytest.approx(0.7 * g.terms[f"nuclear{i}"].value + g.terms["fidelity"].value, rel=1e-12)
    assert np.array_equal(model.predict(p), g.output.value)


def _leaf_gradcheck(seed, h, dims=(4, 4, 3)):
    p = random_params(dims, seed=seed)
    rng = np.random.default_rng(seed + 50)
    for z in p.latents.values():
        z[:] = rng.normal(size=z.shape)
    o, m = rng.random(dims), rng.random(dims) < 0.6
    g = model.build_graph(p, o, m, h)
    grads = model.ad.backward(g.loss)
    worst = 0.0
    for leaf, arr in zip(g.leaves, p.arrays()):
        fd = numeric_grad(lambda: float(model.loss(p, o, m, h).value), arr)
        worst = max(worst, rel_error(grads[leaf], fd))
    return worst


@pytest.mark.parametrize("seed", range(3))
def test_full_loss_gradient(seed):
    assert _leaf_gradcheck(seed, HyperParams(beta=0.5, theta=0.7, gamma=0.3)) < 1e-4


def test_leaves_follow_array_order():
    p = random_params((3, 3, 3))
    g = model.build_graph(p, np.zeros((3, 3, 3)), np.ones((3, 3, 3), bool), HyperParams())
    assert all(leaf.value is arr for leaf, arr in zip(g.leaves, p.arrays()))
    assert len(g.leaves) == len(p.arrays()) == 3 + 6 + 2


# --- initialisation and parameter count ----------------------------------------


def test_init_latents_are_permuted_tnn():
    dims = (3, 4, 5)
    t = np.random.default_rng(10).random(dims)
    p = model.init_params(dims, HyperParams(), t)
    for i in (1, 2, 3):
        assert np.array_equal(p.latents[i], tc.permute(t, i))
        assert p.theta[i].n_in == p.theta[i].n_out == dims[i - 1]
    assert (p.theta_g.n_in, p.theta_g.n_out) == (15, 5)
    # the latents are copies, so training cannot alter the initial tensor
    p.latents[3][0, 0, 0] = -1.0
    assert t[0, 0, 0] != -1.0


def test_init_deterministic_per_seed():
    dims = (3, 3, 4)
    t = np.ones(dims) / 2
    a = model.init_params(dims, HyperParams(seed=5), t)
    b = model.init_params(dims, HyperParams(seed=5), t)
    c = model.init_params(dims, HyperParams(seed=6), t)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    assert not np.array_equal(a.theta[1].W2, c.theta[1].W2)


def test_init_std_over_many_draws():
    blk = model._gaussian_block(np.random.default_rng(11), 12000, 10, 0.01)
    assert blk.kernels.size > 1e5 and blk.W2.size > 1e5
    assert abs(blk.kernels.std() - 1 / 3) < 0.01 / 3
    assert abs(blk.W2.std() * np.sqrt(12000) - 1) < 0.01
    assert abs(blk.kernels.mean()) < 5e-3


def test_init_expanded_latents():
    dims = (3, 4, 2)
    t = np.random.default_rng(12).random(dims)
    h = HyperParams(k=3, expanded_init_std=1e-2)
    p = model.init_params(dims, h, t)
    for i in (1, 2, 3):
        base = tc.permute(t, i)
        assert p.latents[i].shape == model.latent_shape(dims, i, 3)
        assert np.array_equal(p.latents[i][:, :, : base.shape[2]], base)
        assert p.theta[i].n_in == 3 * dims[i - 1] and p.theta[i].n_out == dims[i - 1]
    g = model.build_graph(p, t, np.ones(dims, bool), h)
    assert g.output.shape == dims


def test_init_rejects_wrong_shape():
    with pytest.raises(ValueError):
        model.init_params((2, 2, 2), HyperParams(), np.zeros((2, 2, 3)))


@pytest.mark.parametrize(
    "dims, k, directions, expected",
    [
        ((200, 200, 80), 1, (1, 2, 3), 9_712_080),
        ((200, 200, 80), 1, (3,), 3_207_120),
        ((200, 200, 80), 1, (1,), 3_241_800),
        ((200, 200, 80), 2, (1, 2, 3), 19_402_800),
        ((1, 1, 1), 1, (1, 2, 3), 63),
    ],
)
def test_param_count_values(dims, k, directions, expected):
    assert model.param_count(dims, k, directions) == expected


@pytest.mark.parametrize("k", [1, 2])
@pytest.mark.parametrize("directions", [(1,), (2,), (3,), (1, 2, 3)])
def test_param_count_matches_instantiated_model(k, directions):
    dims = (3, 4, 5)
    p = model.init_params(dims, HyperParams(k=k, directions=directions), np.zeros(dims))
    assert p.size() == model.param_count(dims, k, directions)


# --- hyperparameters ---------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [dict(beta=-1), dict(gamma=-1), dict(theta=-1), dict(k=0), dict(k=1.5), dict(lr=0), dict(latent_lr=-1),
     dict(iterations=-1), dict(directions=(1, 2))],
)
def test_hyperparams_validation(kwargs):
    with pytest.raises(ValueError):
        HyperParams(**kwargs)


def test_hyperparams_latent_lr_fallback():
    assert HyperParams(latent_lr=None, lr=0.02).effective_latent_lr == 0.02
    assert HyperParams().to_dict()["directions"] == [1, 2, 3]


# --- training ----------------------------------------------------------------


def small_problem(dims=(6, 6, 6), observed=0.5, seed=0):
    rng = np.random.default_rng(seed)
    x = np.einsum("i,j,k->ijk", rng.random(dims[0]), rng.random(dims[1]), rng.random(dims[2]))
    m = rng.random(dims) < observed
    return x, np.where(m, x, 0.0), m


def test_zero_iterations_returns_initial_aggregation():
    x, o, m = small_problem()
    h = HyperParams(iterations=0)
    res = model.train(o, m, h)
    fresh = model.init_params(o.shape, h, res.tnn_x)
    assert np.array_equal(res.x, model.predict(fresh))
    assert np.array_equal(res.init_x, res.x)
    assert len(res.history) == 1


def test_training_reduces_fidelity_fully_observed():
    x, _, _ = small_problem()
    m = np.ones(x.shape, bool)
    res = model.train(x, m, HyperParams(beta=0.0, gamma=0.0, iterations=200, early_stop=False), tnn_x=x)
    fid = np.array([r["fidelity"] for r in res.history])
    windows = fid[:200].reshape(4, 50).mean(axis=1)
    assert np.all(np.diff(windows) < 0)
    err0 = np.sum((res.init_x - x) ** 2)
    assert np.sum((res.x - x) ** 2) < err0


def test_history_records_every_term():
    x, o, m = small_problem()
    res = model.train(o, m, HyperParams(iterations=3))
    assert [r["iteration"] for r in res.history] == [0, 1, 2, 3]
    assert set(res.history[0]) == {"iteration", "loss", "fidelity", "nuclear1", "nuclear2", "nuclear3",
                                   "fidelity1", "fidelity2", "fidelity3"}


def test_training_deterministic():
    x, o, m = small_problem()
    h = HyperParams(iterations=20)
    a = model.train(o, m, h, tnn_x=x)
    b = model.train(o, m, h, tnn_x=x)
    assert np.array_equal(a.x, b.x)


def test_frozen_latents_stay_put():
    x, o, m = small_problem()
    res = model.train(o, m, HyperParams(iterations=10, latent_lr=0.0), tnn_x=x)
    for i in (1, 2, 3):
        assert np.array_equal(res.params.latents[i], tc.permute(x, i))


def test_early_stop_on_plateau():
    x, o, m = small_problem()
    res = model.train(o, m, HyperParams(iterations=100, plateau_window=10, plateau_tol=10.0), tnn_x=x)
    assert len(res.history) == 11


def test_train_rejects_empty_mask():
    with pytest.raises(ValueError):
        model.train(np.zeros((3, 3, 3)), np.zeros((3, 3, 3), bool))


def test_train_reports_divergence():
    x, o, m = small_problem()
    with np.errstate(all="ignore"), pytest.raises(model.TrainingDiverged):
        model.train(o, m, HyperParams(iterations=50, lr=1e300, latent_lr=1e300), tnn_x=x)
