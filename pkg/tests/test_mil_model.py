import numpy as np
import pytest

from wsi_benchkit.errors import DimensionMismatch
from wsi_benchkit.mil import AggregatorParams, ModelDims, forward, init_params, loss_and_grad
from wsi_benchkit.mil.bags import make_bag

SMALL = dict(proj_dim=8, attn_hidden=6, n_heads=2, ff_dim=12, n_layers=2)


def small_dims(d_in=7, n_classes=3, **over):
    kwargs = dict(SMALL, **over)
    return ModelDims(d_in=d_in, n_classes=n_classes, **kwargs)


def random_setup(variant, seed, d_in=7, n=5, n_classes=3):
    rng = np.random.default_rng(seed)
    dims = small_dims(d_in, n_classes)
    params = init_params(variant, dims, rng)
    bag = make_bag("b0", rng.normal(size=(n, d_in)), int(rng.integers(0, n_classes)))
    return params, bag


@pytest.mark.parametrize("variant", ["mean_pool", "attmil", "transformer"])
def test_probs_are_simplex(variant):
    params, bag = random_setup(variant, 0)
    probs, _ = forward(params, bag)
    assert abs(probs.sum() - 1.0) <= 1e-9
    assert np.all(probs >= 0)


def test_attmil_singleton_alpha():
    params, _ = random_setup("attmil", 1)
    rng = np.random.default_rng(5)
    bag = make_bag("one", rng.normal(size=(1, 7)), 0)
    _, alphas = forward(params, bag)
    assert alphas.shape == (1,)
    assert alphas[0] == 1.0


def test_attmil_identical_patches_uniform_alpha():
    params, _ = random_setup("attmil", 2)
    patch = np.random.default_rng(6).normal(size=7)
    bag = make_bag("same", np.tile(patch, (5, 1)), 0)
    _, alphas = forward(params, bag)
    assert np.all(alphas == alphas[0])
    assert abs(alphas.sum() - 1.0) <= 1e-12


def test_alpha_sums_to_one():
    params, bag = random_setup("attmil", 3, n=9)
    _, alphas = forward(params, bag)
    assert abs(alphas.sum() - 1.0) <= 1e-12


def test_mean_pool_absent_alphas():
    params, bag = random_setup("mean_pool", 4)
    _, alphas = forward(params, bag)
    assert alphas is None


def test_attmil_with_zero_scorer_equals_mean_pool():
    # zero the second attention layer -> uniform weights -> mean pooling
    rng = np.random.default_rng(7)
    dims = small_dims()
    att = init_params("attmil", dims, rng)
    att.tensors["att_w2"][:] = 0.0
    att.tensors["att_b2"][...] = 0.0
    mean = AggregatorParams("mean_pool", dims, {
        k: att.tensors[k].copy() for k in ("proj_w", "proj_b", "cls_w", "cls_b")})
    bag = make_bag("b", rng.normal(size=(6, 7)), 1)
    probs_att, alphas = forward(att, bag)
    probs_mean, _ = forward(mean, bag)
    assert np.max(np.abs(probs_att - probs_mean)) <= 1e-9
    assert np.allclose(alphas, 1.0 / 6.0, atol=1e-15)


@pytest.mark.parametrize("variant", ["mean_pool", "attmil", "transformer"])
def test_permutation_invariance(variant):
    params, bag = random_setup(variant, 8, n=7)
    rng = np.random.default_rng(9)
    perm = rng.permutation(7)
    probs, _ = forward(params, bag)
    probs_p, _ = forward(params, make_bag("p", bag.patches[perm], bag.label))
    assert np.max(np.abs(probs - probs_p)) <= 1e-9


def test_dimension_mismatch():
    params, _ = random_setup("mean_pool", 10)
    bad = make_bag("bad", np.zeros((3, 5)), 0)
    with pytest.raises(DimensionMismatch):
        forward(params, bad)


def test_uniform_probs_loss_is_log_c():
    params, bag = random_setup("mean_pool", 11)
    # zero classifier -> exactly uniform probabilities
    params.tensors["cls_w"][:] = 0.0
    params.tensors["cls_b"][:] = 0.0
    loss, grads = loss_and_grad(params, bag)
    assert loss == pytest.approx(np.log(3), abs=1e-12)


def test_certain_prediction_zero_loss():
    params, bag = random_setup("mean_pool", 12)
    params.tensors["cls_w"][:] = 0.0
    params.tensors["cls_b"][:] = np.array([500.0, 0.0, 0.0])
    bag = make_bag(bag.patient_id, bag.patches, 0)
    loss, grads = loss_and_grad(params, bag)
    assert loss == 0.0
    assert np.max(np.abs(grads["cls_b"])) <= 1e-200


def flatten(tensors):
    keys = sorted(tensors)
    return np.concatenate([tensors[k].ravel() for k in keys]), keys


def grad_check(variant, seed, h=1e-5):
    params, bag = random_setup(variant, seed,
                               d_in=int(np.random.default_rng(seed).integers(4, 17)),
                               n=int(np.random.default_rng(seed + 1).integers(1, 9)),
                               n_classes=int(np.random.default_rng(seed + 2).integers(2, 5)))
    _, grads = loss_and_grad(params, bag)
    analytic, keys = flatten(grads)
    numeric = np.empty_like(analytic)
    pos = 0
    for key in keys:
        tensor = params.tensors[key]
        flat = tensor.reshape(-1) if tensor.ndim else tensor.reshape(1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = loss_and_grad(params, bag)
            flat[i] = orig - h
            down, _ = loss_and_grad(params, bag)
            flat[i] = orig
            numeric[pos] = (up - down) / (2 * h)
            pos += 1
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return np.max(np.abs(analytic - numeric) / denom)


@pytest.mark.parametrize("variant", ["mean_pool", "attmil", "transformer"])
def test_gradients_match_finite_differences(variant):
    worst = max(grad_check(variant, seed) for seed in range(5))
    assert worst <= 1e-4
