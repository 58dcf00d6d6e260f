import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_matrix
from shillab.autoencoder import ProfileAE, multinomial_nll, pretrain_ae, reconstruction_nll
from shillab.data import InteractionMatrix, attacker_subsample
from shillab.errors import DimensionError
from shillab.kernel import grad_check
from shillab.trainconf import TrainConfig


def _zero(ae):
    for name in ae.store.names():
        ae.store[name][...] = 0.0
    return ae


def test_zero_weights_encode_to_zero_and_decode_uniform():
    ae = _zero(ProfileAE(5, dim=3))
    e = ae.encode([[1, 0, 1, 0, 0]])
    np.testing.assert_array_equal(e, np.zeros((1, 3)))
    logits = ae.decode(e)
    np.testing.assert_array_equal(logits, np.zeros((1, 5)))
    assert multinomial_nll(logits, [[0, 1, 0, 0, 0]]) == pytest.approx(math.log(5), abs=1e-15)


def test_hand_set_encoder():
    ae = ProfileAE(4, dim=2)
    W = np.array([[0.2, -0.4], [1.0, 0.0], [0.0, 0.5], [-0.3, 0.3]])
    b = np.array([0.1, -0.2])
    ae.store["enc.weight"][...] = W
    ae.store["enc.bias"][...] = b
    y = np.array([1.0, 0.0, 1.0, 1.0])
    x = y / np.sqrt(3.0)
    expected = [math.tanh(sum(x[i] * W[i, k] for i in range(4)) + b[k]) for k in range(2)]
    np.testing.assert_allclose(ae.encode(y)[0], expected, atol=1e-15)


def test_hand_set_decoder():
    ae = ProfileAE(3, dim=2)
    ae.store["dec.weight"][...] = [[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]]
    ae.store["dec.bias"][...] = [0.0, 0.1, -0.1]
    np.testing.assert_allclose(ae.decode([[2.0, 4.0]])[0], [-2.0, 6.1, 5.9], atol=1e-15)


def test_identical_profiles_identical_latents():
    ae = ProfileAE(6, dim=4, seed=2)
    e = ae.encode([[1, 1, 0, 0, 0, 1], [1, 1, 0, 0, 0, 1]])
    assert np.array_equal(e[0], e[1])


def test_empty_profile_and_width_errors():
    ae = ProfileAE(4, dim=2)
    with pytest.raises(ValueError):
        ae.encode([[0, 0, 0, 0]])
    with pytest.raises(DimensionError):
        ae.encode([[1, 0, 0]])
    with pytest.raises(DimensionError):
        ae.decode([[1.0, 2.0, 3.0]])


# multinomial_nll

def test_nll_uniform_single_item():
    assert multinomial_nll(np.zeros((1, 4)), [[0, 0, 1, 0]]) == pytest.approx(math.log(4), abs=1e-15)


def test_nll_uniform_scales_with_profile_size():
    y = np.array([[1, 1, 1, 0, 0, 0, 0]])
    assert multinomial_nll(np.zeros((1, 7)), y) == pytest.approx(3 * math.log(7), abs=1e-14)


def test_nll_spike_limit():
    logits = np.array([[0.0, 500.0, 0.0, 0.0]])
    assert multinomial_nll(logits, [[0, 1, 0, 0]]) < 1e-200
    assert math.isfinite(multinomial_nll(np.array([[-1e300, 1e300]]), [[1, 0]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_nll_matches_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(scale=3.0, size=(3, 6))
    y = (rng.random((3, 6)) < 0.5).astype(float)
    total = 0.0
    for b in range(3):
        z = max(logits[b])
        lse = z + math.log(sum(math.exp(v - z) for v in logits[b]))
        total += -sum(y[b, i] * (logits[b, i] - lse) for i in range(6))
    assert multinomial_nll(logits, y) == pytest.approx(total / 3, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_nll_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(2, 8))
    y = (rng.random((2, 8)) < 0.4).astype(float)
    perm = rng.permutation(8)
    assert multinomial_nll(logits[:, perm], y[:, perm]) == pytest.approx(multinomial_nll(logits, y), rel=1e-12)


def test_nll_shape_mismatch():
    with pytest.raises(DimensionError):
        multinomial_nll(np.zeros((1, 3)), np.zeros((1, 4)))


# training

def test_loss_gradients_five_user_toy():
    y = random_matrix(np.random.default_rng(0), 5, 7, 0.4).to_dense()
    ae = ProfileAE(7, dim=3, seed=1)
    mask = (np.random.default_rng(1).random(y.shape) < 0.5) / 0.5
    for m in (None, mask):
        assert grad_check(lambda p: ae.loss(y, m), ae.store).passed


def test_single_user_single_item_memorized():
    y = InteractionMatrix.from_rows([[2]], 6)
    ae = pretrain_ae(y, TrainConfig(lr=1e-2, weight_decay=0.0, epochs=100, batch_size=1), dim=4, dropout=0.0)
    assert int(np.argmax(ae.reconstruct(y.to_dense())[0])) == 2


def test_reconstruction_ranks_profile_items_above_average():
    y = random_matrix(np.random.default_rng(3), 30, 40, 0.15)
    ae = pretrain_ae(y, TrainConfig(lr=1e-2, weight_decay=0.0, epochs=200, batch_size=10), dim=8, dropout=0.0)
    logits = ae.reconstruct(y.to_dense())
    dense = y.to_dense().astype(bool)
    assert logits[dense].mean() > logits[~dense].mean()
    # measured recall of the profile within each row's top-|profile| logits
    recall = np.mean([np.isin(np.argsort(-logits[u])[:dense[u].sum()], y.row(u)).mean() for u in range(30)])
    assert recall > 0.8


def test_pretrain_freezes_and_hash_persists():
    y = random_matrix(np.random.default_rng(4), 8, 10, 0.3)
    ae = pretrain_ae(y, TrainConfig(epochs=3, batch_size=4), dim=4)
    assert ae.frozen
    h = ae.store.freeze_hash
    ae.reconstruct(y.to_dense())
    assert ae.store.verify_frozen() and ae.store.fingerprint() == h


def test_pretrain_is_deterministic():
    y = random_matrix(np.random.default_rng(5), 8, 10, 0.3)
    cfg = TrainConfig(epochs=3, batch_size=4, seed=9)
    assert pretrain_ae(y, cfg, dim=4).store.fingerprint() == pretrain_ae(y, cfg, dim=4).store.fingerprint()


def test_pretrain_rejects_empty_view():
    with pytest.raises(ValueError):
        pretrain_ae(InteractionMatrix.empty(3, 4))


def test_ml100k_view_loss_drops(ml100k):
    view = attacker_subsample(ml100k.matrix, 0.25, seed=0)
    cfg = TrainConfig(lr=1e-3, weight_decay=1e-5, epochs=5, batch_size=128)
    before = reconstruction_nll(ProfileAE(view.matrix.n_items, seed=cfg.seed), view)
    ae = pretrain_ae(view, cfg)
    assert reconstruction_nll(ae, view) < before
