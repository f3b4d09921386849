import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bladeseg.errors import EmptyDataset, InvalidConfig, ShapeMismatch
from bladeseg.optim import (AdamState, EpochStats, TrainConfig, adam_step, dice_coeff, history_csv,
                            jaccard_index, soft_loss, train)
from bladeseg.unet import UNetConfig, unet_init

from oracles import central_diff, max_rel_error, set_dice, set_jaccard

SMALL_NET = UNetConfig(depth=2, base_channels=4)


# ---------------------------------------------------------------- hard metrics

def masks(*rows):
    return np.array(rows, dtype=np.uint8)


def test_jaccard_examples():
    a = masks([1, 1, 0, 0])
    assert jaccard_index(a, a) == 1.0
    assert jaccard_index(a, masks([0, 0, 1, 1])) == 0.0
    w1 = masks([1, 1, 1, 0, 0])
    w2 = masks([1, 1, 0, 1, 0])
    assert jaccard_index(w1, w2) == 0.5


def test_dice_examples():
    a = masks([1, 1, 1, 0, 0, 0])
    assert dice_coeff(a, a) == 1.0
    assert dice_coeff(masks([1, 1, 1, 0, 0]), masks([1, 1, 0, 1, 1])) == pytest.approx(4 / 7)


def test_empty_masks_agree_perfectly():
    z = np.zeros((4, 4))
    assert jaccard_index(z, z) == 1.0 and dice_coeff(z, z) == 1.0


def test_metric_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        dice_coeff(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ShapeMismatch):
        jaccard_index(np.zeros((2, 2)), np.zeros(4))


@settings(max_examples=100, deadline=None)
@given(arrays(np.bool_, (8, 8)), arrays(np.bool_, (8, 8)))
def test_metrics_match_set_counting(a, b):
    j, d = jaccard_index(a, b), dice_coeff(a, b)
    assert j == set_jaccard(a, b)
    assert d == set_dice(a, b)
    assert abs(d - 2 * j / (1 + j)) <= 1e-9


# ---------------------------------------------------------------- soft losses

def test_soft_dice_perfect_prediction():
    ones = np.ones((2, 2))
    loss, _ = soft_loss(ones, ones, "soft_dice", 1.0)
    assert loss == 0.0


@pytest.mark.parametrize("n", [1, 4, 64])
def test_soft_dice_near_zero_prediction(n):
    loss, _ = soft_loss(np.full(n, 1e-12), np.ones(n), "soft_dice", 1.0)
    assert loss == pytest.approx(1 - 1 / (n + 1), abs=1e-9)


def test_soft_jaccard_closed_form():
    p = np.array([0.2, 0.9, 0.5])
    t = np.array([0.0, 1.0, 1.0])
    inter, total = 1.4, 1.6 + 2.0
    loss, _ = soft_loss(p, t, "soft_jaccard", 1.0)
    assert loss == pytest.approx(1 - (inter + 1) / (total - inter + 1), abs=1e-12)


@pytest.mark.parametrize("kind", ["soft_jaccard", "soft_dice"])
@pytest.mark.parametrize("seed", range(5))
def test_soft_loss_gradients(kind, seed):
    rng = np.random.default_rng(seed)
    p = rng.random((8, 8))
    t = (rng.random((8, 8)) < 0.3).astype(np.float64)
    _, grad = soft_loss(p, t, kind)
    numeric = central_diff(lambda: soft_loss(p, t, kind)[0], p)
    assert max_rel_error(grad, numeric) <= 1e-6


def test_soft_loss_keeps_dtype():
    _, g = soft_loss(np.full((3, 3), 0.5, np.float32), np.ones((3, 3), np.float32))
    assert g.dtype == np.float32


# ---------------------------------------------------------------- Adam

def test_zero_gradient_leaves_params():
    p = [np.array([1.0, -2.0])]
    state = AdamState.zeros_like(p)
    adam_step(p, [np.zeros(2)], state)
    assert p[0].tolist() == [1.0, -2.0] and state.t == 1


def test_first_step_is_learning_rate():
    for g in (1.0, 100.0):
        p = [np.zeros(1)]
        adam_step(p, [np.array([g])], AdamState.zeros_like(p), lr=0.001)
        assert 0.000999 <= -p[0][0] <= 0.001
        assert abs(-p[0][0] - 0.001 / (1 + 1e-8 / g)) <= 1e-12
    a, b = [np.zeros(1)], [np.zeros(1)]
    adam_step(a, [np.ones(1)], AdamState.zeros_like(a))
    adam_step(b, [np.full(1, 100.0)], AdamState.zeros_like(b))
    assert abs(a[0][0] - b[0][0]) <= 1e-9


def test_adam_matches_reference_recurrence():
    rng = np.random.default_rng(0)
    theta = rng.standard_normal(5)
    p = [theta.copy()]
    state = AdamState.zeros_like(p)
    m = v = np.zeros(5)
    for t in range(1, 6):
        g = rng.standard_normal(5)
        adam_step(p, [g], state, lr=0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta = theta - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert np.allclose(p[0], theta, atol=1e-14) and state.t == 5


def test_adam_shape_checks():
    p = [np.zeros(2)]
    with pytest.raises(ShapeMismatch):
        adam_step(p, [np.zeros(3)], AdamState.zeros_like(p))


# ---------------------------------------------------------------- config & loop

@pytest.mark.parametrize("kw", [dict(epochs=0), dict(learning_rate=-1.0), dict(beta1=1.0),
                                dict(loss_kind="bce"), dict(threshold=1.5), dict(flip_probability=2.0)])
def test_train_config_validation(kw):
    with pytest.raises(InvalidConfig):
        TrainConfig(**kw).validate()


def test_train_config_round_trip_and_unknown_keys():
    cfg = TrainConfig(epochs=3, loss_kind="soft_dice")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidConfig, match="lr"):
        TrainConfig.from_dict({"lr": 0.1})


def test_history_csv_format():
    text = history_csv([EpochStats(0, 0.5, 0.25, 0.125)])
    assert text == "epoch,train_loss,val_dice,val_jaccard\n0,0.5,0.25,0.125\n"


def test_training_reduces_loss_and_is_reproducible(tiny_dataset):
    root, manifest = tiny_dataset
    cfg = TrainConfig(epochs=5, learning_rate=3e-3)
    a = train(manifest.records, manifest.records[:3], SMALL_NET, cfg, root)
    b = train(manifest.records, manifest.records[:3], SMALL_NET, cfg, root)
    assert a.history[-1].train_loss < a.history[0].train_loss
    assert history_csv(a.history) == history_csv(b.history)
    for x, y in zip(a.params.arrays(), b.params.arrays()):
        assert x.tobytes() == y.tobytes()
    assert 0 <= a.best_epoch < 5


def test_zero_learning_rate_keeps_init(tiny_dataset):
    root, manifest = tiny_dataset
    res = train(manifest.records[:2], [], SMALL_NET, TrainConfig(epochs=1, learning_rate=0.0, init_seed=4), root)
    for x, y in zip(res.params.arrays(), unet_init(SMALL_NET, 4).arrays()):
        assert np.array_equal(x, y)
    assert np.isnan(res.history[0].val_dice)


def test_empty_training_set(tiny_dataset):
    root, _ = tiny_dataset
    with pytest.raises(EmptyDataset):
        train([], [], SMALL_NET, TrainConfig(epochs=1), root)
