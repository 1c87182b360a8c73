import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from floorplan_net import losses as L
from floorplan_net import tensor as T
from floorplan_net.tensor import Tape, Tensor


def test_within_task_weights_cases():
    np.testing.assert_allclose(L.within_task_weights([5, 5, 5, 5]), [0.25] * 4)
    np.testing.assert_allclose(L.within_task_weights([10, 30, 60]), [0.45, 0.35, 0.20], atol=1e-15)
    np.testing.assert_allclose(L.within_task_weights([25, 75]), [0.75, 0.25], atol=1e-15)


def test_within_task_weights_rejections():
    with pytest.raises(ValueError):
        L.within_task_weights([0, 0, 0])
    with pytest.raises(ValueError):
        L.within_task_weights([12])


@given(st.lists(st.integers(0, 10_000), min_size=2, max_size=12).filter(lambda c: sum(c) > 0))
def test_weights_sum_to_one_and_are_monotone(counts):
    w = L.within_task_weights(counts)
    assert abs(w.sum() - 1) < 1e-9
    assert np.all(w >= 0)
    for i in range(len(counts)):
        for j in range(len(counts)):
            if counts[i] > counts[j]:
                assert w[i] < w[j]


def test_within_task_loss_perfect_prediction_is_zero():
    labels = np.array([[0, 1], [2, 1]])
    logits = np.full((1, 3, 2, 2), -200.0)
    for (i, j), y in np.ndenumerate(labels):
        logits[0, y, i, j] = 200.0
    loss = L.within_task_loss(Tensor(logits), labels, [0.2, 0.3, 0.5])
    assert loss.item() == 0.0


def test_within_task_loss_single_pixel():
    loss = L.within_task_loss(Tensor(np.zeros((1, 2, 1, 1))), np.array([[0]]), [0.75, 0.25])
    assert loss.item() == pytest.approx(0.75 * math.log(2), abs=1e-12)
    assert loss.item() == pytest.approx(0.5199, abs=1e-4)


def test_within_task_loss_uniform_logits():
    labels = np.arange(16).reshape(4, 4) % 4
    w = L.within_task_weights(L.class_counts(labels, 4))
    loss = L.within_task_loss(Tensor(np.zeros((1, 4, 4, 4))), labels, w)
    assert loss.item() == pytest.approx(math.log(4) / 4, abs=1e-12)


def test_within_task_loss_sum_reduction_and_label_check():
    labels = np.zeros((2, 3), dtype=int)
    mean = L.within_task_loss(Tensor(np.zeros((1, 2, 2, 3))), labels, [0.5, 0.5]).item()
    total = L.within_task_loss(Tensor(np.zeros((1, 2, 2, 3))), labels, [0.5, 0.5], reduction="sum").item()
    assert total == pytest.approx(6 * mean)
    with pytest.raises(ValueError):
        L.within_task_loss(Tensor(np.zeros((1, 2, 2, 3))), labels + 2, [0.5, 0.5])


def test_log_clamp_keeps_loss_finite():
    logits = np.zeros((1, 2, 1, 1))
    logits[0, 0] = -1e4
    loss = L.within_task_loss(Tensor(logits), np.array([[0]]), [1.0, 0.0])
    assert loss.item() == pytest.approx(-math.log(1e-12))


def test_cross_task_weights():
    assert L.cross_task_weights(100, 100) == (0.5, 0.5)
    n_rb, n_rt = L.output_pixel_counts(64, 64, 4, 9)
    w = L.cross_task_weights(n_rb, n_rt)
    assert abs(w.w_rb - 9 / 13) < 1e-12 and abs(w.w_rt - 4 / 13) < 1e-12
    assert L.output_pixel_counts(8, 8, 4, 9, count_channels=False) == (64, 64)
    with pytest.raises(ValueError):
        L.cross_task_weights(0, 0)


@given(st.integers(0, 10**6), st.integers(0, 10**6))
def test_cross_task_weights_sum_to_one(a, b):
    if a + b == 0:
        return
    w = L.cross_task_weights(a, b)
    assert abs(w.w_rb + w.w_rt - 1) < 1e-12


def test_total_loss_values():
    tw = L.TaskWeights(9 / 13, 4 / 13)
    one, zero = Tensor.scalar(1.0), Tensor.scalar(0.0)
    assert L.total_loss(one, zero, tw).item() == pytest.approx(9 / 13)
    assert L.total_loss(zero, zero, tw).item() == 0.0
    x = Tensor.scalar(0.731)
    assert L.total_loss(x, x, L.TaskWeights(0.3, 0.7)).item() == pytest.approx(0.731)


def test_total_loss_gradient_is_linear_combination():
    rng = np.random.default_rng(0)
    yb = rng.integers(0, 4, (6, 6))
    yr = rng.integers(0, 3, (6, 6))
    wb = L.within_task_weights(L.class_counts(yb, 4))
    wr = L.within_task_weights(L.class_counts(yr, 3))
    proj = Tensor(rng.normal(size=(3, 4, 1, 1)))
    tw = L.cross_task_weights(*L.output_pixel_counts(6, 6, 4, 3))

    def parts(x):
        return L.within_task_loss(x, yb, wb), L.within_task_loss(T.conv2d(x, proj), yr, wr)

    x = Tensor(rng.normal(size=(1, 4, 6, 6)), requires_grad=True)
    grads = []
    for pick in (0, 1):
        x.zero_grad()
        with Tape() as tape:
            loss = parts(x)[pick]
        tape.backward(loss)
        grads.append(x.grad.copy())
    x.zero_grad()
    with Tape() as tape:
        loss = L.total_loss(*parts(x), tw)
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, tw.w_rb * grads[0] + tw.w_rt * grads[1], rtol=1e-12, atol=1e-15)
    assert T.grad_check(lambda t: L.total_loss(*parts(t), tw), Tensor(x.data.copy()), eps=1e-6) < 1e-6
