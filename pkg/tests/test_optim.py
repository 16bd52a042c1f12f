"""Adam behavior and the finite-difference checker itself."""

import numpy as np
import pytest

from ecgdl.errors import ConfigError
from ecgdl.layers import Parameter
from ecgdl.optim import Adam, grad_check
from ecgdl.tensor import Tensor

from oracles import adam_scalar


def test_first_step_magnitude():
    p = Parameter(np.array([1.0, -2.0, 3.0]))
    opt = Adam([p], lr=0.01)
    p.grad = np.array([0.5, -3.0, 1e-6])
    before = p.data.copy()
    opt.step()
    delta = p.data - before
    # bias-corrected first step moves by ~lr against the gradient sign
    assert np.all(np.abs(delta) <= 0.01 + 1e-12)
    assert np.all(np.abs(delta) >= 0.99 * 0.01)
    assert np.all(np.sign(delta) == -np.sign(p.grad))


def test_zero_grad_no_movement():
    p = Parameter(np.array([1.0, 2.0]))
    opt = Adam([p], lr=0.1)
    p.grad = np.zeros(2)
    before = p.data.copy()
    opt.step()
    assert np.array_equal(p.data, before)
    p.grad = None
    opt.step()
    assert np.array_equal(p.data, before)


def test_quadratic_trajectory_matches_oracle():
    p = Parameter(np.array([2.5]))
    opt = Adam([p], lr=0.05)
    mine = []
    for _ in range(10):
        p.grad = 2.0 * p.data
        opt.step()
        mine.append(p.data[0])
    expected = adam_scalar(lambda w: 2.0 * w, 2.5, 0.05, 10)
    assert np.max(np.abs(np.array(mine) - np.array(expected))) < 1e-10


def test_group_learning_rates_and_decay():
    slow = Parameter(np.zeros(1), lr_group="backbone")
    fast = Parameter(np.zeros(1), lr_group="head")
    opt = Adam([slow, fast], group_lrs={"backbone": 1e-4, "head": 1e-3})
    slow.grad = np.ones(1)
    fast.grad = np.ones(1)
    opt.step()
    assert abs(slow.data[0]) <= abs(fast.data[0]) / 9.5
    opt.decay_lr(0.95)
    assert opt.group_lrs["backbone"] == pytest.approx(0.95e-4)
    assert opt.group_lrs["head"] == pytest.approx(0.95e-3)


def test_unknown_group_rejected():
    p = Parameter(np.zeros(1), lr_group="mystery")
    with pytest.raises(ConfigError):
        Adam([p], lr=0.1)


def test_grad_check_trusts_linear_functions():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    assert grad_check(lambda: (x * 4.0).sum(), [x]) < 1e-9
