"""Engine-level tests: forward examples, brute-force oracles, gradient checks."""

import numpy as np
import pytest

from ecgdl import ops
from ecgdl import tensor as T
from ecgdl.errors import NumericalError, ShapeError
from ecgdl.optim import grad_check
from ecgdl.tensor import Tensor


def conv1d_loop(x, w, b):
    """Nested-loop oracle for valid convolution."""
    B, L, Cin = x.shape
    K, _, Cout = w.shape
    out = np.zeros((B, L - K + 1, Cout))
    for bi in range(B):
        for n in range(L - K + 1):
            for j in range(Cout):
                acc = b[j]
                for k in range(K):
                    for c in range(Cin):
                        acc += w[k, c, j] * x[bi, n + k, c]
                out[bi, n, j] = acc
    return out


class TestConv1d:
    def test_all_ones(self):
        x = Tensor(np.ones((1, 5, 1)))
        w = Tensor(np.ones((3, 1, 1)))
        out = ops.conv1d(x, w, Tensor(np.zeros(1)))
        assert np.array_equal(out.data[0, :, 0], [3.0, 3.0, 3.0])

    def test_full_record_length(self):
        x = Tensor(np.zeros((1, 18300, 1), dtype=np.float32))
        w = Tensor(np.zeros((21, 1, 4), dtype=np.float32))
        out = ops.conv1d(x, w, Tensor(np.zeros(4, dtype=np.float32)))
        assert out.shape == (1, 18280, 4)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 7, 2))
        w = rng.normal(size=(3, 2, 2))
        b = rng.normal(size=2)
        out = ops.conv1d(Tensor(x), Tensor(w), Tensor(b))
        assert np.max(np.abs(out.data - conv1d_loop(x, w, b))) < 1e-12

    def test_too_short_names_layer(self):
        with pytest.raises(ShapeError, match="conv3"):
            ops.conv1d(Tensor(np.zeros((1, 5, 1))), Tensor(np.zeros((21, 1, 2))), label="conv3")


class TestActivations:
    def test_relu_values(self):
        out = T.relu(Tensor([-1.0, 0.0, 2.0]))
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_sigmoid_tanh_at_zero(self):
        assert T.sigmoid(Tensor([0.0])).data[0] == 0.5
        assert T.tanh_act(Tensor([0.0])).data[0] == 0.0

    def test_sigmoid_no_overflow(self):
        out = T.sigmoid(Tensor([1000.0, -1000.0]))
        assert np.allclose(out.data, [1.0, 0.0])

    @pytest.mark.parametrize("fn", [T.relu, T.sigmoid, T.tanh_act])
    def test_gradients(self, fn):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(4, 3)) + 0.05, requires_grad=True)
        assert grad_check(lambda: fn(x).sum(), [x]) < 1e-6


class TestAvgPool:
    def test_basic(self):
        out = ops.avg_pool1d(Tensor(np.array([[[1.0], [2.0], [3.0], [4.0]]])))
        assert np.array_equal(out.data[0, :, 0], [1.5, 3.5])

    def test_odd_trailing_dropped(self):
        out = ops.avg_pool1d(Tensor(np.array([[[1.0], [2.0], [3.0], [4.0], [5.0]]])))
        assert np.array_equal(out.data[0, :, 0], [1.5, 3.5])

    def test_length_1103_to_551(self):
        out = ops.avg_pool1d(Tensor(np.zeros((1, 1103, 2))))
        assert out.shape[1] == 551

    def test_too_short(self):
        with pytest.raises(ShapeError):
            ops.avg_pool1d(Tensor(np.zeros((1, 1, 2))))


class TestSoftmax:
    def test_uniform(self):
        out = ops.softmax(Tensor([0.0, 0.0, 0.0, 0.0]))
        assert np.allclose(out.data, 0.25, atol=1e-15)

    def test_sums_to_one_and_shift_invariant(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            s = rng.normal(size=6) * 5
            p = ops.softmax(Tensor(s)).data
            q = ops.softmax(Tensor(s + 17.3)).data
            assert abs(p.sum() - 1.0) < 1e-12
            assert np.max(np.abs(p - q)) < 1e-12

    def test_large_logits_stable(self):
        out = ops.softmax(Tensor([1000.0, 0.0]))
        assert np.allclose(out.data, [1.0, 0.0])


class TestCrossEntropy:
    def test_uniform_logits(self):
        loss = ops.cross_entropy(Tensor(np.zeros((2, 4))), np.array([1, 3]))
        assert abs(loss.item() - np.log(4.0)) < 1e-12

    def test_confident_correct(self):
        logits = np.array([[1000.0, 0.0, 0.0, 0.0]])
        loss = ops.cross_entropy(Tensor(logits), np.array([0]))
        assert loss.item() < 1e-10

    def test_out_of_range_target(self):
        with pytest.raises(ShapeError):
            ops.cross_entropy(Tensor(np.zeros((1, 4))), np.array([4]))

    def test_gradient(self):
        rng = np.random.default_rng(7)
        logits = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        targets = np.array([0, 2, 3])
        assert grad_check(lambda: ops.cross_entropy(logits, targets), [logits]) < 1e-6


class TestLinear:
    def test_identity_weight(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = ops.linear(Tensor(x), Tensor(np.eye(2)), Tensor(np.zeros(2)))
        assert np.array_equal(out.data, x)

    def test_zero_weight_gives_bias(self):
        out = ops.linear(Tensor(np.ones((2, 3))), Tensor(np.zeros((3, 2))), Tensor([5.0, -1.0]))
        assert np.array_equal(out.data, [[5.0, -1.0], [5.0, -1.0]])

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(9)
        x, w, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=3)
        out = ops.linear(Tensor(x), Tensor(w), Tensor(b))
        expected = np.array([[sum(x[i, k] * w[k, j] for k in range(5)) + b[j]
                              for j in range(3)] for i in range(4)])
        assert np.max(np.abs(out.data - expected)) < 1e-12


class TestMaskedPooling:
    def test_mean_excludes_pad(self):
        x = Tensor(np.array([[[1.0], [3.0], [100.0]]]))
        out = ops.masked_mean_time(x, np.array([2]))
        assert out.data[0, 0] == 2.0

    def test_max(self):
        x = Tensor(np.array([[[1.0], [5.0], [2.0]]]))
        out = ops.masked_max_time(x, np.array([3]))
        assert out.data[0, 0] == 5.0

    def test_full_valid_equals_unmasked(self):
        rng = np.random.default_rng(13)
        x = rng.normal(size=(2, 6, 3))
        valid = np.array([6, 6])
        assert np.allclose(ops.masked_mean_time(Tensor(x), valid).data, x.mean(axis=1))
        assert np.allclose(ops.masked_max_time(Tensor(x), valid).data, x.max(axis=1))
        assert np.allclose(ops.masked_sum_time(Tensor(x), valid).data, x.sum(axis=1))

    def test_zero_valid_rejected(self):
        with pytest.raises(ShapeError):
            ops.masked_mean_time(Tensor(np.zeros((1, 4, 1))), np.array([0]))


class TestGatherReverse:
    def test_reverse_valid_is_involution(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(3, 5, 2))
        valid = np.array([5, 3, 1])
        once = ops.reverse_valid(Tensor(x), valid)
        twice = ops.reverse_valid(once, valid)
        assert np.array_equal(twice.data, x)

    def test_time_gather(self):
        x = np.arange(12.0).reshape(2, 3, 2)
        out = ops.time_gather(Tensor(x), np.array([2, 0]))
        assert np.array_equal(out.data, np.stack([x[0, 2], x[1, 0]]))

    def test_time_resample_endpoints(self):
        x = np.linspace(0, 1, 5).reshape(1, 5, 1)
        out = ops.time_resample(Tensor(x), 9)
        assert out.shape == (1, 9, 1)
        assert out.data[0, 0, 0] == x[0, 0, 0]
        assert out.data[0, -1, 0] == x[0, -1, 0]
        # linear data resamples exactly
        assert np.allclose(out.data[0, :, 0], np.linspace(0, 1, 9), atol=1e-15)


GRAD_OPS = {
    "add": lambda x, y: (x + y).sum(),
    "sub": lambda x, y: (x - y).sum(),
    "mul": lambda x, y: (x * y).sum(),
    "div": lambda x, y: (x / (y * y + 1.0)).sum(),
    "matmul": lambda x, y: (x.reshape(6, 4) @ y.reshape(4, 6)).sum(),
    "relu": lambda x, y: T.relu(x + 0.05).sum(),
    "sigmoid": lambda x, y: T.sigmoid(x).sum(),
    "tanh": lambda x, y: T.tanh_act(x).sum(),
    "abs": lambda x, y: T.absolute(x + 0.1).sum(),
    "pow": lambda x, y: T.power(T.absolute(x) + 0.5, 1.7).sum(),
    "mean": lambda x, y: (x.mean(axis=1) * y.mean(axis=1)).sum(),
    "softmax": lambda x, y: (ops.softmax(x.reshape(8, 3)) * y.reshape(8, 3)).sum(),
    "concat": lambda x, y: T.concat([x, y], axis=2).sum(axis=(0, 1)).sum(),
    "getitem": lambda x, y: (x[:, 1:3, :] * y[:, :2, :]).sum(),
    "reshape": lambda x, y: (x.reshape(4, 6) * y.reshape(4, 6)).sum(),
}


@pytest.mark.parametrize("name", sorted(GRAD_OPS))
def test_elementwise_grad_property(name):
    """Every generic primitive passes finite differences over many seeds."""
    fn = GRAD_OPS[name]
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        x = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
        y = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
        assert grad_check(lambda: fn(x, y), [x, y]) < 1e-4, f"{name} seed {seed}"


SEQ_OPS = {
    "conv1d": lambda x, w: ops.conv1d(x, w).sum(),
    "avg_pool": lambda x, w: (ops.avg_pool1d(x) * 2.0).sum(),
    "masked_mean": lambda x, w: ops.masked_mean_time(x, np.array([5, 3])).sum(),
    "masked_max": lambda x, w: ops.masked_max_time(x, np.array([5, 3])).sum(),
    "masked_sum": lambda x, w: ops.masked_sum_time(x, np.array([5, 3])).sum(),
    "gather": lambda x, w: ops.time_gather(x, np.array([4, 1])).sum(),
    "reverse": lambda x, w: (ops.reverse_valid(x, np.array([5, 3])) * x).sum(),
    "resample": lambda x, w: ops.time_resample(x, 11).sum(),
    "pad": lambda x, w: (ops.pad_time(x, 9) ** 2.0).sum(),
}


@pytest.mark.parametrize("name", sorted(SEQ_OPS))
def test_sequence_op_grad_property(name):
    fn = SEQ_OPS[name]
    for seed in range(10):
        rng = np.random.default_rng(200 + seed)
        x = Tensor(rng.normal(size=(2, 6, 3)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 3, 2)), requires_grad=True)
        assert grad_check(lambda: fn(x, w), [x, w]) < 1e-4, f"{name} seed {seed}"


def test_grad_accumulates_over_reuse():
    x = Tensor([2.0], requires_grad=True)
    out = (x * x + x).sum()
    out.backward()
    assert np.allclose(x.grad, [5.0])


def test_finite_check_raises():
    with pytest.raises(NumericalError):
        T.div(Tensor([1.0]), Tensor([0.0]))


def test_deterministic_replay():
    """Same seed, same graph: forward and backward must be bit-identical."""

    def run():
        rng = np.random.default_rng(42)
        x = Tensor(rng.normal(size=(2, 16, 1)), requires_grad=True)
        w = Tensor(rng.normal(size=(5, 1, 3)), requires_grad=True)
        h = T.relu(ops.conv1d(x, w))
        h = ops.dropout(h, 0.3, True, np.random.default_rng(7))
        loss = (h * h).mean()
        loss.backward()
        return loss.item(), x.grad.copy(), w.grad.copy()

    l1, gx1, gw1 = run()
    l2, gx2, gw2 = run()
    assert l1 == l2
    assert np.array_equal(gx1, gx2)
    assert np.array_equal(gw1, gw2)
