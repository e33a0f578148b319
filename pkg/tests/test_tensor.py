import numpy as np
import pytest

from mutelab import tensor as T
from mutelab.optim import AdamW

from gradcheck import OP_CASES, run_case


class TestBackwardBasics:
    def test_sum_of_squares_gradient(self):
        x = T.Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        loss = (x * x).sum()
        loss.backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_constant_loss_gives_zero_gradient(self):
        x = T.Tensor(np.array([1.0, 2.0]), requires_grad=True)
        loss = T.Tensor(np.array(5.0))
        (g,) = T.gradients(loss, [x])
        np.testing.assert_array_equal(g, np.zeros(2))

    def test_non_scalar_loss_rejected(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (x * x).backward()

    def test_accumulation_is_additive(self):
        rng = np.random.default_rng(0)
        xv = rng.standard_normal(5)
        x1 = T.Tensor(xv, requires_grad=True)
        f = (x1 * x1).sum()
        g = (T.exp(x1) * 0.3).sum()
        f.backward()
        g.backward()
        accumulated = x1.grad.copy()

        x2 = T.Tensor(xv, requires_grad=True)
        both = (x2 * x2).sum() + (T.exp(x2) * 0.3).sum()
        both.backward()
        np.testing.assert_allclose(accumulated, x2.grad, rtol=1e-6)

    def test_shared_subexpression_counted_once_per_use(self):
        x = T.Tensor(np.array([3.0]), requires_grad=True)
        y = x * 2.0
        loss = (y * y).sum()  # (2x)^2 -> d/dx = 8x = 24
        loss.backward()
        np.testing.assert_allclose(x.grad, [24.0])

    def test_default_dtype_is_float32(self):
        t = T.Tensor([1.0, 2.0])
        assert t.dtype == np.float32


class TestFiniteDifferences:
    @pytest.mark.parametrize("name", sorted(OP_CASES))
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_op_matches_central_differences(self, name, seed):
        run_case(OP_CASES[name], seed)

    def test_softmax_cross_entropy_spotcheck(self):
        # random 4-logit input, matching the engine against differences
        # of an independently evaluated float64 forward
        rng = np.random.default_rng(7)
        logits = rng.standard_normal(4)
        target = 2
        x = T.Tensor(logits, requires_grad=True, dtype=np.float64)
        loss = -T.log_softmax(x.reshape(1, 4))[0, target]
        (auto,) = T.gradients(loss, [x])

        def f(v):
            s = v - v.max()
            p = np.exp(s) / np.exp(s).sum()
            return -np.log(p[target])

        h = 1e-3
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            num = (f(logits + e) - f(logits - e)) / (2 * h)
            assert abs(auto[k] - num) <= 1e-6 + 1e-4 * max(abs(auto[k]), abs(num))


class TestSoftmaxProperties:
    def test_rows_are_distributions(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = T.Tensor(rng.standard_normal((4, 9)) * 5.0)
            s = T.softmax(x).data
            assert np.all(s >= 0)
            np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-6)

    def test_stable_under_large_logits(self):
        x = T.Tensor(np.array([[1000.0, 1000.5, 999.0]]))
        s = T.softmax(x).data
        assert np.all(np.isfinite(s))
        np.testing.assert_allclose(s.sum(), 1.0, atol=1e-6)


class TestAdamW:
    def test_zero_grad_zero_decay_leaves_param(self):
        p = T.Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = AdamW([p], lr=1e-3)
        p.grad = np.zeros(2, dtype=np.float32)
        before = p.data.copy()
        opt.step()
        np.testing.assert_array_equal(p.data, before)

    def test_first_step_moves_by_learning_rate(self):
        # hand-executed update: m=0.1, v=0.001, bias correction makes
        # mhat=1, vhat=1, so the step is lr/(1+eps) ~ lr
        p = T.Tensor(np.array([0.0]), requires_grad=True)
        opt = AdamW([p], lr=1e-3, weight_decay=0.0)
        p.grad = np.array([1.0], dtype=np.float32)
        opt.step()
        np.testing.assert_allclose(p.data, [-1e-3], rtol=1e-5)

    def test_decoupled_weight_decay(self):
        p = T.Tensor(np.array([2.0]), requires_grad=True)
        opt = AdamW([p], lr=0.1, weight_decay=0.5)
        p.grad = np.zeros(1, dtype=np.float32)
        opt.step()
        # pure decay: p - lr*wd*p = 2 - 0.1*0.5*2
        np.testing.assert_allclose(p.data, [1.9], rtol=1e-6)

    def test_same_seed_bit_identical(self):
        def run():
            rng = np.random.default_rng(11)
            p = T.Tensor(rng.standard_normal(8).astype(np.float32), requires_grad=True)
            opt = AdamW([p], lr=1e-2, weight_decay=0.01)
            for _ in range(5):
                loss = (p * p).sum()
                opt.zero_grad()
                loss.backward()
                opt.step()
            return p.data.tobytes()

        assert run() == run()

    def test_step_counter_and_shape_check(self):
        p = T.Tensor(np.zeros(3), requires_grad=True)
        opt = AdamW([p], lr=1e-3)
        p.grad = np.zeros(3, dtype=np.float32)
        opt.step()
        opt.step()
        assert opt.t == 2
        p.grad = np.zeros(4, dtype=np.float32)
        with pytest.raises(ValueError, match="shape"):
            opt.step()
