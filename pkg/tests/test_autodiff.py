import numpy as np
import pytest

from graphdiag import autodiff as ad


def param(rng, *shape):
    return ad.Parameter(rng.normal(size=shape))


class TestForwardValues:
    def test_add_sub_mul_div(self):
        a = ad.Tensor([2.0, 3.0])
        b = ad.Tensor([4.0, 5.0])
        assert (a + b).data.tolist() == [6.0, 8.0]
        assert (a - b).data.tolist() == [-2.0, -2.0]
        assert (a * b).data.tolist() == [8.0, 15.0]
        assert (a / b).data.tolist() == [0.5, 0.6]

    def test_matmul_identity(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(3, 4))
        out = ad.matmul(ad.Tensor(x), ad.Tensor(np.eye(4)))
        assert np.allclose(out.data, x)

    def test_matmul_shape_errors(self):
        with pytest.raises(ad.ShapeError):
            ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((4, 2))))
        with pytest.raises(ad.ShapeError):
            ad.matmul(ad.Tensor(np.ones(3)), ad.Tensor(np.ones((3, 2))))

    def test_relu_and_leaky(self):
        x = ad.Tensor([-2.0, 0.0, 3.0])
        assert ad.relu(x).data.tolist() == [0.0, 0.0, 3.0]
        assert np.allclose(ad.leaky_relu(x).data, [-0.4, 0.0, 3.0])

    def test_sigmoid_symmetry(self):
        x = ad.Tensor([0.0, 2.0, -2.0])
        s = ad.sigmoid(x).data
        assert s[0] == 0.5
        assert s[1] + s[2] == pytest.approx(1.0)

    def test_row_softmax_uniform(self):
        p = ad.row_softmax(ad.Tensor(np.zeros((3, 4)))).data
        assert np.allclose(p, 0.25)

    def test_row_softmax_shift_invariant(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(5, 6))
        p1 = ad.row_softmax(ad.Tensor(z)).data
        p2 = ad.row_softmax(ad.Tensor(z + 100.0)).data
        assert np.allclose(p1, p2)
        assert np.allclose(p1.sum(axis=-1), 1.0)

    def test_row_softmax_extreme_inputs_finite(self):
        p = ad.row_softmax(ad.Tensor([[1000.0, -1000.0, 0.0]])).data
        assert np.isfinite(p).all()
        assert p[0, 0] == pytest.approx(1.0)

    def test_masked_softmax_restricts_support(self):
        rng = np.random.default_rng(2)
        z = rng.normal(size=(4, 4))
        mask = np.eye(4, dtype=bool) | np.eye(4, k=1, dtype=bool)
        p = ad.masked_neighbor_softmax(ad.Tensor(z), mask).data
        assert np.all(p[~mask] == 0.0)
        assert np.allclose(p.sum(axis=-1), 1.0)

    def test_masked_softmax_empty_row_zero(self):
        mask = np.array([[True, True], [False, False]])
        p = ad.masked_neighbor_softmax(ad.Tensor(np.ones((2, 2))), mask).data
        assert np.allclose(p[0], 0.5)
        assert np.all(p[1] == 0.0)

    def test_conv1d_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 9, 3))
        w = rng.normal(size=(4, 3, 5))
        for stride in (1, 2):
            out = ad.conv1d(ad.Tensor(x), ad.Tensor(w), stride=stride).data
            tout = (9 - 4) // stride + 1
            expected = np.zeros((2, tout, 5))
            for b in range(2):
                for t in range(tout):
                    for o in range(5):
                        acc = 0.0
                        for k in range(4):
                            for f in range(3):
                                acc += x[b, t * stride + k, f] * w[k, f, o]
                        expected[b, t, o] = acc
            assert np.abs(out - expected).max() < 1e-12

    def test_maxpool_values(self):
        x = np.arange(10, dtype=float).reshape(1, 10, 1)
        out = ad.maxpool1d(ad.Tensor(x), 3).data
        assert out.reshape(-1).tolist() == [2.0, 5.0, 8.0]

    def test_segment_sum_matches_loop(self):
        ids = np.array([0, 0, 1, 2, 2, 2])
        x = np.arange(12, dtype=float).reshape(6, 2)
        seg = ad.SegmentIndex.from_sorted_ids(ids)
        out = ad.segment_sum(ad.Tensor(x), seg).data
        assert np.array_equal(out, [[2, 4], [4, 5], [24, 27]])

    def test_segment_max_matches_loop(self):
        ids = np.array([0, 0, 0, 1, 1])
        x = np.array([[1.0, 9.0], [5.0, 2.0], [3.0, 3.0], [0.0, 1.0], [2.0, 0.0]])
        seg = ad.SegmentIndex.from_sorted_ids(ids)
        out = ad.segment_max(ad.Tensor(x), seg).data
        assert np.array_equal(out, [[5.0, 9.0], [2.0, 1.0]])

    def test_take_put_rows(self):
        x = np.arange(6, dtype=float).reshape(3, 2)
        taken = ad.take_rows(ad.Tensor(x), [2, 0, 2]).data
        assert np.array_equal(taken, [[4, 5], [0, 1], [4, 5]])
        put = ad.put_rows(ad.Tensor(x[:2]), [3, 1], 4).data
        assert np.array_equal(put, [[0, 0], [2, 3], [0, 0], [0, 1]])

    def test_cross_entropy_uniform_logits(self):
        # equal logits over M classes give loss ln M regardless of labels
        onehot = np.eye(4)
        mask = np.ones(4, dtype=bool)
        loss = ad.cross_entropy(ad.Tensor(np.zeros((4, 4))), onehot, mask)
        assert loss.item() == pytest.approx(np.log(4.0))

    def test_cross_entropy_masked_mean(self):
        rng = np.random.default_rng(4)
        z = rng.normal(size=(5, 3))
        y = np.array([0, 2, 1, 0, 2])
        onehot = np.eye(3)[y]
        mask = np.array([True, False, True, True, False])
        got = ad.cross_entropy(ad.Tensor(z), onehot, mask).item()
        # scalar oracle
        acc = 0.0
        for i in range(5):
            if not mask[i]:
                continue
            logz = np.log(np.exp(z[i]).sum())
            acc += logz - z[i, y[i]]
        assert got == pytest.approx(acc / mask.sum(), abs=1e-12)

    def test_cross_entropy_empty_mask(self):
        with pytest.raises(ValueError):
            ad.cross_entropy(ad.Tensor(np.zeros((2, 2))), np.eye(2),
                             np.zeros(2, dtype=bool))

    def test_bce_matrix_scalar_oracle(self):
        rng = np.random.default_rng(5)
        r = rng.uniform(0.05, 0.95, size=(3, 3))
        t = (rng.random((3, 3)) < 0.5).astype(float)
        got = ad.bce_matrix(ad.Tensor(r), t).item()
        acc = 0.0
        for i in range(3):
            for j in range(3):
                acc -= t[i, j] * np.log(r[i, j]) + (1 - t[i, j]) * np.log(1 - r[i, j])
        assert got == pytest.approx(acc / 9, abs=1e-12)

    def test_mse_matrix(self):
        got = ad.mse_matrix(ad.Tensor([[1.0, 2.0]]), np.array([[0.0, 0.0]])).item()
        assert got == pytest.approx(2.5)


class TestBackward:
    def test_leaf_accumulation_reused_operand(self):
        # y = x*x + x uses x three times; dy/dx = 2x + 1
        x = ad.Parameter(np.array(3.0))
        y = x * x + x
        y.backward()
        assert x.grad == pytest.approx(7.0)

    def test_grad_accumulates_across_backward_calls(self):
        x = ad.Parameter(np.array(2.0))
        (x * x).backward()
        (x * x).backward()
        assert x.grad == pytest.approx(8.0)

    def test_chain_hand_case(self):
        # f = sum(sigmoid(W x)); check one entry against the closed form
        w = ad.Parameter(np.array([[0.5, -0.25]]))
        x = ad.Tensor(np.array([[1.0], [2.0]]))
        out = ad.sum_(ad.sigmoid(ad.matmul(w, x)))
        out.backward()
        s = 1 / (1 + np.exp(0.0))
        assert w.grad[0, 0] == pytest.approx(s * (1 - s) * 1.0)
        assert w.grad[0, 1] == pytest.approx(s * (1 - s) * 2.0)

    def test_no_grad_for_constants(self):
        a = ad.Tensor([1.0])
        b = ad.Parameter([2.0])
        (ad.sum_(a * b)).backward()
        assert a.grad is None
        assert b.grad is not None

    def test_backward_requires_scalar(self):
        x = ad.Parameter(np.ones(3))
        with pytest.raises(ad.ShapeError):
            (x * 2.0).backward()


FD_TOL = 1e-6


class TestGradCheck:
    """Central-difference verification of every differentiable op."""

    def check(self, build, n_params, seeds=range(5), shape_rng=None):
        for seed in seeds:
            rng = np.random.default_rng(seed)
            fn, params = build(rng)
            assert ad.grad_check(fn, params) < FD_TOL

    def test_arithmetic(self):
        def build(rng):
            a, b = param(rng, 3, 4), param(rng, 3, 4)
            c = param(rng, 4)  # broadcast operand

            def fn():
                return ad.sum_((a * b - a / (ad.sigmoid(b) + 1.5) + c) * 0.7 + (-a))

            return fn, [a, b, c]

        self.check(build, 3)

    def test_matmul_batched(self):
        def build(rng):
            a, w = param(rng, 2, 3, 4), param(rng, 4, 5)
            return (lambda: ad.sum_(ad.matmul(a, w))), [a, w]

        self.check(build, 2)

    def test_transpose_reshape_concat(self):
        def build(rng):
            a, b = param(rng, 2, 3), param(rng, 2, 3)

            def fn():
                t = ad.transpose(ad.concat([a, b], axis=0), (1, 0))
                return ad.sum_(ad.reshape(t, (12,)) * ad.reshape(t, (12,)))

            return fn, [a, b]

        self.check(build, 2)

    def test_pointwise(self):
        def build(rng):
            a = param(rng, 4, 3)

            def fn():
                return ad.sum_(ad.exp(0.1 * ad.relu(a))
                               + ad.log(ad.sigmoid(a) + 0.5)
                               + ad.leaky_relu(a))

            return fn, [a]

        self.check(build, 1)

    def test_reductions(self):
        def build(rng):
            a = param(rng, 4, 5)

            def fn():
                return (ad.sum_(ad.mean_(a, axis=1)) + ad.mean_(a)
                        + ad.sum_(ad.mean_rows(a)) + ad.sum_(ad.max_rows(a)))

            return fn, [a]

        self.check(build, 1)

    def test_row_softmax(self):
        def build(rng):
            a = param(rng, 4, 6)
            w = rng.normal(size=(4, 6))
            return (lambda: ad.sum_(ad.row_softmax(a) * w)), [a]

        self.check(build, 1)

    def test_masked_softmax(self):
        def build(rng):
            a = param(rng, 5, 5)
            mask = rng.random((5, 5)) < 0.6
            mask |= np.eye(5, dtype=bool)
            w = rng.normal(size=(5, 5))
            return (lambda: ad.sum_(ad.masked_neighbor_softmax(a, mask) * w)), [a]

        self.check(build, 1)

    def test_conv_and_pool(self):
        def build(rng):
            x, k = param(rng, 2, 8, 3), param(rng, 3, 3, 4)

            def fn():
                return ad.sum_(ad.maxpool1d(ad.conv1d(x, k), 2))

            return fn, [x, k]

        self.check(build, 2)

    def test_conv_stride(self):
        def build(rng):
            x, k = param(rng, 1, 9, 2), param(rng, 3, 2, 2)
            return (lambda: ad.sum_(ad.conv1d(x, k, stride=2))), [x, k]

        self.check(build, 2)

    def test_gather_scatter(self):
        def build(rng):
            a = param(rng, 4, 3)
            idx = rng.integers(0, 4, size=7)
            plan = ad.GatherPlan(idx, 4)
            w = rng.normal(size=(7, 3))

            def fn():
                taken = ad.take_rows(a, idx, plan)
                return ad.sum_(taken * w) + ad.sum_(ad.put_rows(taken, np.arange(7), 9))

            return fn, [a]

        self.check(build, 1)

    def test_segment_ops(self):
        def build(rng):
            ids = np.sort(rng.integers(0, 3, size=8))
            ids[0] = 0
            ids[-1] = 2
            seg = ad.SegmentIndex.from_sorted_ids(ids)
            a = param(rng, 8, 2)
            w = rng.normal(size=(len(seg.starts), 2))

            def fn():
                return (ad.sum_(ad.segment_sum(a, seg) * w)
                        + ad.sum_(ad.segment_max(a, seg))
                        + ad.sum_(ad.repeat_segments(ad.segment_sum(a, seg), seg)))

            return fn, [a]

        self.check(build, 1)

    def test_losses(self):
        def build(rng):
            z = param(rng, 5, 3)
            y = np.eye(3)[rng.integers(0, 3, size=5)]
            mask = np.array([True, True, False, True, False])
            r = ad.Parameter(rng.uniform(-2, 2, size=(4, 4)))
            t = (rng.random((4, 4)) < 0.5).astype(float)

            def fn():
                return (ad.cross_entropy(z, y, mask)
                        + ad.bce_matrix(ad.sigmoid(r), t)
                        + ad.mse_matrix(ad.sigmoid(r), t))

            return fn, [z, r]

        self.check(build, 2)
