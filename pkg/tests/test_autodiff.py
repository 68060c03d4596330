import numpy as np
import pytest
from scipy import sparse

from patchdesc.errors import NumericalError, ShapeError
from patchdesc.neuralnet import tensor as T


def finite_diff_check(build, arrays, rel_tol=1e-4, h=1e-6):
    """Central finite differences of a scalar-valued graph vs backprop.

    `build` maps a list of Tensors to a scalar Tensor; `arrays` are the
    leaf values.  Checks every leaf gradient entrywise.
    """
    leaves = [T.Tensor(a, requires_grad=True) for a in arrays]
    out = build(leaves)
    out.backward()
    for leaf, base in zip(leaves, arrays):
        got = leaf.grad if leaf.grad is not None else np.zeros_like(base)
        flat = base.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = build([T.Tensor(a) for a in arrays]).data.item()
            flat[i] = orig - h
            dn = build([T.Tensor(a) for a in arrays]).data.item()
            flat[i] = orig
            num[i] = (up - dn) / (2 * h)
        num = num.reshape(base.shape)
        scale = np.maximum(np.abs(num), 1.0)
        assert np.max(np.abs(got - num) / scale) < rel_tol, \
            f"gradient mismatch: got {got}, numeric {num}"


@pytest.fixture
def arr(rng):
    return rng.normal(size=(4, 5))


class TestBasicOps:
    def test_sum_all_ones(self, rng):
        x = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        x.sum().backward()
        assert np.array_equal(x.grad, np.ones((3, 4)))

    def test_add(self, rng, arr):
        finite_diff_check(lambda ls: (ls[0] + ls[1]).sum(),
                          [arr.copy(), rng.normal(size=(4, 5))])

    def test_add_broadcast(self, rng, arr):
        finite_diff_check(lambda ls: (ls[0] + ls[1]).sum(),
                          [arr.copy(), rng.normal(size=(5,))])

    def test_mul(self, rng, arr):
        finite_diff_check(lambda ls: (ls[0] * ls[1]).sum(),
                          [arr.copy(), rng.normal(size=(4, 5))])

    def test_mul_broadcast_column(self, rng, arr):
        finite_diff_check(lambda ls: (ls[0] * ls[1]).sum(),
                          [arr.copy(), rng.normal(size=(4, 1))])

    def test_div(self, rng, arr):
        denom = rng.normal(size=(4, 5))
        denom += np.sign(denom) * 1.0
        finite_diff_check(lambda ls: (ls[0] / ls[1]).sum(), [arr.copy(), denom])

    def test_matmul(self, rng):
        finite_diff_check(lambda ls: (ls[0] @ ls[1]).sum(),
                          [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))])

    def test_neg_sub(self, rng, arr):
        finite_diff_check(lambda ls: (ls[0] - 2.0 * ls[1]).sum(),
                          [arr.copy(), rng.normal(size=(4, 5))])

    def test_pow_const(self, rng):
        x = np.abs(rng.normal(size=(3, 3))) + 0.5
        finite_diff_check(lambda ls: ls[0].pow_const(3).sum(), [x])

    def test_exp_log_sqrt(self, rng):
        x = np.abs(rng.normal(size=(3, 3))) + 0.5
        finite_diff_check(lambda ls: ls[0].exp().sum(), [x.copy()])
        finite_diff_check(lambda ls: ls[0].log().sum(), [x.copy()])
        finite_diff_check(lambda ls: ls[0].sqrt().sum(), [x.copy()])

    def test_relu(self, rng):
        x = rng.normal(size=(4, 4))
        x[np.abs(x) < 0.05] += 0.2  # stay away from the kink
        finite_diff_check(lambda ls: ls[0].relu().sum(), [x])

    def test_sigmoid(self, rng, arr):
        finite_diff_check(lambda ls: ls[0].sigmoid().sum(), [arr.copy()])

    def test_reshape_transpose(self, rng, arr):
        finite_diff_check(lambda ls: ls[0].reshape(20).pow_const(2).sum(), [arr.copy()])
        finite_diff_check(lambda ls: ls[0].transpose().pow_const(2).sum(), [arr.copy()])

    def test_sum_axis(self, rng, arr):
        finite_diff_check(lambda ls: ls[0].sum(axis=0).pow_const(2).sum(), [arr.copy()])
        finite_diff_check(
            lambda ls: ls[0].sum(axis=1, keepdims=True).pow_const(2).sum(), [arr.copy()])

    def test_mean(self, rng, arr):
        finite_diff_check(lambda ls: ls[0].mean(axis=1).pow_const(2).sum(), [arr.copy()])

    def test_max(self, rng, arr):
        finite_diff_check(lambda ls: ls[0].max(axis=0).pow_const(2).sum(), [arr.copy()])
        finite_diff_check(lambda ls: ls[0].max(axis=1).sum(), [arr.copy()])

    def test_max_tie_routes_to_first(self):
        x = T.Tensor(np.array([[1.0, 3.0, 3.0]]), requires_grad=True)
        x.max(axis=1).sum().backward()
        assert np.array_equal(x.grad, [[0.0, 1.0, 0.0]])


class TestStructuredOps:
    def test_concat(self, rng):
        finite_diff_check(
            lambda ls: T.concat([ls[0], ls[1]], axis=1).pow_const(2).sum(),
            [rng.normal(size=(3, 2)), rng.normal(size=(3, 4))])

    def test_gather_rows(self, rng):
        idx = np.array([0, 2, 2, 1])
        finite_diff_check(
            lambda ls: T.gather_rows(ls[0], idx).pow_const(2).sum(),
            [rng.normal(size=(3, 4))])

    def test_spmm(self, rng):
        mat = sparse.random(6, 4, density=0.5, random_state=7, format="csr")
        finite_diff_check(
            lambda ls: T.spmm(mat, ls[0]).pow_const(2).sum(),
            [rng.normal(size=(4, 3))])

    def test_spmm_matches_dense(self, rng):
        mat = sparse.random(5, 5, density=0.4, random_state=3, format="csr")
        x = T.Tensor(rng.normal(size=(5, 2)), requires_grad=True)
        assert np.allclose(T.spmm(mat, x).data, mat.toarray() @ x.data)

    def test_segment_sum(self, rng):
        starts = np.array([0, 3, 5])
        lengths = np.array([3, 2, 4])
        finite_diff_check(
            lambda ls: T.segment_sum(ls[0], starts, lengths).pow_const(2).sum(),
            [rng.normal(size=(9, 3))])

    def test_segment_mean(self, rng):
        starts = np.array([0, 4])
        lengths = np.array([4, 3])
        finite_diff_check(
            lambda ls: T.segment_mean(ls[0], starts, lengths).pow_const(2).sum(),
            [rng.normal(size=(7, 2))])

    def test_segment_max(self, rng):
        starts = np.array([0, 3])
        lengths = np.array([3, 5])
        finite_diff_check(
            lambda ls: T.segment_max(ls[0], starts, lengths).pow_const(2).sum(),
            [rng.normal(size=(8, 3))])

    def test_layernorm(self, rng):
        finite_diff_check(
            lambda ls: T.layernorm(ls[0], ls[1], ls[2]).pow_const(2).sum(),
            [rng.normal(size=(4, 6)), rng.normal(size=(6,)), rng.normal(size=(6,))],
            rel_tol=2e-4)

    def test_l2_normalize(self, rng):
        x = rng.normal(size=(4, 5))
        finite_diff_check(
            lambda ls: (T.l2_normalize(ls[0]) * np.arange(5.0)).sum(), [x])

    def test_l2_normalize_unit_output(self, rng):
        y = T.l2_normalize(T.Tensor(rng.normal(size=(6, 8))))
        assert np.allclose(np.linalg.norm(y.data, axis=1), 1.0, atol=1e-9)


class TestStopGradient:
    def test_blocks_exactly(self, rng):
        x = T.Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        y = T.Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        loss = (T.stop_gradient(x) * y).sum()
        loss.backward()
        assert x.grad is None
        assert np.allclose(y.grad, x.data)

    def test_mixed_path(self, rng):
        x = T.Tensor(rng.normal(size=(4,)), requires_grad=True)
        loss = (x * T.stop_gradient(x)).sum()  # d/dx = stopgrad(x), not 2x
        loss.backward()
        assert np.allclose(x.grad, x.data)


class TestEngineSafety:
    def test_nan_raises(self):
        x = T.Tensor(np.array([1.0, -1.0]), requires_grad=True)
        with pytest.raises(NumericalError):
            x.log()

    def test_backward_needs_scalar(self, rng):
        x = T.Tensor(rng.normal(size=(3,)), requires_grad=True)
        with pytest.raises(ShapeError):
            (x * 2).backward()

    def test_shared_upstream_not_aliased(self, rng):
        x = T.Tensor(rng.normal(size=(3,)), requires_grad=True)
        y = T.Tensor(rng.normal(size=(3,)), requires_grad=True)
        z = x + y
        (z * z).sum().backward()
        assert np.allclose(x.grad, 2 * z.data)
        assert np.allclose(y.grad, 2 * z.data)
        x.grad += 100.0
        assert not np.allclose(y.grad, x.grad)

    def test_grad_accumulates_on_reuse(self, rng):
        x = T.Tensor(np.array([2.0]), requires_grad=True)
        ((x * x) + (x * 3.0)).sum().backward()
        assert np.allclose(x.grad, [2 * 2.0 + 3.0])

    def test_spmm_shape_error(self, rng):
        mat = sparse.eye(4, format="csr")
        with pytest.raises(ShapeError):
            T.spmm(mat, T.Tensor(rng.normal(size=(5, 2))))
