"""Autodiff core: forward values, gradients, graph behavior, guards."""

import numpy as np
import pytest

from mxrunet.errors import ContractError, DimensionError, DomainError, NumericsError
from mxrunet.tensor import (
    Tensor, avg_pool2d, backward, batch_norm2d, concat_channels, conv2d,
    finite_diff_grad, grad_enabled, max_pool2d, nan_guard, no_grad, pad2d,
    softmax, tensor,
)


def leaf(data, dtype=np.float64):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def test_tensor_basics():
    t = tensor([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    assert t.shape == (2, 2)
    assert t.ndim == 2
    assert t.size == 4
    assert t.dtype == np.float32
    assert tensor(2.5).item() == 2.5
    with pytest.raises(ContractError):
        t.item()


def test_detach_shares_data_without_grad():
    t = leaf([1.0, 2.0])
    d = t.detach()
    assert not d.requires_grad
    assert np.array_equal(d.data, t.data)


def test_add_mul_backward_hand_values():
    a = leaf([2.0, 3.0])
    b = leaf([5.0, 7.0])
    loss = (a * b + a).sum()
    backward(loss)
    # d/da (ab + a) = b + 1, d/db = a
    assert np.array_equal(a.grad, [6.0, 8.0])
    assert np.array_equal(b.grad, [2.0, 3.0])


def test_scalar_arithmetic_and_rsub():
    a = leaf([1.0, 2.0])
    loss = (3.0 - a * 2.0 + a / 4.0).sum()
    backward(loss)
    assert np.allclose(a.grad, [-1.75, -1.75])


def test_tensor_division_is_rejected():
    a = leaf([1.0])
    with pytest.raises(ContractError):
        a / leaf([2.0])


def test_backward_rejects_non_scalar():
    a = leaf([1.0, 2.0])
    with pytest.raises(ContractError):
        backward(a * 2.0)


def test_gradient_accumulates_across_backward_calls():
    a = leaf([1.0, 1.0])
    backward(a.sum())
    backward(a.sum())
    assert np.array_equal(a.grad, [2.0, 2.0])
    a.zero_grad()
    assert a.grad is None


def test_diamond_graph_accumulates_once_per_path():
    a = leaf([3.0])
    b = a * 2.0
    loss = (b + b).sum()
    backward(loss)
    assert np.array_equal(a.grad, [4.0])


def test_shared_leaf_grad_is_not_aliased():
    # The same leaf feeding two consumers must own its grad buffer.
    a = leaf([1.0, 2.0])
    b = a + 0.0
    loss = (a * b).sum()
    backward(loss)
    assert np.array_equal(a.grad, [2.0, 4.0])


def test_log_domain_error():
    with pytest.raises(DomainError):
        leaf([1.0, -1.0]).log()


def test_dtype_mismatch_rejected():
    a = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    b = Tensor(np.ones(2, dtype=np.float64))
    with pytest.raises(ContractError):
        a + b


def test_no_grad_suppresses_graph():
    a = leaf([1.0])
    with no_grad():
        assert not grad_enabled()
        out = a.tanh() + 1.0
    assert grad_enabled()
    assert not out.requires_grad
    assert out._parents == ()


def test_nan_guard_raises_on_nonfinite():
    a = leaf([1e308])
    with np.errstate(over="ignore"):
        with nan_guard():
            with pytest.raises(NumericsError):
                a.exp()
        # guard off by default: op goes through, value is inf
        assert np.isinf(a.exp().data).all()


def test_deep_chain_exceeds_recursion_limit():
    import sys
    a = leaf([1.0])
    y = a
    for _ in range(sys.getrecursionlimit() + 200):
        y = y + 1.0
    backward(y.sum())
    assert np.array_equal(a.grad, [1.0])


def test_broadcast_backward_unbroadcasts():
    a = leaf(np.ones((2, 3)))
    b = leaf(np.ones((3,)))
    backward((a + b).sum())
    assert a.grad.shape == (2, 3)
    assert np.array_equal(b.grad, [2.0, 2.0, 2.0])


def test_sum_mean_axis_hand_values():
    a = leaf(np.arange(6.0).reshape(2, 3))
    assert np.array_equal(a.sum(axis=0).data, [3.0, 5.0, 7.0])
    assert np.array_equal(a.mean(axis=1).data, [1.0, 4.0])
    backward(a.mean(axis=1).sum())
    assert np.allclose(a.grad, np.full((2, 3), 1.0 / 3.0))


def test_reshape_transpose_roundtrip_and_grad():
    a = leaf(np.arange(24.0).reshape(2, 3, 4))
    out = a.reshape(6, 4).transpose(1, 0)
    assert out.shape == (4, 6)
    backward((out * 2.0).sum())
    assert np.array_equal(a.grad, np.full((2, 3, 4), 2.0))


def test_concat_channels_forward_and_split_backward():
    a = leaf(np.ones((1, 2, 2, 2)))
    b = leaf(np.full((1, 3, 2, 2), 2.0))
    out = concat_channels([a, b])
    assert out.shape == (1, 5, 2, 2)
    assert np.array_equal(out.data[:, :2], a.data)
    weights = Tensor(np.concatenate(
        [np.ones((1, 2, 2, 2)), 3.0 * np.ones((1, 3, 2, 2))], axis=1))
    backward((out * weights).sum())
    assert np.array_equal(a.grad, np.ones((1, 2, 2, 2)))
    assert np.array_equal(b.grad, np.full((1, 3, 2, 2), 3.0))


def test_matmul_matches_numpy_and_rejects_vectors():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 5))
    out = Tensor(a) @ Tensor(b)
    assert np.allclose(out.data, a @ b)
    with pytest.raises(DimensionError):
        Tensor(np.ones(3)) @ Tensor(np.ones((3, 2)))


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 7))
    s = softmax(Tensor(x), axis=-1).data
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-7)
    shifted = softmax(Tensor(x + 100.0), axis=-1).data
    assert np.allclose(s, shifted, atol=1e-7)


@pytest.mark.parametrize("mode", ["zero", "replicate", "reflect"])
def test_pad2d_modes_match_numpy(mode):
    np_mode = {"zero": "constant", "replicate": "edge", "reflect": "reflect"}[mode]
    rng = np.random.default_rng(2)
    x = rng.standard_normal((1, 2, 4, 5))
    got = pad2d(Tensor(x), (1, 2, 2, 1), mode).data
    want = np.pad(x, ((0, 0), (0, 0), (1, 2), (2, 1)), mode=np_mode)
    assert np.array_equal(got, want)


def test_pad2d_int_shorthand_pads_all_sides():
    x = Tensor(np.ones((1, 1, 2, 2)))
    assert pad2d(x, 1).shape == (1, 1, 4, 4)


def test_conv2d_hand_case_identity_kernel():
    x = leaf(np.arange(16.0).reshape(1, 1, 4, 4))
    w = leaf(np.zeros((1, 1, 3, 3)))
    w.data[0, 0, 1, 1] = 1.0
    out = conv2d(x, w, stride=1, pad=1)
    assert np.array_equal(out.data, x.data)


def test_conv2d_matches_direct_sum():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 3, 5, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, pad=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    N, _, H, W = xp.shape
    Ho, Wo = (H - 3) // 2 + 1, (W - 3) // 2 + 1
    want = np.zeros((2, 4, Ho, Wo))
    for n in range(2):
        for o in range(4):
            for i in range(Ho):
                for j in range(Wo):
                    patch = xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                    want[n, o, i, j] = (patch * w[o]).sum() + b[o]
    assert np.allclose(out, want, atol=1e-10)


def test_avg_pool_hand_case():
    x = Tensor(np.array([[[[0.0, 4.0], [8.0, 12.0]]]]))
    assert avg_pool2d(x, 2, stride=2).data.item() == 6.0


def test_max_pool_forward_and_sparse_backward():
    x = leaf([[[[1.0, 5.0], [3.0, 2.0]]]])
    out = max_pool2d(x, 2, stride=2)
    assert out.data.item() == 5.0
    backward(out.sum())
    assert np.array_equal(x.grad, [[[[0.0, 1.0], [0.0, 0.0]]]])


def test_max_pool_tie_sends_grad_to_one_winner():
    x = leaf(np.zeros((1, 1, 2, 2)))
    backward(max_pool2d(x, 2, stride=2).sum())
    assert x.grad.sum() == 1.0
    assert (x.grad == 1.0).sum() == 1


def test_batch_norm_train_normalizes_and_tracks_running_stats():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((4, 3, 5, 5)) * 3.0 + 1.0)
    gamma = Tensor(np.ones(3))
    beta = Tensor(np.zeros(3))
    rm, rv = np.zeros(3), np.ones(3)
    out = batch_norm2d(x, gamma, beta, rm, rv, momentum=0.1).data
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-7)
    assert np.allclose(out.std(axis=(0, 2, 3)), 1.0, atol=1e-3)
    mu = x.data.mean(axis=(0, 2, 3))
    assert np.allclose(rm, 0.1 * mu)
    assert np.allclose(rv, 0.9 + 0.1 * x.data.var(axis=(0, 2, 3)))


def test_batch_norm_eval_uses_running_stats_only():
    x = Tensor(np.full((1, 2, 2, 2), 5.0))
    gamma, beta = Tensor(np.ones(2)), Tensor(np.zeros(2))
    rm, rv = np.full(2, 3.0), np.full(2, 4.0)
    out = batch_norm2d(x, gamma, beta, rm.copy(), rv.copy(),
                       eps=1e-5, training=False).data
    assert np.allclose(out, (5.0 - 3.0) / np.sqrt(4.0 + 1e-5))


def test_finite_diff_agreement_composite():
    rng = np.random.default_rng(5)
    x = leaf(rng.uniform(0.5, 1.5, (2, 3)))

    def f(t):
        return (t.log() * t.exp() + t.softplus()).mean()

    loss = f(x)
    backward(loss)
    numeric = finite_diff_grad(f, Tensor(x.data), 1e-6).data
    assert np.allclose(x.grad, numeric, rtol=1e-6, atol=1e-9)


def test_unreachable_leaf_is_untouched():
    a = leaf([1.0])
    b = leaf([2.0])
    backward((a * 3.0).sum())
    assert b.grad is None
