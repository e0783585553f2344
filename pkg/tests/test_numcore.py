"""Tensor core: ops against independent oracles, autodiff against finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msdgformer import DimensionError, UsageError
from msdgformer import numcore as nc


# ---------------------------------------------------------------- matmul


def test_matmul_identity():
    b = np.arange(6, dtype=np.float32).reshape(2, 3)
    out = nc.matmul(nc.tensor(np.eye(2)), nc.tensor(b))
    np.testing.assert_array_equal(out.numpy(), b)


def test_matmul_hand_case():
    a = nc.tensor([[1.0, 2.0], [3.0, 4.0]])
    b = nc.tensor([[1.0], [1.0]])
    np.testing.assert_array_equal(nc.matmul(a, b).numpy(), [[3.0], [7.0]])


def test_matmul_against_triple_loop():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 7))
    b = rng.standard_normal((7, 3))
    # independent oracle: naive triple loop
    expected = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(7):
                expected[i, j] += a[i, k] * b[k, j]
    got = nc.matmul(nc.tensor(a, dtype=np.float64), nc.tensor(b, dtype=np.float64)).numpy()
    np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-14)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        nc.matmul(nc.tensor(np.ones((2, 3))), nc.tensor(np.ones((4, 2))))


def test_matmul_batched_broadcast_grads():
    rng = np.random.default_rng(1)
    a = nc.tensor(rng.standard_normal((4, 2, 3, 5)), dtype=np.float64, requires_grad=True)
    b = nc.tensor(rng.standard_normal((5, 6)), dtype=np.float64, requires_grad=True)
    nc.matmul(a, b).sum().backward()
    assert a.grad.shape == a.shape
    assert b.grad.shape == b.shape
    # d(sum(A@B))/dB sums A over all leading axes and rows
    np.testing.assert_allclose(
        b.grad, np.einsum("qrik->k", a.numpy())[:, None].repeat(6, axis=1), rtol=1e-12
    )


# ---------------------------------------------------------------- conv1d


def _conv_oracle(sig, ker, bias, stride):
    h, rho = ker.shape
    n = (len(sig) - rho) // stride + 1
    out = np.zeros((n, h))
    for i in range(n):
        for j in range(h):
            out[i, j] = float(np.dot(ker[j], sig[stride * i : stride * i + rho])) + bias[j]
    return out


def test_conv1d_paper_scale_patch_count():
    # l=88300, rho=100, gamma=50 must yield N=1765 without materializing work
    assert (88300 - 100) // 50 + 1 == 1765
    sig = nc.tensor(np.zeros(88300, dtype=np.float32))
    ker = nc.tensor(np.zeros((1, 100), dtype=np.float32))
    out = nc.conv1d(sig, ker, nc.tensor(np.zeros(1, dtype=np.float32)), stride=50)
    assert out.shape == (1765, 1)


def test_conv1d_single_patch():
    rng = np.random.default_rng(2)
    sig = rng.standard_normal(100).astype(np.float32)
    ker = rng.standard_normal((4, 100)).astype(np.float32)
    bias = rng.standard_normal(4).astype(np.float32)
    out = nc.conv1d(nc.tensor(sig), nc.tensor(ker), nc.tensor(bias), stride=7)
    assert out.shape == (1, 4)
    np.testing.assert_allclose(out.numpy()[0], ker @ sig + bias, rtol=1e-5)


def test_conv1d_matches_sliding_window_oracle():
    rng = np.random.default_rng(3)
    sig = rng.standard_normal(250)
    ker = rng.standard_normal((3, 100))
    bias = rng.standard_normal(3)
    out = nc.conv1d(nc.tensor(sig, dtype=np.float64), nc.tensor(ker, dtype=np.float64),
                    nc.tensor(bias, dtype=np.float64), stride=50)
    assert out.shape == (4, 3)
    np.testing.assert_allclose(out.numpy(), _conv_oracle(sig, ker, bias, 50), rtol=1e-6)


def test_conv1d_rejects_short_signal():
    with pytest.raises(DimensionError):
        nc.conv1d(nc.tensor(np.zeros(5)), nc.tensor(np.zeros((1, 10))),
                  nc.tensor(np.zeros(1)), stride=1)


def test_conv1d_rejects_uneven_tail():
    with pytest.raises(DimensionError, match="divisible"):
        nc.conv1d(nc.tensor(np.zeros(11)), nc.tensor(np.zeros((1, 4))),
                  nc.tensor(np.zeros(1)), stride=3)


def test_conv1d_batched_matches_per_row():
    rng = np.random.default_rng(4)
    sig = rng.standard_normal((3, 60)).astype(np.float32)
    ker = nc.tensor(rng.standard_normal((5, 20)).astype(np.float32))
    bias = nc.tensor(rng.standard_normal(5).astype(np.float32))
    batched = nc.conv1d(nc.tensor(sig), ker, bias, stride=10).numpy()
    for b in range(3):
        single = nc.conv1d(nc.tensor(sig[b]), ker, bias, stride=10).numpy()
        np.testing.assert_array_equal(batched[b], single)


# ---------------------------------------------------------------- softmax


def test_softmax_uniform():
    out = nc.softmax_rows(nc.tensor([0.0, 0.0, 0.0])).numpy()
    np.testing.assert_allclose(out, [1 / 3] * 3, atol=1e-7)


def test_softmax_large_inputs_no_overflow():
    out = nc.softmax_rows(nc.tensor([1000.0, 1000.0])).numpy()
    np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-7)


def test_softmax_reference_values():
    out = nc.softmax_rows(nc.tensor([1.0, 2.0, 3.0])).numpy()
    np.testing.assert_allclose(out, [0.0900, 0.2447, 0.6652], atol=1e-4)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(
        st.floats(min_value=-1e3, max_value=1e3, allow_nan=False),
        min_size=1,
        max_size=16,
    )
)
def test_softmax_rows_sum_to_one(values):
    out = nc.softmax_rows(nc.tensor(values, dtype=np.float64)).numpy()
    assert np.all(out >= 0)
    assert abs(out.sum() - 1.0) < 1e-6


# ---------------------------------------------------------------- layer_norm


def test_layer_norm_constant_slice_is_zero():
    x = nc.tensor(np.full((4,), 2.5))
    out = nc.layer_norm(x, nc.ones_param((4,)), nc.zeros_param((4,)))
    np.testing.assert_allclose(out.numpy(), 0.0, atol=1e-5)


def test_layer_norm_two_points():
    out = nc.layer_norm(
        nc.tensor([1.0, 3.0], dtype=np.float64),
        nc.ones_param((2,), dtype=np.float64),
        nc.zeros_param((2,), dtype=np.float64),
        eps=1e-12,
    )
    np.testing.assert_allclose(out.numpy(), [-1.0, 1.0], atol=1e-5)


def test_layer_norm_moments():
    rng = np.random.default_rng(5)
    x = nc.tensor(rng.standard_normal((6, 32)), dtype=np.float64)
    out = nc.layer_norm(x, nc.ones_param((32,), dtype=np.float64),
                        nc.zeros_param((32,), dtype=np.float64)).numpy()
    assert np.abs(out.mean(axis=-1)).max() < 1e-6
    assert np.abs(out.var(axis=-1) - 1.0).max() < 1e-4


def test_layer_norm_rejects_length_one():
    with pytest.raises(DimensionError):
        nc.layer_norm(nc.tensor([[1.0]]), nc.ones_param((1,)), nc.zeros_param((1,)))


# ---------------------------------------------------------------- thin_svd


def test_svd_diagonal():
    u, s, v = nc.thin_svd(np.diag([3.0, 2.0, 1.0]))
    np.testing.assert_allclose(s, [3.0, 2.0, 1.0], atol=1e-7)


def test_svd_rank_one():
    rng = np.random.default_rng(6)
    a = rng.standard_normal(6)
    b = rng.standard_normal(9)
    u, s, v = nc.thin_svd(np.outer(a, b))
    np.testing.assert_allclose(s[0], np.linalg.norm(a) * np.linalg.norm(b), rtol=1e-6)
    np.testing.assert_allclose(s[1:], 0.0, atol=1e-10)


def test_svd_sigma_matches_eigen_oracle():
    rng = np.random.default_rng(7)
    m = rng.standard_normal((8, 40))
    _, s, _ = nc.thin_svd(m)
    # independent oracle: eigenvalues of M M^T via symmetric eigensolver
    eig = np.sort(np.linalg.eigvalsh(m @ m.T))[::-1]
    np.testing.assert_allclose(s**2, eig, rtol=1e-5, atol=1e-8)


def test_svd_contract():
    rng = np.random.default_rng(8)
    m = rng.standard_normal((12, 7)).astype(np.float32)
    u, s, v = nc.thin_svd(m)
    assert u.shape == (12, 7) and s.shape == (7,) and v.shape == (7, 7)
    assert np.all(np.diff(s) <= 1e-6) and np.all(s >= 0)
    assert np.abs(u.T @ u - np.eye(7)).max() < 1e-5
    assert np.abs(v.T @ v - np.eye(7)).max() < 1e-5
    recon = (u * s) @ v.T
    rel = np.linalg.norm(recon - m) / np.linalg.norm(m)
    assert rel < 1e-4


def test_svd_eckart_young_tail_energy():
    rng = np.random.default_rng(9)
    m = rng.standard_normal((10, 25))
    _, s, _ = nc.thin_svd(m)
    for r in range(0, 10):
        resid = np.linalg.norm(m - nc.low_rank(m, r)) ** 2
        tail = float((s[r:] ** 2).sum())
        assert abs(resid - tail) <= 1e-6 * max(tail, 1e-30)


# ---------------------------------------------------------------- backward


def test_backward_sum_gives_ones():
    w = nc.tensor(np.random.default_rng(10).standard_normal((3, 5)), requires_grad=True)
    w.sum().backward()
    np.testing.assert_array_equal(w.grad, np.ones((3, 5), dtype=w.dtype))


def test_backward_linear_matmul_grad():
    rng = np.random.default_rng(11)
    a = nc.tensor(rng.standard_normal((4, 6)), dtype=np.float64, requires_grad=True)
    b = nc.tensor(rng.standard_normal((6, 2)), dtype=np.float64)
    nc.matmul(a, b).sum().backward()
    np.testing.assert_allclose(a.grad, np.ones((4, 2)) @ b.numpy().T, rtol=1e-12)


def test_backward_requires_scalar():
    w = nc.tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(UsageError):
        (w * 2.0).backward()


def test_backward_accumulates_across_calls():
    w = nc.tensor(np.ones(3), requires_grad=True)
    (w * 2.0).sum().backward()
    (w * 2.0).sum().backward()
    np.testing.assert_allclose(w.grad, 4.0 * np.ones(3))


def test_shared_node_gradients_add():
    x = nc.tensor([2.0], dtype=np.float64, requires_grad=True)
    y = x * 3.0
    (y + y).sum().backward()
    np.testing.assert_allclose(x.grad, [6.0])


def _fd_grad(f, x, h=1e-6):
    """Central finite differences of scalar f at numpy array x."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


@pytest.mark.parametrize(
    "opname",
    ["matmul", "conv1d", "softmax", "layer_norm", "relu_sigmoid_log", "windows", "concat_index"],
)
def test_gradients_match_finite_differences(opname):
    rng = np.random.default_rng(hash(opname) % 2**32)
    dt = np.float64

    if opname == "matmul":
        a = nc.tensor(rng.standard_normal((3, 4)), dtype=dt, requires_grad=True)
        b = nc.tensor(rng.standard_normal((4, 2)), dtype=dt, requires_grad=True)
        leaves = [a, b]

        def loss():
            return nc.sigmoid(nc.matmul(a, b)).sum()

    elif opname == "conv1d":
        s = nc.tensor(rng.standard_normal(20), dtype=dt, requires_grad=True)
        k = nc.tensor(rng.standard_normal((3, 8)), dtype=dt, requires_grad=True)
        bias = nc.tensor(rng.standard_normal(3), dtype=dt, requires_grad=True)
        leaves = [s, k, bias]

        def loss():
            return nc.sigmoid(nc.conv1d(s, k, bias, stride=4)).sum()

    elif opname == "softmax":
        x = nc.tensor(rng.standard_normal((5, 6)), dtype=dt, requires_grad=True)
        w = nc.tensor(rng.standard_normal((5, 6)), dtype=dt)
        leaves = [x]

        def loss():
            return (nc.softmax_rows(x) * w).sum()

    elif opname == "layer_norm":
        x = nc.tensor(rng.standard_normal((4, 8)), dtype=dt, requires_grad=True)
        g = nc.tensor(rng.standard_normal(8), dtype=dt, requires_grad=True)
        b = nc.tensor(rng.standard_normal(8), dtype=dt, requires_grad=True)
        leaves = [x, g, b]

        def loss():
            return nc.sigmoid(nc.layer_norm(x, g, b)).sum()

    elif opname == "relu_sigmoid_log":
        x = nc.tensor(rng.standard_normal(30) + 0.1, dtype=dt, requires_grad=True)
        leaves = [x]

        def loss():
            return nc.log(nc.sigmoid(x)).sum() + nc.relu(x).sum()

    elif opname == "windows":
        x = nc.tensor(rng.standard_normal(26), dtype=dt, requires_grad=True)
        leaves = [x]

        def loss():
            return nc.sigmoid(nc.windows(x, 6, 4)).sum()

    else:  # concat_index
        a = nc.tensor(rng.standard_normal((3, 4)), dtype=dt, requires_grad=True)
        b = nc.tensor(rng.standard_normal((2, 4)), dtype=dt, requires_grad=True)
        leaves = [a, b]

        def loss():
            cat = nc.concat([a, b], axis=0)
            return nc.sigmoid(cat[1:4, :2]).sum() + cat.mean()

    out = loss()
    out.backward()
    for leaf in leaves:
        fd = _fd_grad(lambda: loss().item(), leaf.data)
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(leaf.grad)), 1e-8)
        assert (np.abs(leaf.grad - fd) / denom).max() < 1e-6


# ---------------------------------------------------------------- adam


def _store_with(name, value):
    store = nc.ParameterStore()
    t = nc.tensor(value, dtype=np.float64, requires_grad=True)
    store.add(name, t)
    return store, t


def test_adam_zero_gradient_keeps_parameters():
    store, p = _store_with("w", [1.0, -2.0])
    p.grad = np.zeros_like(p.data)
    nc.adam_step(store, nc.AdamState(store), lr=0.1)
    np.testing.assert_array_equal(p.numpy(), [1.0, -2.0])


def test_adam_first_step_is_sign_step_without_betas():
    store, p = _store_with("w", [1.0, 1.0])
    p.grad = np.array([0.5, -0.25])
    state = nc.AdamState(store, beta1=0.0, beta2=0.0, eps=1e-8)
    nc.adam_step(store, state, lr=0.1)
    expected = 1.0 - 0.1 * np.array([0.5, -0.25]) / (np.abs([0.5, -0.25]) + 1e-8)
    np.testing.assert_allclose(p.numpy(), expected, rtol=1e-9)


def test_adam_missing_grad_raises():
    store, p = _store_with("w", [1.0])
    with pytest.raises(UsageError):
        nc.adam_step(store, nc.AdamState(store), lr=0.1)


def test_adam_minimizes_quadratic():
    store, p = _store_with("x", [1.0])
    state = nc.AdamState(store)
    for _ in range(100):
        store.zero_grad()
        (p * p).sum().backward()
        nc.adam_step(store, state, lr=0.1)
    assert abs(p.numpy()[0]) < 0.05


def test_adam_step_counter_increases():
    store, p = _store_with("w", [1.0])
    state = nc.AdamState(store)
    for i in range(3):
        p.grad = np.array([0.1])
        nc.adam_step(store, state, lr=0.01)
        assert state.step == i + 1


# ---------------------------------------------------------------- misc


def test_no_grad_blocks_taping():
    w = nc.tensor(np.ones(3), requires_grad=True)
    with nc.no_grad():
        out = (w * 2.0).sum()
    assert out._parents == ()


def test_dropout_identity_when_not_training():
    rng = np.random.default_rng(0)
    x = nc.tensor(np.ones((4, 4)))
    assert nc.dropout(x, 0.5, rng, training=False) is x
    assert nc.dropout(x, 0.0, rng, training=True) is x


def test_dropout_scales_surviving_entries():
    rng = np.random.default_rng(0)
    x = nc.tensor(np.ones((100, 100)))
    out = nc.dropout(x, 0.25, rng, training=True).numpy()
    vals = np.unique(out)
    assert all(np.isclose(v, 0.0) or np.isclose(v, 1 / 0.75) for v in vals)
    assert abs(out.mean() - 1.0) < 0.02


def test_sigmoid_stays_in_open_interval():
    x = nc.tensor([-1e4, -50.0, 0.0, 50.0, 1e4])
    y = nc.sigmoid(x).numpy()
    assert np.all(y > 0.0) and np.all(y < 1.0)
