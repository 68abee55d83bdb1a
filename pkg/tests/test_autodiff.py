"""Tensor engine tests: forward semantics against independent oracles,
gradient correctness against central finite differences, adjointness of the
convolution pair, and the second-order input-gradient contract."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prowave import autodiff as ad
from oracles import (
    conv1d_oracle,
    conv1d_transpose_oracle,
    matmul_oracle,
    max_rel_err,
)


def t64(a, tracked=False):
    return ad.Tensor(np.asarray(a, dtype=np.float64), tracked=tracked)


# ---------------------------------------------------------------------------
# dense


def test_dense_identity_weights():
    out = ad.dense(ad.Tensor([[1.0, 2.0]]), ad.Tensor([[1.0, 0.0], [0.0, 1.0]]),
                   ad.Tensor([0.0, 0.0]))
    assert np.array_equal(out.data, [[1.0, 2.0]])


def test_dense_hand_sum():
    out = ad.dense(ad.Tensor([[1.0, 1.0]]), ad.Tensor([[2.0], [3.0]]), ad.Tensor([1.0]))
    assert np.array_equal(out.data, [[6.0]])


def test_dense_matches_triple_loop_oracle():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 2))
    b = rng.normal(size=(2,))
    out = ad.dense(t64(x), t64(w), t64(b))
    assert np.allclose(out.data, matmul_oracle(x, w) + b, rtol=1e-12)


def test_dense_shape_mismatch_names_both_shapes():
    with pytest.raises(ad.ShapeError) as ei:
        ad.dense(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((4, 2))),
                 ad.Tensor(np.zeros(2)))
    assert "(2, 3)" in str(ei.value) and "(4, 2)" in str(ei.value)


# ---------------------------------------------------------------------------
# conv1d / conv1d_transpose


def test_conv1d_impulse_gives_reversed_kernel_copy():
    L, K = 17, 5
    x = np.zeros((1, L, 1))
    c = L // 2
    x[0, c, 0] = 1.0
    k = np.arange(1.0, K + 1).reshape(K, 1, 1)
    out = ad.conv1d(t64(x), t64(k), 1)
    assert np.allclose(out.data, conv1d_oracle(x, k, 1))
    # crossing the impulse with the kernel lays it down reversed around center
    got = out.data[0, c - K // 2:c + K // 2 + 1, 0]
    assert np.allclose(got, k[::-1, 0, 0])


def test_conv1d_identity_kernel():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 9, 1))
    k = np.array([0.0, 1.0, 0.0]).reshape(3, 1, 1)
    out = ad.conv1d(t64(x), t64(k), 1)
    assert np.allclose(out.data, x)


def test_conv1d_output_length_ceil():
    x = ad.Tensor(np.zeros((1, 16, 1), dtype=np.float32))
    k = ad.Tensor(np.zeros((25, 1, 2), dtype=np.float32))
    assert ad.conv1d(x, k, 4).shape == (1, 4, 2)


@given(
    batch=st.integers(1, 3),
    length=st.integers(4, 40),
    width=st.sampled_from([1, 3, 5, 9]),
    cin=st.integers(1, 3),
    cout=st.integers(1, 3),
    stride=st.sampled_from([1, 2, 4]),
    seed=st.integers(0, 10_000),
)
@settings(max_examples=40, deadline=None)
def test_conv1d_matches_direct_oracle(batch, length, width, cin, cout, stride, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, length, cin))
    k = rng.normal(size=(width, cin, cout))
    out = ad.conv1d(t64(x), t64(k), stride)
    assert out.shape == (batch, -(-length // stride), cout)
    assert np.allclose(out.data, conv1d_oracle(x, k, stride), rtol=1e-10, atol=1e-12)


def test_conv1d_transpose_length():
    x = ad.Tensor(np.zeros((1, 16, 1), dtype=np.float32))
    k = ad.Tensor(np.zeros((25, 1, 1), dtype=np.float32))
    assert ad.conv1d_transpose(x, k, 4).shape == (1, 64, 1)


def test_conv1d_transpose_matches_direct_oracle():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 7, 2))
    k = rng.normal(size=(5, 2, 3))
    out = ad.conv1d_transpose(t64(x), t64(k), 3)
    assert np.allclose(out.data, conv1d_transpose_oracle(x, k, 3), rtol=1e-10)


def test_conv1d_transpose_chain_reaches_16384():
    # 16 -> 64 -> 256 -> 1024 -> 4096 -> 16384 with stride 4, single channel
    x = ad.Tensor(np.random.default_rng(0).normal(size=(1, 16, 1)).astype(np.float32))
    k = ad.Tensor(np.random.default_rng(1).normal(size=(25, 1, 1)).astype(np.float32))
    lengths = [x.shape[1]]
    for _ in range(5):
        x = ad.conv1d_transpose(x, k, 4)
        lengths.append(x.shape[1])
    assert lengths == [16, 64, 256, 1024, 4096, 16384]
    assert x.shape == (1, 16384, 1)


@given(
    batch=st.integers(1, 2),
    length=st.integers(2, 16),
    width=st.sampled_from([1, 3, 5]),
    cin=st.integers(1, 3),
    cout=st.integers(1, 3),
    stride=st.sampled_from([1, 2, 4]),
    seed=st.integers(0, 10_000),
)
@settings(max_examples=40, deadline=None)
def test_adjoint_inner_product_identity(batch, length, width, cin, cout, stride, seed):
    # <conv1d_transpose(x,k,s), y> == <x, conv1d(y, swap(k), s)>
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(batch, length, cin)).astype(np.float32)
    k = rng.normal(size=(width, cin, cout)).astype(np.float32)
    y = rng.normal(size=(batch, length * stride, cout)).astype(np.float32)
    lhs = float(np.sum(ad.conv1d_transpose(ad.Tensor(x), ad.Tensor(k), stride).data * y))
    kswap = np.ascontiguousarray(k.transpose(0, 2, 1))
    rhs = float(np.sum(ad.conv1d(ad.Tensor(y), ad.Tensor(kswap), stride).data * x))
    assert lhs == pytest.approx(rhs, rel=1e-5, abs=1e-5)


def test_adjoint_same_kernel_single_channel():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 8, 1)).astype(np.float32)
    k = rng.normal(size=(5, 1, 1)).astype(np.float32)
    y = rng.normal(size=(2, 32, 1)).astype(np.float32)
    lhs = float(np.sum(ad.conv1d_transpose(ad.Tensor(x), ad.Tensor(k), 4).data * y))
    rhs = float(np.sum(ad.conv1d(ad.Tensor(y), ad.Tensor(k), 4).data * x))
    assert lhs == pytest.approx(rhs, rel=1e-5)


def test_conv_grad_wrt_input_is_conv_of_upstream():
    rng = np.random.default_rng(13)
    x = ad.Tensor(rng.normal(size=(1, 12, 2)), tracked=True)
    k = ad.Tensor(rng.normal(size=(5, 2, 3)))
    u = rng.normal(size=(1, 48, 3))
    with ad.Tape() as tape:
        out = ad.conv1d_transpose(x, k, 4)
        loss = ad.reduce_sum(ad.mul(out, ad.Tensor(u)))
    g = tape.gradients(loss)[x]
    kswap = np.ascontiguousarray(k.data.transpose(0, 2, 1))
    expect = conv1d_oracle(u, kswap, 4)
    assert np.allclose(g.data, expect, rtol=1e-8)


@given(
    stride=st.sampled_from([1, 2, 4]),
    blocks=st.integers(1, 6),
    seed=st.integers(0, 1000),
)
@settings(max_examples=25, deadline=None)
def test_conv_then_transpose_restores_length(stride, blocks, seed):
    rng = np.random.default_rng(seed)
    length = stride * blocks
    x = ad.Tensor(rng.normal(size=(1, length, 1)).astype(np.float32))
    k = ad.Tensor(rng.normal(size=(5, 1, 1)).astype(np.float32))
    down = ad.conv1d(x, k, stride)
    up = ad.conv1d_transpose(down, k, stride)
    assert up.shape[1] == length


def test_conv_parameter_errors():
    x = ad.Tensor(np.zeros((1, 8, 1), dtype=np.float32))
    k = ad.Tensor(np.zeros((3, 1, 1), dtype=np.float32))
    with pytest.raises(ad.ParameterError):
        ad.conv1d(x, k, 0)
    with pytest.raises(ad.ParameterError):
        ad.conv1d(x, ad.Tensor(np.zeros((4, 1, 1), dtype=np.float32)), 1)
    with pytest.raises(ad.ShapeError):
        ad.conv1d(x, ad.Tensor(np.zeros((3, 2, 1), dtype=np.float32)), 1)


# ---------------------------------------------------------------------------
# activations and reductions


def test_relu_lrelu_tanh_values():
    assert np.array_equal(ad.relu(ad.Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
    assert np.allclose(ad.lrelu(ad.Tensor([-1.0, 2.0]), 0.2).data, [-0.2, 2.0])
    assert np.array_equal(ad.tanh_act(ad.Tensor([0.0])).data, [0.0])


def test_tanh_range():
    x = ad.Tensor(np.linspace(-50, 50, 101).astype(np.float32))
    y = ad.tanh_act(x).data
    assert np.all(y >= -1.0) and np.all(y <= 1.0)


def test_mean_and_norm_values():
    assert ad.reduce_mean(ad.Tensor([1.0, 2.0, 3.0])).item() == pytest.approx(2.0)
    assert ad.l2_norm(ad.Tensor([3.0, 4.0])).item() == 5.0


def test_mean_gradient_is_one_over_n():
    x = ad.Tensor(np.arange(4.0, dtype=np.float32), tracked=True)
    with ad.Tape() as tape:
        m = ad.reduce_mean(x)
    g = tape.gradients(m)[x]
    assert np.array_equal(g.data, np.full(4, 0.25, dtype=np.float32))


def test_empty_reductions_raise():
    empty = ad.Tensor(np.zeros((0,), dtype=np.float32))
    with pytest.raises(ad.ParameterError):
        ad.reduce_mean(empty)
    with pytest.raises(ad.ParameterError):
        ad.l2_norm(empty)


# ---------------------------------------------------------------------------
# backward contract


def test_backward_linear_case_exact():
    # loss = mean(w * x): gradient is x / n, exact for n a power of two
    x = np.array([4.0, -2.0, 8.0, 1.0], dtype=np.float32)
    w = ad.Tensor(np.ones(4, dtype=np.float32), tracked=True)
    with ad.Tape() as tape:
        loss = ad.reduce_mean(ad.mul(w, ad.Tensor(x)))
    g = tape.gradients(loss)[w]
    assert np.array_equal(g.data, x / 4.0)


def test_backward_two_layer_net_vs_finite_differences():
    rng = np.random.default_rng(21)
    w1 = t64(rng.normal(0, 0.4, (5, 4)), tracked=True)
    b1 = t64(rng.normal(0, 0.1, (4,)), tracked=True)
    w2 = t64(rng.normal(0, 0.4, (4, 1)), tracked=True)
    b2 = t64(rng.normal(0, 0.1, (1,)), tracked=True)
    x = rng.normal(size=(6, 5))

    def loss_value():
        with ad.Tape():
            h = ad.tanh_act(ad.dense(ad.Tensor(x), w1, b1))
            return ad.reduce_mean(ad.dense(h, w2, b2)).item()

    with ad.Tape() as tape:
        h = ad.tanh_act(ad.dense(ad.Tensor(x), w1, b1))
        loss = ad.reduce_mean(ad.dense(h, w2, b2))
    grads = tape.gradients(loss)

    from oracles import fd_gradient
    for p in (w1, b1, w2, b2):
        (fd,) = fd_gradient(loss_value, [p.data], eps=1e-3)
        assert max_rel_err(grads[p].data, fd) < 1e-3


def test_untracked_tensor_absent_from_gradient_map():
    w = ad.Tensor(np.ones(3, dtype=np.float32), tracked=True)
    x = ad.Tensor(np.ones(3, dtype=np.float32))  # untracked
    with ad.Tape() as tape:
        loss = ad.reduce_mean(ad.mul(w, x))
    gmap = tape.gradients(loss)
    assert w in gmap
    assert x not in gmap


def test_non_scalar_loss_rejected():
    w = ad.Tensor(np.ones(3, dtype=np.float32), tracked=True)
    with ad.Tape() as tape:
        y = ad.mul(w, w)
    with pytest.raises(ad.ContractError):
        tape.gradients(y)


def test_unused_tracked_parameter_gets_zero_gradient():
    w = ad.Tensor(np.ones(3, dtype=np.float32), tracked=True)
    v = ad.Tensor(np.ones(2, dtype=np.float32), tracked=True)
    with ad.Tape() as tape:
        loss = ad.reduce_mean(ad.mul(w, w))
    gmap = tape.gradients(loss, wrt=[w, v])
    assert np.array_equal(gmap[v].data, np.zeros(2, dtype=np.float32))


# ---------------------------------------------------------------------------
# input gradients (second-order contract)


def test_input_gradient_linear_critic_returns_weights():
    w = ad.Tensor(np.array([[0.3], [0.5], [-0.2]], dtype=np.float32))
    m = ad.Tensor(np.random.default_rng(0).normal(size=(4, 3)).astype(np.float32))
    g = ad.input_gradient(lambda t: ad.matmul(t, w), m)
    assert np.allclose(g.data, np.broadcast_to(w.data[:, 0], (4, 3)), rtol=1e-6)


def test_input_gradient_sum_of_squares_returns_2m():
    m = ad.Tensor(np.random.default_rng(1).normal(size=(3, 5)).astype(np.float32))

    def critic(t):
        return ad.reduce_sum(ad.mul(t, t), axis=1)

    g = ad.input_gradient(critic, m)
    assert np.allclose(g.data, 2.0 * m.data, rtol=1e-6)


def test_input_gradient_rejects_non_scalar_rows():
    m = ad.Tensor(np.zeros((2, 4), dtype=np.float32))
    with pytest.raises(ad.ContractError):
        ad.input_gradient(lambda t: t, m)


def test_penalty_gradient_matches_finite_differences():
    # penalty-only loss (||grad_m D(m)|| - 1)^2 differentiated wrt weights
    rng = np.random.default_rng(9)
    w1 = t64(rng.normal(0, 0.5, (6, 4)), tracked=True)
    b1 = t64(rng.normal(0, 0.1, (4,)), tracked=True)
    w2 = t64(rng.normal(0, 0.5, (4, 1)), tracked=True)
    b2 = t64(rng.normal(0, 0.1, (1,)), tracked=True)
    m = rng.normal(size=(3, 6))

    def critic(t):
        return ad.dense(ad.tanh_act(ad.dense(t, w1, b1)), w2, b2)

    def penalty(ret=False):
        with ad.Tape() as tape:
            g = ad.input_gradient(critic, ad.Tensor(m))
            norms = ad.l2_norm(g, axes=(1,))
            pen = ad.reduce_mean(ad.square(ad.sadd(norms, -1.0)))
            if ret:
                return pen, tape.gradients(pen, wrt=[w1, b1, w2])
        return pen.item()

    _, grads = penalty(True)
    from oracles import fd_gradient
    for p in (w1, b1, w2):
        (fd,) = fd_gradient(penalty, [p.data], eps=1e-3)
        assert max_rel_err(grads[p].data, fd) < 1e-3


# ---------------------------------------------------------------------------
# tape invariants, determinism, finiteness


def test_tape_records_are_topologically_ordered():
    w = ad.Tensor(np.ones((2, 2), dtype=np.float32), tracked=True)
    with ad.Tape() as tape:
        y = ad.matmul(ad.tanh_act(w), w)
        ad.reduce_mean(ad.mul(y, y))
    produced = set()
    for out_tid, inputs, _, _ in tape.records:
        for inp in inputs:
            # every input is either a leaf or the output of an earlier record
            assert inp.tid in produced or inp.tid < out_tid
        produced.add(out_tid)


def test_backward_visits_each_record_at_most_once():
    w = ad.Tensor(np.ones(3, dtype=np.float32), tracked=True)
    with ad.Tape() as tape:
        loss = ad.reduce_mean(ad.mul(ad.mul(w, w), w))
    before = len(tape.records)
    tape.gradients(loss)
    # no records consumed or added without create_graph
    assert len(tape.records) == before


def test_create_graph_appends_records():
    w = ad.Tensor(np.ones(3, dtype=np.float32), tracked=True)
    with ad.Tape() as tape:
        loss = ad.reduce_mean(ad.mul(w, w))
        before = len(tape.records)
        tape.gradients(loss, create_graph=True)
        assert len(tape.records) > before


def test_determinism_bit_identical_runs():
    def run():
        rng = np.random.default_rng(42)
        w = ad.Tensor(rng.normal(0, 0.1, (8, 4)).astype(np.float32), tracked=True)
        x = ad.Tensor(rng.normal(size=(3, 8)).astype(np.float32))
        with ad.Tape() as tape:
            loss = ad.reduce_mean(ad.tanh_act(ad.matmul(x, w)))
        g = tape.gradients(loss)[w]
        return loss.data.tobytes(), g.data.tobytes()

    assert run() == run()


def test_operations_keep_values_finite():
    rng = np.random.default_rng(8)
    x = ad.Tensor(rng.normal(0, 100, (4, 64, 2)).astype(np.float32), tracked=True)
    k = ad.Tensor(rng.normal(0, 1, (25, 2, 3)).astype(np.float32), tracked=True)
    with ad.Tape() as tape:
        y = ad.tanh_act(ad.conv1d(ad.lrelu(ad.conv1d_transpose(x, k, 2)),
                                  ad.Tensor(rng.normal(0, 1, (25, 3, 1)).astype(np.float32)), 4))
        loss = ad.l2_norm(y)
    assert np.all(np.isfinite(loss.data))
    for g in tape.gradients(loss).values():
        assert np.all(np.isfinite(g.data))


def test_norm_gradient_finite_at_zero():
    x = ad.Tensor(np.zeros(4, dtype=np.float32), tracked=True)
    with ad.Tape() as tape:
        n = ad.l2_norm(x)
    g = tape.gradients(n)[x]
    assert np.all(np.isfinite(g.data))
