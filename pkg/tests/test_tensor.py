"""Autodiff core tests.

Every primitive gets a central finite-difference check in float64; the
graph machinery (toposort, accumulation, release) is exercised on shared
and diamond-shaped graphs.
"""

import numpy as np
import pytest

from amr2text import tensor as T


def fd_check(fn, inputs, rel_tol=1e-6, eps=1e-6):
    """Compare analytic grads of scalar fn(*inputs) against central FD."""
    with T.gradcheck_mode():
        tensors = [T.tensor(x, requires_grad=True) for x in inputs]
        loss = fn(*tensors)
        loss.backward()
        grads = [t.grad.copy() for t in tensors]
        for x, ana in zip(inputs, grads):
            flat = x.reshape(-1)
            num = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = fn(*[T.tensor(v) for v in inputs]).item()
                flat[i] = orig - eps
                down = fn(*[T.tensor(v) for v in inputs]).item()
                flat[i] = orig
                num[i] = (up - down) / (2 * eps)
            err = np.abs(num - ana.reshape(-1))
            denom = np.maximum(np.abs(num) + np.abs(ana.reshape(-1)), 1e-8)
            assert (err / denom).max() < rel_tol, fn


def _proj(shape, seed=0):
    w = np.random.default_rng(seed).normal(size=shape)

    def reduce(t):
        flat = T.reshape(t, (1, -1))
        return T.reshape(T.matmul(flat, T.tensor(w.reshape(-1, 1))), ())

    return reduce


def rand(rng, *shape):
    return rng.normal(size=shape)


@pytest.fixture
def r():
    return np.random.default_rng(42)


def test_add_grad_with_broadcast(r):
    a, b = rand(r, 3, 4), rand(r, 4)
    p = _proj((12,))
    fd_check(lambda x, y: p(T.add(x, y)), [a, b])


def test_mul_grad_with_broadcast(r):
    a, b = rand(r, 2, 3, 4), rand(r, 1, 4)
    p = _proj((24,))
    fd_check(lambda x, y: p(T.mul(x, y)), [a, b])


def test_matmul_grad(r):
    a, b = rand(r, 3, 4), rand(r, 4, 5)
    p = _proj((15,))
    fd_check(lambda x, y: p(T.matmul(x, y)), [a, b])


def test_matmul_grad_batched(r):
    a, b = rand(r, 2, 3, 4), rand(r, 2, 4, 5)
    p = _proj((30,))
    fd_check(lambda x, y: p(T.matmul(x, y)), [a, b])


def test_relu_grad(r):
    x = rand(r, 5, 6)
    x[np.abs(x) < 1e-2] += 0.5  # keep probes away from the kink
    p = _proj((30,))
    fd_check(lambda t: p(T.relu(t)), [x])


def test_softmax_grad(r):
    x = rand(r, 3, 7)
    p = _proj((21,))
    fd_check(lambda t: p(T.softmax(t, axis=-1)), [x])


def test_softmax_rows_sum_to_one(r):
    with T.gradcheck_mode():
        x = T.tensor(rand(r, 4, 9) * 10)
        s = T.softmax(x, axis=-1)
    np.testing.assert_allclose(s.data.sum(axis=-1), 1.0, atol=1e-12)


def test_layernorm_grad(r):
    x, g, b = rand(r, 4, 8), rand(r, 8), rand(r, 8)
    p = _proj((32,))
    fd_check(lambda t, gg, bb: p(T.layernorm(t, gg, bb)), [x, g, b], rel_tol=1e-5)


def test_layernorm_normalizes(r):
    x = rand(r, 6, 16) * 3 + 5
    with T.gradcheck_mode():
        out = T.layernorm(T.tensor(x), T.tensor(np.ones(16)), T.tensor(np.zeros(16)))
    np.testing.assert_allclose(out.data.mean(axis=-1), 0.0, atol=1e-9)
    np.testing.assert_allclose(out.data.std(axis=-1), 1.0, atol=1e-3)


def test_embed_grad_accumulates_repeated_ids(r):
    table = rand(r, 5, 3)
    ids = np.array([[0, 2, 0], [4, 0, 2]])
    p = _proj((18,))
    fd_check(lambda t: p(T.embed(t, ids)), [table])


def test_concat_last_dim_grad(r):
    a, b, c = rand(r, 2, 3), rand(r, 2, 2), rand(r, 2, 4)
    p = _proj((18,))
    fd_check(lambda x, y, z: p(T.concat_last_dim([x, y, z])), [a, b, c])


def test_reshape_swapaxes_grads(r):
    x = rand(r, 2, 3, 4)
    p = _proj((24,))
    fd_check(lambda t: p(T.reshape(t, (6, 4))), [x])
    fd_check(lambda t: p(T.swapaxes(t, 0, 2)), [x])


def test_label_smoothed_nll_grad(r):
    logits = rand(r, 6, 5)
    targets = np.array([1, 4, 0, 2, 0, 3])
    fd_check(
        lambda t: T.label_smoothed_nll(t, targets, eps=0.1, pad_id=0),
        [logits],
        rel_tol=1e-5,
    )


def test_label_smoothed_nll_value_matches_numpy_oracle(r):
    logits = rand(r, 4, 7)
    targets = np.array([3, 0, 5, 1])
    eps, pad = 0.1, 0
    with T.gradcheck_mode():
        got = T.label_smoothed_nll(T.tensor(logits), targets, eps=eps, pad_id=pad).item()
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    keep = targets != pad
    nll = -logp[np.arange(4), targets]
    smooth = -logp.mean(axis=1)
    want = ((1 - eps) * nll + eps * smooth)[keep].mean()
    assert abs(got - want) < 1e-12


def test_label_smoothed_nll_eps_zero_is_plain_nll(r):
    logits = rand(r, 3, 4)
    targets = np.array([1, 2, 3])
    with T.gradcheck_mode():
        got = T.label_smoothed_nll(T.tensor(logits), targets, eps=0.0, pad_id=0).item()
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    assert abs(got + logp[np.arange(3), targets].mean()) < 1e-12


def test_label_smoothed_nll_all_pad_raises():
    with pytest.raises(T.AllPadTarget):
        T.label_smoothed_nll(T.tensor(np.zeros((2, 3))), np.array([0, 0]), 0.1, pad_id=0)


def test_label_smoothed_nll_bad_eps():
    with pytest.raises(ValueError):
        T.label_smoothed_nll(T.tensor(np.zeros((1, 3))), np.array([1]), 1.0, pad_id=0)


def test_dropout_train_and_eval(r):
    x = T.tensor(np.ones((1000,)), requires_grad=True)
    gen = np.random.default_rng(0)
    out = T.dropout(x, 0.25, gen, training=True)
    zeros = (out.data == 0).mean()
    assert 0.18 < zeros < 0.32
    kept = out.data[out.data != 0]
    np.testing.assert_allclose(kept, 1 / 0.75, atol=1e-12)  # inverted scaling
    eval_out = T.dropout(x, 0.25, gen, training=False)
    np.testing.assert_array_equal(eval_out.data, x.data)


def test_dropout_grad_routes_through_mask(r):
    x = rand(r, 50)
    gen = np.random.default_rng(7)
    with T.gradcheck_mode():
        t = T.tensor(x, requires_grad=True)
        out = T.dropout(t, 0.5, gen, training=True)
        loss = T.matmul(T.reshape(out, (1, -1)), T.reshape(T.tensor(np.ones(50)), (-1, 1)))
        T.reshape(loss, ()).backward()
        mask = out.data != 0
        np.testing.assert_allclose(t.grad[mask], 2.0)
        np.testing.assert_allclose(t.grad[~mask], 0.0)


def test_diamond_graph_accumulates(r):
    # z = x*y + x : dz/dx = y + 1, dz/dy = x
    x = T.tensor(np.array(3.0), requires_grad=True)
    y = T.tensor(np.array(5.0), requires_grad=True)
    z = T.add(T.mul(x, y), x)
    z.backward()
    assert x.grad.item() == 6.0
    assert y.grad.item() == 3.0


def test_shared_subexpression_counts_once_per_path(r):
    x = T.tensor(np.array(2.0), requires_grad=True)
    s = T.mul(x, x)  # x^2
    z = T.add(s, s)  # 2x^2 -> dz/dx = 4x = 8
    z.backward()
    assert x.grad.item() == 8.0


def test_backward_requires_scalar():
    x = T.tensor(np.ones(3), requires_grad=True)
    with pytest.raises(T.NonScalarLoss):
        T.mul(x, x).backward()


def test_backward_releases_graph():
    x = T.tensor(np.array(2.0), requires_grad=True)
    z = T.mul(x, x)
    z.backward()
    assert z._parents == () and z._backward is None


def test_zero_grad_and_accumulation():
    x = T.tensor(np.array(1.0), requires_grad=True)
    T.mul(x, x).backward()
    T.mul(x, x).backward()
    assert x.grad.item() == 4.0  # grads accumulate across backwards
    x.zero_grad()
    assert x.grad is None


def test_no_grad_blocks_recording():
    x = T.tensor(np.array(2.0), requires_grad=True)
    with T.no_grad():
        z = T.mul(x, x)
    assert z._parents == ()
    assert not z.requires_grad


def test_shape_mismatch_raises():
    with pytest.raises(T.ShapeMismatch):
        T.matmul(T.tensor(np.ones((2, 3))), T.tensor(np.ones((2, 3))))


def test_gradcheck_mode_sets_float64():
    assert T.default_dtype() == np.float32
    with T.gradcheck_mode():
        assert T.tensor(np.zeros(2)).data.dtype == np.float64
    assert T.default_dtype() == np.float32


def test_rng_streams_reproducible_and_independent():
    a1 = T.Rng(7).stream("dropout", 3).normal(size=4)
    a2 = T.Rng(7).stream("dropout", 3).normal(size=4)
    b = T.Rng(7).stream("dropout", 4).normal(size=4)
    c = T.Rng(8).stream("dropout", 3).normal(size=4)
    np.testing.assert_array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    assert not np.array_equal(a1, c)
