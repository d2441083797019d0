import numpy as np
import pytest
from hypothesis import given, strategies as st

from weavematch import autodiff as ad
from weavematch.autodiff import Adam, BatchNormState, Parameter, Tensor, adam_step

import gradcheck

TOL = 1e-4


def rand(rng, *shape, name=None):
    return Tensor(rng.normal(size=shape), requires_grad=True, name=name)


def projected(out, rng_seed=99):
    """sum(out * R) for a fixed random R, so every output element matters."""
    r = np.random.default_rng(rng_seed).normal(size=out.shape)
    return ad.sum_(ad.mul(out, Tensor(r)))


UNARY = {
    "relu": lambda x: ad.relu(x),
    "abs": lambda x: ad.abs_(x),
    "sqrt": lambda x: ad.sqrt(ad.add(ad.mul(x, x), 1.0)),
    "neg": lambda x: -x,
    "softmax_rows": lambda x: ad.softmax_rows(x),
    "sum_axis": lambda x: ad.sum_(x, axis=1),
    "mean_keep": lambda x: ad.mean(x, axis=-1, keepdims=True),
    "l2_norm": lambda x: ad.l2_norm(x),
    "swap_axes": lambda x: ad.swap_axes(x, 0, 1),
    "reshape": lambda x: ad.reshape(x, (-1,)),
    "roll": lambda x: ad.roll(x, 1, axis=0),
    "max_over_set": lambda x: ad.max_over_set(x, axis=-2),
    "repeat_set": lambda x: ad.repeat_set(ad.max_over_set(x), 4, axis=-2),
    "split": lambda x: ad.mul(*ad.split(x, 2, axis=0)),
    "scalar_ops": lambda x: (x * 3.0 - 1.0) / 2.0 + 1.0 - x * x,
}

BINARY = {
    "add_broadcast": (lambda a, b: ad.add(a, b), (4, 3, 5), (5,)),
    "sub": (lambda a, b: ad.sub(a, b), (4, 3, 5), (3, 5)),
    "mul_broadcast": (lambda a, b: ad.mul(a, b), (4, 3, 5), (1, 3, 1)),
    "div": (lambda a, b: ad.div(a, ad.add(ad.mul(b, b), 1.0)), (4, 3, 5), (4, 3, 5)),
    "minimum": (lambda a, b: ad.minimum(a, b), (4, 3, 5), (4, 3, 5)),
    "maximum": (lambda a, b: ad.maximum(a, b), (4, 3, 5), (4, 3, 5)),
    "dot": (lambda a, b: ad.dot(a, b), (4, 3, 5), (4, 3, 5)),
    "matmul": (lambda a, b: ad.matmul(a, b), (2, 3, 4), (2, 4, 5)),
    "concat": (lambda a, b: ad.concat([a, b], axis=0), (2, 3, 5), (4, 3, 5)),
    "concat_features": (lambda a, b: ad.concat_features([a, b]), (4, 3, 2), (4, 3, 5)),
    "prelu": (lambda a, b: ad.prelu(a, b), (4, 3, 5), (5,)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    rng = np.random.default_rng(0)
    x = rand(rng, 4, 3, 5)
    errs = gradcheck.check(lambda: projected(UNARY[name](x)), [x])
    assert max(errs.values()) < TOL, errs


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients(name):
    fn, sa, sb = BINARY[name]
    rng = np.random.default_rng(1)
    a, b = rand(rng, *sa), rand(rng, *sb)
    errs = gradcheck.check(lambda: projected(fn(a, b)), [a, b])
    assert max(errs.values()) < TOL, errs


def test_linear_feature_values_and_gradient():
    x = Tensor(np.arange(6.0).reshape(1, 2, 3))
    assert np.array_equal(ad.linear_feature(x, Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x.data)
    y = ad.linear_feature(Tensor([[[2.0]]]), Tensor([[3.0]]), Tensor([0.5]))
    assert y.data.item() == 6.5
    rng = np.random.default_rng(2)
    x, w, b = rand(rng, 3, 4, 5), rand(rng, 5, 6), rand(rng, 6)
    errs = gradcheck.check(lambda: projected(ad.linear_feature(x, w, b)), [x, w, b])
    assert max(errs.values()) < TOL
    errs = gradcheck.check(lambda: projected(ad.linear_feature(x, w)), [x, w])
    assert max(errs.values()) < TOL


def test_max_over_set_rules():
    x = Tensor(np.random.default_rng(3).normal(size=(2, 1, 4)))
    assert np.array_equal(ad.max_over_set(x).data, x.data[:, 0])
    const = Tensor(np.full((3, 2), 5.0), requires_grad=True)
    out = ad.max_over_set(const, axis=0)
    assert np.array_equal(out.data, [5.0, 5.0])
    ad.backward(ad.sum_(out))
    assert np.array_equal(const.grad, [[1, 1], [0, 0], [0, 0]])


def test_concat_and_swap_basics():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(3, 4, 2)))
    assert ad.concat_features([x]).data is not None
    assert np.array_equal(ad.concat_features([x]).data, x.data)
    assert ad.concat_features([x, x]).shape == (3, 4, 4)
    assert ad.swap_axes(x).shape == (4, 3, 2)
    assert np.array_equal(ad.swap_axes(ad.swap_axes(x)).data, x.data)


def test_prelu_rules():
    x = Tensor(np.array([-2.0, -0.5, 0.0, 1.5]))
    assert np.array_equal(ad.prelu(x, Tensor([0.25])).data, [-0.5, -0.125, 0.0, 1.5])
    assert np.array_equal(ad.prelu(x, Tensor([1.0])).data, x.data)
    pos = Tensor(np.abs(np.random.default_rng(5).normal(size=10)))
    assert np.array_equal(ad.prelu(pos, Tensor([0.3])).data, pos.data)


def test_softmax_rows_properties():
    s = ad.softmax_rows(Tensor(np.zeros((3, 5))))
    assert np.allclose(s.data, 0.2)
    s = ad.softmax_rows(Tensor(np.random.default_rng(6).normal(scale=30, size=(50, 7))))
    assert np.allclose(s.data.sum(-1), 1.0, atol=1e-6)


def test_batch_norm_train_and_eval():
    rng = np.random.default_rng(7)
    z = rng.normal(size=(200, 3))
    z = (z - z.mean(0)) / z.std(0)
    gamma, beta = Tensor([1.5, 2.0, 0.5]), Tensor([0.1, -0.2, 0.3])
    st_ = BatchNormState(3, dtype=np.float64)
    out = ad.batch_norm(Tensor(z), gamma, beta, st_, training=True)
    assert np.allclose(out.data, z * gamma.data + beta.data, atol=1e-4)
    # running statistics moved by momentum 0.1 towards the batch (unbiased variance)
    assert np.allclose(st_.mean, 0.1 * z.mean(0))
    assert np.allclose(st_.var, 0.9 + 0.1 * z.var(0, ddof=1))
    x = Tensor(rng.normal(size=(4, 3)))
    e1 = ad.batch_norm(x, gamma, beta, st_, training=False).data
    e2 = ad.batch_norm(x, gamma, beta, st_, training=False).data
    assert np.array_equal(e1, e2)
    scale = gamma.data / np.sqrt(st_.var + st_.eps)
    assert np.allclose(e1, (x.data - st_.mean) * scale + beta.data)


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_gradient(training):
    rng = np.random.default_rng(8)
    x, g, b = rand(rng, 2, 3, 4, 5), rand(rng, 5), rand(rng, 5)
    st_ = BatchNormState(5, dtype=np.float64)
    st_.mean, st_.var = rng.normal(size=5), rng.uniform(0.5, 2, size=5)
    m0, v0 = st_.mean.copy(), st_.var.copy()

    def build():
        st_.mean, st_.var = m0.copy(), v0.copy()
        return projected(ad.batch_norm(x, g, b, st_, training))

    errs = gradcheck.check(build, [x, g, b])
    assert max(errs.values()) < TOL, errs


def test_backward_accumulates():
    w = Tensor(np.ones((2, 3)), requires_grad=True)
    ad.backward(ad.sum_(w))
    assert np.array_equal(w.grad, np.ones((2, 3)))
    w.grad = None
    ad.backward(ad.add(ad.sum_(ad.mul(w, 2.0)), ad.sum_(w)))
    assert np.array_equal(w.grad, np.full((2, 3), 3.0))


@given(st.integers(1, 4), st.integers(1, 5), st.integers(0, 2**31))
def test_no_nan_on_bounded_inputs(n, d, seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(-10, 10, size=(2, n, n, d)), requires_grad=True)
    st_ = BatchNormState(d, dtype=np.float64)
    y = ad.batch_norm(ad.prelu(x, Tensor(np.full(d, 0.25))), Tensor(np.ones(d)), Tensor(np.zeros(d)), st_, True)
    y = ad.softmax_rows(ad.max_over_set(y, axis=-2))
    ad.backward(ad.sum_(ad.mul(y, y)))
    assert np.isfinite(y.data).all() and np.isfinite(x.grad).all()


def reference_adam(theta, grads, lr, b1, b2, eps):
    """Scalar loop implementation written independently of the vectorised one."""
    theta = [float(t) for t in theta]
    m = [0.0] * len(theta)
    v = [0.0] * len(theta)
    for t, g in enumerate(grads, start=1):
        for k in range(len(theta)):
            m[k] = b1 * m[k] + (1 - b1) * g[k]
            v[k] = b2 * v[k] + (1 - b2) * g[k] ** 2
            mhat = m[k] / (1 - b1 ** t)
            vhat = v[k] / (1 - b2 ** t)
            theta[k] -= lr * mhat / (vhat ** 0.5 + eps)
    return theta


def test_adam_matches_scalar_reference():
    rng = np.random.default_rng(9)
    p = Parameter(rng.normal(size=6), "p", dtype=np.float64)
    start = p.data.copy()
    grads = rng.normal(size=(10, 6))
    opt = Adam([p], lr=1e-2)
    for g in grads:
        p.grad = g.copy()
        opt.step()
    ref = reference_adam(start, grads, 1e-2, 0.9, 0.999, 1e-8)
    assert np.max(np.abs(p.data - ref)) < 1e-12


def test_adam_first_step_and_zero_gradient():
    p = Parameter(np.zeros(4), "p", dtype=np.float64)
    opt = Adam([p], lr=1e-3)
    p.grad = np.ones(4)
    opt.step()
    assert np.allclose(p.data, -1e-3, rtol=1e-6)
    q = Parameter(np.ones(3), "q", dtype=np.float64)
    adam_step([q], [np.zeros(3)], [np.zeros(3)], 1e-3, 0.9, 0.999, 1e-8, 1)
    assert np.array_equal(q.data, np.ones(3))  # no gradient attached: skipped
    q.grad = np.zeros(3)
    adam_step([q], [np.zeros(3)], [np.zeros(3)], 1e-3, 0.9, 0.999, 1e-8, 1)
    assert np.array_equal(q.data, np.ones(3))


def test_frozen_parameters_are_not_optimised():
    p = Parameter(np.ones(2), "p", trainable=False)
    assert Adam([p]).params == []


def test_checkpoint_round_trip(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b.c": np.array([1.5, -2.0])}
    ad.save_arrays(tmp_path / "x.wnckpt", arrays, {"k": 1})
    back, meta = ad.load_arrays(tmp_path / "x.wnckpt")
    assert meta["k"] == 1
    for k, v in arrays.items():
        assert back[k].dtype == v.dtype and np.array_equal(back[k], v)
    raw = (tmp_path / "x.wnckpt").read_bytes()
    assert raw[:8] == b"WNCKPT\0\0"
    (tmp_path / "bad").write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(ValueError):
        ad.load_arrays(tmp_path / "bad")
