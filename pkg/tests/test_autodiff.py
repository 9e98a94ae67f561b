import numpy as np
import pytest

from modelprints import autodiff as ad
from modelprints.optim import Adam

from oracles import conv2d_loop, finite_difference_grad, rel_error


def t64(arr, requires_grad=False):
    return ad.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=requires_grad,
                     dtype=np.float64)


def test_add_matmul_relu_values():
    assert np.allclose(ad.add(t64([1, 2]), t64([3, 4])).data, [4, 6])
    out = ad.matmul(t64(np.ones((2, 3))), t64(np.ones((3, 2))))
    assert np.allclose(out.data, 3.0)
    assert np.allclose(ad.relu(t64([-1, 0, 2])).data, [0, 0, 2])


def test_storage_dtype_defaults_to_float32():
    t = ad.Tensor(np.zeros(3, dtype=np.float64))
    assert t.data.dtype == np.float32
    # explicit float64 is honored and propagates through ops
    a = t64(np.ones((2, 2)))
    assert ad.matmul(a, a).data.dtype == np.float64
    with pytest.raises(TypeError):
        ad.Tensor(np.zeros(3, dtype=np.int64), dtype=np.int64)


def test_backward_hand_cases():
    x = t64([1.0, 2.0, 3.0], requires_grad=True)
    ad.backward(ad.sum_all(ad.mul(x, x)))
    assert np.allclose(x.grad, [2, 4, 6])

    y = t64([-1.0, 2.0], requires_grad=True)
    ad.backward(ad.sum_all(ad.relu(y)))
    assert np.allclose(y.grad, [0, 1])

    z = t64([5.0, -3.0], requires_grad=True)
    ad.backward(ad.sum_all(z))
    assert np.allclose(z.grad, [1, 1])


def test_backward_requires_scalar_and_single_use():
    x = t64([1.0, 2.0], requires_grad=True)
    y = ad.mul(x, x)
    with pytest.raises(ValueError):
        ad.backward(y)
    loss = ad.sum_all(y)
    ad.backward(loss)
    with pytest.raises(RuntimeError):
        ad.backward(loss)


def test_unused_leaf_gets_zero_grad():
    used = t64([1.0, 1.0], requires_grad=True)
    unused = t64([1.0, 1.0], requires_grad=True)
    ad.backward(ad.sum_all(ad.mul(used, used)))
    assert np.allclose(unused.grad, 0.0)


def test_shape_errors_name_the_op():
    with pytest.raises(ValueError, match="matmul"):
        ad.matmul(t64(np.ones((2, 3))), t64(np.ones((2, 3))))
    with pytest.raises(ValueError, match="reshape"):
        ad.reshape(t64(np.ones(6)), (4, 2))
    with pytest.raises(ValueError, match="softmax"):
        ad.softmax_rows(t64(np.ones((2, 2, 2))))


def test_nonfinite_forward_is_an_error():
    big = t64([1e308], requires_grad=True)
    with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
        ad.mul(big, big)  # overflows to inf
    with pytest.raises(ValueError):
        ad.log(t64([1.0, -1.0]))


def test_conv2d_matches_loop_oracle():
    rng = np.random.default_rng(7)
    for trial in range(6):
        stride = 1 + trial % 2
        pad = trial % 3
        x = rng.standard_normal((2, 1, 8, 8))
        w = rng.standard_normal((3, 1, 3, 3))
        b = rng.standard_normal(3)
        out = ad.conv2d(t64(x), t64(w), t64(b), stride=stride, pad=pad)
        ref = conv2d_loop(x, w, b, stride=stride, pad=pad)
        assert rel_error(out.data, ref) < 1e-12


GRAD_OPS = [
    ("add", 3, lambda x: ad.sum_all(ad.add(x, x))),
    ("sub", 5, lambda x: ad.sum_all(ad.mul(ad.sub(x, ad.scalar_mul(x, 0.3)),
                                           ad.sub(x, ad.scalar_mul(x, 0.3))))),
    ("mul", 7, lambda x: ad.sum_all(ad.mul(x, ad.mul(x, x)))),
    ("relu", 9, lambda x: ad.sum_all(ad.mul(ad.relu(x), ad.relu(x)))),
    ("scalar_mul", 11, lambda x: ad.sum_all(ad.mul(ad.scalar_mul(x, -1.7), x))),
    ("log", 13, lambda x: ad.sum_all(ad.log(ad.add(ad.mul(x, x),
                                                   ad.scalar_mul(ad.relu(x), 1.0))))),
]


@pytest.mark.parametrize("name,seed,build", GRAD_OPS, ids=[n for n, _, _ in GRAD_OPS])
def test_elementwise_gradients_match_finite_differences(name, seed, build):
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((4, 5)) + 2.0  # keeps the log argument >= 1
    t = t64(x0, requires_grad=True)
    ad.backward(build(t))

    def f(arr):
        return build(t64(arr)).item()

    assert rel_error(t.grad, finite_difference_grad(f, x0)) < 1e-6


def test_matmul_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    a0 = rng.standard_normal((3, 4))
    b0 = rng.standard_normal((4, 2))
    a = t64(a0, requires_grad=True)
    b = t64(b0, requires_grad=True)
    out = ad.matmul(a, b)
    ad.backward(ad.sum_all(ad.mul(out, out)))

    def fa(arr):
        o = ad.matmul(t64(arr), t64(b0))
        return ad.sum_all(ad.mul(o, o)).item()

    def fb(arr):
        o = ad.matmul(t64(a0), t64(arr))
        return ad.sum_all(ad.mul(o, o)).item()

    assert rel_error(a.grad, finite_difference_grad(fa, a0)) < 1e-6
    assert rel_error(b.grad, finite_difference_grad(fb, b0)) < 1e-6


def test_conv_and_pool_gradients_match_finite_differences():
    rng = np.random.default_rng(13)
    x0 = rng.standard_normal((2, 1, 6, 6))
    w0 = rng.standard_normal((2, 1, 3, 3))
    b0 = rng.standard_normal(2)

    x = t64(x0, requires_grad=True)
    w = t64(w0, requires_grad=True)
    b = t64(b0, requires_grad=True)
    h = ad.relu(ad.conv2d(x, w, b, stride=2, pad=1))
    p = ad.mean_pool_spatial(h)
    ad.backward(ad.sum_all(ad.mul(p, p)))

    for t, arr, pick in ((x, x0, 0), (w, w0, 1), (b, b0, 2)):
        def f(a):
            args = [x0, w0, b0]
            args[pick] = a
            hh = ad.relu(ad.conv2d(t64(args[0]), t64(args[1]), t64(args[2]),
                                   stride=2, pad=1))
            pp = ad.mean_pool_spatial(hh)
            return ad.sum_all(ad.mul(pp, pp)).item()
        assert rel_error(t.grad, finite_difference_grad(f, arr)) < 1e-6


def test_softmax_and_set_pool_gradients():
    rng = np.random.default_rng(17)
    x0 = rng.standard_normal((3, 4))

    def scalar_of(arr):
        p = ad.softmax_rows(t64(arr))
        return ad.sum_all(ad.mul(p, p)).item()

    t = t64(x0, requires_grad=True)
    p = ad.softmax_rows(t)
    ad.backward(ad.sum_all(ad.mul(p, p)))
    assert rel_error(t.grad, finite_difference_grad(scalar_of, x0)) < 1e-6

    g0 = rng.standard_normal((2, 5, 3))
    for mode in ("mean", "sum"):
        t = t64(g0, requires_grad=True)
        out = ad.mean_over_set_axis(t, mode=mode)
        ad.backward(ad.sum_all(ad.mul(out, out)))

        def f(arr, mode=mode):
            o = ad.mean_over_set_axis(t64(arr), mode=mode)
            return ad.sum_all(ad.mul(o, o)).item()

        assert rel_error(t.grad, finite_difference_grad(f, g0)) < 1e-6


def test_squared_euclidean_rowpair_values_and_grad():
    z = t64([[0.0, 0.0], [3.0, 4.0]], requires_grad=True)
    d = ad.squared_euclidean_rowpair(z)
    assert np.allclose(d.data, [[0, 25], [25, 0]])
    ad.backward(ad.sum_all(ad.mul(d, d)))

    z0 = np.array([[0.0, 0.0], [3.0, 4.0]])

    def f(arr):
        dd = ad.squared_euclidean_rowpair(t64(arr))
        return ad.sum_all(ad.mul(dd, dd)).item()

    assert rel_error(z.grad, finite_difference_grad(f, z0)) < 1e-6


def test_mean_over_set_axis_is_bitwise_permutation_invariant():
    rng = np.random.default_rng(23)
    x = np.asarray(rng.standard_normal((3, 16, 8)), dtype=np.float32)
    base = ad.mean_over_set_axis(ad.Tensor(x)).data
    for _ in range(20):
        perm = rng.permutation(16)
        out = ad.mean_over_set_axis(ad.Tensor(x[:, perm])).data
        assert np.array_equal(base, out)


def test_adam_first_step_magnitude():
    # one step with g=1 everywhere: bias-corrected update is exactly lr
    p = t64([0.5, 0.5], requires_grad=True)
    opt = Adam({"p": p}, learning_rate=1e-3)
    p.grad[...] = 1.0
    opt.step()
    assert np.allclose(p.data, 0.5 - 1e-3, atol=1e-9)


def test_adam_zero_grad_keeps_params():
    p = t64([1.0, -2.0], requires_grad=True)
    opt = Adam({"p": p}, learning_rate=1e-2)
    before = p.data.copy()
    opt.step()  # grad is zero
    assert np.allclose(p.data, before)


def test_adam_descends_convex_quadratic():
    p = t64([3.0], requires_grad=True)
    opt = Adam({"p": p}, learning_rate=1e-1)
    values = []
    for _ in range(50):
        loss = ad.sum_all(ad.mul(p, p))
        values.append(loss.item())
        opt.zero_grad()
        ad.backward(loss)
        opt.step()
    assert values[-1] < values[0]
    assert values[1] < values[0]


def test_adam_rejects_nonfinite_grad():
    p = t64([1.0], requires_grad=True)
    opt = Adam({"p": p})
    p.grad[...] = np.nan
    with pytest.raises(FloatingPointError, match="p"):
        opt.step()


def test_training_step_is_deterministic():
    def run():
        rng = np.random.default_rng(42)
        w = ad.Tensor(np.asarray(rng.standard_normal((4, 4)), dtype=np.float32),
                      requires_grad=True)
        x = ad.Tensor(np.asarray(rng.standard_normal((8, 4)), dtype=np.float32))
        opt = Adam({"w": w}, learning_rate=1e-2)
        for _ in range(5):
            out = ad.matmul(x, w)
            loss = ad.sum_all(ad.mul(out, out))
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
        return w.data.copy()

    assert np.array_equal(run(), run())
