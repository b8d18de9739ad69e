import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffsoft import autodiff as ad
from helpers import fd_gradient, rel_err

RNG = np.random.default_rng(7)


def test_dot_example():
    assert ad.dot([1.0, 2.0, 3.0], [4.0, 5.0, 6.0]).item() == 32.0


def test_relu_example():
    np.testing.assert_array_equal(ad.relu(np.array([-1.0, 0.0, 2.0])).value, [0.0, 0.0, 2.0])


def test_det2x2_example():
    assert ad.det2x2(np.array([[2.0, 0.0], [0.0, 3.0]])).item() == 6.0


def test_gradient_of_sum_of_squares():
    x = ad.variable([1.0, 2.0])
    (g,) = ad.gradient(ad.sum(ad.square(x)), [x])
    np.testing.assert_array_equal(g.value, [2.0, 4.0])


def test_gradient_of_linear():
    x = ad.variable([0.3, -1.0])
    (g,) = ad.gradient(ad.dot([3.0, 5.0], x), [x])
    np.testing.assert_array_equal(g.value, [3.0, 5.0])


def test_gradient_requires_scalar():
    x = ad.variable([1.0, 2.0])
    with pytest.raises(ValueError):
        ad.gradient(x * 2.0, [x])


def test_gradient_off_graph_is_zero():
    x = ad.variable([1.0, 2.0])
    y = ad.variable([3.0])
    (gy,) = ad.gradient(ad.sum(x), [y])
    np.testing.assert_array_equal(gy.value, [0.0])


def test_constants_do_not_record():
    c = ad.constant([1.0, 2.0])
    out = ad.sum(ad.square(c))
    assert not out.requires_grad
    assert out.parents == ()


def test_shape_error_names_op():
    with pytest.raises(ad.ShapeError, match="dot"):
        ad.dot(np.ones(3), np.ones(4))
    with pytest.raises(ad.ShapeError, match="matmul"):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_parents_created_before_children():
    x = ad.variable(RNG.standard_normal(3))
    y = ad.sum(ad.sqrt(ad.square(x) + 1.0) * x)
    stack, seen = [y], set()
    while stack:
        n = stack.pop()
        for p in n.parents:
            assert p.order < n.order
            if id(p) not in seen:
                seen.add(id(p))
                stack.append(p)


def test_no_grad_blocks_recording():
    x = ad.variable([1.0])
    with ad.no_grad():
        y = x * 2.0
    assert not y.requires_grad


# op name -> (scalar function of one array, input shape)
UNARY = {
    "square": (lambda a: ad.sum(ad.square(a)), (3, 2)),
    "sqrt": (lambda a: ad.sum(ad.sqrt(ad.square(a) + 0.5)), (4,)),
    "exp": (lambda a: ad.sum(ad.exp(a)), (3,)),
    "log": (lambda a: ad.sum(ad.log(ad.square(a) + 1.0)), (3,)),
    "sigmoid": (lambda a: ad.sum(ad.sigmoid(a) * a), (5,)),
    "tanh": (lambda a: ad.sum(ad.tanh(a) * a), (5,)),
    "relu": (lambda a: ad.sum(ad.relu(a) * a), (6,)),
    "div": (lambda a: ad.sum(a / (ad.square(a) + 1.0)), (4,)),
    "mean": (lambda a: ad.mean(ad.square(a), axis=0)[1], (3, 2)),
    "sum_axis": (lambda a: ad.dot(ad.sum(a, axis=1), [1.0, -2.0, 0.5]), (3, 2)),
    "det2x2": (lambda a: ad.sum(ad.square(ad.det2x2(a))), (4, 2, 2)),
    "matmul": (lambda a: ad.sum(ad.square(ad.matmul(a, a))), (2, 2, 2)),
    "gather": (lambda a: ad.sum(ad.square(ad.gather(a, [0, 2, 2]))), (3, 2)),
    "index": (lambda a: ad.sum(ad.square(a[:, 1])), (3, 2)),
    "concat": (lambda a: ad.sum(ad.square(ad.concat([a, a * 2.0]))), (3,)),
    "reshape": (lambda a: ad.dot(ad.reshape(a, (6,)), np.arange(6.0)), (3, 2)),
    "minimum": (lambda a: ad.sum(ad.minimum(a, ad.square(a))), (5,)),
    "clip": (lambda a: ad.sum(ad.square(ad.clip(a, -0.7, 0.7))), (5,)),
    "broadcast": (lambda a: ad.sum(ad.square(a + np.ones((4, 3)))), (3,)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_op_gradient_matches_fd(name):
    fn, shape = UNARY[name]
    x = RNG.uniform(-1.5, 1.5, shape)
    # keep away from the kinks of relu, minimum and clip
    x = np.where(np.abs(x) < 0.05, 0.3, x)
    x = np.where(np.abs(np.abs(x) - 0.7) < 0.05, 0.4, x)
    x = np.where(np.abs(x - 1.0) < 0.05, 1.2, x)
    g = ad.gradient(fn(ad.variable(x)), [ad.variable(x)])  # unrelated variable: zero
    assert np.all(g[0].value == 0)
    xv = ad.variable(x)
    (g,) = ad.gradient(fn(xv), [xv])
    fd = fd_gradient(lambda z: fn(ad.constant(z)).item(), x)
    assert rel_err(g.value, fd) < 1e-6


def test_affine_batched_and_single_agree():
    W = RNG.standard_normal((4, 3))
    b = RNG.standard_normal(4)
    X = RNG.standard_normal((5, 3))
    batched = ad.affine(W, X, b).value
    rows = np.stack([ad.affine(W, x, b).value for x in X])
    np.testing.assert_allclose(batched, rows, rtol=1e-14)


def test_affine_gradient_matches_fd():
    W = RNG.standard_normal((4, 3))
    x = RNG.standard_normal(3)
    b = RNG.standard_normal(4)

    def f(Wm):
        return ad.sum(ad.tanh(ad.affine(Wm, x, b)))

    Wv = ad.variable(W)
    (g,) = ad.gradient(f(Wv), [Wv])
    assert rel_err(g.value, fd_gradient(lambda z: f(ad.constant(z)).item(), W)) < 1e-6


def test_hvp_examples():
    def e(x):
        return ad.square(x[0]) + x[0] * x[1] * 3.0

    x = RNG.standard_normal(2)
    np.testing.assert_allclose(ad.hvp(e, x, np.array([1.0, 0.0])), [2.0, 3.0], atol=1e-14)
    v = RNG.standard_normal(5)
    half_norm = lambda z: ad.sum(ad.square(z)) * 0.5  # noqa: E731
    np.testing.assert_allclose(ad.hvp(half_norm, RNG.standard_normal(5), v), v, rtol=1e-14)


def _quartic(x):
    return ad.sum(ad.square(ad.square(x))) + ad.sum(ad.sigmoid(x) * x)


def test_second_gradient_equals_hvp():
    x0 = RNG.standard_normal(4)
    v = RNG.standard_normal(4)
    xv = ad.variable(x0)
    (g,) = ad.gradient(_quartic(xv), [xv], create_graph=True)
    (hv,) = ad.gradient(ad.dot(g, v), [xv])
    np.testing.assert_allclose(hv.value, ad.hvp(_quartic, x0, v), rtol=1e-13)


def test_hvp_matches_fd_of_gradient():
    x0 = RNG.standard_normal(4)
    v = RNG.standard_normal(4)

    def grad(z):
        zv = ad.variable(z)
        return ad.gradient(_quartic(zv), [zv])[0].value

    eps = 1e-6
    fd = (grad(x0 + eps * v) - grad(x0 - eps * v)) / (2 * eps)
    assert rel_err(ad.hvp(_quartic, x0, v), fd) < 1e-6


vectors = arrays(np.float64, 4, elements=st.floats(-2, 2))


@settings(max_examples=40, deadline=None)
@given(x=vectors, u=vectors, w=vectors, alpha=st.floats(-3, 3), beta=st.floats(-3, 3))
def test_hvp_symmetric_and_linear(x, u, w, alpha, beta):
    H = ad.hvp_operator(_quartic, x)
    hu, hw = H(u), H(w)
    lhs, rhs = float(u @ hw), float(w @ hu)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs), abs(rhs))
    combo = H(alpha * u + beta * w)
    expect = alpha * hu + beta * hw
    assert np.max(np.abs(combo - expect)) <= 1e-10 * max(1.0, np.max(np.abs(expect)))


def test_mixed_vjp_example():
    def e(x, a):
        return ad.sum(ad.square(x)) * a[0]

    res = ad.mixed_vjp(e, np.array([3.0]), np.array([0.7]), np.array([1.0]))
    np.testing.assert_allclose(res, [-6.0], rtol=1e-15)


def test_mixed_vjp_independent_of_a():
    res = ad.mixed_vjp(lambda x, a: ad.sum(ad.square(x)), np.ones(3), np.ones(2), np.ones(3))
    np.testing.assert_array_equal(res, np.zeros(2))


def test_mixed_vjp_tuple_of_params():
    def e(x, a, b):
        return ad.sum(ad.square(x) * a) + ad.dot(x, b) * 2.0

    x, a, b, z = (RNG.standard_normal(3) for _ in range(4))
    ra, rb = ad.mixed_vjp(e, x, (a, b), z)
    np.testing.assert_allclose(ra, -2 * x * z, rtol=1e-14)
    np.testing.assert_allclose(rb, -2 * z, rtol=1e-14)
