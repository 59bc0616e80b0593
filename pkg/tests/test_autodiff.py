import math

import numpy as np
import pytest
from conftest import check_grad, fd_gradient, rel_error

from noteacher import autodiff as ad
from noteacher.errors import DomainError, ShapeError


class TestForward:
    def test_sigmoid_at_zero(self):
        assert ad.sigmoid(0.0).data == 0.5

    def test_logsumexp_equal_arguments(self):
        assert ad.logsumexp(np.zeros(2)).data == pytest.approx(math.log(2), abs=1e-15)

    def test_matmul_counts(self):
        out = ad.matmul(np.ones((2, 3)), np.ones((3, 1)))
        np.testing.assert_array_equal(out.data, [[3.0], [3.0]])

    def test_logsumexp_shift_by_1000(self, rng):
        x = rng.standard_normal((5, 4))
        base = ad.logsumexp(x, axis=1).data
        shifted = ad.logsumexp(x + 1000.0, axis=1).data
        np.testing.assert_allclose(shifted - base, 1000.0, atol=1e-9)

    def test_logsumexp_handles_large_values(self):
        assert np.isfinite(ad.logsumexp(np.array([1e4, 1e4])).data)

    def test_softmax_rows_sum_to_one(self, rng):
        s = ad.softmax(rng.standard_normal((6, 4)) * 30, axis=1).data
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)

    def test_operators_match_functions(self, rng):
        a, b = rng.standard_normal(3), rng.standard_normal(3)
        va, vb = ad.Value(a), ad.Value(b)
        np.testing.assert_array_equal((va + vb).data, a + b)
        np.testing.assert_array_equal((2.0 - va).data, 2.0 - a)
        np.testing.assert_array_equal((va * 3).data, a * 3)
        np.testing.assert_array_equal((1.0 / (vb * vb + 1)).data, 1.0 / (b * b + 1))
        np.testing.assert_array_equal((-va).data, -a)
        np.testing.assert_array_equal((va**2).data, a * a)


class TestBackward:
    def test_square_at_three(self):
        x = ad.Value(3.0, requires_grad=True)
        (x * x).backward()
        assert x.grad == 6.0

    def test_sigmoid_slope_at_zero(self):
        x = ad.Value(0.0, requires_grad=True)
        ad.sigmoid(x).backward()
        assert x.grad == 0.25

    def test_repeated_backward_accumulates(self):
        x = ad.Value(2.0, requires_grad=True)
        y = x * x
        y.backward()
        y.backward()
        assert x.grad == 8.0
        x.zero_grad()
        y.backward()
        assert x.grad == 4.0

    def test_non_scalar_root_rejected(self):
        x = ad.Value(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            (x * 2).backward()

    def test_gradients_leave_buffers_untouched(self):
        x = ad.Value(np.array([1.0, 2.0]), requires_grad=True)
        (g,) = ad.gradients(ad.sum(x * x), [x])
        np.testing.assert_array_equal(g, [2.0, 4.0])
        np.testing.assert_array_equal(x.grad, 0.0)

    def test_unreached_leaf_gets_zero(self):
        x = ad.Value(1.0, requires_grad=True)
        z = ad.Value(np.ones(2), requires_grad=True)
        gx, gz = ad.gradients(x * 5, [x, z])
        assert gx == 5.0
        np.testing.assert_array_equal(gz, 0.0)

    def test_constants_get_no_gradient(self):
        c = ad.Value(4.0)
        x = ad.Value(1.0, requires_grad=True)
        (x * c).backward()
        assert c.grad == 0.0

    def test_grad_shape_matches_data(self, rng):
        x = ad.Value(rng.standard_normal((3, 4)), requires_grad=True)
        b = ad.Value(rng.standard_normal(4), requires_grad=True)
        ad.sum(ad.tanh(x + b)).backward()
        assert x.grad.shape == x.data.shape and b.grad.shape == b.data.shape

    def test_detach_cuts_graph(self):
        x = ad.Value(3.0, requires_grad=True)
        (x * x.detach()).backward()
        assert x.grad == 3.0


class TestErrors:
    def test_broadcast_mismatch_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
            ad.add(np.ones((2, 3)), np.ones(4))

    def test_matmul_mismatch(self):
        with pytest.raises(ShapeError):
            ad.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_log_of_nonpositive(self):
        with pytest.raises(DomainError):
            ad.log(np.array([1.0, 0.0]))
        with pytest.raises(DomainError):
            ad.log(np.array([-1.0]))

    def test_clamp_bounds_must_be_finite(self):
        with pytest.raises(ValueError):
            ad.clamp(np.ones(2), -np.inf, 1.0)
        with pytest.raises(ValueError):
            ad.clamp(np.ones(2), 1.0, 0.0)


def _positive(rng, shape):
    return rng.uniform(0.2, 2.0, size=shape)


UNARY = {
    "neg": (ad.neg, "real"),
    "square": (ad.square, "real"),
    "pow3": (lambda a: ad.power(a, 3), "real"),
    "relu": (ad.relu, "real"),
    "tanh": (ad.tanh, "real"),
    "sigmoid": (ad.sigmoid, "real"),
    "exp": (ad.exp, "real"),
    "log": (ad.log, "positive"),
    "clamp": (lambda a: ad.clamp(a, -0.5, 0.5), "real"),
    "sum_axis0": (lambda a: ad.sum(a, axis=0), "real"),
    "mean_axis1_keep": (lambda a: ad.mean(a, axis=1, keepdims=True), "real"),
    "logsumexp": (lambda a: ad.logsumexp(a, axis=1), "real"),
    "softmax": (lambda a: ad.softmax(a, axis=1), "real"),
    "transpose": (ad.transpose, "real"),
    "reshape": (lambda a: ad.reshape(a, (-1,)), "real"),
    "take_rows": (lambda a: a[np.array([0, 2, 2])], "real"),
    "take_mask": (lambda a: a[np.array([True, False, True])], "real"),
    "segment_max": (lambda a: ad.segment_max(a, np.array([0, 1, 3])), "real"),
}


def _away_from_kinks(x):
    # keep relu/clamp inputs away from their non-differentiable points
    x = np.where(np.abs(x) < 0.05, 0.3, x)
    return np.where(np.abs(np.abs(x) - 0.5) < 0.05, 0.8, x)


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops_match_finite_differences(name, rng):
    fn, domain = UNARY[name]
    weights = rng.standard_normal(64)
    for _ in range(5):
        x = _positive(rng, (3, 4)) if domain == "positive" else _away_from_kinks(rng.standard_normal((3, 4)))

        def build(a):
            out = fn(a)
            w = weights[: out.data.size].reshape(out.shape)
            return ad.sum(out * w)

        check_grad(build, x)


BINARY = {
    "add_bcast": lambda a, b: a + b[0],
    "sub": lambda a, b: a - b,
    "mul_bcast": lambda a, b: a * b[:1],
    "div": lambda a, b: a / (b * b + 1.0),
    "matmul": lambda a, b: a @ ad.transpose(b),
    "concat": lambda a, b: ad.concat([a, b], axis=0),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_ops_match_finite_differences(name, rng):
    fn = BINARY[name]
    weights = rng.standard_normal(64)
    for _ in range(5):
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))

        def build(x, y):
            out = fn(x, y)
            return ad.sum(out * weights[: out.data.size].reshape(out.shape))

        check_grad(build, a, b)


def test_segment_max_routes_gradient_to_lowest_index_tie():
    x = ad.Value(np.array([[1.0, 5.0], [1.0, 2.0], [3.0, 5.0]]), requires_grad=True)
    ad.sum(ad.segment_max(x, np.array([0, 3]))).backward()
    np.testing.assert_array_equal(x.grad, [[0, 1], [0, 0], [1, 0]])


# -- random composite graphs ------------------------------------------------------

_SAFE_UNARY = [ad.tanh, ad.sigmoid, lambda v: ad.exp(0.3 * v), lambda v: ad.log(ad.sigmoid(v)), lambda v: v * v]
_SAFE_BINARY = [ad.add, ad.sub, ad.mul, lambda a, b: a / (1.0 + b * b)]


def _random_graph(seed):
    """A random DAG (depth <= 6, width <= 8) over one input vector with reused nodes."""
    r = np.random.default_rng(seed)
    depth = int(r.integers(1, 7))
    plan = []
    width = 1
    for _ in range(depth):
        layer = []
        new_width = int(r.integers(1, 9))
        for _ in range(new_width):
            if r.random() < 0.5:
                layer.append(("u", int(r.integers(len(_SAFE_UNARY))), int(r.integers(width)), None))
            else:
                layer.append(("b", int(r.integers(len(_SAFE_BINARY))), int(r.integers(width)), int(r.integers(width))))
        plan.append(layer)
        width = new_width

    def build(x):
        nodes = [x]
        for layer in plan:
            nxt = []
            for kind, op, i, j in layer:
                nxt.append(_SAFE_UNARY[op](nodes[i]) if kind == "u" else _SAFE_BINARY[op](nodes[i], nodes[j]))
            nodes = nxt
        total = nodes[0]
        for n in nodes[1:]:
            total = total + n
        return ad.sum(total)

    return build


def test_random_composite_graphs(rng):
    worst = 0.0
    for seed in range(100):
        x = rng.uniform(-1.0, 1.0, size=3)
        worst = max(worst, check_grad(_random_graph(seed), x))
    assert worst <= 1e-4


def test_shared_subexpressions_match_tree_expansion(rng):
    """Reusing a node must equal the sum over separately built copies of it."""
    x0 = rng.standard_normal(4)

    def shared(x):
        h = ad.tanh(x * 1.5)
        return ad.sum(h * h + ad.sigmoid(h) * h)

    x = ad.Value(x0, requires_grad=True)
    (g_shared,) = ad.gradients(shared(x), [x])

    # tree expansion: every use of h gets its own copy of the input leaf
    copies = [ad.Value(x0, requires_grad=True) for _ in range(4)]
    hs = [ad.tanh(c * 1.5) for c in copies]
    tree = ad.sum(hs[0] * hs[1] + ad.sigmoid(hs[2]) * hs[3])
    g_tree = sum(ad.gradients(tree, copies))
    np.testing.assert_allclose(g_shared, g_tree, rtol=1e-14, atol=1e-15)


def test_fd_helper_sanity():
    g = fd_gradient(lambda v: float((v**3).sum()), np.array([1.0, 2.0]))
    assert rel_error(g, [3.0, 12.0]) < 1e-8
