import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geohnn import autodiff as ad


def _rand(rng, *shape):
    return rng.normal(size=shape)


class TestForwardOps:
    def test_quadratic_form_hand_value(self):
        out = ad.quadratic_form(ad.Variable(np.array([[1.0, 2.0]])),
                                ad.Variable(np.array([[[2.0, 0.0], [0.0, 3.0]]])))
        assert out.value[0] == pytest.approx(14.0, abs=1e-14)

    def test_tanh_of_zero_vector(self):
        out = ad.tanh(ad.Variable(np.zeros(5)))
        assert np.array_equal(out.value, np.zeros(5))

    def test_matmul_identity(self):
        rng = np.random.default_rng(0)
        a = _rand(rng, 3, 3)
        out = ad.matmul(ad.Variable(np.eye(3)), ad.Variable(a))
        assert np.allclose(out.value, a)

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ad.ShapeError) as exc:
            ad.matmul(ad.Variable(np.ones((2, 3))), ad.Variable(np.ones((4, 2))))
        assert "3" in str(exc.value) and "4" in str(exc.value)

    def test_tracked_propagates(self):
        tape = ad.Tape()
        x = tape.var(np.ones(3))
        y = ad.add(x, ad.Variable(np.ones(3)))
        assert y.tape is tape

    def test_nonfinite_rejected_in_checked_mode(self):
        with pytest.raises(ValueError):
            ad.tensor([np.nan, 1.0])


class TestGrad:
    def test_square_at_three(self):
        tape = ad.Tape()
        x = tape.var(np.array([3.0]))
        (g,) = ad.grad(ad.sum_(ad.square(x)), [x])
        assert g.value[0] == pytest.approx(6.0)

    def test_sum_tanh_at_zero_is_ones(self):
        tape = ad.Tape()
        x = tape.var(np.zeros(4))
        (g,) = ad.grad(ad.sum_(ad.tanh(x)), [x])
        assert np.allclose(g.value, np.ones(4))

    def test_matrix_gradient_vs_closed_form(self):
        rng = np.random.default_rng(1)
        w_val, v = _rand(rng, 3, 3), _rand(rng, 3)
        tape = ad.Tape()
        w = tape.var(w_val)
        y = ad.matmul(w, ad.Variable(v.reshape(3, 1)))
        (g,) = ad.grad(ad.sum_(ad.square(y)), [w])
        expected = 2.0 * np.outer(w_val @ v, v)
        assert np.allclose(g.value, expected, atol=1e-12)

    def test_untouched_input_gets_zeros(self):
        tape = ad.Tape()
        x = tape.var(np.ones(3))
        unused = tape.var(np.ones((2, 2)))
        (g,) = ad.grad(ad.sum_(x), [unused])
        assert np.array_equal(g.value, np.zeros((2, 2)))

    def test_non_scalar_output_rejected(self):
        tape = ad.Tape()
        x = tape.var(np.ones(3))
        with pytest.raises(ValueError):
            ad.grad(ad.square(x), [x])

    def test_wrt_on_other_tape_rejected(self):
        t1, t2 = ad.Tape(), ad.Tape()
        x, y = t1.var(np.ones(2)), t2.var(np.ones(2))
        with pytest.raises(ValueError):
            ad.grad(ad.sum_(x), [y])

    def test_linearity(self):
        rng = np.random.default_rng(2)
        x_val = _rand(rng, 5)

        def build(which):
            tape = ad.Tape()
            x = tape.var(x_val)
            f = ad.sum_(ad.square(x))
            g = ad.sum_(ad.tanh(x))
            target = {"f": f, "g": g,
                      "combo": ad.add(ad.mul(f, 2.0), ad.mul(g, -3.0))}[which]
            return ad.grad(target, [x])[0].value

        combo = build("combo")
        assert np.allclose(combo, 2.0 * build("f") - 3.0 * build("g"), atol=1e-12)

    def test_gradients_deterministic(self):
        rng = np.random.default_rng(3)
        x_val, w_val = _rand(rng, 4), _rand(rng, 4, 4)

        def run():
            tape = ad.Tape()
            x, w = tape.var(x_val), tape.var(w_val)
            y = ad.sum_(ad.square(ad.tanh(ad.matvec(w, x))))
            return [g.value for g in ad.grad(y, [x, w])]

        a, b = run(), run()
        assert all(np.array_equal(u, v) for u, v in zip(a, b))


# gradient-vs-finite-difference coverage for every primitive
PRIMITIVE_CASES = [
    ("add", lambda x: ad.sum_(ad.add(x, x)), (4,)),
    ("sub", lambda x: ad.sum_(ad.sub(x, ad.mul(x, 0.5))), (4,)),
    ("mul", lambda x: ad.sum_(ad.mul(x, x)), (4,)),
    ("div", lambda x: ad.sum_(ad.div(1.0, ad.add(ad.square(x), 1.0))), (4,)),
    ("neg", lambda x: ad.sum_(ad.neg(ad.square(x))), (4,)),
    ("matmul", lambda x: ad.sum_(ad.matmul(x, ad.transpose(x))), (3, 2)),
    ("transpose", lambda x: ad.sum_(ad.square(ad.transpose(x))), (2, 3)),
    ("reshape", lambda x: ad.sum_(ad.square(ad.reshape(x, (6,)))), (2, 3)),
    ("concat", lambda x: ad.sum_(ad.square(ad.concat([x, x], axis=0))), (3,)),
    ("slice", lambda x: ad.sum_(ad.square(ad.slice_(x, (slice(0, 2),)))), (4,)),
    ("sum-axis", lambda x: ad.sum_(ad.square(ad.sum_(x, axis=0))), (3, 2)),
    ("mean", lambda x: ad.square(ad.mean_(x)), (5,)),
    ("tanh", lambda x: ad.sum_(ad.tanh(x)), (4,)),
    ("softplus", lambda x: ad.sum_(ad.softplus(x)), (4,)),
    ("exp", lambda x: ad.sum_(ad.exp(ad.mul(x, 0.3))), (4,)),
    ("log", lambda x: ad.sum_(ad.log(ad.add(ad.square(x), 1.0))), (4,)),
    ("sqrt", lambda x: ad.sum_(ad.sqrt(ad.add(ad.square(x), 1.0))), (4,)),
    ("elu-bijection", lambda x: ad.sum_(ad.elu_bijection(x)), (5,)),
    ("dot", lambda x: ad.dot(x, x), (4,)),
]


@pytest.mark.parametrize("name,fn,shape", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
def test_primitive_gradient_matches_finite_differences(name, fn, shape):
    worst = 0.0
    for seed in range(5):
        x = np.random.default_rng(seed).normal(size=shape)
        worst = max(worst, ad.check_grad(fn, x))
    assert worst <= 1e-6


def test_elu_bijection_inverse_gradient():
    # cover all three derivative regions: y >= 0, -1 < y < 0, continuation
    y = np.array([2.0, 0.5, -0.3, -0.9, -1.5])
    err = ad.check_grad(lambda v: ad.sum_(ad.elu_bijection_inverse(v)), y)
    assert err <= 1e-5


class TestSecondOrder:
    def test_cubic(self):
        tape = ad.Tape()
        x = tape.var(np.array([2.0]))
        y = ad.mul(ad.mul(x, x), x)
        (g,) = ad.grad(ad.sum_(y), [x], create_graph=True)
        (g2,) = ad.grad(ad.sum_(g), [x])
        assert g2.value[0] == pytest.approx(12.0)

    def test_mixed_partial(self):
        tape = ad.Tape()
        x = tape.var(np.array([3.0]))
        a = tape.var(np.array([1.7]))
        f = ad.mul(a, ad.square(x))
        (gx,) = ad.grad(ad.sum_(f), [x], create_graph=True)
        (ga,) = ad.grad(ad.sum_(gx), [a])
        assert ga.value[0] == pytest.approx(6.0)

    def test_without_create_graph_gives_hint(self):
        tape = ad.Tape()
        x = tape.var(np.array([2.0]))
        (g,) = ad.grad(ad.sum_(ad.square(x)), [x], create_graph=False)
        with pytest.raises(ValueError, match="create_graph"):
            ad.grad(ad.sum_(g), [x])

    def test_grad2_of_quadratic_constant_in_theta(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=3)

        def second(theta_val):
            tape = ad.Tape()
            th = tape.var(theta_val)
            f = ad.sum_(ad.square(ad.mul(th, ad.Variable(x))))
            (g,) = ad.grad(f, [th], create_graph=True)
            return ad.grad(ad.sum_(g), [th])[0].value

        a = second(rng.normal(size=3))
        b = second(rng.normal(size=3))
        assert np.allclose(a, b, atol=1e-10)

    def test_grad2_through_mlp_vs_finite_differences(self):
        rng = np.random.default_rng(5)
        w_val = rng.normal(size=(3, 2)) * 0.5
        q = rng.normal(size=(1, 2))
        v = rng.normal(size=(1, 3))

        def loss_value(wv):
            tape = ad.Tape()
            w = tape.var(wv)
            x = tape.var(q)
            h = ad.sum_(ad.tanh(ad.matmul(x, ad.transpose(w))))
            (dx,) = ad.grad(h, [x], create_graph=True)
            return ad.sum_(ad.square(ad.sub(dx, ad.Variable(q * 0 + 1)))), tape, w

        loss, tape, w = loss_value(w_val)
        (gw,) = ad.grad(loss, [w])
        eps = 1e-5
        for idx in [(0, 0), (2, 1)]:
            wp, wm = w_val.copy(), w_val.copy()
            wp[idx] += eps
            wm[idx] -= eps
            fp = loss_value(wp)[0].value
            fm = loss_value(wm)[0].value
            fd = (fp - fm) / (2 * eps)
            assert abs(fd - gw.value[idx]) / max(1e-12, abs(fd)) <= 1e-5


class TestCheckGrad:
    def test_sum_is_exact(self):
        assert ad.check_grad(lambda x: ad.sum_(x), np.ones(6)) <= 1e-10

    def test_tanh_norm(self):
        rng = np.random.default_rng(6)
        err = ad.check_grad(lambda x: ad.sum_(ad.square(ad.tanh(x))), rng.normal(size=(4, 4)))
        assert err <= 1e-6

    def test_constant_function(self):
        err = ad.check_grad(lambda x: ad.mul(ad.mean_(ad.mul(x, 0.0)), 1.0), np.ones(3))
        assert err <= 1e-10


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=6))
def test_property_grad_of_sum_of_squares(vals):
    x = np.array(vals)
    tape = ad.Tape()
    xv = tape.var(x)
    (g,) = ad.grad(ad.sum_(ad.square(xv)), [xv])
    assert np.allclose(g.value, 2 * x, atol=1e-12)


def test_backend_kernels_agree():
    from geohnn._backend import kernels_py
    try:
        from geohnn._backend import _kernels_c
    except ImportError:
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(7)
    x = rng.normal(size=1000) * 3
    g = rng.normal(size=1000)
    assert np.allclose(kernels_py.tanh_fwd(x), _kernels_c.tanh_fwd(x), atol=1e-15)
    assert np.allclose(kernels_py.softplus_fwd(x), _kernels_c.softplus_fwd(x), atol=1e-15)
    assert np.allclose(kernels_py.softplus_bwd(x, g), _kernels_c.softplus_bwd(x, g), atol=1e-15)
    assert np.allclose(kernels_py.elu_bij_fwd(x), _kernels_c.elu_bij_fwd(x), atol=1e-15)
    y = kernels_py.elu_bij_fwd(x)
    assert np.allclose(kernels_py.elu_bij_inv(y), _kernels_c.elu_bij_inv(y), atol=1e-15)
    assert np.allclose(kernels_py.elu_bij_bwd(x, g), _kernels_c.elu_bij_bwd(x, g), atol=1e-15)
