import numpy as np
import pytest

from geohnn import autodiff as ad
from geohnn.models import (CHOLESKY_DIAG_FLOOR, MODEL_KINDS, DynamicsModel,
                           UnsupportedOperation, hamiltonian_eval, symmetrize_shift,
                           time_derivatives)


def zero_net(model, prefix):
    """Zero every weight and bias of one sub-network."""
    for name, p in model.params.items():
        if name.startswith(prefix):
            p.value = np.zeros_like(p.value)


@pytest.fixture(params=MODEL_KINDS)
def any_model(request):
    return DynamicsModel.create(request.param, dof=2, hidden=[8, 8], seed=0)


def test_create_rejects_unknown_kind():
    with pytest.raises(ValueError):
        DynamicsModel.create("fancy-hnn", dof=2)


def test_vector_field_shapes(any_model):
    rng = np.random.default_rng(0)
    q, p = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    qd, pd = time_derivatives(any_model, q, p)
    assert qd.shape == (5, 2) and pd.shape == (5, 2)
    assert np.all(np.isfinite(qd)) and np.all(np.isfinite(pd))


def test_baseline_has_no_hamiltonian():
    model = DynamicsModel.create("baseline-mlp", dof=2, hidden=[8, 8], seed=0)
    with pytest.raises(UnsupportedOperation, match="baseline-mlp"):
        hamiltonian_eval(model, np.zeros(2), np.zeros(2))


class TestGeoHnn:
    def test_zeroed_nets_give_kinetic_energy_only(self):
        model = DynamicsModel.create("geo-hnn", dof=3, hidden=[8, 8], seed=1)
        zero_net(model, "m.")
        zero_net(model, "v.")
        p = np.array([1.0, 2.0, 2.0])
        assert hamiltonian_eval(model, np.zeros(3), p) == pytest.approx(4.5, abs=1e-12)

    def test_zero_momentum_gives_potential_exactly(self):
        model = DynamicsModel.create("geo-hnn", dof=2, hidden=[8, 8], seed=2)
        q = np.array([0.3, -0.7])
        h = hamiltonian_eval(model, q, np.zeros(2))
        # evaluate the potential net alone
        from geohnn.nets import mlp_forward
        v = mlp_forward(model.specs["v"], model.make_pvars(None),
                        ad.Variable(q[None]), "v.").value[0, 0]
        assert h == pytest.approx(v, abs=1e-12)

    def test_field_zero_at_critical_point(self):
        model = DynamicsModel.create("geo-hnn", dof=2, hidden=[8, 8], seed=3)
        zero_net(model, "m.")
        zero_net(model, "v.")
        qd, pd = time_derivatives(model, np.array([0.4, -0.1]), np.zeros(2))
        assert np.allclose(qd, 0.0, atol=1e-14)
        assert np.allclose(pd, 0.0, atol=1e-14)

    def test_inverse_inertia_spd_for_random_q(self):
        model = DynamicsModel.create("geo-hnn", dof=3, hidden=[8, 8], seed=4)
        q = np.random.default_rng(5).normal(size=(100, 3))
        minv = model.inverse_inertia(ad.Variable(q), model.make_pvars(None)).value
        assert np.linalg.eigvalsh(minv).min() > 0
        assert np.abs(minv - np.transpose(minv, (0, 2, 1))).max() <= 1e-10


class TestDoubleHead:
    def test_min_eig_floor(self):
        model = DynamicsModel.create("double-head-hnn", dof=3, hidden=[8, 8], seed=6)
        q = np.random.default_rng(7).normal(size=(100, 3))
        minv = model.inverse_inertia(ad.Variable(q), model.make_pvars(None)).value
        assert np.linalg.eigvalsh(minv).min() >= model.eps_sym - 1e-12

    def test_symmetrize_shift_hand_value(self):
        g = np.array([[1.0, 2.0], [0.0, 1.0]])
        out = symmetrize_shift(ad.Variable(g), 0.5).value
        assert np.allclose(out, [[1.5, 1.0], [1.0, 1.5]])

    def test_symmetrize_shift_alone_cannot_fix_negative_definite(self):
        # the raw operation gives no SPD guarantee; positivity comes from the
        # Gram construction in the model head
        out = symmetrize_shift(ad.Variable(-np.eye(2)), 0.0).value
        assert np.linalg.eigvalsh(out).min() < 0


class TestCholesky:
    def test_diag_floor_keeps_spd(self):
        model = DynamicsModel.create("cholesky-hnn", dof=3, hidden=[8, 8], seed=8)
        q = np.random.default_rng(9).normal(size=(100, 3))
        minv = model.inverse_inertia(ad.Variable(q), model.make_pvars(None)).value
        assert np.linalg.eigvalsh(minv).min() > 0

    def test_hand_set_l_diag_1_2(self):
        model = DynamicsModel.create("cholesky-hnn", dof=2, hidden=[4, 4], seed=10)
        zero_net(model, "v.")
        # force the inertia head to a constant output: zero last-layer weights,
        # bias = softplus^-1(target - floor) for the diagonal, 0 off-diagonal
        last = len(model.specs["m"].widths) - 2
        model.params[f"m.W{last}"].value = np.zeros_like(model.params[f"m.W{last}"].value)
        inv_softplus = lambda y: np.log(np.expm1(y))
        bias = np.zeros(3)
        bias[0] = inv_softplus(1.0 - CHOLESKY_DIAG_FLOOR)
        bias[1] = inv_softplus(2.0 - CHOLESKY_DIAG_FLOOR)
        model.params[f"m.b{last}"].value = bias
        h = hamiltonian_eval(model, np.zeros(2), np.array([1.0, 1.0]))
        assert h == pytest.approx(2.5, abs=1e-9)


class TestVanillaHnn:
    def test_hamiltonian_is_net_output(self):
        model = DynamicsModel.create("vanilla-hnn", dof=2, hidden=[8, 8], seed=11)
        from geohnn.nets import mlp_forward
        q, p = np.array([0.1, 0.2]), np.array([-0.3, 0.4])
        ref = mlp_forward(model.specs["h"], model.make_pvars(None),
                          ad.Variable(np.concatenate([q, p])[None]), "h.").value[0, 0]
        assert hamiltonian_eval(model, q, p) == pytest.approx(ref, abs=1e-14)


@pytest.mark.parametrize("kind", [k for k in MODEL_KINDS if k != "baseline-mlp"])
def test_field_matches_finite_differences_of_hamiltonian(kind):
    model = DynamicsModel.create(kind, dof=2, hidden=[6, 6], seed=12)
    rng = np.random.default_rng(13)
    q, p = rng.normal(size=2), rng.normal(size=2)
    qd, pd = time_derivatives(model, q, p)
    eps = 1e-6
    for i in range(2):
        dq = np.zeros(2)
        dq[i] = eps
        fd_q = (hamiltonian_eval(model, q + dq, p) - hamiltonian_eval(model, q - dq, p)) / (2 * eps)
        fd_p = (hamiltonian_eval(model, q, p + dq) - hamiltonian_eval(model, q, p - dq)) / (2 * eps)
        assert abs(qd[i] - fd_p) / max(1e-8, abs(fd_p)) <= 1e-6
        assert abs(pd[i] + fd_q) / max(1e-8, abs(fd_q)) <= 1e-6


@pytest.mark.parametrize("kind", [k for k in MODEL_KINDS if k != "baseline-mlp"])
def test_symplectic_orthogonality(kind):
    model = DynamicsModel.create(kind, dof=3, hidden=[6, 6], seed=14)
    rng = np.random.default_rng(15)
    for _ in range(5):
        q, p = rng.normal(size=3), rng.normal(size=3)
        qd, pd = time_derivatives(model, q, p)
        # (dH/dq, dH/dp) = (-pdot, qdot)
        inner = np.dot(qd, -pd) + np.dot(pd, qd)
        assert abs(inner) <= 1e-10


def test_state_dim_mismatch_rejected(any_model):
    with pytest.raises((ad.ShapeError, UnsupportedOperation)):
        hamiltonian_eval(any_model, np.zeros(3), np.zeros(3))
