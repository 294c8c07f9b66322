import numpy as np
import pytest

from geohnn import autodiff as ad
from geohnn import systems as sy
from geohnn import training as tr
from geohnn.autoencoders import ConstrainedAutoencoder, ReducedOrderModel
from geohnn.models import DynamicsModel


class StubOscillator:
    """Hand-coded field (qdot, pdot) = (p, -q) for integrator tests."""

    kind = "stub"
    dof = 1
    params = {}

    def make_pvars(self, tape):
        return {}

    def vector_field_v(self, qv, pv, pvars, create_graph=True):
        return pv, ad.neg(qv)


class StubConstantField:
    """Field fixed at (0, -1) regardless of the state."""

    kind = "stub"
    dof = 1
    params = {}

    def make_pvars(self, tape):
        return {}

    def vector_field_v(self, qv, pv, pvars, create_graph=True):
        zero = ad.mul(qv, 0.0)
        return zero, ad.sub(zero, 1.0)


class StubExploding:
    kind = "stub"
    dof = 1
    params = {}

    def make_pvars(self, tape):
        return {}

    def vector_field_v(self, qv, pv, pvars, create_graph=True):
        return ad.mul(pv, 1e200), ad.mul(qv, 1e200)


class TestTrainConfig:
    def test_defaults_valid(self):
        cfg = tr.TrainConfig()
        assert cfg.batch == 128 and cfg.patience == 50

    @pytest.mark.parametrize("kwargs", [
        {"lr": 0.0}, {"batch": 0}, {"max_epochs": -1},
        {"patience": 0}, {"dt": 0.0}, {"rollout_steps": 0},
        {"min_delta": -1e-9}, {"weight_decay": -0.1},
    ])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            tr.TrainConfig(**kwargs)


class TestSymplecticEuler:
    def test_hand_step_on_oscillator(self):
        q, p = tr.symplectic_euler_step(StubOscillator(), np.array([1.0]), np.array([0.0]), 0.1)
        assert p[0] == pytest.approx(-0.1, abs=1e-15)
        assert q[0] == pytest.approx(0.99, abs=1e-15)

    def test_tiny_step_stays_near_start(self):
        model = DynamicsModel.create("vanilla-hnn", dof=2, hidden=[8, 8], seed=0)
        q0, p0 = np.array([0.3, -0.2]), np.array([0.1, 0.4])
        q, p = tr.symplectic_euler_step(model, q0, p0, 1e-8)
        assert np.abs(q - q0).max() <= 1e-7
        assert np.abs(p - p0).max() <= 1e-7

    def test_nonpositive_dt_rejected(self):
        with pytest.raises(ValueError, match="dt"):
            tr.symplectic_euler_step(StubOscillator(), np.array([1.0]), np.array([0.0]), 0.0)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises_with_step_index(self):
        with pytest.raises(tr.RolloutDiverged, match="diverged at step 7"):
            tr.symplectic_euler_step(StubExploding(), np.array([1.0]), np.array([1.0]),
                                     0.1, step_index=7)

    def test_batched_matches_loop(self):
        model = DynamicsModel.create("geo-hnn", dof=2, hidden=[6, 6], seed=1)
        rng = np.random.default_rng(2)
        q, p = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
        qb, pb = tr.symplectic_euler_step(model, q, p, 0.05)
        for i in range(4):
            qi, pi = tr.symplectic_euler_step(model, q[i], p[i], 0.05)
            assert np.allclose(qb[i], qi, atol=1e-14)
            assert np.allclose(pb[i], pi, atol=1e-14)


class TestDerivativeMatchingLoss:
    def test_hand_value_quarter(self):
        batch = {"q": np.array([[0.0]]), "p": np.array([[0.0]]),
                 "dq": np.array([[0.0]]), "dp": np.array([[-1.5]])}
        report = tr.loss_derivative_matching(StubConstantField(), batch)
        assert report.total == pytest.approx(0.25, abs=1e-14)

    def test_perfect_model_gives_zero(self):
        batch = {"q": np.array([[0.3], [0.7]]), "p": np.array([[0.1], [-0.2]]),
                 "dq": np.array([[0.0], [0.0]]), "dp": np.array([[-1.0], [-1.0]])}
        report = tr.loss_derivative_matching(StubConstantField(), batch)
        assert report.total == pytest.approx(0.0, abs=1e-14)

    def test_reg_zero_when_lambda_zero(self):
        model = DynamicsModel.create("vanilla-hnn", dof=1, hidden=[4, 4], seed=3)
        batch = {"q": np.zeros((2, 1)), "p": np.zeros((2, 1)),
                 "dq": np.zeros((2, 1)), "dp": np.zeros((2, 1))}
        assert tr.loss_derivative_matching(model, batch, reg_coeff=0.0).reg == 0.0

    def test_reg_hand_value(self):
        from geohnn.manifolds import EUCLIDEAN, SPD, ManifoldParam
        params = {"w": ManifoldParam(EUCLIDEAN, np.array([1.0, 2.0])),
                  "m": ManifoldParam(SPD, np.eye(2) * 3.0)}
        # only euclidean parameters contribute: 0.1 * (1 + 4)
        assert tr.loss_reg(params, 0.1) == pytest.approx(0.5)


class TestWindows:
    def make_traj(self, T=12):
        spec = sy.SystemSpec("mass-spring")
        return sy.simulate(spec, np.array([1.0]), np.array([0.0]), h=1e-3,
                           steps=(T - 1) * 100, store_every=100)

    def test_window_count_and_shape(self):
        traj = self.make_traj(12)
        w = tr.make_windows([traj], 8)
        assert w["q"].shape == (12 - 8, 9, 1)

    def test_short_trajectory_rejected(self):
        traj = self.make_traj(5)
        with pytest.raises(ValueError, match="shorter"):
            tr.make_windows([traj], 8)

    def test_flatten_pairs_shapes(self):
        traj = self.make_traj(10)
        flat = tr.flatten_pairs([traj, traj])
        assert flat["q"].shape == (20, 1) and flat["dp"].shape == (20, 1)


@pytest.fixture(scope="module")
def small_dataset():
    return sy.generate_dataset(sy.SystemSpec("mass-spring"), n_traj=10,
                               t_span=2.0, dt=0.1, seed=0)


class TestFit:
    def cfg(self, **kw):
        base = dict(lr=1e-3, batch=64, max_epochs=3, patience=50, seed=0,
                    rollout_steps=8, dt=0.1)
        base.update(kw)
        return tr.TrainConfig(**base)

    def test_max_epochs_one_gives_one_history_row(self, small_dataset):
        model = DynamicsModel.create("vanilla-hnn", dof=1, hidden=[8, 8], seed=0)
        res = tr.fit(model, small_dataset, self.cfg(max_epochs=1))
        assert len(res.history) == 1
        assert len(res.history[0]) == len(tr.FitResult.HISTORY_HEADER)

    def test_loss_decreases_from_first_epoch(self, small_dataset):
        model = DynamicsModel.create("vanilla-hnn", dof=1, hidden=[16, 16], seed=1)
        res = tr.fit(model, small_dataset, self.cfg(max_epochs=20))
        val = [row[7] for row in res.history]  # val_total column
        assert val[-1] < val[0]

    def test_patience_stops_early(self, small_dataset):
        # a vanishing learning rate freezes validation loss, so training stops
        # after exactly patience non-improving epochs past the first
        model = DynamicsModel.create("vanilla-hnn", dof=1, hidden=[8, 8], seed=2)
        res = tr.fit(model, small_dataset, self.cfg(lr=1e-30, patience=3, max_epochs=50))
        assert len(res.history) == 4
        assert res.best_val_epoch == 1

    def test_deterministic_loss_columns(self, small_dataset):
        def run():
            model = DynamicsModel.create("vanilla-hnn", dof=1, hidden=[8, 8], seed=3)
            res = tr.fit(model, small_dataset, self.cfg(max_epochs=4))
            return [row[:-1] for row in res.history]  # drop wall-clock seconds

        assert run() == run()

    def test_best_val_matches_history_minimum(self, small_dataset):
        model = DynamicsModel.create("cholesky-hnn", dof=1, hidden=[8, 8], seed=4)
        res = tr.fit(model, small_dataset, self.cfg(max_epochs=6))
        val = [row[7] for row in res.history]
        assert res.best_val_loss == pytest.approx(min(val), rel=1e-12)

    def test_spd_parameter_stays_spd_after_training(self, small_dataset):
        model = DynamicsModel.create("geo-hnn", dof=1, hidden=[6, 6], seed=5)
        tr.fit(model, small_dataset, self.cfg(max_epochs=3))
        m0 = model.params["m0"].value
        assert np.linalg.eigvalsh(m0).min() > 0

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_aborts_and_flags(self, small_dataset):
        model = DynamicsModel.create("vanilla-hnn", dof=1, hidden=[8, 8], seed=6)
        res = tr.fit(model, small_dataset, self.cfg(lr=1e25, max_epochs=30, patience=30))
        assert res.diverged

    def test_checked_mode_restored(self, small_dataset):
        model = DynamicsModel.create("vanilla-hnn", dof=1, hidden=[8, 8], seed=7)
        before = ad.config.checked
        tr.fit(model, small_dataset, self.cfg(max_epochs=1))
        assert ad.config.checked == before


class TestRomFit:
    def test_rom_trains_and_keeps_biorthogonality(self, small_dataset):
        rom = ReducedOrderModel(
            ae_q=ConstrainedAutoencoder([1, 1], seed=0),
            ae_p=ConstrainedAutoencoder([1, 1], seed=1),
            latent_model=DynamicsModel.create("geo-hnn", dof=1, hidden=[6, 6], seed=2),
        )
        cfg = tr.TrainConfig(lr=1e-3, batch=64, max_epochs=2, patience=10,
                             rollout_steps=4, dt=0.1, seed=0)
        res = tr.fit(rom, small_dataset, cfg)
        assert len(res.history) == 2
        from geohnn.manifolds import biorth_residual
        phi, psi = rom.ae_q.params["pair0"].value
        assert biorth_residual(phi, psi) <= 1e-10
        # data centering recorded the training mean
        assert rom.shift_q.shape == (1,)

    def test_rom_loss_report_total_is_sum(self, small_dataset):
        rom = ReducedOrderModel(
            ae_q=ConstrainedAutoencoder([1, 1], seed=3),
            ae_p=ConstrainedAutoencoder([1, 1], seed=4),
            latent_model=DynamicsModel.create("vanilla-hnn", dof=1, hidden=[6, 6], seed=5),
        )
        windows = tr.make_windows(small_dataset.subset("train"), 4)
        cfg = tr.TrainConfig(rollout_steps=4, dt=0.1)
        rep = tr.rom_loss_report(rom, windows, cfg)
        assert rep.total == pytest.approx(rep.multistep + rep.latent + rep.recon + rep.reg, rel=1e-12)
