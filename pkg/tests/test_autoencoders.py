import numpy as np
import pytest

from geohnn import autodiff as ad
from geohnn import manifolds as mf
from geohnn.autoencoders import (ConstrainedAutoencoder, InvertibleActivation,
                                 ReducedOrderModel, VanillaAutoencoder, decode, encode)
from geohnn.models import DynamicsModel


class TestInvertibleActivation:
    def test_values_on_both_branches(self):
        act = InvertibleActivation()
        x = np.array([2.0, 0.0, -1.0])
        y = act.forward(ad.Variable(x)).value
        assert np.allclose(y, [2.0, 0.0, np.exp(-1.0) - 1.0], atol=1e-15)

    def test_strictly_monotone_on_grid(self):
        act = InvertibleActivation()
        x = np.linspace(-10.0, 10.0, 4001)
        y = act.forward(ad.Variable(x)).value
        assert np.all(np.diff(y) > 0)

    def test_inverse_relative_error_on_grid(self):
        act = InvertibleActivation()
        x = np.linspace(-10.0, 10.0, 2001)
        back = act.inverse(act.forward(ad.Variable(x))).value
        rel = np.abs(back - x) / np.maximum(1.0, np.abs(x))
        assert rel.max() <= 1e-12

    def test_inverse_defined_below_minus_one(self):
        # continuation region: finite and monotone, not a domain error
        act = InvertibleActivation()
        y = np.array([-1.5, -1.0 - 1e-9])
        out = act.inverse(ad.Variable(y)).value
        assert np.all(np.isfinite(out))
        assert out[0] < out[1]


class TestConstrainedAutoencoder:
    def test_latent_roundtrip_at_init(self):
        ae = ConstrainedAutoencoder([8, 5, 3], seed=0)
        rng = np.random.default_rng(1)
        z = rng.normal(size=(4, 3))
        back = encode(ae, decode(ae, z))
        assert np.abs(back - z).max() <= 1e-10

    def test_latent_roundtrip_at_arbitrary_retracted_params(self):
        ae = ConstrainedAutoencoder([10, 6, 2], seed=2)
        rng = np.random.default_rng(3)
        for name, p in ae.params.items():
            if p.kind == mf.BIORTHOGONAL:
                phi, psi = p.value
                p.value = mf.biorth_retract(phi + 0.3 * rng.normal(size=phi.shape),
                                            psi + 0.3 * rng.normal(size=psi.shape))
            else:
                p.value = rng.normal(size=p.value.shape)
        z = rng.normal(size=(6, 2))
        back = encode(ae, decode(ae, z))
        assert np.abs(back - z).max() <= 1e-10

    def test_single_linear_layer_hand_example(self):
        ae = ConstrainedAutoencoder([2, 1], seed=0, use_activation=False)
        e1 = np.array([[1.0], [0.0]])
        ae.params["pair0"].value = (e1.copy(), e1.copy())
        ae.params["bias0"].value = np.zeros(2)
        assert encode(ae, np.array([3.0, 4.0])) == pytest.approx([3.0])
        assert np.allclose(decode(ae, np.array([3.0])), [3.0, 0.0])

    def test_identity_autoencoder(self):
        n = 4
        ae = ConstrainedAutoencoder([n, n], seed=0, use_activation=False)
        ae.params["pair0"].value = (np.eye(n), np.eye(n))
        ae.params["bias0"].value = np.zeros(n)
        x = np.random.default_rng(4).normal(size=(3, n))
        assert np.abs(decode(ae, encode(ae, x)) - x).max() <= 1e-14

    def test_increasing_widths_rejected(self):
        with pytest.raises(ValueError, match="widths"):
            ConstrainedAutoencoder([4, 6, 2])

    def test_equal_widths_allowed(self):
        ConstrainedAutoencoder([4, 4, 2])

    def test_init_is_biorthogonal(self):
        ae = ConstrainedAutoencoder([9, 4], seed=5)
        phi, psi = ae.params["pair0"].value
        assert mf.biorth_residual(phi, psi) <= 1e-12


class TestVanillaAutoencoder:
    def test_roundtrip_violated_at_init(self):
        ae = VanillaAutoencoder([8, 5, 3], seed=0)
        z = np.random.default_rng(6).normal(size=(16, 3))
        err = np.abs(encode(ae, decode(ae, z)) - z).max()
        assert err > 1e-3

    def test_shapes(self):
        ae = VanillaAutoencoder([8, 5, 3], seed=0)
        x = np.random.default_rng(7).normal(size=(4, 8))
        z = encode(ae, x)
        assert z.shape == (4, 3)
        assert decode(ae, z).shape == (4, 8)

    def test_too_few_widths_rejected(self):
        with pytest.raises(ValueError):
            VanillaAutoencoder([4])


def make_rom(full=6, latent=2, seed=0):
    return ReducedOrderModel(
        ae_q=ConstrainedAutoencoder([full, latent], seed=seed),
        ae_p=ConstrainedAutoencoder([full, latent], seed=seed + 1),
        latent_model=DynamicsModel.create("geo-hnn", dof=latent, hidden=[8, 8], seed=seed + 2),
    )


class TestReducedOrderModel:
    def test_dim_mismatch_rejected(self):
        with pytest.raises(ValueError, match="latent"):
            ReducedOrderModel(
                ae_q=ConstrainedAutoencoder([6, 2]),
                ae_p=ConstrainedAutoencoder([6, 2]),
                latent_model=DynamicsModel.create("geo-hnn", dof=3, hidden=[4, 4], seed=0),
            )

    def test_ae_dim_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dims"):
            ReducedOrderModel(
                ae_q=ConstrainedAutoencoder([6, 2]),
                ae_p=ConstrainedAutoencoder([6, 3]),
                latent_model=DynamicsModel.create("geo-hnn", dof=2, hidden=[4, 4], seed=0),
            )

    def test_shift_default_zero(self):
        rom = make_rom()
        assert np.array_equal(rom.shift_q, np.zeros(6))
        assert np.array_equal(rom.shift_p, np.zeros(6))

    def test_shift_cancels_in_latent_roundtrip(self):
        rom = make_rom(seed=8)
        rom.shift_q = np.random.default_rng(9).normal(size=6)
        pv = rom.make_pvars(None)
        z = ad.Variable(np.random.default_rng(10).normal(size=(3, 2)))
        back = rom.encode_q_v(rom.decode_q_v(z, pv["aeq"]), pv["aeq"]).value
        assert np.abs(back - z.value).max() <= 1e-10

    def test_param_groups_prefixes(self):
        rom = make_rom()
        groups = rom.param_groups()
        assert any(k.startswith("aeq.") for k in groups)
        assert any(k.startswith("aep.") for k in groups)
        assert any(k.startswith("lat.") for k in groups)
