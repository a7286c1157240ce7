import numpy as np
import pytest

from csipoint.csi import CsiFrame
from csipoint.errors import ContractError
from csipoint.losses import chamfer_loss, latent_mse
from csipoint.metrics import chamfer_distance
from csipoint.models import (CsiEncoder, ModelSpec, PointNetAutoencoder, ablation_model, check_compatible,
                             csi_encode, direct_regression_model, load_model, pointnet_decode, pointnet_encode,
                             predict_clouds, read_manifest, reconstruct_from_csi, save_model)
from csipoint.numerics import Tensor, checkpoint
from csipoint.pointcloud import Normalizer

from gradcheck import numeric_grad, rel_error

SMALL = ModelSpec(n_points=8, subcarriers=6, links=2, latent_dim=4, encoder_widths=(5, 6), decoder_hidden=(7, 9))


def test_shapes():
    spec = ModelSpec(n_points=32, subcarriers=16, latent_dim=8)
    ae = PointNetAutoencoder(spec, seed=0)
    clouds = np.random.default_rng(0).standard_normal((3, 32, 3))
    assert pointnet_encode(ae, clouds).shape == (3, 8)
    assert pointnet_encode(ae, clouds[0]).shape == (8,)
    assert ae(clouds).shape == (3, 32, 3)
    enc = CsiEncoder(spec)
    assert csi_encode(enc, np.zeros((16, 4))).shape == (8,)
    with pytest.raises(ContractError):
        ae.encode(np.zeros((3, 31, 3)))
    with pytest.raises(ContractError):
        enc(np.zeros((2, 16, 6)))
    with pytest.raises(ContractError):
        ae.decode(np.zeros(7))


def test_permutation_invariance_is_exact_in_eval_mode():
    spec = ModelSpec(n_points=64, latent_dim=32)
    ae = PointNetAutoencoder(spec, seed=1)
    ae.train()
    ae(np.random.default_rng(9).standard_normal((4, 64, 3)))  # give BN real running stats
    rng = np.random.default_rng(2)
    cloud = rng.standard_normal((64, 3))
    g = pointnet_encode(ae, cloud)
    for _ in range(100):
        assert np.array_equal(pointnet_encode(ae, cloud[rng.permutation(64)]), g)


def test_same_seed_same_weights():
    a, b = PointNetAutoencoder(SMALL, seed=3), PointNetAutoencoder(SMALL, seed=3)
    assert checkpoint.state_hash(a.state_dict()) == checkpoint.state_hash(b.state_dict())


def _flat_grad_check(model, loss_of, h=1e-6):
    model.zero_grad()
    loss_of().backward()
    params = model.parameters()
    analytic = np.concatenate([p.grad.ravel() for p in params])
    numeric = np.concatenate([numeric_grad(lambda arr: loss_of().item(), [p.data], 0, h).ravel() for p in params])
    return rel_error(analytic, numeric)


@pytest.mark.parametrize("seed", range(20))
def test_autoencoder_chamfer_gradient(seed):
    rng = np.random.default_rng(seed)
    ae = PointNetAutoencoder(SMALL, seed=seed)
    x = rng.standard_normal((2, 8, 3))
    assert _flat_grad_check(ae, lambda: chamfer_loss(ae(x), x)) < 1e-3


@pytest.mark.parametrize("seed", range(20))
def test_csi_encoder_latent_mse_gradient(seed):
    rng = np.random.default_rng(seed)
    for head in ("pool", "flatten"):
        spec = ModelSpec(**{**SMALL.to_dict(), "csi_head": head})
        enc = CsiEncoder(spec, seed=seed)
        f, g = rng.standard_normal((3, 6, 4)), rng.standard_normal((3, 4))
        assert _flat_grad_check(enc, lambda: latent_mse(g, enc(f))) < 1e-3


@pytest.mark.parametrize("seed", range(20))
def test_direct_model_gradient(seed):
    rng = np.random.default_rng(seed)
    model = direct_regression_model(SMALL, seed=seed)
    f, x = rng.standard_normal((2, 6, 4)), rng.standard_normal((2, 8, 3))
    assert _flat_grad_check(model, lambda: chamfer_loss(model(f), x)) < 1e-3


@pytest.mark.parametrize("seed", range(20))
def test_chamfer_loss_input_gradient(seed):
    rng = np.random.default_rng(seed)
    pred, target = rng.standard_normal((2, 8, 3)), rng.standard_normal((2, 5, 3))
    t = Tensor(pred, requires_grad=True)
    chamfer_loss(t, target).backward()

    def f(p):
        return np.mean([chamfer_distance(p[b], target[b]) for b in range(2)])

    assert rel_error(t.grad, numeric_grad(f, [pred.copy()], 0)) < 1e-4


def test_chamfer_loss_value_and_shapes():
    t = Tensor(np.zeros((1, 1, 3)), requires_grad=True)
    assert chamfer_loss(t, np.array([[[1.0, 0, 0]]])).item() == 2.0
    with pytest.raises(ContractError):
        chamfer_loss(Tensor(np.zeros((2, 4, 3))), np.zeros((3, 4, 3)))


def test_ablation_copies_decoder():
    ae = PointNetAutoencoder(SMALL, seed=0)
    abl = ablation_model(SMALL, ae)
    before = checkpoint.state_hash(ae.state_dict())
    for p in abl.decoder.parameters():
        p.data += 1.0
    assert checkpoint.state_hash(ae.state_dict()) == before
    assert np.array_equal(ablation_model(SMALL, ae).decoder.layers[0].weight.data, ae.decoder.layers[0].weight.data)


def test_input_scaling_is_a_buffer():
    enc = CsiEncoder(SMALL)
    feats = np.random.default_rng(0).standard_normal((5, 6, 4)) * 3 + 1
    enc.fit_input_scaling(feats)
    state = enc.state_dict()
    assert "input_mean" in state and "input_std" in state
    other = CsiEncoder(SMALL, seed=5)
    other.load_state_dict(state)
    assert np.array_equal(csi_encode(other, feats), csi_encode(enc, feats))


def test_save_load_and_compatibility(tmp_path):
    ae = PointNetAutoencoder(SMALL, seed=0)
    enc = CsiEncoder(SMALL, seed=1)
    norm = Normalizer([1.0, 2.0, 3.0], 4.0)
    save_model(ae, "autoencoder", tmp_path, SMALL, norm)
    save_model(enc, "csi_encoder", tmp_path, SMALL, norm, {"note": "x"})
    ae2, man = load_model(tmp_path, "autoencoder")
    assert man["checkpoint_sha256"] == checkpoint.state_hash(ae.state_dict())
    x = np.random.default_rng(0).standard_normal((8, 3))
    assert np.array_equal(ae2(x[None]).data, PointNetAutoencoder(SMALL, 0).eval()(x[None]).data)
    check_compatible(man, read_manifest(tmp_path, "csi_encoder"))
    bad = dict(man, spec=dict(man["spec"], links=3))
    with pytest.raises(ContractError, match="links"):
        check_compatible(man, bad)
    with pytest.raises(FileNotFoundError):
        load_model(tmp_path, "direct")


def test_reconstruct_from_csi_denormalizes():
    ae, enc = PointNetAutoencoder(SMALL, 0), CsiEncoder(SMALL, 1)
    frames = [CsiFrame(np.exp(1j * np.arange(12.0)).reshape(6, 2))]
    norm = Normalizer([10.0, 0.0, 0.0], 2.0)
    raw = reconstruct_from_csi(enc, ae, frames)
    out = reconstruct_from_csi(enc, ae, frames, norm)
    assert out.shape == (8, 3)
    np.testing.assert_allclose(out, raw * 2.0 + [10.0, 0.0, 0.0])
    direct = direct_regression_model(SMALL)
    assert predict_clouds(direct, np.zeros((6, 4))).shape == (8, 3)
    assert pointnet_decode(ae, np.zeros(4)).shape == (8, 3)


def test_non_degenerate_and_deterministic():
    ae = PointNetAutoencoder(ModelSpec(n_points=16, latent_dim=8), seed=0)
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((16, 3)), rng.standard_normal((16, 3))
    assert not np.array_equal(pointnet_encode(ae, a), pointnet_encode(ae, b))
    g = pointnet_encode(ae, a)
    assert np.array_equal(pointnet_decode(ae, g), pointnet_decode(ae, g))
    enc = CsiEncoder(ModelSpec(n_points=16, latent_dim=8))
    c = rng.standard_normal((64, 4))
    assert np.array_equal(csi_encode(enc, c), csi_encode(enc, c))


def test_reconstruct_equals_manual_composition():
    from csipoint.csi import to_features
    ae, enc = PointNetAutoencoder(SMALL, 0), CsiEncoder(SMALL, 1)
    frame = CsiFrame(np.exp(0.3j * np.arange(12.0)).reshape(6, 2))
    manual = pointnet_decode(ae, csi_encode(enc, to_features(frame)))
    assert np.array_equal(reconstruct_from_csi(enc, ae, [frame]), manual)


def test_parameter_counts_are_reported():
    spec = ModelSpec()
    direct = direct_regression_model(spec)
    ae = PointNetAutoencoder(spec)
    assert direct.num_parameters() == CsiEncoder(spec).num_parameters() + ae.decoder.num_parameters()
