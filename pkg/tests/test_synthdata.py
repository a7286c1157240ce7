import math
from dataclasses import replace

import numpy as np
import pytest

from csipoint.errors import ContractError
from csipoint.synthdata import (SPEED_OF_LIGHT, RadioSpec, SceneParams, SceneSpec, channel_response, derive_seed,
                                generate_scene, jittered_scene, load_dataset, make_dataset, simulate_csi, split_counts,
                                write_dataset)


def single_path_scene(d):
    return SceneSpec(room=[10, 10, 3], scatterers=[[5, 5, 1]], reflect=[0.5], tx=[1, 1, 1], rx=[[1 + d, 1, 1]])


@pytest.mark.parametrize("d", [0.5, 1.0, 3.7, 8.2])
def test_single_path_phase_slope(d):
    radio = RadioSpec(noise_std=0.0)
    h = channel_response(single_path_scene(d), radio, include_scatter=False)[:, 0]
    slope = -2 * np.pi * radio.spacing_hz * d / SPEED_OF_LIGHT
    step = np.angle(h[1:] * np.conj(h[:-1]))
    assert np.abs(step - slope).max() < 1e-9
    assert np.abs(np.abs(h) - 1.0 / d).max() < 1e-9 / d


def test_amplitude_follows_inverse_distance():
    radio = RadioSpec(noise_std=0.0)
    amps = [abs(simulate_csi(single_path_scene(d), radio, 0, include_scatter=False).h[0, 0]) for d in (1, 2, 4)]
    assert amps[0] * 1 == pytest.approx(amps[1] * 2, rel=1e-12) == pytest.approx(amps[2] * 4, rel=1e-12)


def test_scatterer_permutation_is_bit_identical():
    scene, _ = generate_scene(SceneParams(n_scatterers=200), 3)
    radio = RadioSpec(subcarriers=16)
    base = channel_response(scene, radio)
    rng = np.random.default_rng(0)
    for _ in range(5):
        perm = rng.permutation(len(scene.scatterers))
        shuffled = SceneSpec(scene.room, scene.scatterers[perm], scene.reflect[perm], scene.tx, scene.rx)
        assert np.array_equal(channel_response(shuffled, radio), base)


def test_noise_is_seeded():
    scene = single_path_scene(2.0)
    radio = RadioSpec(subcarriers=8)
    a, b = simulate_csi(scene, radio, 5), simulate_csi(scene, radio, 5)
    assert np.array_equal(a.h, b.h)
    assert not np.array_equal(a.h, simulate_csi(scene, radio, 6).h)


def test_scene_validation():
    with pytest.raises(ContractError):
        SceneSpec([1, 1, 1], [[2, 0, 0]], [0.5], [0.5, 0.5, 0.5], [[0.5, 0.5, 0.5]])
    with pytest.raises(ContractError):
        SceneSpec([1, 1, 1], [[0.5, 0, 0]], [1.5], [0.5, 0.5, 0.5], [[0.5, 0.5, 0.5]])
    with pytest.raises(ContractError):
        RadioSpec(noise_std=-1)


def test_generated_scene_shapes_and_containment():
    params = SceneParams(n_points=100)
    scene, cloud = generate_scene(params, 11)
    assert cloud.shape == (100, 3) and scene.scatterers.shape == (512, 3)
    assert scene.contains(cloud).all()
    assert scene.rx.shape == (2, 3)


def test_derive_seed_is_stable_and_spreads():
    assert derive_seed(0, 1) == derive_seed(0, 1)
    assert len({derive_seed(0, i) for i in range(1000)}) == 1000
    assert derive_seed(0, 1, 2) != derive_seed(0, 2, 1)


def test_split_counts():
    assert split_counts(275, (200, 25, 50)) == (200, 25, 50)
    assert split_counts(40, (0.7, 0.1, 0.2)) == (28, 4, 8)
    assert split_counts(3, (0.7, 0.1, 0.2)) == (1, 1, 1)
    with pytest.raises(ContractError):
        split_counts(2, (0.7, 0.1, 0.2))


def test_dataset_write_load_round_trip(tmp_path):
    params = SceneParams(n_scatterers=64, n_points=32)
    radio = RadioSpec(subcarriers=8)
    ds = make_dataset(6, params, radio, seed=7, n_frames=2)
    digest = write_dataset(ds, tmp_path / "d")
    assert len(list((tmp_path / "d" / "scenes").iterdir())) == 6
    again = load_dataset(tmp_path / "d")
    assert again.manifest_hash() == digest == ds.manifest_hash()
    for a, b in zip(ds.samples, again.samples):
        assert np.array_equal(a.cloud, b.cloud)
        assert all(np.array_equal(x.h, y.h) for x, y in zip(a.frames, b.frames))
    with pytest.raises(FileExistsError):
        write_dataset(ds, tmp_path / "d")
    assert write_dataset(make_dataset(6, params, radio, seed=7, n_frames=2), tmp_path / "d", force=True) == digest


def test_tampered_dataset_is_rejected(tmp_path):
    ds = make_dataset(3, SceneParams(n_scatterers=16, n_points=8), RadioSpec(subcarriers=4), seed=1, n_frames=1)
    write_dataset(ds, tmp_path / "d")
    path = tmp_path / "d" / "scenes" / "s0000" / "cloud.xyz"
    path.write_text(path.read_text().replace("1", "2", 1))
    with pytest.raises(ContractError):
        load_dataset(tmp_path / "d")


def test_manifest_hash_depends_on_seed():
    params, radio = SceneParams(n_scatterers=16, n_points=8), RadioSpec(subcarriers=4)
    assert make_dataset(3, params, radio, seed=1).manifest_hash() != make_dataset(3, params, radio, seed=2).manifest_hash()


def test_default_noise_gives_about_20_db_snr():
    ds = make_dataset(5, seed=0, n_frames=1)
    power = np.mean([np.mean(np.abs(s.frames[0].h) ** 2) for s in ds.samples])
    snr_db = 10 * math.log10(power / ds.radio.noise_std ** 2)
    assert 15 < snr_db < 25


def test_doubling_distances_halves_los_amplitude():
    radio = RadioSpec(noise_std=0.0)
    near = SceneSpec([20, 20, 6], [[5, 5, 1]], [0.5], [1, 1, 1], [[3, 2, 1]])
    far = SceneSpec([20, 20, 6], [[10, 10, 2]], [0.5], [2, 2, 2], [[6, 4, 2]])
    a = np.abs(channel_response(near, radio, include_scatter=False))
    b = np.abs(channel_response(far, radio, include_scatter=False))
    np.testing.assert_allclose(b, a / 2, rtol=1e-12)


def test_perturbing_a_scatterer_changes_csi_monotonically():
    scene, _ = generate_scene(SceneParams(n_scatterers=32), 5)
    radio = RadioSpec(subcarriers=16, noise_std=0.0)
    base = channel_response(scene, radio)
    sizes = []
    for eps in (1e-4, 1e-3, 1e-2):
        pts = scene.scatterers.copy()
        pts[0, 0] = pts[0, 0] + eps if pts[0, 0] + eps <= scene.room[0] else pts[0, 0] - eps
        moved = SceneSpec(scene.room, pts, scene.reflect, scene.tx, scene.rx)
        sizes.append(np.linalg.norm(channel_response(moved, radio) - base))
    assert 0 < sizes[0] < sizes[1] < sizes[2]


def test_scene_determinism_and_variety():
    from csipoint.metrics import chamfer_distance
    params = SceneParams(n_points=64)
    a, b = generate_scene(params, 1)[1], generate_scene(params, 1)[1]
    assert np.array_equal(a, b)
    assert chamfer_distance(a, generate_scene(params, 2)[1]) > 0


def test_splits_are_disjoint_and_sized():
    ds = make_dataset(10, SceneParams(n_scatterers=16, n_points=8), RadioSpec(subcarriers=4), seed=0, n_frames=1)
    sets = [set(ds.splits[name]) for name in ("train", "val", "test")]
    assert [len(s) for s in sets] == [7, 1, 2]
    assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
    assert all(len(s.frames) == 1 for s in ds.samples)


def test_frame_jitter_decorrelates_fading_but_keeps_geometry():
    params = SceneParams(n_scatterers=64, n_points=16)
    radio = RadioSpec(subcarriers=8, noise_std=0.0)
    still = make_dataset(3, replace(params, frame_jitter=0.0), radio, seed=4, n_frames=3, split=(1, 1, 1))
    moving = make_dataset(3, params, radio, seed=4, n_frames=3, split=(1, 1, 1))
    for a, b in zip(still.samples, moving.samples):
        assert np.array_equal(a.cloud, b.cloud)
        assert all(np.array_equal(f.h, a.frames[0].h) for f in a.frames)
        assert np.array_equal(a.frames[0].h, channel_response(a.scene, radio))
        assert not np.array_equal(b.frames[0].h, b.frames[1].h)


def test_jittered_scene_stays_inside_the_room():
    scene, _ = generate_scene(SceneParams(n_scatterers=100), 6)
    moved = jittered_scene(scene, 0.5, 1)
    assert moved.contains(moved.scatterers).all()
    assert np.array_equal(moved.room, scene.room) and np.array_equal(moved.reflect, scene.reflect)
    assert jittered_scene(scene, 0.0, 1) is scene
    assert np.array_equal(jittered_scene(scene, 0.5, 1).scatterers, moved.scatterers)


def test_negative_frame_jitter_is_rejected():
    with pytest.raises(ContractError):
        make_dataset(3, SceneParams(n_scatterers=8, n_points=4, frame_jitter=-0.1), RadioSpec(subcarriers=2))
