"""Network construction, forward contracts and checkpoint round-trips."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from salientfeat.network import (BackboneConfig, FeatureMaps, build_network,
                                 forward, forward_pair, load_checkpoint,
                                 save_checkpoint)
from salientfeat.tensor import Tensor, no_grad


def desk_net(seed=0, **overrides):
    cfg = BackboneConfig.desk()
    if overrides:
        d = cfg.to_dict()
        d.update(overrides)
        cfg = BackboneConfig.from_dict(d)
    return build_network(cfg, seed)


def random_image(seed, h=32, w=32):
    return np.random.default_rng(seed).uniform(size=(3, h, w))


# ----------------------------------------------------------------------
# construction
# ----------------------------------------------------------------------
def test_same_seed_bit_identical_parameters():
    a, b = desk_net(5), desk_net(5)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].data, b.params[name].data)


def test_different_seed_differs():
    a, b = desk_net(1), desk_net(2)
    assert any(not np.array_equal(a.params[n].data, b.params[n].data)
               for n in a.params)


def test_dsc_tail_saves_parameters():
    with_dsc = desk_net(0, use_dsc_tail=True)
    without = desk_net(0, use_dsc_tail=False)
    assert without.parameter_count() > with_dsc.parameter_count()
    # per tail layer at 32 channels: 32*9 + 32*32 kernel weights vs 32*32*9
    delta_per_layer = 32 * 32 * 9 - (32 * 9 + 32 * 32)
    assert without.parameter_count() - with_dsc.parameter_count() == 3 * delta_per_layer


def test_full_preset_dsc_saving_is_substantial():
    full = BackboneConfig()
    with_dsc = build_network(full, 0)
    without = build_network(BackboneConfig.from_dict(
        {**full.to_dict(), "use_dsc_tail": False}), 0)
    saved_f32_bytes = (without.parameter_count() - with_dsc.parameter_count()) * 4
    assert saved_f32_bytes > 1_000_000  # order of megabytes at full width


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        BackboneConfig(descriptor_dim=1)
    with pytest.raises(ValueError):
        BackboneConfig(channel_widths=(8, 0))
    with pytest.raises(ValueError):
        BackboneConfig(channel_widths=(8, 8), dilations=(1,))


# ----------------------------------------------------------------------
# forward contracts
# ----------------------------------------------------------------------
def test_desk_preset_smoke_shapes():
    net = desk_net()
    with no_grad():
        maps = forward(net, random_image(0, 64, 64))
    assert maps.descriptors.shape == (32, 64, 64)
    assert maps.reliability.shape == (1, 64, 64)
    assert maps.repeatability.shape == (1, 64, 64)


def test_forward_rejects_undersized_and_out_of_range():
    net = desk_net()
    with pytest.raises(ValueError):
        forward(net, np.zeros((3, 8, 32)))
    with pytest.raises(ValueError):
        forward(net, np.full((3, 32, 32), 1.5))


def test_constant_image_outputs_finite_and_in_range():
    net = desk_net()
    with no_grad():
        maps = forward(net, np.full((3, 32, 32), 0.5))
    for m in (maps.descriptors, maps.reliability, maps.repeatability):
        assert np.all(np.isfinite(m.data))
    assert maps.reliability.data.min() >= 0 and maps.reliability.data.max() <= 1
    assert maps.repeatability.data.min() >= 0 and maps.repeatability.data.max() <= 1


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_descriptor_norms_unit_and_scores_in_range(seed):
    net = desk_net()
    with no_grad():
        maps = forward(net, random_image(seed))
    norms = np.sqrt((maps.descriptors.data ** 2).sum(axis=0))
    assert np.all(np.abs(norms - 1.0) < 1e-5)
    for m in (maps.reliability, maps.repeatability):
        assert m.data.min() >= 0.0 and m.data.max() <= 1.0


def test_forward_deterministic():
    net = desk_net()
    img = random_image(3)
    with no_grad():
        a = forward(net, img)
        b = forward(net, img)
    np.testing.assert_array_equal(a.descriptors.data, b.descriptors.data)
    np.testing.assert_array_equal(a.repeatability.data, b.repeatability.data)


def test_full_resolution_for_odd_sizes():
    net = desk_net()
    with no_grad():
        maps = forward(net, random_image(4, 17, 23))
    assert maps.descriptors.shape[1:] == (17, 23)


def test_pair_is_siamese():
    net = desk_net()
    img = random_image(5)
    a, b = forward_pair(net, img, img)
    np.testing.assert_array_equal(a.descriptors.data, b.descriptors.data)
    np.testing.assert_array_equal(a.reliability.data, b.reliability.data)


def test_pair_swap_symmetry():
    net = desk_net()
    i1, i2 = random_image(6), random_image(7)
    with no_grad():
        a1, a2 = forward_pair(net, i1, i2)
        b1, b2 = forward_pair(net, i2, i1)
    np.testing.assert_array_equal(a1.descriptors.data, b2.descriptors.data)
    np.testing.assert_array_equal(a2.descriptors.data, b1.descriptors.data)


def test_brightness_shift_changes_untrained_descriptors():
    net = desk_net()
    img = random_image(8) * 0.5
    with no_grad():
        a, b = forward_pair(net, img, np.clip(img + 0.3, 0, 1))
    assert not np.allclose(a.descriptors.data, b.descriptors.data, atol=1e-6)


def test_no_dsc_network_runs():
    net = desk_net(0, use_dsc_tail=False)
    with no_grad():
        maps = forward(net, random_image(9))
    assert maps.descriptors.shape[0] == 32


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------
def test_checkpoint_roundtrip_bit_identical(tmp_path):
    net = desk_net(11)
    path = tmp_path / "net.sftc"
    save_checkpoint(net, path, step=42)
    loaded, step, opt = load_checkpoint(path)
    assert step == 42 and opt is None
    assert loaded.config == net.config
    for name in net.params:
        np.testing.assert_array_equal(loaded.params[name].data, net.params[name].data)


def test_checkpoint_roundtrip_with_optimizer_state(tmp_path):
    net = desk_net(12)
    rng = np.random.default_rng(0)
    state = {"t": 7,
             "m": {n: rng.normal(size=p.shape) for n, p in net.params.items()},
             "v": {n: rng.uniform(size=p.shape) for n, p in net.params.items()}}
    path = tmp_path / "net.sftc"
    save_checkpoint(net, path, step=7, optimizer_state=state)
    _, step, opt = load_checkpoint(path)
    assert step == 7 and opt["t"] == 7
    for n in net.params:
        np.testing.assert_array_equal(opt["m"][n], state["m"][n])
        np.testing.assert_array_equal(opt["v"][n], state["v"][n])


def test_checkpoint_wrong_magic_rejected(tmp_path):
    path = tmp_path / "bogus.sftc"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_truncation_reported(tmp_path):
    net = desk_net(13)
    path = tmp_path / "net.sftc"
    save_checkpoint(net, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:len(blob) // 2])
    with pytest.raises(ValueError, match="truncated"):
        load_checkpoint(path)


def test_checkpoint_shape_mismatch_rejected(tmp_path):
    from salientfeat.tensor import Tensor
    net = desk_net(15)
    net.params["rep_head.b"] = Tensor(np.zeros(3), requires_grad=True)
    path = tmp_path / "net.sftc"
    save_checkpoint(net, path)
    with pytest.raises(ValueError, match="shape mismatch"):
        load_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path):
    net = desk_net(14)
    path = tmp_path / "net.sftc"
    save_checkpoint(net, path)
    blob = bytearray(path.read_bytes())
    blob[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)
