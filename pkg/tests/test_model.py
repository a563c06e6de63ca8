import math

import numpy as np
import pytest

from rocket import autodiff as ad
from rocket.errors import DimensionError, SpecError
from rocket.model import (
    ArchSpec,
    count_multiplications,
    forward_rocket,
    init_rocket,
    light_only_forward,
    mlp_multiplications,
)

ARCH = ArchSpec(input_dim=3, n_classes=4, shared=(5,), light=(4,), booster=(6, 6))
INTERVAL = ArchSpec(input_dim=3, n_classes=3, shared=(6, 6, 4, 4), light=(), booster=(6, 4, 4),
                    sharing="interval", residual=True)


def test_init_is_deterministic():
    a, b = init_rocket(ARCH, 7), init_rocket(ARCH, 7)
    assert list(a.params) == list(b.params)
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])


def test_init_differs_across_seeds():
    a, b = init_rocket(ARCH, 1), init_rocket(ARCH, 2)
    assert not np.array_equal(a.params["S.0.W"], b.params["S.0.W"])


def test_booster_shallower_than_light_rejected():
    with pytest.raises(SpecError, match="deep"):
        init_rocket(ArchSpec(2, 2, light=(4, 4), booster=(4,)), 0)


def test_interval_requires_residual():
    with pytest.raises(SpecError, match="residual"):
        ArchSpec(2, 2, shared=(4,), booster=(4,), sharing="interval").validate()


def test_interval_requires_matching_widths():
    with pytest.raises(SpecError, match="width"):
        ArchSpec(2, 2, shared=(4, 4), booster=(5,), sharing="interval", residual=True).validate()


def test_glorot_bounds():
    net = init_rocket(ArchSpec(100, 2, shared=(100,)), 3)
    W = net.params["S.0.W"]
    bound = math.sqrt(6 / 200)
    assert W.shape == (100, 100)
    assert np.abs(W).max() <= bound
    assert np.abs(W).max() > 0.9 * bound  # actually spans the interval
    assert not net.params["S.0.b"].any()


@pytest.mark.parametrize("arch", [ARCH, INTERVAL, ArchSpec(3, 2, shared=(4,), light=(3,), booster=(5,), share_trunk=False)])
def test_partition_is_total_and_disjoint(arch):
    net = init_rocket(arch, 0)
    parts = net.partition()
    flat = parts["S"] + parts["L"] + parts["B"]
    assert sorted(flat) == sorted(net.params)
    assert len(flat) == len(set(flat))
    assert set(net.path_params("light")) <= set(parts["S"] + parts["L"])
    assert set(net.path_params("booster")) <= set(parts["S"] + parts["B"])
    assert set(net.path_params("light")) | set(net.path_params("booster")) == set(net.params)


def test_unshared_net_has_no_trunk():
    net = init_rocket(ArchSpec(3, 2, shared=(4,), light=(3,), booster=(5,), share_trunk=False), 0)
    assert net.partition()["S"] == []


def test_zero_depth_heads_differ_only_by_head_weights():
    arch = ArchSpec(3, 2, shared=(4,))
    net = init_rocket(arch, 0)
    net.params["B.0.W"] = net.params["L.0.W"].copy()
    out = forward_rocket(net, np.random.default_rng(0).normal(size=(5, 3)))
    assert np.array_equal(out.l.value, out.z.value)


@pytest.mark.parametrize("arch", [ARCH, INTERVAL])
def test_single_row_outputs_are_distributions(arch):
    net = init_rocket(arch, 1)
    out = forward_rocket(net, np.random.default_rng(1).normal(size=(1, 3)))
    for probs in (out.p.value, out.q.value):
        assert abs(probs.sum() - 1.0) <= 1e-12
    assert out.l.shape == out.z.shape == (1, arch.n_classes)


@pytest.mark.parametrize("arch", [ARCH, INTERVAL])
def test_path_isolation(arch):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(6, 3))
    net = init_rocket(arch, 2)
    base = forward_rocket(net, x)
    for name in net.partition()["B"]:
        bumped = net.copy()
        bumped.params[name] = bumped.params[name] + rng.normal(size=bumped.params[name].shape)
        out = forward_rocket(bumped, x)
        assert np.array_equal(out.l.value, base.l.value)
    for name in net.partition()["L"]:
        bumped = net.copy()
        bumped.params[name] = bumped.params[name] + rng.normal(size=bumped.params[name].shape)
        assert np.array_equal(forward_rocket(bumped, x).z.value, base.z.value)


def test_perturbing_booster_weight_changes_z_only():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 3))
    net = init_rocket(ARCH, 3)
    before = forward_rocket(net, x)
    net.params["B.2.W"] += 0.5
    after = forward_rocket(net, x)
    assert np.array_equal(before.l.value, after.l.value)
    assert not np.array_equal(before.z.value, after.z.value)


def test_shared_weight_couples_both_heads():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(8, 3))
    net = init_rocket(ARCH, 4)
    net.params["S.0.b"] = np.full((1, 5), 0.5)  # keep trunk units alive
    before = forward_rocket(net, x)
    net.params["S.0.W"] = net.params["S.0.W"] + 0.1
    after = forward_rocket(net, x)
    assert not np.array_equal(before.l.value, after.l.value)
    assert not np.array_equal(before.z.value, after.z.value)


@pytest.mark.parametrize("arch", [ARCH, INTERVAL])
def test_light_only_forward_equals_full_forward(arch):
    x = np.random.default_rng(5).normal(size=(7, 3))
    net = init_rocket(arch, 5)
    full = forward_rocket(net, x)
    l, p = light_only_forward(net, x)
    assert np.array_equal(l.value, full.l.value)
    assert np.array_equal(p.value, full.p.value)


def test_light_only_forward_ignores_scrambled_booster():
    x = np.random.default_rng(6).normal(size=(3, 3))
    net = init_rocket(ARCH, 6)
    before = light_only_forward(net, x)[0].value
    for name in net.partition()["B"]:
        net.params[name] = np.full_like(net.params[name], np.pi)
    assert np.array_equal(light_only_forward(net, x)[0].value, before)


def test_light_path_uses_fewer_multiplications():
    net = init_rocket(ARCH, 0)
    light = count_multiplications(net, "light")
    booster = count_multiplications(net, "booster")
    # both paths, trunk counted once
    full = light + booster - 3 * 5
    assert light < full


def test_forward_dimension_mismatch():
    with pytest.raises(DimensionError):
        forward_rocket(init_rocket(ARCH, 0), np.zeros((2, 4)))


def test_interval_booster_survives_zeroed_blocks():
    net = init_rocket(INTERVAL, 0)
    for name in net.partition()["B"]:
        if not name.startswith(f"B.{len(INTERVAL.booster)}."):
            net.params[name] = np.zeros_like(net.params[name])
    out = forward_rocket(net, np.random.default_rng(0).normal(size=(4, 3)))
    assert np.isfinite(out.z.value).all()


def test_interval_booster_interleaves_blocks():
    net = init_rocket(INTERVAL, 0)
    names = [layer.name for layer in net.booster_layers]
    assert names == ["S.0", "S.1", "B.0", "S.2", "S.3", "B.1", "B.2", "B.3"]
    assert [layer.name for layer in net.light_layers] == ["S.0", "S.1", "S.2", "S.3", "L.0"]


def test_count_multiplications_light_reference():
    assert mlp_multiplications([576, 200, 80, 2]) == 576 * 200 + 200 * 80 + 80 * 2 == 131360


def test_count_multiplications_single_layer():
    assert mlp_multiplications([3, 2]) == 6


def test_count_multiplications_booster_widths():
    # the stated layer widths; see test_acceptance for the published total
    assert mlp_multiplications([576, 720, 360, 240, 180, 90, 2]) == 819900


def test_stop_gradient_in_forward_is_local():
    net = init_rocket(ARCH, 0)
    out = forward_rocket(net, np.ones((2, 3)))
    loss = ad.sum_all(ad.mul(ad.stop_gradient(out.z), out.l))
    ad.backward(loss)
    for name in net.partition()["B"]:
        assert out.params[name].grad is None
