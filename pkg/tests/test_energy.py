import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from d2e.analysis import CostLedger, count_sops, energy_for_network, estimate_energy, forward_flops, training_cost
from d2e.network import ArchitectureSpec, LayerSpec, build, tiny_conv, tiny_mlp


def first_vgg_layer():
    return ArchitectureSpec(
        "vgg-head",
        (LayerSpec("conv", out=64, kernel=3, padding=1), LayerSpec("flatten"), LayerSpec("readout", out=10, spiking=False)),
        (3, 32, 32),
        10,
    )


def test_sop_fixture():
    assert count_sops(first_vgg_layer())[0] == 3 * 9 * 32 * 32 * 64 == 1_769_472


def test_sop_trivial_cases():
    one = ArchitectureSpec("one", (LayerSpec("conv", out=1, kernel=1), LayerSpec("flatten"), LayerSpec("readout", out=1, spiking=False)), (1, 1, 1), 1)
    assert count_sops(one) == [1, 1]
    mlp = ArchitectureSpec("mlp", (LayerSpec("flatten"), LayerSpec("readout", out=10, spiking=False)), (1, 8, 8), 10)
    assert count_sops(mlp) == [640]


def test_tiny_conv_sops():
    assert count_sops(tiny_conv()) == [1 * 9 * 16 * 16 * 8, 8 * 9 * 8 * 8 * 16, 256 * 4]


def test_zero_rates_first_layer_only():
    r = estimate_energy([1_769_472, 500, 40], [0, 0], [0, 0], 8, 4.6e-12, 0.9e-12)
    assert r.E_direct == 4.6e-12 * 1_769_472
    assert r.E_TTFS == 0.9e-12 * 1_769_472


def test_equal_rates_equal_constants_coincide():
    r = estimate_energy([100, 200, 300], [0.3, 0.1], [0.3, 0.1], 4, 1e-12, 1e-12)
    assert r.E_direct == r.E_TTFS
    assert r.savings_pct == 0.0


def test_tiny_conv_hand_recomputed():
    # M = [18432, 73728, 1024]; layer 2 sees rate 0.2 (dir) / 0.15 (evt), readout 0.1 / 0.05
    net = build(tiny_conv(), 0)
    r = energy_for_network(net, [0.2, 0.1], [0.15, 0.05], 8, 4.6e-12, 0.9e-12)
    e_dir = 4.6e-12 * 18432 + 8 * 0.9e-12 * (0.2 * 73728 + 0.1 * 1024)
    e_evt = 0.9e-12 * 18432 + 8 * 0.9e-12 * (0.15 * 73728 + 0.05 * 1024)
    assert r.E_direct == pytest.approx(1.916928e-07, rel=1e-9)
    assert r.E_direct == pytest.approx(e_dir, rel=1e-9)
    assert r.E_TTFS == pytest.approx(e_evt, rel=1e-9)
    assert r.savings_pct == pytest.approx(100 * (e_dir - e_evt) / e_dir, rel=1e-9)
    assert r.r_dir == [0.2, 0.1]


def test_mlp_readout_sees_hidden_rate():
    net = build(tiny_mlp(), 0)
    r = energy_for_network(net, [0.5], [0.25], 8)
    assert r.r_dir == [0.5] and r.r_evt == [0.25]


# differences of two energies carry roundoff of a few ulps of the larger one
ULP = np.finfo(float).eps
rates = st.lists(st.floats(0.0, 0.5), min_size=2, max_size=2)


@given(rates, rates, st.floats(1e-13, 1e-11), st.floats(1e-13, 1e-11))
def test_energy_linearity(r_dir, r_evt, e_mac, e_ac):
    sops = [1000, 3000, 50]
    base = estimate_energy(sops, r_dir, r_evt, 8, e_mac, e_ac)
    # doubling e_ac doubles every AC term
    twice = estimate_energy(sops, r_dir, r_evt, 8, e_mac, 2 * e_ac)
    assert twice.E_TTFS == pytest.approx(2 * base.E_TTFS, rel=1e-12)
    assert twice.E_direct - e_mac * sops[0] == pytest.approx(2 * (base.E_direct - e_mac * sops[0]), rel=1e-9, abs=8 * ULP * twice.E_direct)
    # doubling a rate adds exactly its own term again
    doubled = [2 * r_evt[0], r_evt[1]]
    more = estimate_energy(sops, r_dir, doubled, 8, e_mac, e_ac)
    assert more.E_TTFS - base.E_TTFS == pytest.approx(8 * e_ac * r_evt[0] * sops[1], rel=1e-9, abs=8 * ULP * more.E_TTFS)


@pytest.mark.parametrize(
    "args",
    [
        ([10, 10], [1.5], [0.1], 4, 1e-12, 1e-12),
        ([10, 10], [0.1, 0.1], [0.1], 4, 1e-12, 1e-12),
        ([10, 10], [0.1], [0.1], 0, 1e-12, 1e-12),
        ([10, 10], [0.1], [0.1], 4, 0.0, 1e-12),
        ([], [], [], 4, 1e-12, 1e-12),
    ],
)
def test_energy_contract_errors(args):
    with pytest.raises(ValueError):
        estimate_energy(*args)


def test_cost_overhead_equal_flops():
    ledger = training_cost(tiny_conv(), 8, "skd", assume_equal=True)
    assert ledger.overhead_pct == pytest.approx(100 / 3, abs=1e-12)
    assert ledger.skd_cost / ledger.tsf_cost == pytest.approx(4 / 3)


def test_cost_ledger_identity():
    for spec in (tiny_mlp(), tiny_conv(), first_vgg_layer()):
        ledger = training_cost(spec, 8, "tsf")
        assert ledger.skd_cost - ledger.tsf_cost == ledger.F_dir
        assert ledger.total == ledger.tsf_cost
        assert ledger.overhead_pct == pytest.approx(100 * ledger.F_dir / (3 * ledger.F_evt))


def test_forward_flops_counts_first_layer_once():
    f_evt, f_dir = forward_flops(tiny_conv(), 8)
    m = count_sops(tiny_conv())
    assert f_evt == 2 * 8 * sum(m)
    assert f_dir == 2 * m[0] + 2 * 8 * (m[1] + m[2])


def test_published_ratio_to_three_figures():
    printed = 1.25e12 / 9.39e11
    ledger = CostLedger.from_flops(9.39e11 / 3, 9.39e11 / 3)
    assert float(f"{ledger.skd_cost / ledger.tsf_cost:.3g}") == float(f"{printed:.3g}") == 1.33


def test_cost_mode_validation():
    with pytest.raises(ValueError):
        CostLedger.from_flops(1.0, 1.0, "kd")
