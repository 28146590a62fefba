import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nfsched.env import ChainObservation
from nfsched.sla import (
    EnergyEfficiency,
    MaxThroughput,
    MinEnergy,
    default_reference_energy,
    efficiency,
    energy_saving,
    is_violation,
    reward,
)


def obs(throughput, energy, util=0.5, arrival=1e6):
    return (ChainObservation(throughput, energy, util, arrival),)


def split_obs(pairs):
    return tuple(ChainObservation(t, e, 0.5, 1e6) for t, e in pairs)


# MaxThroughput -------------------------------------------------------------


def test_max_throughput_within_cap_pays_throughput():
    spec = MaxThroughput(energy_cap=2000.0)
    assert reward(spec, obs(5.0, 1500.0)) == pytest.approx(5.0)
    assert not is_violation(spec, obs(5.0, 1500.0))


def test_max_throughput_over_cap_pays_zero():
    spec = MaxThroughput(energy_cap=2000.0)
    assert reward(spec, obs(9.0, 2500.0)) == 0.0
    assert is_violation(spec, obs(9.0, 2500.0))


def test_max_throughput_sums_over_chains():
    spec = MaxThroughput(energy_cap=2000.0)
    observations = split_obs([(3.0, 900.0), (4.0, 1000.0)])
    assert reward(spec, observations) == pytest.approx(7.0)
    assert reward(spec, split_obs([(3.0, 1200.0), (4.0, 1000.0)])) == 0.0


# MinEnergy -----------------------------------------------------------------


def test_min_energy_floor_boundary_inclusive():
    spec = MinEnergy(throughput_floor=7.5, reference_energy=4000.0)
    assert is_violation(spec, obs(7.4, 100.0))
    assert not is_violation(spec, obs(7.5, 100.0))
    assert reward(spec, obs(7.4, 100.0)) == 0.0


def test_min_energy_reward_decreases_with_energy():
    spec = MinEnergy(throughput_floor=5.0, reference_energy=4000.0)
    r_low = reward(spec, obs(6.0, 1000.0))
    r_high = reward(spec, obs(6.0, 1500.0))
    assert r_low == pytest.approx((4000.0 - 1000.0) / 4000.0)
    assert r_high < r_low
    assert 0.0 <= r_high <= 1.0


def test_min_energy_reward_clamped():
    spec = MinEnergy(throughput_floor=1.0, reference_energy=100.0)
    assert reward(spec, obs(2.0, 500.0)) == 0.0  # headroom negative
    assert reward(spec, obs(2.0, 0.0)) == 1.0


def test_default_reference_energy():
    assert default_reference_energy(250.0, 10.0, 16) == pytest.approx(40000.0)


# EnergyEfficiency ----------------------------------------------------------


def test_efficiency_units_gbps_per_kilojoule():
    spec = EnergyEfficiency()
    assert reward(spec, obs(6.0, 2000.0)) == pytest.approx(3.0)
    assert efficiency(obs(6.0, 2000.0)) == pytest.approx(3.0)


def test_efficiency_zero_energy_is_zero():
    assert reward(EnergyEfficiency(), obs(6.0, 0.0)) == 0.0
    assert efficiency(obs(6.0, 0.0)) == 0.0
    assert not is_violation(EnergyEfficiency(), obs(6.0, 0.0))


# energy_saving -------------------------------------------------------------


def test_energy_saving_hand_values():
    assert energy_saving(800.0, 200.0, 1000.0) == pytest.approx(0.0)
    assert energy_saving(800.0, 200.0, 1230.0) == pytest.approx(-0.23)
    assert energy_saving(1000.0, 0.0, 500.0) == pytest.approx(0.5)


def test_energy_saving_zero_denominator_rejected():
    with pytest.raises(ValueError):
        energy_saving(0.0, 0.0, 100.0)
    with pytest.raises(ValueError):
        energy_saving(-1.0, 2.0, 100.0)


# generic properties --------------------------------------------------------


@given(
    throughput=st.floats(0.0, 50.0),
    energy=st.floats(0.0, 5000.0),
    cap=st.floats(1.0, 5000.0),
    floor=st.floats(0.1, 50.0),
)
@settings(max_examples=200, deadline=None)
def test_reward_never_negative(throughput, energy, cap, floor):
    observations = obs(throughput, energy)
    specs = [
        MaxThroughput(energy_cap=cap),
        MinEnergy(throughput_floor=floor, reference_energy=4000.0),
        EnergyEfficiency(),
    ]
    for spec in specs:
        assert reward(spec, observations) >= 0.0


def test_reward_scale_applies():
    assert reward(MaxThroughput(2000.0, reward_scale=0.1), obs(5.0, 100.0)) == pytest.approx(0.5)
    assert reward(EnergyEfficiency(reward_scale=2.0), obs(6.0, 2000.0)) == pytest.approx(6.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        MaxThroughput(energy_cap=-5.0)
    with pytest.raises(ValueError):
        MinEnergy(throughput_floor=0.0, reference_energy=100.0)
    with pytest.raises(ValueError):
        MinEnergy(throughput_floor=1.0, reference_energy=0.0)
