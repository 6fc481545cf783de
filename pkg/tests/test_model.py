import json
import math
from dataclasses import replace

import pytest

from relay_harvest.experiments import fixture_path, load_fixture
from relay_harvest.model import (
    ALL_MODES, SR_MODES, ChannelGains, EmptyModeSet, EnergyProfile, GainNotPositive,
    LengthMismatch, Mode, NegativeEnergy, NonPositiveDuration, Scenario, ScenarioError,
    load_scenario, parse_mode_set, relay_reduction, scenario_from_dict, scenario_to_dict,
    single_relay_scenario, two_relay_scenario, validate_scenario,
)


def _swap(s):
    p = s.profile
    return Scenario(s.gains.swapped(),
                    replace(p, arrivals_r1=p.arrivals_r2, arrivals_r2=p.arrivals_r1),
                    s.buffer_capacity, 2,
                    frozenset({Mode.SUCCESSIVE_I: Mode.SUCCESSIVE_II,
                               Mode.SUCCESSIVE_II: Mode.SUCCESSIVE_I}.get(m, m) for m in s.mode_set))


def test_fig3_instance_accepted_unchanged():
    s = load_fixture("fig3_eh")
    assert s.gains.as_tuple() == (4.0, 1.0, 1.0, 4.0)
    assert s.K == 10
    assert validate_scenario(s) == s


def test_relays_relabeled_to_put_stronger_first():
    s = two_relay_scenario([1, 1], [1, 1], [0.5, 0.1], [2, 3], (1, 4, 4, 1),
                           modes={"SR-I", "SR-II", "BC"})
    assert s.gains.alpha_sr1 == 4 and s.gains.alpha_sr2 == 1
    assert tuple(s.profile.arrivals("R1")) == (2, 3)
    assert tuple(s.profile.arrivals("R2")) == (0.5, 0.1)
    assert s.mode_set == frozenset({Mode.SUCCESSIVE_I, Mode.SUCCESSIVE_II, Mode.BROADCAST})


def test_one_sided_mode_set_is_relabeled_with_the_relays():
    # SR-I plus MAC: R1 receives in SR-I and sends in MAC
    s = two_relay_scenario([1], [1], [1], [1], (1, 2, 1, 1), modes={"SR-I", "MAC"})
    assert s.mode_set == frozenset({Mode.SUCCESSIVE_II, Mode.MULTI_ACCESS})


@pytest.mark.parametrize("build, exc", [
    (lambda: single_relay_scenario([1, -0.5], [1, 1], [1, 1], 1, 1), NonPositiveDuration),
    (lambda: single_relay_scenario([1, 0], [1, 1], [1, 1], 1, 1), NonPositiveDuration),
    (lambda: single_relay_scenario([1], [-1], [1], 1, 1), NegativeEnergy),
    (lambda: single_relay_scenario([1], [1], [1], 0, 1), GainNotPositive),
    (lambda: single_relay_scenario([1], [1], [1], 1, math.inf), GainNotPositive),
    (lambda: single_relay_scenario([1], [1, 2], [1], 1, 1), LengthMismatch),
    (lambda: single_relay_scenario([], [], [], 1, 1), LengthMismatch),
    (lambda: single_relay_scenario([1], [1], [1], 1, 1, -1.0), ScenarioError),
    (lambda: two_relay_scenario([1], [1], [1], [1], (2, 1, 1, 1), modes={"BC"}), EmptyModeSet),
    (lambda: two_relay_scenario([1], [1], [1], [1], (2, 1, 1, 1), modes=()), EmptyModeSet),
])
def test_rejections(build, exc):
    with pytest.raises(exc):
        build()


def test_short_arrival_lists_are_zero_padded():
    s = single_relay_scenario([1, 1, 1], [1], [0, 2], 1, 1)
    assert tuple(s.profile.arrivals("S")) == (1, 0, 0)
    assert tuple(s.profile.arrivals("R")) == (0, 2, 0)


def test_deadline_is_sum_of_durations():
    s = single_relay_scenario([0.1, 0.2, 0.7], [1, 1, 1], [1, 1, 1], 1, 1)
    assert math.isclose(s.T, 1.0, rel_tol=1e-12)


@pytest.mark.parametrize("name", ["fig3_eh", "fig3_br", "fig5", "fig6", "symmetric"])
def test_validation_is_idempotent(name):
    s = load_fixture(name)
    assert validate_scenario(validate_scenario(s)) == validate_scenario(s)


def test_relabeling_invariance():
    a = two_relay_scenario([1, 2], [1, 3], [0.2, 0.4], [1, 1], (3, 1, 2, 5), 1.0, modes="bc+sr")
    assert validate_scenario(_swap(a)) == a
    b = two_relay_scenario([1, 2], [1, 3], [0.2, 0.4], [1, 1], (3, 1, 2, 5), 1.0, modes="all")
    assert validate_scenario(_swap(b)) == b


def test_mode_set_parsing():
    assert parse_mode_set("sr") == SR_MODES
    assert parse_mode_set("all") == ALL_MODES
    assert parse_mode_set("bc+sr") == SR_MODES | {Mode.BROADCAST}
    assert parse_mode_set("mac+sr") == SR_MODES | {Mode.MULTI_ACCESS}
    assert parse_mode_set(["SR-I", "sr2"]) == SR_MODES
    with pytest.raises(ValueError):
        parse_mode_set("bogus")


def test_relay_reduction_keeps_the_chosen_relay():
    s = load_fixture("fig5")
    r2 = relay_reduction(s, 2)
    assert r2.relay_count == 1
    assert r2.gains.alpha_sr == s.gains.alpha_sr2 and r2.gains.alpha_rd == s.gains.alpha_r2d
    assert tuple(r2.profile.arrivals("R")) == tuple(s.profile.arrivals("R2"))


def test_scenario_dict_round_trip():
    for name in ("fig3_eh", "fig5", "symmetric"):
        s = load_fixture(name)
        assert scenario_from_dict(json.loads(json.dumps(scenario_to_dict(s)))) == s
    s = single_relay_scenario([1], [1], [1], 1, 1, 0.5)
    assert scenario_from_dict(scenario_to_dict(s)).buffer_capacity == 0.5


def test_scenario_file_infinite_buffer_and_relay_default():
    doc = {"gains": {"sr1": 2, "sr2": 1, "r1d": 1, "r2d": 3},
           "epochs": [{"tau": 1, "Es": 1, "Er1": 1, "Er2": 1}], "Bmax": "inf"}
    s = scenario_from_dict(doc)
    assert s.relay_count == 2 and math.isinf(s.buffer_capacity)
    doc = {"gains": {"sr1": 2, "r1d": 1}, "epochs": [{"tau": 1, "Es": 1, "Er1": 1}]}
    assert scenario_from_dict(doc).relay_count == 1


@pytest.mark.parametrize("doc", [
    {"gains": {"sr1": 1, "r1d": 1}, "epochs": [{"tau": 1, "Es": 1, "Er1": 1}], "extra": 1},
    {"gains": {"sr1": 1, "r1d": 1, "typo": 2}, "epochs": [{"tau": 1, "Es": 1, "Er1": 1}]},
    {"gains": {"sr1": 1, "r1d": 1}, "epochs": [{"tau": 1, "Es": 1, "Er": 1}]},
])
def test_unknown_fields_rejected(doc):
    with pytest.raises(ScenarioError):
        scenario_from_dict(doc)


def test_load_scenario_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ScenarioError):
        load_scenario(bad)
    assert load_scenario(fixture_path("symmetric")) == load_fixture("symmetric")


def test_scenario_is_immutable():
    s = single_relay_scenario([1], [1], [1], 1, 1)
    with pytest.raises(Exception):
        s.buffer_capacity = 3.0
    assert isinstance(s.gains, ChannelGains) and isinstance(s.profile, EnergyProfile)
