import json
import math

import numpy as np
import pytest

from relay_harvest.experiments import load_fixture
from relay_harvest.kkt import (
    MissingDuals, Tolerances, check_structural_properties, classify_states, kkt_residuals,
)
from relay_harvest.model import DualVariables, SingleRelayPolicy, single_relay_scenario
from relay_harvest.solver import Solution, solve

LN2 = math.log(2)


def _perturbed(sol, family, delta):
    cons = {k: np.array(v, dtype=float) for k, v in sol.duals.constraints.items()}
    cons[family] = cons[family] + delta
    return Solution(sol.policy, sol.throughput, DualVariables(cons, sol.duals.nonneg),
                    sol.diagnostics, sol.certified, sol.status)


def test_symmetric_terminal_flags(symmetric):
    sol = solve(symmetric)
    f = classify_states(sol, symmetric)
    for name in ("battery_empty_S", "battery_empty_R", "buffer_empty_R"):
        assert f.flag(name, 0), name
    assert not f.flag("buffer_full_R", 0)


def test_symmetric_kkt_deviation(symmetric):
    kr = kkt_residuals(solve(symmetric), symmetric)
    assert kr.max_deviation <= 1e-6
    assert kr.certified


def test_infinite_buffer_never_full(certified_small):
    for s, sol in certified_small:
        if s.finite_buffer:
            continue
        f = classify_states(sol, s)
        for name in f.names():
            if name.startswith("buffer_full"):
                assert not any(f.flag(name, i) for i in range(s.K))


def test_buffer_never_both_empty_and_full(certified_small):
    for s, sol in certified_small:
        if not s.finite_buffer:
            continue
        f = classify_states(sol, s)
        for r in s.nodes()[1:]:
            for i in range(s.K):
                assert not (f.primal["buffer_empty_" + r][i] and f.primal["buffer_full_" + r][i])


def test_constructed_lemma5_violation():
    s = single_relay_scenario([1, 1], [3, 0], [5, 0], 1, 1)
    pol = SingleRelayPolicy.zeros(2).replace(
        l_s=[0.5, 0.5], c_s=[0.5 * math.log(3), 0.5 * LN2], l_r=[0.5, 0.5], c_r=[0.1, 0.1])
    rep = check_structural_properties(Solution(pol, pol.throughput(), None), s)
    v = rep.lemmas["lemma5"].violations
    assert len(v) == 1 and v[0]["epoch"] == 0
    assert not rep.passed


def test_idle_relay_epoch_is_excluded():
    s = single_relay_scenario([1, 1], [1, 1], [0, 1], 1, 1)
    sol = solve(s)
    assert sol.policy.l_r[0] == 0
    kr = kkt_residuals(sol, s)
    assert not any(e["power"] == "p_r" and e["epoch"] == 0 for e in kr.entries)
    assert kr.certified


def test_perturbed_duals_withhold_certification():
    s = single_relay_scenario([1, 2], [1, 0.5], [0.5, 2], 2, 1)
    sol = solve(s)
    assert kkt_residuals(sol, s).certified
    kr = kkt_residuals(_perturbed(sol, "energy_S", 0.1), s)
    assert kr.max_deviation > 1e-2
    assert not kr.certified


def test_missing_duals(symmetric):
    sol = solve(symmetric)
    with pytest.raises(MissingDuals):
        kkt_residuals(Solution(sol.policy, sol.throughput, None), symmetric)


def test_random_certified_solutions_pass(certified_small):
    for s, sol in certified_small:
        rep = check_structural_properties(sol, s)
        for name, res in rep.lemmas.items():
            if name == "lemma3":
                continue
            assert not res.violations, (name, res.violations)


def test_lemma7_applies_to_successive_relaying():
    s = load_fixture("fig5").with_arrival("R2", 1, 2.0).with_modes("sr")
    sol = solve(s)
    rep = check_structural_properties(sol, s)
    assert rep.lemmas["lemma7"].applicable
    assert rep.lemmas["lemma7"].passed


@pytest.mark.xfail(strict=True, reason="the SR-only optimum depletes R2 at this point; "
                                       "see the decisions ledger on the residual-energy figure")
def test_fig5_sr_only_r2_battery_not_empty():
    s = load_fixture("fig5").with_arrival("R2", 1, 2.0).with_modes("sr")
    f = classify_states(solve(s), s)
    assert not f.flag("battery_empty_R2", s.K - 1)


def test_report_serializes(symmetric):
    rep = check_structural_properties(solve(symmetric), symmetric)
    doc = json.loads(rep.to_json())
    assert doc["passed"] is True
    assert set(doc["lemmas"]) == {"lemma3", "lemma4", "lemma5"}
    assert doc["lemmas"]["lemma5"]["violations"] == []


def test_tolerances_from_env(monkeypatch):
    monkeypatch.setenv("RELAY_HARVEST_TOL", "state=1e-4, jump=2e-5")
    t = Tolerances.from_env()
    assert t.state == 1e-4 and t.jump == 2e-5 and t.dual == 1e-6
    monkeypatch.setenv("RELAY_HARVEST_TOL", "10")
    t = Tolerances.from_env()
    assert t.state == pytest.approx(1e-5) and t.active == 1e-6
    monkeypatch.setenv("RELAY_HARVEST_TOL", "nonsense=1")
    with pytest.raises(ValueError):
        Tolerances.from_env()
