import math

import numpy as np
import pytest

from relay_harvest.model import ChannelGains, SingleRelayPolicy, TwoRelayPolicy, single_relay_scenario, two_relay_scenario
from relay_harvest.scheduler import (
    BC, R_TO_D, SR_TO_R, TRACE_COLUMNS, Schedule, Segment, Unschedulable, build_schedule,
    simulate_schedule, verify_traces,
)
from relay_harvest.solver import solve

LN2 = math.log(2)
SYM = SingleRelayPolicy(l_s=[1.0], l_r=[1.0], c_s=[LN2], c_r=[LN2])


def _spans(sch):
    return [(seg.mode, seg.start, seg.end) for seg in sch.segments]


def _mode_durations(pol, i):
    if isinstance(pol, SingleRelayPolicy):
        return {SR_TO_R: pol.l_s[i], R_TO_D: pol.l_r[i]}
    return {"BC": pol.l_b[i], "SR-I": pol.l_I[i], "SR-II": pol.l_II[i], "MAC": pol.l_m[i]}


def test_two_segments_without_buffer_pressure(symmetric):
    sch = build_schedule(SYM, symmetric)
    assert len(sch.segments) == 2
    for (mode, a, b), (m2, a2, b2) in zip(_spans(sch), [(SR_TO_R, 0, 1), (R_TO_D, 1, 2)]):
        assert mode == m2
        assert a == pytest.approx(a2, abs=1e-12) and b == pytest.approx(b2, abs=1e-12)


def test_four_segments_with_half_buffer(symmetric_half_buffer):
    sch = build_schedule(SYM, symmetric_half_buffer)
    want = [(SR_TO_R, 0, 0.5), (R_TO_D, 0.5, 1), (SR_TO_R, 1, 1.5), (R_TO_D, 1.5, 2)]
    assert len(sch.segments) == 4
    for (mode, a, b), (m2, a2, b2) in zip(_spans(sch), want):
        assert mode == m2
        assert a == pytest.approx(a2, abs=1e-9) and b == pytest.approx(b2, abs=1e-9)
    tr = simulate_schedule(sch, symmetric_half_buffer, 0.05)
    rep = verify_traces(tr, symmetric_half_buffer, 1e-7)
    assert rep.ok
    assert rep.max_buffer["R"] == pytest.approx(LN2 / 2, abs=1e-7)


def test_one_sided_epoch():
    s = single_relay_scenario([1, 1], [1, 0], [0, 1], 1, 1)
    pol = SingleRelayPolicy(l_s=[1.0, 0.0], l_r=[0.0, 1.0], c_s=[LN2, 0.0], c_r=[0.0, LN2])
    sch = build_schedule(pol, s)
    first = [seg for seg in sch.segments if seg.start < 1]
    assert len(first) == 1 and first[0].mode == SR_TO_R
    assert first[0].duration == pytest.approx(1.0)
    tr = simulate_schedule(sch, s, 0.1)
    k = int(np.argmin(np.abs(tr.time - 1.0)))
    assert tr.buffer["R"][k] == pytest.approx(LN2)
    assert verify_traces(tr, s).ok


def test_symmetric_traces(symmetric):
    tr = simulate_schedule(build_schedule(SYM, symmetric), symmetric, 0.1)
    assert np.all(np.diff(tr.time) <= 0.1 + 1e-12)
    at = lambda t: int(np.argmin(np.abs(tr.time - t)))
    assert tr.energy["S"][at(1.0)] == pytest.approx(0.0, abs=1e-12)
    assert tr.energy["R"][-1] == pytest.approx(0.0, abs=1e-12)
    assert tr.energy["R"][at(1.0)] == pytest.approx(1.0)
    assert tr.buffer["R"][at(1.0)] == pytest.approx(LN2)
    assert float(np.max(tr.buffer["R"])) == pytest.approx(LN2)
    assert tr.delivered[-1] == pytest.approx(LN2)


def test_empty_schedule_traces_are_cumulative_arrivals():
    s = single_relay_scenario([1, 1, 1], [1, 2, 0], [0.5, 0, 3], 1, 1)
    tr = simulate_schedule(Schedule([], 1, 0.0), s, 0.25)
    cum_s = np.cumsum(s.profile.arrivals("S"))
    cum_r = np.cumsum(s.profile.arrivals("R"))
    for t, es, er, pre in zip(tr.time, tr.energy["S"], tr.energy["R"], tr.left_limit):
        i = min(int(math.floor(t + 1e-12)), 2)
        if pre:
            i -= 1
        assert es == pytest.approx(cum_s[i]) and er == pytest.approx(cum_r[i])
    assert not np.any(tr.buffer["R"]) and not np.any(tr.delivered)


def test_broadcast_segment_fills_both_buffers():
    g = ChannelGains(2.0, 1.0, 1.0, 1.0)
    s = two_relay_scenario([1], [5], [5], [5], g)
    pol = TwoRelayPolicy.zeros(1).replace(l_b=[1.0], c_br1=[LN2], c_br2=[LN2])
    sch = build_schedule(pol, s)
    assert [seg.mode for seg in sch.segments] == [BC]
    seg = sch.segments[0]
    assert seg.powers["S"] == pytest.approx(2.0)
    assert seg.eta == pytest.approx(0.25)
    tr = simulate_schedule(sch, s, 0.1)
    assert tr.buffer["R1"][-1] == pytest.approx(LN2)
    assert tr.buffer["R2"][-1] == pytest.approx(LN2)
    assert tr.energy["S"][-1] == pytest.approx(3.0)


def test_transmitting_before_arrival_is_flagged():
    s = single_relay_scenario([1, 1], [0, 1], [0, 1], 1, 1)
    seg = Segment(0.0, 1.0, SR_TO_R, {"S": 1.0}, {"S->R": LN2})
    tr = simulate_schedule(Schedule([seg], 1, 0.0), s, 0.1)
    rep = verify_traces(tr, s, 1e-7, expected=0.0)
    kinds = [v for v in rep.violations if v["kind"] == "energy_causality"]
    assert kinds and kinds[0]["node"] == "S"
    assert kinds[0]["time"] == pytest.approx(0.0, abs=1e-12)


def test_tampered_objective_is_flagged(symmetric):
    tr = simulate_schedule(build_schedule(SYM, symmetric), symmetric, 0.1)
    rep = verify_traces(tr, symmetric, 1e-7, expected=1.0)
    assert [v["kind"] for v in rep.violations] == ["objective_mismatch"]


def test_zero_buffer_with_data_is_unschedulable():
    s = single_relay_scenario([2], [1], [1], 1, 1, 0.0)
    with pytest.raises(Unschedulable):
        build_schedule(SYM, s)


def test_trace_csv_columns(symmetric):
    tr = simulate_schedule(build_schedule(SYM, symmetric), symmetric, 0.5)
    lines = tr.to_csv().splitlines()
    assert tuple(lines[0].split(",")) == TRACE_COLUMNS
    assert len(lines) == tr.time.size + 1


def test_round_trip_on_certified_solutions(certified_small):
    worst = 0.0
    for s, sol in certified_small:
        sch = build_schedule(sol, s)
        starts = [x.start for x in sch.segments]
        assert starts == sorted(starts)
        for a, b in zip(sch.segments[:-1], sch.segments[1:]):
            assert a.end <= b.start + 1e-12
        assert all(0 <= x.start <= x.end <= s.T + 1e-12 for x in sch.segments)
        edges = list(s.profile.epoch_starts()) + [s.T]
        for i in range(s.K):
            for mode, want in _mode_durations(sol.policy, i).items():
                got = sch.mode_time(mode, edges[i] - 1e-12, edges[i + 1] - 1e-12)
                assert got == pytest.approx(want, abs=1e-9), (mode, i)
        tr = simulate_schedule(sch, s, 0.05)
        rep = verify_traces(tr, s, 1e-7, expected=sol.throughput)
        assert rep.ok, rep.violations
        worst = max(worst, abs(tr.delivered[-1] - sol.throughput) / max(sol.throughput, 1e-12))
    assert worst <= 1e-7


def test_segment_count_bound_single_relay():
    s = single_relay_scenario([1, 1, 1], [2, 1, 3], [1, 2, 1], 2, 1, 0.2)
    sol = solve(s)
    sch = build_schedule(sol, s)
    edges = list(s.profile.epoch_starts()) + [s.T]
    for i in range(s.K):
        segs = [x for x in sch.segments if edges[i] - 1e-12 <= x.start < edges[i + 1] - 1e-12]
        for mode, data in ((SR_TO_R, sol.policy.c_s[i]), (R_TO_D, sol.policy.c_r[i])):
            n = sum(1 for x in segs if x.mode == mode)
            assert n <= math.ceil(data / s.buffer_capacity) + 2
