"""Intra-epoch timelines for per-epoch policies, and a simulator to check them.

A policy only fixes how long each mode runs in an epoch and how much data it
moves.  The scheduler orders those mode runs so the relay buffers stay within
``[0, B_max]`` at every instant, and ``simulate_schedule`` integrates battery
and buffer levels along the result.

Two-relay successive relaying with empty buffers cannot start with any
single mode: each phase needs the other relay to hold data already.  Such
stretches are emitted as a time-shared segment, the limit of alternating the
participating modes infinitely fast in fixed proportions.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .model import Scenario, SingleRelayPolicy
from .solver import Solution, recover_powers

# mode labels used in segments
SR_TO_R = "S->R"
R_TO_D = "R->D"
BC, MAC, SR_I, SR_II = "BC", "MAC", "SR-I", "SR-II"

TRACE_COLUMNS = ("time", "E_s", "E_r1", "E_r2", "B_r1", "B_r2", "delivered")


class Unschedulable(RuntimeError):
    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (at t={time:.12g})")
        self.time = time


@dataclass
class Segment:
    start: float
    end: float
    mode: str
    powers: dict            # transmitter -> W drawn from its battery
    rates: dict             # stream such as "S->R1" -> nats/s
    eta: float | None = None
    shares: dict = field(default_factory=dict)   # mode -> fraction of the segment

    @property
    def duration(self) -> float:
        return self.end - self.start

    def as_dict(self) -> dict:
        return {"start": self.start, "end": self.end, "mode": self.mode, "powers": self.powers,
                "rates": self.rates, "eta": self.eta, "shares": self.shares}


@dataclass
class Schedule:
    segments: list
    relay_count: int
    throughput: float       # objective of the policy the schedule realizes

    def mode_time(self, mode: str, start: float = -math.inf, end: float = math.inf) -> float:
        """Total time given to ``mode`` by segments starting in ``[start, end)``."""
        return math.fsum(seg.duration * seg.shares.get(mode, 0.0) for seg in self.segments
                         if start <= seg.start < end)


# --- per-mode building blocks ------------------------------------------------------


@dataclass
class _ModeRun:
    name: str
    time: float
    powers: dict
    rates: dict
    eta: float | None = None

    def drift(self, relays) -> np.ndarray:
        """Net buffer rate of each relay in ``relays``."""
        out = np.zeros(len(relays))
        for k, r in enumerate(relays):
            out[k] = self.rates.get("S->" + r, 0.0) - self.rates.get(r + "->D", 0.0)
        return out


def _rate(c, l):
    return float(c / l) if l > 0 else 0.0


def _epoch_runs(pol, prof, i) -> list:
    p = prof.epochs[i]
    if isinstance(pol, SingleRelayPolicy):
        return [
            _ModeRun(SR_TO_R, float(pol.l_s[i]), {"S": p.get("p_s", 0.0)},
                     {"S->R": _rate(pol.c_s[i], pol.l_s[i])}),
            _ModeRun(R_TO_D, float(pol.l_r[i]), {"R": p.get("p_r", 0.0)},
                     {"R->D": _rate(pol.c_r[i], pol.l_r[i])}),
        ]
    return [
        _ModeRun(SR_II, float(pol.l_II[i]),
                 {"S": p.get("p_sII", 0.0), "R1": p.get("p_r1II", 0.0)},
                 {"S->R2": _rate(pol.c_sII[i], pol.l_II[i]),
                  "R1->D": _rate(pol.c_r1II[i], pol.l_II[i])}),
        _ModeRun(SR_I, float(pol.l_I[i]),
                 {"S": p.get("p_sI", 0.0), "R2": p.get("p_r2I", 0.0)},
                 {"S->R1": _rate(pol.c_sI[i], pol.l_I[i]),
                  "R2->D": _rate(pol.c_r2I[i], pol.l_I[i])}),
        _ModeRun(BC, float(pol.l_b[i]), {"S": p.get("p_b", 0.0)},
                 {"S->R1": _rate(pol.c_br1[i], pol.l_b[i]),
                  "S->R2": _rate(pol.c_br2[i], pol.l_b[i])},
                 eta=prof.eta[i]),
        _ModeRun(MAC, float(pol.l_m[i]),
                 {"R1": p.get("p_r1m", 0.0), "R2": p.get("p_r2m", 0.0)},
                 {"R1->D": _rate(pol.c_r1m[i], pol.l_m[i]),
                  "R2->D": _rate(pol.c_r2m[i], pol.l_m[i])}),
    ]


def _blend(runs, weights) -> tuple:
    """Time-averaged powers and rates of modes sharing a segment."""
    powers, rates = {}, {}
    for run, w in zip(runs, weights):
        for k, v in run.powers.items():
            powers[k] = powers.get(k, 0.0) + w * v
        for k, v in run.rates.items():
            rates[k] = rates.get(k, 0.0) + w * v
    return powers, rates


def _schedule_epoch(runs, relays, level, B, t0, tau, dscale, out) -> np.ndarray:
    eps_t = 1e-13 * tau
    rem = {r.name: (r.time if r.time > eps_t else 0.0) for r in runs}
    by_name = {r.name: r for r in runs}
    order = [r.name for r in runs]
    eps_b = 1e-12 * dscale
    total_in = sum(r.time * max(r.drift(relays).max(), 0.0) for r in runs)
    # enough pure runs for the alternation bound, then give up on pure runs
    budget = 8 + 4 * len(runs) * (math.ceil(total_in / B) if math.isfinite(B) and B > 0 else 1)
    t = t0
    ptr = 0
    emitted = 0
    first = len(out)

    def emit(name, dt):
        run = by_name[name]
        prev = out[-1] if len(out) > first else None
        if prev is not None and prev.mode == name and abs(prev.end - t) <= eps_t:
            prev.end = t + dt
        else:
            out.append(Segment(t, t + dt, name, dict(run.powers), dict(run.rates), run.eta,
                               {name: 1.0}))

    while any(v > eps_t for v in rem.values()) and emitted < budget:
        chosen = None
        for k in range(len(order)):
            name = order[(ptr + k) % len(order)]
            if rem[name] <= eps_t:
                continue
            d = by_name[name].drift(relays)
            limit = rem[name]
            for j in range(len(relays)):
                if d[j] < 0:
                    limit = min(limit, max(level[j], 0.0) / -d[j] if level[j] > eps_b else 0.0)
                elif d[j] > 0 and math.isfinite(B):
                    room = B - level[j]
                    limit = min(limit, room / d[j] if room > eps_b else 0.0)
            if limit > eps_t:
                chosen = (k, name, limit, d)
                break
        if chosen is None:
            break
        k, name, dt, d = chosen
        dt = float(dt)
        if rem[name] - dt <= eps_t:
            dt = rem[name]
        emit(name, dt)
        emitted += 1
        level = level + d * dt
        level = np.where(np.abs(level) <= eps_b, 0.0, level)
        if math.isfinite(B):
            level = np.where(np.abs(level - B) <= eps_b, B, level)
        rem[name] = max(rem[name] - dt, 0.0)
        if rem[name] <= eps_t:
            rem[name] = 0.0
        t += dt
        ptr = (order.index(name) + 1) % len(order)

    left = [by_name[n] for n in order if rem[n] > 0.0]
    if left:
        # time-share whatever is left in proportion to remaining durations; the
        # levels then move linearly towards their feasible end-of-epoch values
        span = math.fsum(rem[r.name] for r in left)
        w = [rem[r.name] / span for r in left]
        drift = sum(wk * r.drift(relays) for wk, r in zip(w, left))
        end = level + drift * span
        slack = 1e-7 * dscale
        if np.any(end < -slack) or (math.isfinite(B) and np.any(end > B + slack)):
            raise Unschedulable("buffer bounds cannot be met by the remaining modes", t)
        powers, rates = _blend(left, w)
        if len(left) == 1:
            emit(left[0].name, span)
        else:
            etas = [r.eta for r in left if r.eta is not None]
            out.append(Segment(t, t + span, "+".join(r.name for r in left), powers, rates,
                               etas[0] if etas else None,
                               {r.name: wk for r, wk in zip(left, w)}))
        level = end
        t += span
    return level


def build_schedule(policy, s: Scenario) -> Schedule:
    """Order each epoch's mode runs into a timeline honoring the buffer limit.

    Within an epoch, modes are taken in a fixed cyclic order (source then relay
    for one relay; SR-II, SR-I, BC, MAC for two) and each runs until its time
    is used up or a buffer it fills is full or a buffer it drains is empty.
    """
    sol = policy if isinstance(policy, Solution) else None
    pol = sol.policy if sol is not None else policy
    single = isinstance(pol, SingleRelayPolicy)
    relays = ("R",) if single else ("R1", "R2")
    B = s.buffer_capacity
    prof = recover_powers(pol, s)
    starts = s.profile.epoch_starts()
    tau = s.profile.tau
    data = float(sum(np.sum(fin) for fin in
                     ([pol.c_s] if single else [pol.c_br1, pol.c_br2, pol.c_sI, pol.c_sII])))
    if B == 0 and data > 0:
        raise Unschedulable("a zero-capacity buffer cannot relay positive data", 0.0)
    dscale = max(data, 1e-12)
    segments: list = []
    level = np.zeros(len(relays))
    for i in range(pol.K):
        runs = _epoch_runs(pol, prof, i)
        level = _schedule_epoch(runs, relays, level, B, float(starts[i]), float(tau[i]), dscale,
                                segments)
    thr = sol.throughput if sol is not None else pol.throughput()
    return Schedule(segments, 1 if single else 2, float(thr))


# --- simulation --------------------------------------------------------------------


@dataclass
class Traces:
    time: np.ndarray
    energy: dict            # node -> battery level (J)
    buffer: dict            # relay -> buffer level (nats)
    delivered: np.ndarray   # cumulative nats at the destination
    expected: float         # objective of the scheduled policy
    left_limit: np.ndarray  # True where a sample is taken just before an arrival

    def columns(self) -> dict:
        z = np.zeros_like(self.time)
        return {
            "time": self.time,
            "E_s": self.energy["S"],
            "E_r1": self.energy.get("R1", self.energy.get("R", z)),
            "E_r2": self.energy.get("R2", z),
            "B_r1": self.buffer.get("R1", self.buffer.get("R", z)),
            "B_r2": self.buffer.get("R2", z),
            "delivered": self.delivered,
        }

    def to_csv(self, digits: int = 12) -> str:
        cols = self.columns()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for k in range(self.time.size):
            w.writerow([f"{float(cols[c][k]):.{digits}g}" for c in TRACE_COLUMNS])
        return buf.getvalue()


def simulate_schedule(sch: Schedule, s: Scenario, dt: float) -> Traces:
    """Integrate battery, buffer and delivery levels on a grid of step at most ``dt``.

    Grid points include every segment endpoint and epoch start.  At an epoch
    start with an arrival the time is sampled twice, just before and just
    after the energy lands.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    nodes = s.nodes()
    relays = nodes[1:]
    starts = s.profile.epoch_starts()
    T = s.T
    arrivals = {n: s.profile.arrivals(n) for n in nodes}

    marks = {0.0, T}
    marks.update(float(x) for x in starts)
    for seg in sch.segments:
        marks.add(seg.start)
        marks.add(seg.end)
    marks = sorted(m for m in marks if 0.0 <= m <= T)

    grid = []
    for a, b in zip(marks[:-1], marks[1:]):
        n = max(1, math.ceil((b - a) / dt - 1e-9))
        grid.extend(a + (b - a) * k / n for k in range(n))
    grid.append(T)

    seg_starts = np.array([seg.start for seg in sch.segments])

    def active(t0, t1):
        mid = 0.5 * (t0 + t1)
        k = int(np.searchsorted(seg_starts, mid, side="right")) - 1
        if k >= 0 and sch.segments[k].start <= mid < sch.segments[k].end:
            return sch.segments[k]
        return None

    epoch_of = {float(x): i for i, x in enumerate(starts)}
    energy = {n: arrivals[n][0] for n in nodes}
    buffer = {r: 0.0 for r in relays}
    delivered = 0.0
    times, left = [], []
    e_rows = {n: [] for n in nodes}
    b_rows = {r: [] for r in relays}
    d_rows = []

    def record(t, is_left):
        times.append(t)
        left.append(is_left)
        for n in nodes:
            e_rows[n].append(energy[n])
        for r in relays:
            b_rows[r].append(buffer[r])
        d_rows.append(delivered)

    record(0.0, False)
    for t0, t1 in zip(grid[:-1], grid[1:]):
        seg = active(t0, t1)
        h = t1 - t0
        if seg is not None:
            for n, p in seg.powers.items():
                energy[n] -= p * h
            for r in relays:
                buffer[r] += (seg.rates.get("S->" + r, 0.0) - seg.rates.get(r + "->D", 0.0)) * h
                delivered += seg.rates.get(r + "->D", 0.0) * h
        i = epoch_of.get(t1)
        if i is not None and i > 0 and any(arrivals[n][i] > 0 for n in nodes):
            record(t1, True)
            for n in nodes:
                energy[n] += arrivals[n][i]
        record(t1, False)

    return Traces(
        time=np.array(times),
        energy={n: np.array(v) for n, v in e_rows.items()},
        buffer={r: np.array(v) for r, v in b_rows.items()},
        delivered=np.array(d_rows),
        expected=sch.throughput,
        left_limit=np.array(left),
    )


# --- verification ------------------------------------------------------------------


@dataclass
class FeasibilityReport:
    violations: list
    max_buffer: dict
    delivered: float
    expected: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        return {"ok": self.ok, "violations": self.violations, "max_buffer": self.max_buffer,
                "delivered": self.delivered, "expected": self.expected}


def _onset(t, y, k, floor):
    """Time at which ``y`` first drops below ``floor`` before sample ``k``."""
    if k == 0:
        return float(t[0])
    t0, t1, y0, y1 = t[k - 1], t[k], y[k - 1], y[k]
    if y0 <= floor or y1 == y0:
        return float(t0)
    return float(t0 + (t1 - t0) * (y0 - floor) / (y0 - y1))


def verify_traces(tr: Traces, s: Scenario, tol: float = 1e-7,
                  expected: float | None = None) -> FeasibilityReport:
    """Check energy causality, buffer bounds and the delivered total."""
    violations = []
    for node, e in tr.energy.items():
        scale = max(s.node_total(node), 1.0)
        bad = np.flatnonzero(e < -tol * scale)
        if bad.size:
            k = int(bad[0])
            violations.append({"kind": "energy_causality", "node": node,
                               "time": _onset(tr.time, e, k, 0.0), "value": float(e.min())})
    B = s.buffer_capacity
    dscale = max(float(abs(tr.expected)), 1.0)
    max_buffer = {}
    for relay, b in tr.buffer.items():
        max_buffer[relay] = float(b.max()) if b.size else 0.0
        bad = np.flatnonzero(b < -tol * dscale)
        if bad.size:
            k = int(bad[0])
            violations.append({"kind": "buffer_underflow", "node": relay,
                               "time": _onset(tr.time, b, k, 0.0), "value": float(b.min())})
        if math.isfinite(B):
            bad = np.flatnonzero(b > B + tol * dscale)
            if bad.size:
                k = int(bad[0])
                violations.append({"kind": "buffer_overflow", "node": relay,
                                   "time": _onset(tr.time, -b, k, -B), "value": float(b.max())})
    target = tr.expected if expected is None else float(expected)
    got = float(tr.delivered[-1]) if tr.delivered.size else 0.0
    if abs(got - target) > tol * max(abs(target), 1.0):
        violations.append({"kind": "objective_mismatch", "node": "D", "time": float(s.T),
                           "value": got, "expected": target})
    return FeasibilityReport(violations, max_buffer, got, target)


__all__ = ["Segment", "Schedule", "Traces", "FeasibilityReport", "Unschedulable",
           "build_schedule", "simulate_schedule", "verify_traces", "TRACE_COLUMNS"]
