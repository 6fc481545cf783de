"""Numerical checks of the structural properties of optimal policies.

Battery and buffer states at epoch ends are read two ways: from primal
slacks and from the dual multipliers.  Power jumps between epochs are then
matched against the states that the optimality conditions require.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .model import Mode, SR_MODES, Scenario, SingleRelayPolicy, mode_set_label
from .solver import Solution, _data_scale, constraint_slacks, recover_powers


class MissingDuals(ValueError):
    pass


@dataclass
class Tolerances:
    state: float = 1e-6       # slack threshold, relative to the natural scale
    jump: float = 1e-5        # power jump threshold, relative to the series maximum
    dual: float = 1e-6        # normalized multiplier threshold
    active: float = 1e-6      # minimum mode duration (s) for a power to be compared
    deviation: float = 1e-4   # kkt power reconstruction tolerance
    ambiguity: float = 1e3    # near-degeneracy band, as a multiple of state/jump

    @classmethod
    def from_env(cls, var: str = "RELAY_HARVEST_TOL") -> "Tolerances":
        """Defaults, overridden by ``name=value`` pairs in ``$RELAY_HARVEST_TOL``.

        A bare number scales every tolerance except ``active`` and ``ambiguity``.
        """
        tol = cls()
        raw = os.environ.get(var, "").strip()
        if not raw:
            return tol
        names = {f.name for f in fields(cls)}
        for part in raw.replace(";", ",").split(","):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                k = float(part)
                for name in ("state", "jump", "dual", "deviation"):
                    setattr(tol, name, getattr(tol, name) * k)
                continue
            key, value = (p.strip() for p in part.split("=", 1))
            if key not in names:
                raise ValueError(f"unknown tolerance {key!r} in {var}")
            setattr(tol, key, float(value))
        return tol


# --- state classification -----------------------------------------------------------


@dataclass
class StateFlags:
    """Battery and buffer states at the end of every epoch.

    ``primal[name]`` and ``dual[name]`` are boolean arrays of length K;
    ``slack[name]`` holds the relative slack behind the primal reading
    (``nan`` where it does not apply).  :meth:`flag` combines both readings.
    """
    K: int
    primal: dict
    dual: dict
    slack: dict
    multiplier: dict
    disagreements: list = field(default_factory=list)

    def flag(self, name: str, i: int) -> bool:
        if name not in self.primal:
            return False
        return bool(self.primal[name][i] or self.dual[name][i])

    def names(self) -> list:
        return sorted(self.primal)

    def as_dict(self) -> dict:
        return {
            "primal": {k: v.tolist() for k, v in self.primal.items()},
            "dual": {k: v.tolist() for k, v in self.dual.items()},
            "slack": {k: [None if math.isnan(x) else x for x in v.tolist()]
                      for k, v in self.slack.items()},
            "disagreements": self.disagreements,
        }


def _relays(s: Scenario) -> tuple:
    return ("R",) if s.relay_count == 1 else ("R1", "R2")


def classify_states(sol: Solution, s: Scenario, tol: Tolerances | None = None) -> StateFlags:
    tol = tol or Tolerances()
    K = s.K
    slacks = constraint_slacks(sol.policy, s)
    dscale = _data_scale(s)
    duals = sol.duals.constraints if sol.duals is not None else {}
    primal, dual, rel, mult = {}, {}, {}, {}

    def put(name, slack, scale, family, dual_scale):
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.asarray(slack, dtype=float) / scale if scale > 0 else np.zeros(K)
        rel[name] = r
        primal[name] = np.where(np.isnan(r), False, r <= tol.state)
        lam = np.asarray(duals.get(family, np.zeros(K)), dtype=float)
        m = lam * dual_scale / dscale
        mult[name] = m
        dual[name] = m > tol.dual

    for node in s.nodes():
        total = s.node_total(node)
        put("battery_empty_" + node, slacks["battery_" + node][0], total,
            "energy_" + node, max(total, 1e-12))
    for relay in _relays(s):
        inflow = slacks["data_" + relay][0]
        if s.finite_buffer:
            bscale = s.buffer_capacity
        else:
            bscale = max(float(np.max(np.abs(inflow))) if inflow.size else 0.0,
                         sol.throughput, 1e-12)
        put("buffer_empty_" + relay, inflow, bscale, "data_" + relay, dscale)
        if s.finite_buffer:
            put("buffer_full_" + relay, slacks["buffer_" + relay][0], bscale,
                "buffer_" + relay, dscale)
        else:
            primal["buffer_full_" + relay] = np.zeros(K, dtype=bool)
            dual["buffer_full_" + relay] = np.zeros(K, dtype=bool)
            rel["buffer_full_" + relay] = np.full(K, np.nan)
            mult["buffer_full_" + relay] = np.zeros(K)

    disagreements = []
    for name in sorted(primal):
        for i in range(K):
            if bool(primal[name][i]) != bool(dual[name][i]):
                disagreements.append({"state": name, "epoch": i, "primal": bool(primal[name][i]),
                                      "dual": bool(dual[name][i]),
                                      "relative_slack": _num(rel[name][i]),
                                      "multiplier": float(mult[name][i])})
    return StateFlags(K, primal, dual, rel, mult, disagreements)


def _num(x):
    x = float(x)
    return None if math.isnan(x) else x


# --- lemma checks --------------------------------------------------------------------


@dataclass
class LemmaResult:
    applicable: bool
    violations: list = field(default_factory=list)
    ambiguous: list = field(default_factory=list)
    checked: int = 0

    @property
    def passed(self) -> bool:
        return not self.violations


@dataclass
class PropertyReport:
    lemmas: dict   # name -> LemmaResult
    mode_set: str = ""

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.lemmas.values())

    def violation_count(self) -> int:
        return sum(len(r.violations) for r in self.lemmas.values())

    def as_dict(self) -> dict:
        return {"passed": self.passed, "mode_set": self.mode_set,
                "lemmas": {k: asdict(v) | {"passed": v.passed} for k, v in self.lemmas.items()}}

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.as_dict(), indent=indent, sort_keys=True)


class _Checker:
    def __init__(self, flags: StateFlags, tol: Tolerances):
        self.flags = flags
        self.tol = tol

    def _near(self, names, lo, hi):
        """Smallest relative slack of any of ``names`` on boundaries lo..hi."""
        best = math.inf
        for n in names:
            r = self.flags.slack.get(n)
            if r is None:
                continue
            for k in range(lo, hi + 1):
                if not math.isnan(r[k]):
                    best = min(best, abs(r[k]))
        return best

    def _have(self, names, lo, hi, all_of=False):
        hits = [any(self.flags.flag(n, k) for k in range(lo, hi + 1)) for n in names]
        return all(hits) if all_of else any(hits)

    def jumps(self, res: LemmaResult, label, series, active, inc=None, dec=None,
              dec_all=False, forbid_dec=False, pinned=None, excuse=None):
        """Compare consecutive active epochs of ``series``.

        ``inc``/``dec`` list the states of which one (or all, for ``dec_all``)
        must hold at some boundary between the two epochs; ``forbid_dec`` marks
        any decrease as a violation.  Epochs outside ``pinned`` have a power
        the multipliers do not determine; violations touching them are
        recorded as ambiguous.  ``excuse(a, b)`` may accept an increase on
        other grounds.
        """
        self._pinned = pinned
        idx = [i for i in range(len(series)) if active[i] and np.isfinite(series[i])]
        if len(idx) < 2:
            return
        pmax = max(abs(series[i]) for i in idx)
        tj = self.tol.jump * max(pmax, 1e-300)
        for a, b in zip(idx, idx[1:]):
            res.checked += 1
            d = series[b] - series[a]
            if d > tj and inc:
                if not self._have(inc, a, b - 1) and not (excuse and excuse(a, b)):
                    self._record(res, label, a, b, d, tj, inc)
            elif d < -tj:
                if forbid_dec:
                    self._record(res, label, a, b, d, tj, ["(no decrease allowed)"])
                elif dec and not self._have(dec, a, b - 1, all_of=dec_all):
                    self._record(res, label, a, b, d, tj, dec)

    def _record(self, res, label, a, b, d, tj, required):
        near = self._near(required, a, b - 1)
        pinned = getattr(self, "_pinned", None)
        loose = pinned is not None and not (pinned[a] and pinned[b])
        entry = {"series": label, "epoch": a, "next_epoch": b, "jump": float(d),
                 "required": list(required),
                 "relative_slacks": {n: [_num(self.flags.slack[n][k]) for k in range(a, b)]
                                     for n in required if n in self.flags.slack}}
        amb = self.tol.ambiguity
        if loose:
            entry["kind"] = "degenerate-ambiguous"
            entry["reason"] = "multiplier sum vanishes; optimal power not unique"
            res.ambiguous.append(entry)
        elif abs(d) <= amb * tj or near <= amb * self.tol.state:
            entry["kind"] = "degenerate-ambiguous"
            res.ambiguous.append(entry)
        else:
            entry["kind"] = "violation"
            res.violations.append(entry)


def _active(pol, name, tol):
    return np.asarray(getattr(pol, name)) > tol.active


def check_structural_properties(sol: Solution, s: Scenario, flags: StateFlags | None = None,
                                tol: Tolerances | None = None) -> PropertyReport:
    tol = tol or Tolerances()
    flags = flags or classify_states(sol, s, tol)
    pol = sol.policy
    prof = recover_powers(pol, s)
    ck = _Checker(flags, tol)
    K = s.K
    last = K - 1
    out = {}
    dscale = _data_scale(s)

    def pinned(node):
        S = sol.duals.suffix("energy_" + node) if sol.duals is not None else None
        if S is None:
            return np.ones(K, dtype=bool)
        return S * max(s.node_total(node), 1e-12) / dscale > tol.dual

    if isinstance(pol, SingleRelayPolicy):
        r3 = LemmaResult(applicable=sol.throughput > 0)
        if r3.applicable:
            r3.checked = 1
            for n in ("battery_empty_S", "battery_empty_R", "buffer_empty_R"):
                if not flags.flag(n, last):
                    ck._record(r3, "terminal state", last, last + 1, 0.0, 0.0, [n])
                    # a missing terminal state is never a jump artefact
                    e = r3.ambiguous.pop() if r3.ambiguous else r3.violations.pop()
                    e["kind"] = ("degenerate-ambiguous"
                                 if ck._near([n], last, last) <= tol.ambiguity * tol.state
                                 else "violation")
                    (r3.ambiguous if e["kind"] != "violation" else r3.violations).append(e)
        out["lemma3"] = r3
        r4 = LemmaResult(True)
        ck.jumps(r4, "p_r", prof.series("p_r"), _active(pol, "l_r", tol),
                 inc=["battery_empty_R", "buffer_empty_R"], dec=["buffer_full_R"],
                 pinned=pinned("R"))
        out["lemma4"] = r4
        r5 = LemmaResult(True)
        ck.jumps(r5, "p_s", prof.series("p_s"), _active(pol, "l_s", tol),
                 inc=["battery_empty_S", "buffer_full_R"], forbid_dec=True, pinned=pinned("S"))
        out["lemma5"] = r5
        return PropertyReport(out, "single")

    modes = s.mode_set
    sr1, sr2 = Mode.SUCCESSIVE_I in modes, Mode.SUCCESSIVE_II in modes
    bc, mac = Mode.BROADCAST in modes, Mode.MULTI_ACCESS in modes

    r6 = LemmaResult(sr1 or sr2)
    if sr2:
        ck.jumps(r6, "p_r1II", prof.series("p_r1II"), _active(pol, "l_II", tol) & (pol.c_r1II > 0),
                 inc=["battery_empty_R1", "buffer_empty_R1"], dec=["buffer_full_R1"],
                 pinned=pinned("R1"))
    if sr1:
        ck.jumps(r6, "p_r2I", prof.series("p_r2I"), _active(pol, "l_I", tol) & (pol.c_r2I > 0),
                 inc=["battery_empty_R2", "buffer_empty_R2"], dec=["buffer_full_R2"],
                 pinned=pinned("R2"))
    out["lemma6"] = r6

    r7 = LemmaResult(modes == SR_MODES)
    if r7.applicable:
        r7.checked = 1
        if not flags.flag("battery_empty_S", last):
            for n in ("battery_empty_R1", "battery_empty_R2"):
                if not flags.flag(n, last):
                    e = {"series": "terminal state", "epoch": last, "next_epoch": last + 1,
                         "jump": 0.0, "required": [n],
                         "relative_slacks": {n: [_num(flags.slack[n][last])],
                                             "battery_empty_S": [_num(flags.slack["battery_empty_S"][last])]}}
                    near = min(abs(flags.slack[n][last]), abs(flags.slack["battery_empty_S"][last]))
                    if near <= tol.ambiguity * tol.state:
                        e["kind"] = "degenerate-ambiguous"
                        r7.ambiguous.append(e)
                    else:
                        e["kind"] = "violation"
                        r7.violations.append(e)
    out["lemma7"] = r7

    r8 = LemmaResult(sr1 or sr2)
    if sr1:
        ck.jumps(r8, "p_sI", prof.series("p_sI"), _active(pol, "l_I", tol) & (pol.c_sI > 0),
                 inc=["battery_empty_S", "buffer_full_R1"], dec=["buffer_empty_R1"],
                 pinned=pinned("S"))
    if sr2:
        ck.jumps(r8, "p_sII", prof.series("p_sII"), _active(pol, "l_II", tol) & (pol.c_sII > 0),
                 inc=["battery_empty_S", "buffer_full_R2"], dec=["buffer_empty_R2"],
                 pinned=pinned("S"))
    out["lemma8"] = r8

    r9 = LemmaResult(bc)
    r11 = LemmaResult(bc)
    if bc:
        floor = tol.state * max(_data_scale(s), 1e-12)
        act = _active(pol, "l_b", tol) & (pol.c_br1 > floor) & (pol.c_br2 > floor)
        with np.errstate(invalid="ignore", divide="ignore"):
            rate2 = np.where(pol.l_b > 0, pol.c_br2 / np.where(pol.l_b > 0, pol.l_b, 1.0), np.nan)
        ck.jumps(r9, "c_br2/l_b", rate2, act,
                 inc=["buffer_empty_R1", "battery_empty_S", "buffer_full_R2"],
                 dec=["buffer_empty_R2", "buffer_full_R1"], pinned=pinned("S"))
        ck.jumps(r11, "p_b", prof.series("p_b"), act,
                 inc=["battery_empty_S", "buffer_full_R2"], dec=["buffer_empty_R2"],
                 pinned=pinned("S"))
    out["lemma9"] = r9
    out["lemma11"] = r11

    rm = LemmaResult(mac)
    if mac:
        act = _active(pol, "l_m", tol)
        p1, p2 = prof.series("p_r1m"), prof.series("p_r2m")

        def traded(other):
            # the partner relay gave up received power over the same boundary
            def ok(a, b):
                d = other[b] - other[a]
                return bool(np.isfinite(d)) and d < -tol.jump * max(np.nanmax(np.abs(other)), 1e-300)
            return ok
        ck.jumps(rm, "p_r1m", p1, act & (pol.c_r1m > 0),
                 inc=["buffer_empty_R1", "battery_empty_R1", "buffer_full_R2"],
                 pinned=pinned("R1"), excuse=traded(p2))
        ck.jumps(rm, "p_r2m", p2, act & (pol.c_r2m > 0),
                 inc=["buffer_empty_R2", "battery_empty_R2", "buffer_full_R1"],
                 pinned=pinned("R2"), excuse=traded(p1))
        both = act & (pol.c_r1m > 0) & (pol.c_r2m > 0)
        idx = [i for i in range(K) if both[i]]
        if len(idx) >= 2:
            t1 = tol.jump * max(np.nanmax(np.abs(p1[idx])), 1e-300)
            t2 = tol.jump * max(np.nanmax(np.abs(p2[idx])), 1e-300)
            need = ["buffer_full_R1", "buffer_full_R2"]
            ck._pinned = pinned("R1") & pinned("R2")
            for a, b in zip(idx, idx[1:]):
                rm.checked += 1
                d1, d2 = p1[b] - p1[a], p2[b] - p2[a]
                if d1 < -t1 and d2 < -t2 and not ck._have(need, a, b - 1, all_of=True):
                    ck._record(rm, "p_r1m,p_r2m", a, b, max(d1, d2), min(t1, t2), need)
    out["mac_lemma"] = rm
    return PropertyReport(out, mode_set_label(modes))


# --- power reconstruction from multipliers ----------------------------------------------


@dataclass
class KKTResiduals:
    max_deviation: float
    entries: list          # dicts: power, epoch, from_duals, recovered, deviation
    skipped: list
    certified: bool

    def as_dict(self) -> dict:
        return asdict(self)


def _required_families(s: Scenario):
    if s.relay_count == 1:
        return ["energy_S", "energy_R", "data_R"]
    return ["energy_S", "energy_R1", "energy_R2", "data_R1", "data_R2"]


def _mac_power(S_e, a, mu_own, mu_sum, other):
    """Solve ``a mu_own/(1+a p) + a mu_sum/(1+a p+other) = S_e`` for ``p``."""
    if S_e <= 0:
        return math.nan
    # quadratic in A = 1 + a p
    qa = S_e
    qb = S_e * other - a * mu_own - a * mu_sum
    qc = -a * mu_own * other
    disc = qb * qb - 4 * qa * qc
    A = (-qb + math.sqrt(max(disc, 0.0))) / (2 * qa)
    return max((A - 1.0) / a, 0.0)


def _mac_spread(S_e, err, args):
    """Change of the multi-access power when the energy balance moves by ``err``."""
    if not err or not S_e > err:
        return 0.0 if not err else math.inf
    p_lo = _mac_power(S_e - err, *args)
    p_hi = _mac_power(S_e + err, *args)
    return abs(p_lo - p_hi) / 2


def kkt_residuals(sol: Solution, s: Scenario, tol: Tolerances | None = None) -> KKTResiduals:
    """Rebuild each optimal power from the multipliers and compare with the policy."""
    tol = tol or Tolerances()
    duals = sol.duals
    if duals is None:
        raise MissingDuals("solution carries no dual variables")
    for f in _required_families(s):
        if f not in duals.constraints:
            raise MissingDuals(f"no multipliers for constraint family {f!r}")
    K = s.K
    g = s.gains
    pol = sol.policy
    prof = recover_powers(pol, s)

    def sfx(f):
        v = duals.suffix(f)
        return np.zeros(K) if v is None else v

    def beta(name):
        v = duals.nonneg.get(name)
        return np.zeros(K) if v is None else np.asarray(v, dtype=float)

    dscale = _data_scale(s)
    stat = sol.diagnostics.get("stationarity", {}) if sol.diagnostics else {}

    def slack_in(name):
        v = stat.get(name)
        return np.zeros(K) if v is None else np.asarray(v, dtype=float)

    def norm(S, node):
        return S * max(s.node_total(node), 1e-12) / dscale

    # each entry: (powers from multipliers, normalized denominator)
    predicted = {}
    if s.relay_count == 1:
        S1, S2, S3, S4 = sfx("energy_R"), sfx("energy_S"), sfx("data_R"), sfx("buffer_R")
        with np.errstate(divide="ignore", invalid="ignore"):
            predicted["p_r"] = ((1 - S3 + S4 + beta("c_r")) / S1 - 1 / g.alpha_rd, norm(S1, "R"))
            predicted["p_s"] = ((S3 - S4 + beta("c_s")) / S2 - 1 / g.alpha_sr, norm(S2, "S"))
        durations = {"p_r": pol.l_r, "p_s": pol.l_s}
        with np.errstate(divide="ignore", invalid="ignore"):
            spread = {"p_r": slack_in("c_r") / S1, "p_s": slack_in("c_s") / S2}
    else:
        S4, S5, S6 = sfx("energy_S"), sfx("energy_R1"), sfx("energy_R2")
        S7, S8, S9, S10 = sfx("data_R1"), sfx("data_R2"), sfx("buffer_R1"), sfx("buffer_R2")
        nS = norm(S4, "S")
        with np.errstate(divide="ignore", invalid="ignore"):
            predicted["p_r1II"] = ((1 - S7 + S9 + beta("c_r1II")) / S5 - 1 / g.alpha_r1d,
                                   norm(S5, "R1"))
            predicted["p_r2I"] = ((1 - S8 + S10 + beta("c_r2I")) / S6 - 1 / g.alpha_r2d,
                                  norm(S6, "R2"))
            predicted["p_sI"] = ((S7 - S9 + beta("c_sI")) / S4 - 1 / g.alpha_sr1, nS)
            predicted["p_sII"] = ((S8 - S10 + beta("c_sII")) / S4 - 1 / g.alpha_sr2, nS)
            pb2 = (S8 - S10 + beta("c_br2")) / S4 - 1 / g.alpha_sr2
            pb1 = (S7 - S9 + beta("c_br1")) / S4 - 1 / g.alpha_sr1
        # with no broadcast data for R2 the R1 stream pins the power instead;
        # that form is exact only when c_br2 is exactly zero
        use2 = pol.c_br2 > 0
        predicted["p_b"] = (np.where(use2, pb2, pb1), nS)
        durations = {"p_r1II": pol.l_II, "p_r2I": pol.l_I, "p_sI": pol.l_I, "p_sII": pol.l_II,
                     "p_b": pol.l_b}
        with np.errstate(divide="ignore", invalid="ignore"):
            spread = {"p_r1II": slack_in("c_r1II") / S5, "p_r2I": slack_in("c_r2I") / S6,
                      "p_sI": slack_in("c_sI") / S4, "p_sII": slack_in("c_sII") / S4,
                      "p_b": np.where(use2, slack_in("c_br2"), slack_in("c_br1")) / S4}
        if Mode.MULTI_ACCESS in s.mode_set:
            mu1 = np.asarray(duals.constraints.get("mac_R1", np.zeros(K)))
            mu2 = np.asarray(duals.constraints.get("mac_R2", np.zeros(K)))
            mu3 = np.asarray(duals.constraints.get("mac_sum", np.zeros(K)))
            rec1, rec2 = prof.series("p_r1m"), prof.series("p_r2m")
            p1 = np.full(K, np.nan)
            p2 = np.full(K, np.nan)
            b1, b2 = beta("e_r1m"), beta("e_r2m")
            u1, u2 = np.zeros(K), np.zeros(K)
            e1, e2 = slack_in("e_r1m"), slack_in("e_r2m")
            for i in range(K):
                if pol.l_m[i] > 0:
                    args1 = (g.alpha_r1d, mu1[i], mu3[i], g.alpha_r2d * rec2[i])
                    args2 = (g.alpha_r2d, mu2[i], mu3[i], g.alpha_r1d * rec1[i])
                    p1[i] = _mac_power(S5[i] - b1[i], *args1)
                    p2[i] = _mac_power(S6[i] - b2[i], *args2)
                    u1[i] = _mac_spread(S5[i] - b1[i], e1[i], args1)
                    u2[i] = _mac_spread(S6[i] - b2[i], e2[i], args2)
            spread["p_r1m"], spread["p_r2m"] = u1, u2
            predicted["p_r1m"] = (p1, norm(S5, "R1"))
            predicted["p_r2m"] = (p2, norm(S6, "R2"))
            durations["p_r1m"] = pol.l_m
            durations["p_r2m"] = pol.l_m

    pmax = 0.0
    for e in prof.epochs:
        for v in e.values():
            pmax = max(pmax, abs(v))
    floor = max(pmax, 1e-12) * 1e-3
    entries, skipped = [], []
    worst = 0.0
    for name, (pred, denom) in predicted.items():
        rec = prof.series(name)
        dur = durations[name]
        for i in range(K):
            if not dur[i] >= tol.active or not np.isfinite(rec[i]):
                continue
            p = pred[i]
            if not np.isfinite(p) or denom[i] <= tol.dual:
                skipped.append({"power": name, "epoch": i, "reason": "multiplier sum vanishes"})
                continue
            p = max(p, 0.0)
            scale = max(abs(rec[i]), floor)
            # the certificate only pins the power to within this much
            if spread[name][i] / scale > tol.deviation:
                skipped.append({"power": name, "epoch": i, "reason": "ill-conditioned",
                                "resolution": float(spread[name][i] / scale)})
                continue
            dev = abs(p - rec[i]) / scale
            worst = max(worst, dev)
            entries.append({"power": name, "epoch": i, "from_duals": float(p),
                            "recovered": float(rec[i]), "deviation": float(dev)})
    return KKTResiduals(float(worst), entries, skipped, worst <= tol.deviation)
