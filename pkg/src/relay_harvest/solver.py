"""Offline throughput maximization for one relay and for two parallel relays.

Both programs are written in (duration, data) variables so that every energy
term is a perspective of an exponential and the problem is convex; they are
solved with :func:`relay_harvest.barrier.solve_barrier`.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .barrier import BarrierResult, SolverStalled, StandardForm, _jacobian, polish, solve_barrier
from .model import (
    DualVariables, Mode, Scenario, SingleRelayPolicy, TwoRelayPolicy, SINGLE_FIELDS, TWO_FIELDS,
    ScenarioError,
)
from .rates import broadcast_power, broadcast_split

# durations below this are snapped to zero together with their data amounts
SNAP_DURATION = 1e-7
TOL_FEAS = 1e-8
TOL_OPT = 1e-6


class DegenerateInstance(ValueError):
    pass


class InconsistentPolicy(ValueError):
    pass


def barrier_mu_final() -> float:
    return float(os.environ.get("RELAY_HARVEST_MU_FINAL", "1e-9"))


@dataclass
class Solution:
    policy: object
    throughput: float
    duals: DualVariables
    diagnostics: dict = field(default_factory=dict)
    certified: bool = True
    status: str = "optimal"

    @property
    def relay_count(self) -> int:
        return 1 if isinstance(self.policy, SingleRelayPolicy) else 2


# --- program assembly -----------------------------------------------------------


class _Program:
    """Incremental builder for a :class:`StandardForm`."""

    def __init__(self):
        self.keys = []          # (field, epoch)
        self.scale = []
        self.index = {}
        self.exp_atoms = []     # (l_idx, [c_idx...])
        self.log_atoms = []     # (l_idx, [(coef, idx)...])
        self.rows = []          # dict(family, epoch, exp, log, lin, rhs, scale)
        self.objective = []

    def var(self, name, i, scale, possible=True):
        if not possible:
            return None
        idx = len(self.keys)
        self.keys.append((name, i))
        self.scale.append(scale)
        self.index[(name, i)] = idx
        return idx

    def exp_atom(self, l, cs):
        cs = [c for c in cs if c is not None]
        if l is None or not cs:
            if l is None and cs:
                raise AssertionError("data variable without a duration variable")
            return None
        self.exp_atoms.append((l, cs))
        return len(self.exp_atoms) - 1

    def log_atom(self, l, terms):
        terms = [(a, e) for a, e in terms if e is not None]
        if l is None or not terms:
            return None
        self.log_atoms.append((l, terms))
        return len(self.log_atoms) - 1

    def row(self, family, i, rhs, scale, exp=(), log=(), lin=()):
        exp = [(a, k) for a, k in exp if k is not None]
        log = [(a, k) for a, k in log if k is not None]
        lin = [(a, k) for a, k in lin if k is not None]
        if not (exp or log or lin):
            if rhs < 0:
                raise DegenerateInstance(f"constraint {family}[{i}] is infeasible")
            return
        self.rows.append(dict(family=family, epoch=i, exp=exp, log=log, lin=lin,
                              rhs=rhs, scale=scale))

    def build(self) -> StandardForm:
        n = len(self.keys)
        m = len(self.rows)
        na, nb = len(self.exp_atoms), len(self.log_atoms)
        exp_l = np.array([a[0] for a in self.exp_atoms], dtype=int)
        exp_w = np.zeros((na, n))
        for k, (_, cs) in enumerate(self.exp_atoms):
            for c in cs:
                exp_w[k, c] += 1.0
        log_l = np.array([a[0] for a in self.log_atoms], dtype=int)
        log_w = np.zeros((nb, n))
        for k, (_, terms) in enumerate(self.log_atoms):
            for a, e in terms:
                log_w[k, e] += a
        A_exp = np.zeros((m, na))
        A_log = np.zeros((m, nb))
        A_lin = np.zeros((m, n))
        b = np.zeros(m)
        row_scale = np.zeros(m)
        for r, row in enumerate(self.rows):
            for a, k in row["exp"]:
                A_exp[r, k] += a
            for a, k in row["log"]:
                A_log[r, k] += a
            for a, k in row["lin"]:
                A_lin[r, k] += a
            b[r] = row["rhs"]
            row_scale[r] = row["scale"]
        obj = np.zeros(n)
        for idx in self.objective:
            obj[idx] = 1.0
        return StandardForm(objective=obj, exp_l=exp_l, exp_w=exp_w, log_l=log_l, log_w=log_w,
                            A_exp=A_exp, A_log=A_log, A_lin=A_lin, b=b,
                            col_scale=np.array(self.scale), row_scale=row_scale)


def _data_scale(s: Scenario) -> float:
    """Rough magnitude of the deliverable data, used for scaling only."""
    T = s.T
    e = max(s.node_total(n) for n in s.nodes())
    a = max(s.gains.as_tuple())
    return max(T * math.log1p(a * max(e, 1e-12) / T), 1e-9)


def _energy_scale(s: Scenario, node: str) -> float:
    return max(s.node_total(node), 1e-12)


def _build_single(s: Scenario):
    prof = s.profile
    K = s.K
    tau = prof.tau
    cum_s = prof.cumulative("S")
    cum_r = prof.cumulative("R")
    dscale = _data_scale(s)
    g = s.gains
    p = _Program()
    V = {}
    src_seen = False
    for i in range(K):
        src = cum_s[i] > 0
        src_seen = src_seen or src
        rel = cum_r[i] > 0 and src_seen
        V["c_s", i] = p.var("c_s", i, dscale / K, src)
        V["c_r", i] = p.var("c_r", i, dscale / K, rel)
        V["l_s", i] = p.var("l_s", i, tau[i], src)
        V["l_r", i] = p.var("l_r", i, tau[i], rel)
        if V["c_r", i] is not None:
            p.objective.append(V["c_r", i])
    atoms_s = [p.exp_atom(V["l_s", i], [V["c_s", i]]) for i in range(K)]
    atoms_r = [p.exp_atom(V["l_r", i], [V["c_r", i]]) for i in range(K)]
    es, er = _energy_scale(s, "S"), _energy_scale(s, "R")
    for i in range(K):
        p.row("energy_R", i, cum_r[i], er, exp=[(1 / g.alpha_rd, atoms_r[j]) for j in range(i + 1)])
        p.row("energy_S", i, cum_s[i], es, exp=[(1 / g.alpha_sr, atoms_s[j]) for j in range(i + 1)])
        lin_data = [(1.0, V["c_r", j]) for j in range(i + 1)] + [(-1.0, V["c_s", j]) for j in range(i + 1)]
        p.row("data_R", i, 0.0, dscale, lin=lin_data)
        if s.finite_buffer:
            p.row("buffer_R", i, s.buffer_capacity, dscale, lin=[(-a, k) for a, k in lin_data])
        p.row("half_duplex", i, tau[i], tau[i], lin=[(1.0, V["l_s", i]), (1.0, V["l_r", i])])
    return p, V


def _build_two(s: Scenario):
    prof = s.profile
    K = s.K
    tau = prof.tau
    g = s.gains
    modes = s.mode_set
    bc, mac = Mode.BROADCAST in modes, Mode.MULTI_ACCESS in modes
    sr1, sr2 = Mode.SUCCESSIVE_I in modes, Mode.SUCCESSIVE_II in modes
    cum = {n: prof.cumulative(n) for n in ("S", "R1", "R2")}
    dscale = _data_scale(s)
    p = _Program()
    V = {}
    in1 = in2 = False
    for i in range(K):
        src = cum["S"][i] > 0
        cbr = bc and src
        in1 = in1 or cbr or (sr1 and src)
        in2 = in2 or cbr or (sr2 and src)
        r1 = cum["R1"][i] > 0 and in1
        r2 = cum["R2"][i] > 0 and in2
        d = dscale / K
        V["c_br1", i] = p.var("c_br1", i, d, cbr)
        V["c_br2", i] = p.var("c_br2", i, d, cbr)
        V["c_sI", i] = p.var("c_sI", i, d, sr1 and src)
        V["c_sII", i] = p.var("c_sII", i, d, sr2 and src)
        V["c_r1II", i] = p.var("c_r1II", i, d, sr2 and r1)
        V["c_r2I", i] = p.var("c_r2I", i, d, sr1 and r2)
        V["c_r1m", i] = p.var("c_r1m", i, d, mac and r1)
        V["c_r2m", i] = p.var("c_r2m", i, d, mac and r2)
        V["e_r1m", i] = p.var("e_r1m", i, _energy_scale(s, "R1"), mac and r1)
        V["e_r2m", i] = p.var("e_r2m", i, _energy_scale(s, "R2"), mac and r2)
        for l, deps in (("l_b", ("c_br1", "c_br2")), ("l_I", ("c_sI", "c_r2I")),
                        ("l_II", ("c_sII", "c_r1II")), ("l_m", ("c_r1m", "c_r2m"))):
            V[l, i] = p.var(l, i, tau[i], any(V[dd, i] is not None for dd in deps))
        for f in ("c_r1II", "c_r2I", "c_r1m", "c_r2m"):
            if V[f, i] is not None:
                p.objective.append(V[f, i])

    w = 1 / g.alpha_sr2 - 1 / g.alpha_sr1
    src_terms, r1_terms, r2_terms = [], [], []
    for i in range(K):
        t = []
        if w > 0:
            t.append((w, p.exp_atom(V["l_b", i], [V["c_br2", i]])))
        t.append((1 / g.alpha_sr1, p.exp_atom(V["l_b", i], [V["c_br1", i], V["c_br2", i]])))
        t.append((1 / g.alpha_sr1, p.exp_atom(V["l_I", i], [V["c_sI", i]])))
        t.append((1 / g.alpha_sr2, p.exp_atom(V["l_II", i], [V["c_sII", i]])))
        src_terms.append(t)
        r1_terms.append(([(1 / g.alpha_r1d, p.exp_atom(V["l_II", i], [V["c_r1II", i]]))],
                         [(1.0, V["e_r1m", i])]))
        r2_terms.append(([(1 / g.alpha_r2d, p.exp_atom(V["l_I", i], [V["c_r2I", i]]))],
                         [(1.0, V["e_r2m", i])]))

    es, e1, e2 = (_energy_scale(s, n) for n in ("S", "R1", "R2"))
    for i in range(K):
        # multi-access rate region, one epoch at a time
        lm = V["l_m", i]
        q1 = p.log_atom(lm, [(g.alpha_r1d, V["e_r1m", i])])
        q2 = p.log_atom(lm, [(g.alpha_r2d, V["e_r2m", i])])
        p.row("mac_R1", i, 0.0, dscale, log=[(-1.0, q1)], lin=[(1.0, V["c_r1m", i])])
        p.row("mac_R2", i, 0.0, dscale, log=[(-1.0, q2)], lin=[(1.0, V["c_r2m", i])])
        if V["c_r1m", i] is not None and V["c_r2m", i] is not None:
            qs = p.log_atom(lm, [(g.alpha_r1d, V["e_r1m", i]), (g.alpha_r2d, V["e_r2m", i])])
            p.row("mac_sum", i, 0.0, dscale, log=[(-1.0, qs)],
                  lin=[(1.0, V["c_r1m", i]), (1.0, V["c_r2m", i])])

        p.row("energy_S", i, cum["S"][i], es, exp=[x for j in range(i + 1) for x in src_terms[j]])
        p.row("energy_R1", i, cum["R1"][i], e1,
              exp=[x for j in range(i + 1) for x in r1_terms[j][0]],
              lin=[x for j in range(i + 1) for x in r1_terms[j][1]])
        p.row("energy_R2", i, cum["R2"][i], e2,
              exp=[x for j in range(i + 1) for x in r2_terms[j][0]],
              lin=[x for j in range(i + 1) for x in r2_terms[j][1]])
        rng = range(i + 1)
        d1 = ([(1.0, V["c_r1II", j]) for j in rng] + [(1.0, V["c_r1m", j]) for j in rng]
              + [(-1.0, V["c_br1", j]) for j in rng] + [(-1.0, V["c_sI", j]) for j in rng])
        d2 = ([(1.0, V["c_r2I", j]) for j in rng] + [(1.0, V["c_r2m", j]) for j in rng]
              + [(-1.0, V["c_br2", j]) for j in rng] + [(-1.0, V["c_sII", j]) for j in rng])
        p.row("data_R1", i, 0.0, dscale, lin=d1)
        p.row("data_R2", i, 0.0, dscale, lin=d2)
        if s.finite_buffer:
            p.row("buffer_R1", i, s.buffer_capacity, dscale, lin=[(-a, k) for a, k in d1])
            p.row("buffer_R2", i, s.buffer_capacity, dscale, lin=[(-a, k) for a, k in d2])
        p.row("half_duplex", i, tau[i], tau[i],
              lin=[(1.0, V[l, i]) for l in ("l_b", "l_I", "l_II", "l_m")])
    return p, V


# relay inflow/outflow variables, used for the starting point
_SINGLE_FLOWS = {"R": (("c_s",), ("c_r",))}
_TWO_FLOWS = {"R1": (("c_br1", "c_sI"), ("c_r1II", "c_r1m")),
              "R2": (("c_br2", "c_sII"), ("c_r2I", "c_r2m"))}
_DURATION_OF = {"c_s": "l_s", "c_r": "l_r", "c_br1": "l_b", "c_br2": "l_b", "c_sI": "l_I",
                "c_r2I": "l_I", "c_sII": "l_II", "c_r1II": "l_II", "c_r1m": "l_m",
                "c_r2m": "l_m", "e_r1m": "l_m", "e_r2m": "l_m"}


def _starting_point(prob: StandardForm, p: _Program, V: dict, s: Scenario) -> np.ndarray:
    """Strictly interior point: equal time split, small data amounts.

    Data rates start at ``kappa`` nats/s per mode and are halved until the
    energy and buffer constraints hold strictly; relay outflow in each epoch
    is capped at half the data buffered so far, which keeps data causality
    strict.
    """
    K = s.K
    tau = s.profile.tau
    flows = _SINGLE_FLOWS if s.relay_count == 1 else _TWO_FLOWS
    g = s.gains
    x = np.zeros(prob.n)
    durs = ("l_s", "l_r") if s.relay_count == 1 else ("l_b", "l_I", "l_II", "l_m")
    for i in range(K):
        present = [V[d, i] for d in durs if V[d, i] is not None]
        for idx in present:
            x[idx] = 0.9 * tau[i] / len(present)

    kappa = 1.0
    for _ in range(200):
        for (name, i), idx in p.index.items():
            if name.startswith("c_") or name.startswith("e_"):
                x[idx] = kappa * x[V[_DURATION_OF[name], i]]
        if s.relay_count == 2:
            for i in range(K):
                lm = V["l_m", i]
                if lm is None:
                    continue
                c1, c2, e1, e2 = (V[f, i] for f in ("c_r1m", "c_r2m", "e_r1m", "e_r2m"))
                l = x[lm]
                y1 = g.alpha_r1d * x[e1] if e1 is not None else 0.0
                y2 = g.alpha_r2d * x[e2] if e2 is not None else 0.0
                cap = l * math.log1p((y1 + y2) / l)
                if c1 is not None:
                    x[c1] = 0.25 * min(l * math.log1p(y1 / l), cap)
                if c2 is not None:
                    x[c2] = 0.25 * min(l * math.log1p(y2 / l), cap)
        for relay, (ins, outs) in flows.items():
            cum_in = 0.0
            cum_out = 0.0
            for i in range(K):
                cum_in += sum(x[V[f, i]] for f in ins if V[f, i] is not None)
                out_idx = [V[f, i] for f in outs if V[f, i] is not None]
                total = sum(x[k] for k in out_idx)
                room = 0.5 * (cum_in - cum_out)
                if total > room and total > 0:
                    for k in out_idx:
                        x[k] *= room / total
                cum_out += sum(x[k] for k in out_idx)
        slack = prob.b - prob.constraint_values(x)
        if np.all(slack > 1e-3 * prob.row_scale * 0 + 0) and np.all(
                slack > 1e-6 * np.abs(prob.b) + 1e-300) and np.all(x > 0):
            return x
        kappa *= 0.5
    raise DegenerateInstance("could not find a strictly feasible starting point")


# --- solving ---------------------------------------------------------------------


def _assemble(s: Scenario):
    if s.relay_count == 1:
        p, V = _build_single(s)
    else:
        p, V = _build_two(s)
    return p, V


def assemble_program(s: Scenario):
    """Standard form, builder and variable map for ``s`` (exposed for tests)."""
    p, V = _assemble(s)
    prob = p.build()
    prob.obj_scale = _data_scale(s)
    return prob, p, V


def _zero_solution(s: Scenario, reason: str) -> Solution:
    K = s.K
    cls = SingleRelayPolicy if s.relay_count == 1 else TwoRelayPolicy
    pol = cls.zeros(K)
    fams = _families(s)
    duals = DualVariables({f: np.zeros(K) for f in fams}, {f: np.zeros(K) for f in cls.FIELDS})
    diag = dict(iterations=0, kkt_residual=0.0, duality_gap=0.0, mu_path=[], wall_time=0.0,
                note=reason)
    return Solution(pol, 0.0, duals, diag, certified=True, status="degenerate")


def _families(s: Scenario):
    if s.relay_count == 1:
        f = ["energy_S", "energy_R", "data_R", "half_duplex"]
        if s.finite_buffer:
            f.append("buffer_R")
        return f
    f = ["energy_S", "energy_R1", "energy_R2", "data_R1", "data_R2", "half_duplex"]
    if s.finite_buffer:
        f += ["buffer_R1", "buffer_R2"]
    if Mode.MULTI_ACCESS in s.mode_set:
        f += ["mac_R1", "mac_R2", "mac_sum"]
    return f


def _solve(s: Scenario, raise_on_stall: bool, trace=None, mu_final=None) -> Solution:
    t0 = time.perf_counter()
    if s.buffer_capacity == 0:
        raise ScenarioError("the barrier method needs a strictly positive buffer capacity")
    prob, p, V = assemble_program(s)
    if not p.objective:
        return _zero_solution(s, "no data can reach the destination")
    x0 = _starting_point(prob, p, V, s)
    res = solve_barrier(prob, x0, mu_final=mu_final or barrier_mu_final(), trace=trace)
    refined = polish(prob, res)
    if refined is not None:
        res = refined
    sol = _package(s, prob, p, res)
    sol.diagnostics["wall_time"] = time.perf_counter() - t0
    if not sol.certified and raise_on_stall:
        raise SolverStalled("barrier method did not reach its tolerances", sol)
    return sol


def _package(s: Scenario, prob: StandardForm, p: _Program, res: BarrierResult) -> Solution:
    K = s.K
    cls = SingleRelayPolicy if s.relay_count == 1 else TwoRelayPolicy
    arrays = {f: np.zeros(K) for f in cls.FIELDS}
    nonneg = {f: np.zeros(K) for f in cls.FIELDS}
    for (name, i), idx in p.index.items():
        arrays[name][i] = res.x[idx]
        nonneg[name][i] = res.beta[idx]
    raw = cls(**{f: v.copy() for f, v in arrays.items()})
    snapped = 0
    for l, deps in cls.GROUPS.items():
        small = arrays[l] < SNAP_DURATION
        if np.any(small & (arrays[l] > 0)):
            snapped += int(np.sum(small & (arrays[l] > 0)))
        for f in (l,) + deps:
            arrays[f][small] = 0.0
    pol = cls(**arrays)
    # dropping a sliver of source time can starve a relay of the data it forwards
    if snapped and feasibility_violation(pol, s) > max(feasibility_violation(raw, s), TOL_FEAS):
        pol, snapped = raw, 0
    fams = {f: np.zeros(K) for f in _families(s)}
    for r, row in enumerate(p.rows):
        fams[row["family"]][row["epoch"]] = res.lam[r]
    duals = DualVariables(fams, nonneg)
    thr = pol.throughput()
    diag = dict(iterations=res.iterations, kkt_residual=res.kkt_residual, duality_gap=res.gap,
                barrier_objective=res.objective, mu_path=list(res.mu_path),
                snapped_durations=snapped, n_variables=prob.n, n_constraints=prob.m,
                polished=res.polished,
                wall_time=res.wall_time)
    # stationarity error per variable; bounds how well multipliers pin each power
    with np.errstate(over="ignore", invalid="ignore"):
        grad = -prob.objective + _jacobian(prob, res.x).T @ res.lam - res.beta
    grad = np.where(np.isfinite(grad), np.abs(grad), 0.0)
    stat = {f: np.zeros(K) for f in cls.FIELDS}
    for (name, i), idx in p.index.items():
        stat[name][i] = grad[idx]
    diag["stationarity"] = {f: v.tolist() for f, v in stat.items()}
    feas = feasibility_violation(pol, s)
    diag["feasibility_violation"] = feas
    certified = res.certified and feas <= TOL_FEAS
    return Solution(pol, thr, duals, diag, certified=certified,
                    status="optimal" if certified else "stalled")


def solve_single_relay(s: Scenario, raise_on_stall: bool = False, trace=None,
                       mu_final=None) -> Solution:
    """Maximum data delivered by the deadline through a single relay."""
    if s.relay_count != 1:
        raise ValueError("solve_single_relay needs a single-relay scenario")
    return _solve(s, raise_on_stall, trace, mu_final)


def solve_two_relay(s: Scenario, raise_on_stall: bool = False, trace=None,
                    mu_final=None) -> Solution:
    """Maximum data delivered through two parallel relays using ``s.mode_set``."""
    if s.relay_count != 2:
        raise ValueError("solve_two_relay needs a two-relay scenario")
    return _solve(s, raise_on_stall, trace, mu_final)


def solve(s: Scenario, **kw) -> Solution:
    return solve_single_relay(s, **kw) if s.relay_count == 1 else solve_two_relay(s, **kw)


# --- policy evaluation -------------------------------------------------------------


def _persp(l, c, alpha):
    l = np.asarray(l, dtype=float)
    c = np.asarray(c, dtype=float)
    out = np.zeros_like(l)
    pos = l > 0
    with np.errstate(over="ignore"):
        out[pos] = l[pos] * np.expm1(c[pos] / l[pos]) / alpha
    out[(~pos) & (c > 0)] = np.inf
    return out


def _mac_persp(l, y):
    out = np.zeros_like(l)
    pos = l > 0
    out[pos] = l[pos] * np.log1p(y[pos] / l[pos])
    return out


def epoch_energies(policy, s: Scenario) -> dict:
    """Energy spent by every node in every epoch."""
    g = s.gains
    if isinstance(policy, SingleRelayPolicy):
        return {"S": _persp(policy.l_s, policy.c_s, g.alpha_sr),
                "R": _persp(policy.l_r, policy.c_r, g.alpha_rd)}
    w = 1 / g.alpha_sr2 - 1 / g.alpha_sr1
    bc = w * _persp(policy.l_b, policy.c_br2, 1.0) + _persp(policy.l_b, policy.c_br1 + policy.c_br2,
                                                            g.alpha_sr1)
    src = bc + _persp(policy.l_I, policy.c_sI, g.alpha_sr1) + _persp(policy.l_II, policy.c_sII,
                                                                     g.alpha_sr2)
    r1 = _persp(policy.l_II, policy.c_r1II, g.alpha_r1d) + policy.e_r1m
    r2 = _persp(policy.l_I, policy.c_r2I, g.alpha_r2d) + policy.e_r2m
    return {"S": src, "R1": r1, "R2": r2}


def relay_flows(policy) -> dict:
    """Per-epoch data (inflow, outflow) of each relay buffer."""
    if isinstance(policy, SingleRelayPolicy):
        return {"R": (policy.c_s.copy(), policy.c_r.copy())}
    return {"R1": (policy.c_br1 + policy.c_sI, policy.c_r1II + policy.c_r1m),
            "R2": (policy.c_br2 + policy.c_sII, policy.c_r2I + policy.c_r2m)}


def constraint_slacks(policy, s: Scenario) -> dict:
    """Slack ``rhs - lhs`` of every constraint family, evaluated on the policy.

    Families: ``battery_<node>`` (residual energy at the end of each epoch),
    ``data_<relay>`` (buffer content), ``buffer_<relay>`` (free buffer room),
    ``half_duplex`` (idle time) and, for two relays, ``mac_R1``, ``mac_R2`` and
    ``mac_sum``.  Each value is paired with its natural scale.
    """
    out = {}
    spent = epoch_energies(policy, s)
    for node, e in spent.items():
        out["battery_" + node] = (s.profile.cumulative(node) - np.cumsum(e), _energy_scale(s, node))
    dscale = _data_scale(s)
    for relay, (fin, fout) in relay_flows(policy).items():
        level = np.cumsum(fin) - np.cumsum(fout)
        out["data_" + relay] = (level, dscale)
        room = (s.buffer_capacity - level) if s.finite_buffer else np.full(s.K, np.inf)
        out["buffer_" + relay] = (room, dscale)
    if isinstance(policy, SingleRelayPolicy):
        used = policy.l_s + policy.l_r
    else:
        used = policy.l_b + policy.l_I + policy.l_II + policy.l_m
        g = s.gains
        y1 = g.alpha_r1d * policy.e_r1m
        y2 = g.alpha_r2d * policy.e_r2m
        out["mac_R1"] = (_mac_persp(policy.l_m, y1) - policy.c_r1m, dscale)
        out["mac_R2"] = (_mac_persp(policy.l_m, y2) - policy.c_r2m, dscale)
        out["mac_sum"] = (_mac_persp(policy.l_m, y1 + y2) - policy.c_r1m - policy.c_r2m, dscale)
    out["half_duplex"] = (s.profile.tau - used, max(s.profile.tau.max(), 1e-12))
    return out


def feasibility_violation(policy, s: Scenario) -> float:
    """Largest scaled constraint violation of ``policy`` (0 when feasible)."""
    worst = 0.0
    for name, (slack, scale) in constraint_slacks(policy, s).items():
        v = np.max(-np.asarray(slack)) / scale
        if np.isnan(v):
            v = np.inf
        worst = max(worst, v)
    for f in policy.FIELDS:
        worst = max(worst, float(np.max(-getattr(policy, f))))
    if isinstance(policy, TwoRelayPolicy):
        for l, m in (("l_b", Mode.BROADCAST), ("l_I", Mode.SUCCESSIVE_I),
                     ("l_II", Mode.SUCCESSIVE_II), ("l_m", Mode.MULTI_ACCESS)):
            if m not in s.mode_set:
                for f in (l,) + TwoRelayPolicy.GROUPS[l]:
                    if np.any(getattr(policy, f) != 0):
                        return np.inf
    return max(worst, 0.0)


def residual_energies(policy, s: Scenario) -> dict:
    """Energy left in each battery at the deadline."""
    return {k.split("_", 1)[1]: float(v[0][-1]) for k, v in constraint_slacks(policy, s).items()
            if k.startswith("battery_")}


# --- powers ------------------------------------------------------------------------


@dataclass
class PowerProfile:
    """Per-epoch transmit powers; a mode of zero duration has no entry."""
    epochs: list   # list of dicts: power name -> W
    eta: list      # broadcast power split per epoch, None when no broadcast

    def series(self, name: str) -> np.ndarray:
        return np.array([e.get(name, np.nan) for e in self.epochs])

    def as_dict(self) -> dict:
        return {"epochs": self.epochs, "eta": self.eta}


def recover_powers(sol, s: Scenario) -> PowerProfile:
    """Invert the rate functions of a policy (or Solution) to transmit powers."""
    pol = sol.policy if isinstance(sol, Solution) else sol
    g = s.gains
    epochs, etas = [], []

    def check(l, *cs):
        for c in cs:
            if l == 0 and c > 0:
                raise InconsistentPolicy("positive data amount in a zero-duration mode")

    for i in range(pol.K):
        d = {}
        eta = None
        if isinstance(pol, SingleRelayPolicy):
            check(pol.l_s[i], pol.c_s[i])
            check(pol.l_r[i], pol.c_r[i])
            if pol.l_s[i] > 0:
                d["p_s"] = math.expm1(pol.c_s[i] / pol.l_s[i]) / g.alpha_sr
            if pol.l_r[i] > 0:
                d["p_r"] = math.expm1(pol.c_r[i] / pol.l_r[i]) / g.alpha_rd
        else:
            check(pol.l_b[i], pol.c_br1[i], pol.c_br2[i])
            check(pol.l_I[i], pol.c_sI[i], pol.c_r2I[i])
            check(pol.l_II[i], pol.c_sII[i], pol.c_r1II[i])
            check(pol.l_m[i], pol.c_r1m[i], pol.c_r2m[i], pol.e_r1m[i], pol.e_r2m[i])
            if pol.l_b[i] > 0:
                u1, u2 = pol.c_br1[i] / pol.l_b[i], pol.c_br2[i] / pol.l_b[i]
                d["p_b"] = broadcast_power(u1, u2, g)
                if d["p_b"] > 0:
                    eta = broadcast_split(u1, u2, g, check=False)
            if pol.l_I[i] > 0:
                d["p_sI"] = math.expm1(pol.c_sI[i] / pol.l_I[i]) / g.alpha_sr1
                d["p_r2I"] = math.expm1(pol.c_r2I[i] / pol.l_I[i]) / g.alpha_r2d
            if pol.l_II[i] > 0:
                d["p_sII"] = math.expm1(pol.c_sII[i] / pol.l_II[i]) / g.alpha_sr2
                d["p_r1II"] = math.expm1(pol.c_r1II[i] / pol.l_II[i]) / g.alpha_r1d
            if pol.l_m[i] > 0:
                d["p_r1m"] = pol.e_r1m[i] / pol.l_m[i]
                d["p_r2m"] = pol.e_r2m[i] / pol.l_m[i]
        epochs.append(d)
        etas.append(eta)
    return PowerProfile(epochs, etas)
