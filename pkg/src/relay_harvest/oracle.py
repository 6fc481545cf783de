"""Low-tech reference optimizers for small instances.

Nothing here is fast or clever on purpose; these routines exist to catch
mistakes in the barrier solver.
"""

from __future__ import annotations

import math

import numpy as np

from .model import Scenario, SR_MODES

GRID_BUDGET = 1e8
_CHUNK = 1 << 20
_COARSE_POINTS = 1e7
_ZOOM_HALF_WIDTH = 8


class PreconditionViolated(ValueError):
    pass


class BudgetExceeded(RuntimeError):
    pass


def _two_hop(l, e, alpha):
    """Data a link carries in time ``l`` with energy ``e`` (0 when ``l`` is 0)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(l > 0, l * np.log1p(alpha * e / np.where(l > 0, l, 1.0)), 0.0)


def single_arrival_oracle(s: Scenario, tol: float = 1e-9) -> float:
    """Best two-hop throughput for one relay, one epoch and an unbounded buffer.

    The source rate curve grows with its share ``l_s`` of the deadline and the
    relay curve shrinks, so the optimum sits at their crossing, found by
    bisection.
    """
    if s.relay_count != 1 or s.K != 1 or s.finite_buffer:
        raise PreconditionViolated("needs one relay, one epoch and an unbounded buffer")
    T = s.T
    Es = s.node_total("S")
    Er = s.node_total("R")
    a_s, a_r = s.gains.alpha_sr, s.gains.alpha_rd
    if Es <= 0 or Er <= 0:
        return 0.0

    def gap(ls):
        return float(_two_hop(np.float64(ls), Es, a_s) - _two_hop(np.float64(T - ls), Er, a_r))

    lo, hi = 0.0, T
    # the crossing value moves by at most max slope * interval width
    while hi - lo > tol * 1e-3 * T:
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * T:
            break
    ls = 0.5 * (lo + hi)
    return float(min(_two_hop(np.float64(ls), Es, a_s), _two_hop(np.float64(T - ls), Er, a_r)))


def _deliver(cs, cr, B):
    """Greedy forwarding of per-epoch link capacities through one buffer.

    ``cs`` and ``cr`` are (K, N) arrays of what source and relay could send in
    each epoch.  Sending less than capacity only lowers power, so the result
    is the throughput of a feasible policy.
    """
    buf = np.zeros(cs.shape[1])
    total = np.zeros(cs.shape[1])
    for i in range(cs.shape[0]):
        x = cs[i]
        if math.isfinite(B):
            # the relay drains first, so the source may refill what left
            y = np.minimum(cr[i], buf + x)
            x = np.minimum(x, B - buf + y)
            y = np.minimum(y, buf + x)
        else:
            y = np.minimum(cr[i], buf + x)
        buf = buf + x - y
        total += y
    return total


def _grid_points(n):
    return np.arange(n + 1) / n


def _evaluate_lattice(axes_idx, n, evaluate):
    g = _grid_points(n)
    mesh = np.meshgrid(*[g[a] for a in axes_idx], indexing="ij")
    vals = evaluate([m.ravel() for m in mesh])
    k = int(np.argmax(vals))
    return float(vals[k]), [int(a[i]) for a, i in zip(axes_idx, np.unravel_index(k, mesh[0].shape))]


def _search(dims, n, evaluate, budget):
    count = float(n + 1) ** dims
    if count <= budget:
        g = _grid_points(n)
        shape = (n + 1,) * dims
        best = 0.0
        total = int(count)
        for start in range(0, total, _CHUNK):
            idx = np.unravel_index(np.arange(start, min(start + _CHUNK, total)), shape)
            vals = evaluate([g[k] for k in idx])
            best = max(best, float(np.max(vals)))
        return best
    return _zoom_search(dims, n, evaluate, budget)


def _zoom_search(dims, n, evaluate, budget):
    """Coarse-to-fine search over the same ``n``-step lattice.

    Used when the full lattice is over budget.  A coarse sublattice picks a
    start, then a box of neighbours is scanned around the incumbent while the
    stride halves down to one lattice step.  Only lattice points are visited,
    so the result is still the value of a feasible policy.
    """
    per_level = min(budget, _COARSE_POINTS)
    m = int(per_level ** (1.0 / dims)) - 1
    if m < 2:
        raise BudgetExceeded(f"{dims} grid dimensions do not fit the budget of {budget:.3g}")
    stride = -(-n // m)
    coarse = np.unique(np.append(np.arange(0, n + 1, stride), n))
    best, center = _evaluate_lattice([coarse] * dims, n, evaluate)
    spent = float(coarse.size) ** dims
    offsets = np.arange(-_ZOOM_HALF_WIDTH, _ZOOM_HALF_WIDTH + 1)
    box = float(offsets.size) ** dims
    while True:
        while spent + box <= budget:
            axes = [np.unique(np.clip(c + stride * offsets, 0, n)) for c in center]
            val, idx = _evaluate_lattice(axes, n, evaluate)
            spent += box
            if val <= best:
                break
            best, center = val, idx
        if stride == 1 or spent + box > budget:
            return best
        stride = max(1, stride // 2)


def _single_relay_grid(s: Scenario, n, budget):
    K = s.K
    tau = s.profile.tau
    Es, Er = s.profile.arrivals("S"), s.profile.arrivals("R")
    a_s, a_r = s.gains.alpha_sr, s.gains.alpha_rd
    # per epoch: source share of the epoch; per epoch but the last: fraction of
    # the currently available energy each node spends (the last epoch spends it all)
    dims = K + 2 * (K - 1)

    def evaluate(axes):
        f = axes[:K]
        fs = axes[K:2 * K - 1]
        fr = axes[2 * K - 1:]
        N = f[0].size
        cs = np.empty((K, N))
        cr = np.empty((K, N))
        bank_s = np.zeros(N)
        bank_r = np.zeros(N)
        for i in range(K):
            bank_s = bank_s + Es[i]
            bank_r = bank_r + Er[i]
            if i < K - 1:
                es, er = fs[i] * bank_s, fr[i] * bank_r
            else:
                es, er = bank_s, bank_r
            bank_s = bank_s - es
            bank_r = bank_r - er
            ls = f[i] * tau[i]
            cs[i] = _two_hop(ls, es, a_s)
            cr[i] = _two_hop(tau[i] - ls, er, a_r)
        return _deliver(cs, cr, s.buffer_capacity)

    return _search(dims, n, evaluate, budget)


def _two_relay_sr_grid(s: Scenario, n, budget):
    T = s.T
    Es, E1, E2 = s.node_total("S"), s.node_total("R1"), s.node_total("R2")
    g = s.gains

    def evaluate(axes):
        f, share = axes
        lI, lII = f * T, (1.0 - f) * T
        # phase I: S -> R1 while R2 -> D; phase II: S -> R2 while R1 -> D
        c_sI = _two_hop(lI, share * Es, g.alpha_sr1)
        c_sII = _two_hop(lII, (1.0 - share) * Es, g.alpha_sr2)
        c_r2I = _two_hop(lI, E2, g.alpha_r2d)
        c_r1II = _two_hop(lII, E1, g.alpha_r1d)
        # the source can always send less, so a finite buffer never binds here:
        # whatever is not forwarded need not be sent
        return np.minimum(c_r1II, c_sI) + np.minimum(c_r2I, c_sII)

    return _search(2, n, evaluate, budget)


def grid_search_throughput(s: Scenario, n: int, budget: float = GRID_BUDGET) -> float:
    """Best throughput over an ``n``-step grid of duration splits and energy spends.

    Every grid point is a feasible policy, so the result bounds the optimum
    from below.  When ``(n + 1) ** dims`` fits the budget the lattice is
    enumerated in full; grids at ``n`` and ``2n`` are then nested, so doubling
    ``n`` never lowers the result.  Larger lattices are searched coarse to fine.
    """
    if n < 1:
        raise ValueError("grid resolution must be at least 1")
    if s.relay_count == 1:
        return _single_relay_grid(s, n, budget)
    if s.K != 1 or s.mode_set != SR_MODES:
        raise PreconditionViolated("two-relay grid search covers one epoch with successive relaying only")
    return _two_relay_sr_grid(s, n, budget)


__all__ = ["PreconditionViolated", "BudgetExceeded", "single_arrival_oracle",
           "grid_search_throughput", "GRID_BUDGET"]
