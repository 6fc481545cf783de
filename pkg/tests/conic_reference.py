"""Exponential-cone models of both programs, used as an independent reference.

Needs cvxpy (optional test dependency).
"""

import numpy as np
import cvxpy as cp


def _cum(x, i):
    return cp.sum(x[: i + 1])


def single_relay_conic(tau, Es, Er, a_s, a_r, B=np.inf):
    K = len(tau)
    ls, lr, cs, cr = (cp.Variable(K, nonneg=True) for _ in range(4))
    ts, tr = cp.Variable(K), cp.Variable(K)
    cons = [cp.constraints.ExpCone(cs, ls, ts + ls), cp.constraints.ExpCone(cr, lr, tr + lr),
            ls + lr <= np.asarray(tau)]
    for i in range(K):
        cons += [_cum(ts, i) / a_s <= np.cumsum(Es)[i], _cum(tr, i) / a_r <= np.cumsum(Er)[i],
                 _cum(cr, i) <= _cum(cs, i)]
        if np.isfinite(B):
            cons.append(_cum(cs, i) - _cum(cr, i) <= B)
    p = cp.Problem(cp.Maximize(cp.sum(cr)), cons)
    p.solve(solver=cp.CLARABEL)
    return p.value


def two_relay_conic(tau, Es, E1, E2, g, modes, B=np.inf):
    a1, a2, b1, b2 = g
    K = len(tau)
    cons = []
    V = lambda: cp.Variable(K, nonneg=True)
    lb, lI, lII, lm = V(), V(), V(), V()
    cb1, cb2, csI, csII, c1II, c2I, c1m, c2m, e1m, e2m = [V() for _ in range(10)]

    def off(*vs):
        for v in vs:
            cons.append(v == 0)

    if "BC" not in modes:
        off(lb, cb1, cb2)
    if "SR-I" not in modes:
        off(lI, csI, c2I)
    if "SR-II" not in modes:
        off(lII, csII, c1II)
    if "MAC" not in modes:
        off(lm, c1m, c2m, e1m, e2m)

    def E(l, c, a):
        t = cp.Variable(K)
        cons.append(cp.constraints.ExpCone(c, l, t + l))
        return t / a

    w = 1 / a2 - 1 / a1
    eS = w * E(lb, cb2, 1) + E(lb, cb1 + cb2, a1) + E(lI, csI, a1) + E(lII, csII, a2)
    eR1 = E(lII, c1II, b1) + e1m
    eR2 = E(lI, c2I, b2) + e2m
    cons += [c1m <= -cp.rel_entr(lm, lm + b1 * e1m), c2m <= -cp.rel_entr(lm, lm + b2 * e2m),
             c1m + c2m <= -cp.rel_entr(lm, lm + b1 * e1m + b2 * e2m)]
    cs = np.cumsum
    for i in range(K):
        cons += [_cum(eS, i) <= cs(Es)[i], _cum(eR1, i) <= cs(E1)[i], _cum(eR2, i) <= cs(E2)[i]]
        d1 = _cum(c1II + c1m - cb1 - csI, i)
        d2 = _cum(c2I + c2m - cb2 - csII, i)
        cons += [d1 <= 0, d2 <= 0]
        if np.isfinite(B):
            cons += [-d1 <= B, -d2 <= B]
    cons.append(lb + lI + lII + lm <= np.asarray(tau))
    p = cp.Problem(cp.Maximize(cp.sum(c1II + c2I + c1m + c2m)), cons)
    p.solve(solver=cp.CLARABEL)
    res = dict(S=cs(Es)[-1] - cp.sum(eS).value, R1=cs(E1)[-1] - cp.sum(eR1).value,
               R2=cs(E2)[-1] - cp.sum(eR2).value)
    return p.value, res
