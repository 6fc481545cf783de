"""Primal log-barrier interior-point method for the throughput programs.

The programs handled here have the form::

    maximize    c @ x
    subject to  A_exp @ P(x) + A_log @ Q(x) + A_lin @ x <= b
                x >= 0

where every entry of ``P`` is an exponential perspective atom
``l * expm1(u / l)`` and every entry of ``Q`` a logarithmic perspective atom
``l * log1p(u / l)``, with ``l`` a single coordinate of ``x`` and ``u`` a
non-negative linear form ``W @ x``.  Convexity requires ``A_exp >= 0`` and
``A_log <= 0``; both atom families have rank-one Hessians, which keeps the
Newton system cheap to assemble.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

log = logging.getLogger(__name__)


class SolverStalled(RuntimeError):
    """Raised when the barrier method misses its tolerances.

    ``result`` carries the best point found, flagged as not certified.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass
class StandardForm:
    objective: np.ndarray          # (n,) maximize objective @ x
    exp_l: np.ndarray              # (na,) int index of the duration variable of each exp atom
    exp_w: np.ndarray              # (na, n) inner linear form of each exp atom
    log_l: np.ndarray              # (nb,)
    log_w: np.ndarray              # (nb, n)
    A_exp: np.ndarray              # (m, na)
    A_log: np.ndarray              # (m, nb)
    A_lin: np.ndarray              # (m, n)
    b: np.ndarray                  # (m,)
    col_scale: np.ndarray = None   # (n,) natural magnitude of each variable
    row_scale: np.ndarray = None   # (m,) natural magnitude of each constraint
    obj_scale: float = 1.0

    def __post_init__(self):
        n = self.objective.size
        if self.col_scale is None:
            self.col_scale = np.ones(n)
        if self.row_scale is None:
            self.row_scale = np.ones(self.b.size)
        self._El = np.zeros((self.exp_l.size, n))
        self._El[np.arange(self.exp_l.size), self.exp_l] = 1.0
        self._Ll = np.zeros((self.log_l.size, n))
        self._Ll[np.arange(self.log_l.size), self.log_l] = 1.0

    @property
    def n(self) -> int:
        return self.objective.size

    @property
    def m(self) -> int:
        return self.b.size

    # -- evaluation -------------------------------------------------------------

    def constraint_values(self, x: np.ndarray) -> np.ndarray:
        """``g(x)``; feasible points have ``g(x) <= b``."""
        P, _, _, _ = self._exp_atoms(x, derivatives=False)
        Q, _, _, _ = self._log_atoms(x, derivatives=False)
        return self.A_exp @ P + self.A_log @ Q + self.A_lin @ x

    def _exp_atoms(self, x, derivatives=True):
        l = x[self.exp_l]
        u = self.exp_w @ x
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            r = np.where(u == 0, 0.0, u / l)
            em1 = np.expm1(r)
            P = l * em1
            if not derivatives:
                return P, None, None, None
            er = em1 + 1.0
            d_l = em1 - r * er
            d_u = er
            kappa = er / l
        G = d_l[:, None] * self._El + d_u[:, None] * self.exp_w
        V = (-r)[:, None] * self._El + self.exp_w
        return P, G, V, kappa

    def _log_atoms(self, x, derivatives=True):
        l = x[self.log_l]
        u = self.log_w @ x
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            r = np.where(u == 0, 0.0, u / l)
            lg = np.log1p(r)
            Q = l * lg
            if not derivatives:
                return Q, None, None, None
            inv = 1.0 / (1.0 + r)
            d_l = lg - r * inv
            d_u = inv
            kappa = -inv * inv / l
        G = d_l[:, None] * self._Ll + d_u[:, None] * self.log_w
        V = r[:, None] * self._Ll - self.log_w
        return Q, G, V, kappa


@dataclass
class BarrierResult:
    x: np.ndarray
    lam: np.ndarray        # constraint multipliers, original units
    beta: np.ndarray       # non-negativity multipliers
    objective: float
    kkt_residual: float    # stationarity, scaled variables
    gap: float             # sum of complementarity products
    iterations: int
    mu_path: list = field(default_factory=list)
    certified: bool = False
    status: str = "optimal"
    wall_time: float = 0.0
    log: list = field(default_factory=list)
    x_prev: np.ndarray = None   # centering point one barrier stage earlier
    polished: bool = False


def _barrier_value(prob: StandardForm, x, t):
    if np.any(x <= 0):
        return np.inf, None
    g = prob.constraint_values(x)
    s = prob.b - g
    if not np.all(np.isfinite(s)) or np.any(s <= 0):
        return np.inf, None
    val = -t * (prob.objective @ x) - np.sum(np.log(s)) - np.sum(np.log(x))
    return val, s


def _newton_system(prob: StandardForm, x, s, t):
    P, Ge, Ve, ke = prob._exp_atoms(x)
    Q, Gl, Vl, kl = prob._log_atoms(x)
    J = prob.A_exp @ Ge + prob.A_log @ Gl + prob.A_lin
    inv_s = 1.0 / s
    grad = -t * prob.objective + J.T @ inv_s - 1.0 / x
    we = (prob.A_exp.T @ inv_s) * ke
    wl = (prob.A_log.T @ inv_s) * kl
    Js = J * inv_s[:, None]
    H = Js.T @ Js
    if we.size:
        H += (Ve * we[:, None]).T @ Ve
    if wl.size:
        H += (Vl * wl[:, None]).T @ Vl
    H[np.diag_indices_from(H)] += 1.0 / (x * x)
    return grad, H


def _solve_newton(H, grad):
    d = 1.0 / np.sqrt(np.maximum(np.diag(H), 1e-300))
    Hs = H * d[:, None] * d[None, :]
    rhs = -grad * d
    try:
        cf = scipy.linalg.cho_factor(Hs, lower=True, check_finite=False)
        y = scipy.linalg.cho_solve(cf, rhs, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        Hs[np.diag_indices_from(Hs)] += 1e-12
        y = scipy.linalg.solve(Hs, rhs, assume_a="sym", check_finite=False)
    return y * d


def solve_barrier(prob: StandardForm, x0: np.ndarray, *, mu0: float = 1.0, mu_final: float = 1e-9,
                  factor: float = 10.0, newton_tol: float = 1e-11, max_newton: int = 200,
                  max_total: int = 4000, kkt_tol: float = 1e-7, gap_tol: float = 1e-6,
                  raise_on_stall: bool = False, trace=None) -> BarrierResult:
    """Follow the central path from ``x0`` (strictly feasible) down to ``mu_final``.

    ``mu`` is the barrier weight relative to the objective, ``t = 1/mu``.
    Multipliers are read off the barrier terms at the final centering point.
    ``trace`` is an optional callable receiving one text line per iteration.
    """
    t0 = time.perf_counter()
    x = np.array(x0, dtype=float)
    t = 1.0 / mu0
    F, s = _barrier_value(prob, x, t)
    if not np.isfinite(F):
        raise ValueError("starting point is not strictly feasible")
    lines = []

    def emit(msg):
        lines.append(msg)
        if trace is not None:
            trace(msg)
        log.debug(msg)

    total = 0
    mu_path = []
    stalled = False
    x_prev = x.copy()
    while True:
        for _ in range(max_newton):
            grad, H = _newton_system(prob, x, s, t)
            dx = _solve_newton(H, grad)
            dec2 = -grad @ dx
            if not np.isfinite(dec2):
                stalled = True
                break
            if dec2 / 2 <= newton_tol:
                break
            total += 1
            neg = dx < 0
            step = 1.0
            if np.any(neg):
                step = min(1.0, 0.99 * np.min(-x[neg] / dx[neg]))
            slope = grad @ dx
            accepted = False
            for _ in range(60):
                xn = x + step * dx
                Fn, sn = _barrier_value(prob, xn, t)
                if np.isfinite(Fn) and (Fn <= F + 0.01 * step * slope
                                        or (dec2 < 1e-4 and Fn <= F + 1e-12 * abs(F))):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                # no further progress possible at this precision
                break
            x, F, s = xn, Fn, sn
            emit(f"t={t:.3e} it={total} dec2={dec2:.3e} step={step:.3e} obj={prob.objective @ x:.12g}")
            if total >= max_total:
                stalled = True
                break
        mu_path.append(1.0 / t)
        if stalled or 1.0 / t <= mu_final * (1 + 1e-12):
            break
        x_prev = x.copy()
        t *= factor
        F, s = _barrier_value(prob, x, t)

    lam = 1.0 / (t * s)
    beta = 1.0 / (t * x)
    grad, _ = _newton_system(prob, x, s, t)
    resid_x = grad / t
    resid_z = resid_x * prob.col_scale / prob.obj_scale
    kkt = float(np.max(np.abs(resid_z))) if resid_z.size else 0.0
    gap = float(lam @ s + beta @ x)
    obj = float(prob.objective @ x)
    certified = (not stalled) and kkt <= kkt_tol and gap <= gap_tol * (1 + abs(obj))
    status = "optimal" if certified else "stalled"
    res = BarrierResult(x=x, lam=lam, beta=beta, objective=obj, kkt_residual=kkt, gap=gap,
                        iterations=total, mu_path=mu_path, certified=certified, status=status,
                        wall_time=time.perf_counter() - t0, log=lines, x_prev=x_prev)
    if not certified and raise_on_stall:
        raise SolverStalled(f"barrier method stalled (kkt={kkt:.3e}, gap={gap:.3e})", res)
    return res


# --- active-set refinement ---------------------------------------------------------


def _lagrangian_hessian(prob: StandardForm, x, lam):
    """Hessian of ``lam @ g(x)`` (the objective is linear)."""
    n = prob.n
    H = np.zeros((n, n))
    for A, atoms, l_idx in ((prob.A_exp, prob._exp_atoms, prob.exp_l),
                            (prob.A_log, prob._log_atoms, prob.log_l)):
        if A.shape[1] == 0:
            continue
        w = A.T @ lam
        live = (w != 0) & (x[l_idx] > 0)
        if not np.any(live):
            continue
        _, _, V, kappa = atoms(x)
        c = w[live] * kappa[live]
        V = V[live]
        H += (V * c[:, None]).T @ V
    return H


def _jacobian(prob: StandardForm, x):
    _, Ge, _, _ = prob._exp_atoms(x)
    _, Gl, _, _ = prob._log_atoms(x)
    return prob.A_exp @ Ge + prob.A_log @ Gl + prob.A_lin


def polish(prob: StandardForm, res: BarrierResult, *, ratio: float = 2.0, max_iter: int = 60,
           tol: float = 1e-12, feas_tol: float = 1e-11, dual_tol: float = 1e-9,
           max_rounds: int = 8):
    """Sharpen a barrier solution by solving the KKT system on its active set.

    Constraints and bounds whose slack shrank by at least ``ratio`` over the
    last barrier stage start out active and are imposed with equality.  The
    resulting system is solved by least-squares Newton.  A wrong guess shows
    up as a negative multiplier or a violated inactive row; the set is then
    corrected and the solve repeated.  Returns a new :class:`BarrierResult`,
    or ``None`` when no consistent active set is found.
    """
    if res.x_prev is None:
        log.debug("polish rejected: no previous stage")
        return None
    # a wrong first guess usually shows up as a stalled Newton solve; other
    # thresholds split the weakly active constraints differently
    for r in (ratio, 8.0, 1.3):
        out = _polish_from(prob, res, r, max_iter, tol, feas_tol, dual_tol, max_rounds)
        if out is not None:
            return out
    return None


def _polish_from(prob, res, ratio, max_iter, tol, feas_tol, dual_tol, max_rounds):
    s_now = prob.b - prob.constraint_values(res.x)
    s_old = prob.b - prob.constraint_values(res.x_prev)
    with np.errstate(divide="ignore", invalid="ignore"):
        act_rows = np.where(s_old > 0, s_old / s_now, 0.0) >= ratio
        fix = np.where(res.x_prev > 0, res.x_prev / res.x, 0.0) >= ratio
    # each inner variable of an atom points at the duration it rides on
    owner = np.full(prob.n, -1)
    for l_idx, W in ((prob.exp_l, prob.exp_w), (prob.log_l, prob.log_w)):
        for k, l in enumerate(l_idx):
            owner[np.flatnonzero(W[k])] = l
    for _ in range(max_rounds):
        fix = fix | (owner >= 0) & fix[np.maximum(owner, 0)]
        out, verdict = _polish_once(prob, res, fix, act_rows, max_iter, tol, feas_tol, dual_tol)
        if out is not None:
            return out
        kind, idx = verdict
        log.debug("polish round rejected: %s", kind)
        kind = kind.split()[0]
        if kind == "convergence":
            kind, idx = idx
        if kind == "bound":
            fix[idx] = False
            fix[owner[idx]] = fix[owner[idx]] if owner[idx] < 0 else False
        elif kind == "row":
            act_rows[idx] = False
        elif kind == "violated":
            act_rows[idx] = True
        elif kind == "negative":
            fix[idx] = True
        else:
            return None
    return None


def _zero_block(prob, fix, j):
    """Duration and inner variables of the zero block containing ``j``, if any."""
    for l_idx, W in ((prob.exp_l, prob.exp_w), (prob.log_l, prob.log_w)):
        for k, l in enumerate(l_idx):
            if l == j or W[k, j] != 0:
                if not fix[l]:
                    return None
                inner = set()
                for l2, W2 in ((prob.exp_l, prob.exp_w), (prob.log_l, prob.log_w)):
                    for k2, ll in enumerate(l2):
                        if ll == l:
                            inner.update(np.flatnonzero(W2[k2]).tolist())
                return int(l), np.array(sorted(inner), dtype=int)
    return None


def _block_dual_ok(prob, lam, l, inner, dual_tol):
    """Whether the Lagrangian cannot grow along any ray out of a zero block.

    At the origin the perspective atoms are not differentiable, so a single
    gradient gives only one of many valid bound multipliers.  The block is
    optimal at zero iff the (positively homogeneous) Lagrangian is
    non-positive with the duration set to one.
    """
    scale = prob.col_scale[l] / prob.obj_scale

    def neg_h(v):
        x = np.zeros(prob.n)
        x[l] = 1.0
        x[inner] = v
        with np.errstate(over="ignore", invalid="ignore"):
            val = prob.objective @ x - lam @ (prob.constraint_values(x) - prob.A_lin @ np.zeros(prob.n))
            g = prob.objective - _jacobian(prob, x).T @ lam
        if not np.isfinite(val):
            return 1e30, np.zeros(inner.size)
        return -val * scale, -g[inner] * scale

    v0 = np.full(inner.size, 1e-3)
    best = -neg_h(np.zeros(inner.size))[0]
    r = scipy.optimize.minimize(neg_h, v0, jac=True, method="L-BFGS-B",
                                bounds=[(0.0, None)] * inner.size,
                                options={"maxiter": 200, "ftol": 1e-15, "gtol": 1e-12})
    best = max(best, -r.fun)
    return best <= 10 * dual_tol


def _polish_once(*args):
    # trial points may sit on the boundary of the atoms' domain
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _polish_body(*args)


def _polish_body(prob, res, fix, act_rows, max_iter, tol, feas_tol, dual_tol):
    free = ~fix
    A_idx = np.flatnonzero(act_rows)
    F_idx = np.flatnonzero(free)
    nF, nA = F_idx.size, A_idx.size

    x = res.x.copy()
    x[fix] = 0.0
    lam = np.zeros(prob.m)
    lam[A_idx] = res.lam[A_idx]

    cs = prob.col_scale
    rs = prob.row_scale
    os_ = prob.obj_scale
    row_w = np.concatenate([cs[F_idx] / os_, 1.0 / rs[A_idx]])
    col_w = np.concatenate([cs[F_idx], os_ / rs[A_idx]])

    def residual(x, lam):
        J = _jacobian(prob, x)
        r1 = (-prob.objective + J[A_idx].T @ lam[A_idx])[F_idx]
        r2 = prob.constraint_values(x)[A_idx] - prob.b[A_idx]
        return np.concatenate([r1, r2]) * row_w, J

    R, J = residual(x, lam)
    if not np.all(np.isfinite(R)):
        return None, ("start", None)
    history = []
    for it in range(max_iter):
        if np.max(np.abs(R), initial=0.0) <= tol:
            break
        # no progress at all over several steps means the guessed set is wrong
        history.append(np.linalg.norm(R))
        if it >= 20 and history[-1] > 0.999 * history[-13]:
            break
        H = _lagrangian_hessian(prob, x, lam)
        M = np.zeros((nF + nA, nF + nA))
        M[:nF, :nF] = H[np.ix_(F_idx, F_idx)]
        M[:nF, nF:] = J[np.ix_(A_idx, F_idx)].T
        M[nF:, :nF] = J[np.ix_(A_idx, F_idx)]
        Ms = M * row_w[:, None] * col_w[None, :]
        step = scipy.linalg.lstsq(Ms, -R, check_finite=False, lapack_driver="gelsd")[0] * col_w
        dx, dl = step[:nF], step[nF:]
        merit = np.linalg.norm(R)
        log.debug("polish newton: residual %.3e  |dx| %.3e", merit, np.linalg.norm(dx / cs[F_idx]))
        a = 1.0
        for _ in range(40):
            xn = x.copy()
            xn[F_idx] += a * dx
            ln = lam.copy()
            ln[A_idx] += a * dl
            if np.all(xn[F_idx] > 0):
                Rn, Jn = residual(xn, ln)
                if np.all(np.isfinite(Rn)) and np.linalg.norm(Rn) < merit:
                    break
            a *= 0.5
        else:
            if merit <= 1e3 * tol:
                break   # rounding floor
            # a free variable is being pushed through zero
            hit = F_idx[(x[F_idx] + dx < 0)]
            if hit.size:
                return None, ("negative", hit[np.argmin((x[hit] / cs[hit]))])
            return None, ("line search", None)
        x, lam, R, J = xn, ln, Rn, Jn
    if np.max(np.abs(R), initial=0.0) > 1e3 * tol:
        # the guessed set is inconsistent; release its worst equation
        j = int(np.argmax(np.abs(R)))
        if j < nF:
            return None, ("convergence %.3g, fixing" % np.max(np.abs(R)), ("negative", int(F_idx[j])))
        return None, ("convergence %.3g, dropping" % np.max(np.abs(R)), ("row", int(A_idx[j - nF])))

    # primal and dual checks on the full problem
    s = prob.b - prob.constraint_values(x)
    viol = s / rs
    if np.any(viol < -feas_tol):
        return None, ("violated", int(np.argmin(viol)))
    lam_s = lam * rs / os_
    if np.any(lam_s[A_idx] < -dual_tol):
        return None, ("row", int(A_idx[np.argmin(lam_s[A_idx])]))
    lam = np.maximum(lam, 0.0)
    Jfull = _jacobian(prob, x)
    with np.errstate(invalid="ignore"):
        beta = -prob.objective + Jfull.T @ lam
    beta = np.where(free | ~np.isfinite(beta), 0.0, beta)
    beta_s = beta * cs / os_
    for j in np.argsort(beta_s):
        if beta_s[j] >= -dual_tol:
            break
        blk = _zero_block(prob, fix, j)
        if blk is None or not _block_dual_ok(prob, lam, *blk, dual_tol):
            return None, ("bound", int(j))
    beta = np.maximum(beta, 0.0)
    obj = float(prob.objective @ x)
    if obj < res.objective - 1e-9 * (1 + abs(res.objective)):
        return None, ("objective", None)
    grad = -prob.objective + np.where(np.isfinite(Jfull), Jfull, 0.0).T @ lam - beta
    kkt = float(np.max(np.abs(grad * cs / os_), initial=0.0))
    gap = float(lam @ np.maximum(s, 0.0) + beta @ x)
    out = BarrierResult(x=x, lam=lam, beta=beta, objective=obj, kkt_residual=kkt, gap=gap,
                        iterations=res.iterations, mu_path=res.mu_path, certified=True,
                        status="optimal", wall_time=res.wall_time, log=res.log,
                        x_prev=res.x_prev, polished=True)
    return out, None
