"""Rate, power and energy functions for the point-to-point, broadcast and
multi-access links.  Everything is in nats (natural logarithm).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import ChannelGains


class DomainError(ValueError):
    pass


class DegenerateBroadcast(ValueError):
    pass


@dataclass(frozen=True)
class ValueGrad:
    value: float
    partials: tuple  # ((variable-id, d value / d variable), ...)

    def __float__(self) -> float:
        return float(self.value)

    def partial(self, var: str) -> float:
        for name, d in self.partials:
            if name == var:
                return d
        raise KeyError(var)


def _nonneg(**kw):
    for k, v in kw.items():
        if v < 0 or math.isnan(v):
            raise DomainError(f"{k} must be non-negative, got {v}")


def link_rate(alpha: float, p: float) -> float:
    """Shannon rate ``ln(1 + alpha p)`` of a unit-noise link."""
    if not alpha > 0:
        raise DomainError(f"gain must be positive, got {alpha}")
    _nonneg(p=p)
    return math.log1p(alpha * p)


def link_rate_grad(alpha: float, p: float) -> ValueGrad:
    r = link_rate(alpha, p)
    return ValueGrad(r, (("p", alpha / (1.0 + alpha * p)),))


def rate_power(alpha: float, rate: float) -> float:
    """Power needed for ``rate`` nats/s on a link of gain ``alpha``."""
    _nonneg(rate=rate)
    return math.expm1(rate) / alpha


def epoch_energy(l: float, c: float, alpha: float) -> ValueGrad:
    """Energy ``(l/alpha)(e^{c/l} - 1)`` to send ``c`` nats in ``l`` seconds.

    This is the perspective of ``(e^c - 1)/alpha``: it is 0 at the origin and
    +inf for ``l == 0 < c``.  Partials are reported only for ``l > 0``.
    """
    _nonneg(l=l, c=c)
    if not alpha > 0:
        raise DomainError(f"gain must be positive, got {alpha}")
    if l == 0:
        return ValueGrad(0.0 if c == 0 else math.inf, ())
    u = c / l
    try:
        eu = math.exp(u)
    except OverflowError:
        return ValueGrad(math.inf, ())
    value = l * math.expm1(u) / alpha
    d_l = (math.expm1(u) - u * eu) / alpha
    d_c = eu / alpha
    return ValueGrad(value, (("l", d_l), ("c", d_c)))


def _check_order(g: ChannelGains):
    if g.alpha_sr1 < g.alpha_sr2:
        raise DomainError("broadcast formulas need alpha_sr1 >= alpha_sr2 (canonical labels)")


def broadcast_power(c1: float, c2: float, g: ChannelGains) -> float:
    """Least source power supporting rates ``c1`` to R1 and ``c2`` to R2 on the
    degraded broadcast channel (R1 is the stronger receiver)."""
    return broadcast_power_grad(c1, c2, g).value


def broadcast_power_grad(c1: float, c2: float, g: ChannelGains) -> ValueGrad:
    _nonneg(c1=c1, c2=c2)
    _check_order(g)
    a1, a2 = g.alpha_sr1, g.alpha_sr2
    w = 1.0 / a2 - 1.0 / a1
    e2 = math.exp(c2)
    e12 = math.exp(c1 + c2)
    # w*(e^{c2}-1) + (e^{c1+c2}-1)/a1 is the same expression, arranged without cancellation
    value = w * math.expm1(c2) + math.expm1(c1 + c2) / a1
    return ValueGrad(value, (("c1", e12 / a1), ("c2", w * e2 + e12 / a1)))


def broadcast_energy(l: float, c1: float, c2: float, g: ChannelGains) -> float:
    """Perspective ``l * p_b(c1/l, c2/l)``: energy of a broadcast of duration ``l``."""
    _nonneg(l=l, c1=c1, c2=c2)
    if l == 0:
        return 0.0 if c1 == 0 and c2 == 0 else math.inf
    return l * broadcast_power(c1 / l, c2 / l, g)


def broadcast_split(c1: float, c2: float, g: ChannelGains, check: bool = True) -> float:
    """Fraction ``eta`` of the broadcast power spent on the R1 message."""
    p = broadcast_power(c1, c2, g)
    if p <= 0:
        raise DegenerateBroadcast("zero broadcast power has no power split")
    eta = math.expm1(c1) / (g.alpha_sr1 * p)
    if check:
        a1, a2 = g.alpha_sr1, g.alpha_sr2
        r1 = math.log1p(eta * a1 * p)
        r2 = math.log1p((1 - eta) * a2 * p / (eta * a2 * p + 1))
        scale = max(1.0, c1, c2)
        if abs(r1 - c1) > 1e-10 * scale or abs(r2 - c2) > 1e-10 * scale:
            raise DegenerateBroadcast(f"power split does not reproduce the rates ({r1}, {r2})")
    return eta


def mac_rate_bounds(p1: float, p2: float, g: ChannelGains) -> tuple:
    """``(ln(1+a1 p1), ln(1+a2 p2), ln(1+a1 p1+a2 p2))`` for the relay-to-destination MAC."""
    _nonneg(p1=p1, p2=p2)
    a1, a2 = g.alpha_r1d, g.alpha_r2d
    return (math.log1p(a1 * p1), math.log1p(a2 * p2), math.log1p(a1 * p1 + a2 * p2))


def mac_rate_bounds_grad(p1: float, p2: float, g: ChannelGains) -> tuple:
    r1, r2, rs = mac_rate_bounds(p1, p2, g)
    a1, a2 = g.alpha_r1d, g.alpha_r2d
    d1 = a1 / (1 + a1 * p1)
    d2 = a2 / (1 + a2 * p2)
    ds = 1 / (1 + a1 * p1 + a2 * p2)
    return (
        ValueGrad(r1, (("p1", d1), ("p2", 0.0))),
        ValueGrad(r2, (("p1", 0.0), ("p2", d2))),
        ValueGrad(rs, (("p1", a1 * ds), ("p2", a2 * ds))),
    )


def mac_perspective(l: float, y: float) -> float:
    """``l * ln(1 + y/l)``: data deliverable in ``l`` seconds with received energy ``y``."""
    _nonneg(l=l, y=y)
    if l == 0:
        return 0.0
    return l * math.log1p(y / l)
