"""Problem-instance types for energy-harvesting two-hop relay networks.

All data amounts are in nats, energies in Joules, durations in seconds and
powers in Watts.  Channel gains are linear power gains ``|h|^2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

# relative tolerance on sum(tau) == deadline
_DEADLINE_RTOL = 1e-12


class ScenarioError(ValueError):
    """Base class for rejected problem instances."""


class NonPositiveDuration(ScenarioError):
    pass


class NegativeEnergy(ScenarioError):
    pass


class GainNotPositive(ScenarioError):
    pass


class LengthMismatch(ScenarioError):
    pass


class EmptyModeSet(ScenarioError):
    pass


class Mode(str, Enum):
    BROADCAST = "BC"
    MULTI_ACCESS = "MAC"
    SUCCESSIVE_I = "SR-I"
    SUCCESSIVE_II = "SR-II"

    @classmethod
    def parse(cls, name: str) -> "Mode":
        key = name.strip().upper().replace("_", "-").replace(" ", "-")
        aliases = {
            "BC": cls.BROADCAST,
            "BROADCAST": cls.BROADCAST,
            "MAC": cls.MULTI_ACCESS,
            "MA": cls.MULTI_ACCESS,
            "MULTI-ACCESS": cls.MULTI_ACCESS,
            "MULTIACCESS": cls.MULTI_ACCESS,
            "SR-I": cls.SUCCESSIVE_I,
            "SRI": cls.SUCCESSIVE_I,
            "SR1": cls.SUCCESSIVE_I,
            "SUCCESSIVE-I": cls.SUCCESSIVE_I,
            "SUCCESSIVEI": cls.SUCCESSIVE_I,
            "SR-II": cls.SUCCESSIVE_II,
            "SRII": cls.SUCCESSIVE_II,
            "SR2": cls.SUCCESSIVE_II,
            "SUCCESSIVE-II": cls.SUCCESSIVE_II,
            "SUCCESSIVEII": cls.SUCCESSIVE_II,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown transmission mode {name!r}") from None


ALL_MODES = frozenset(Mode)
SR_MODES = frozenset({Mode.SUCCESSIVE_I, Mode.SUCCESSIVE_II})

# shorthand mode-set names used by the CLI and sweep specs
MODE_SET_ALIASES = {
    "sr": SR_MODES,
    "bc": SR_MODES | {Mode.BROADCAST},
    "mac": SR_MODES | {Mode.MULTI_ACCESS},
    "all": ALL_MODES,
}


def parse_mode_set(spec: str | Iterable[str]) -> frozenset:
    """Parse ``"sr"``, ``"bc+sr"``, ``"all"`` or an iterable of mode names."""
    if isinstance(spec, str):
        key = spec.strip().lower()
        if key in MODE_SET_ALIASES:
            return MODE_SET_ALIASES[key]
        parts = [p for p in key.replace(",", "+").split("+") if p]
        modes: set = set()
        for p in parts:
            if p in ("sr", "sr-only"):
                modes |= SR_MODES
            else:
                modes.add(Mode.parse(p))
        return frozenset(modes)
    return frozenset(m if isinstance(m, Mode) else Mode.parse(m) for m in spec)


def mode_set_label(modes: Iterable[Mode]) -> str:
    order = [Mode.BROADCAST, Mode.MULTI_ACCESS, Mode.SUCCESSIVE_I, Mode.SUCCESSIVE_II]
    modes = set(modes)
    return "+".join(m.value for m in order if m in modes)


@dataclass(frozen=True)
class ChannelGains:
    alpha_sr1: float
    alpha_sr2: float
    alpha_r1d: float
    alpha_r2d: float

    # single-relay view
    @property
    def alpha_sr(self) -> float:
        return self.alpha_sr1

    @property
    def alpha_rd(self) -> float:
        return self.alpha_r1d

    def swapped(self) -> "ChannelGains":
        return ChannelGains(self.alpha_sr2, self.alpha_sr1, self.alpha_r2d, self.alpha_r1d)

    def scaled(self, factor: float) -> "ChannelGains":
        return ChannelGains(*(factor * a for a in self.as_tuple()))

    def as_tuple(self) -> tuple:
        return (self.alpha_sr1, self.alpha_sr2, self.alpha_r1d, self.alpha_r2d)


@dataclass(frozen=True)
class EnergyProfile:
    epoch_durations: tuple
    arrivals_s: tuple
    arrivals_r1: tuple
    arrivals_r2: tuple = ()

    @property
    def K(self) -> int:
        return len(self.epoch_durations)

    @property
    def deadline(self) -> float:
        return math.fsum(self.epoch_durations)

    @property
    def tau(self) -> np.ndarray:
        return np.asarray(self.epoch_durations, dtype=float)

    def arrivals(self, node: str) -> np.ndarray:
        """Arrival vector for node ``"S"``, ``"R1"`` (alias ``"R"``) or ``"R2"``."""
        src = {"S": self.arrivals_s, "R": self.arrivals_r1, "R1": self.arrivals_r1,
               "R2": self.arrivals_r2}[node]
        out = np.zeros(self.K)
        out[: len(src)] = src
        return out

    def cumulative(self, node: str) -> np.ndarray:
        return np.cumsum(self.arrivals(node))

    def epoch_starts(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.tau)[:-1]])

    def scaled_energy(self, factor: float) -> "EnergyProfile":
        return replace(
            self,
            arrivals_s=tuple(factor * e for e in self.arrivals_s),
            arrivals_r1=tuple(factor * e for e in self.arrivals_r1),
            arrivals_r2=tuple(factor * e for e in self.arrivals_r2),
        )


@dataclass(frozen=True)
class Scenario:
    gains: ChannelGains
    profile: EnergyProfile
    buffer_capacity: float = math.inf
    relay_count: int = 1
    mode_set: frozenset = field(default=ALL_MODES)

    @property
    def K(self) -> int:
        return self.profile.K

    @property
    def T(self) -> float:
        return self.profile.deadline

    @property
    def finite_buffer(self) -> bool:
        return math.isfinite(self.buffer_capacity)

    def nodes(self) -> tuple:
        return ("S", "R") if self.relay_count == 1 else ("S", "R1", "R2")

    def node_total(self, node: str) -> float:
        return float(self.profile.arrivals(node).sum())

    def with_modes(self, modes) -> "Scenario":
        return validate_scenario(replace(self, mode_set=parse_mode_set(modes)))

    def with_arrival(self, node: str, epoch: int, value: float) -> "Scenario":
        """Copy with one arrival entry replaced (``epoch`` is 0-based)."""
        attr = {"S": "arrivals_s", "R": "arrivals_r1", "R1": "arrivals_r1",
                "R2": "arrivals_r2"}[node]
        vec = list(self.profile.arrivals(node))
        vec[epoch] = value
        return validate_scenario(replace(self, profile=replace(self.profile, **{attr: tuple(vec)})))


def _as_floats(values: Sequence, name: str) -> tuple:
    try:
        out = tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ScenarioError(f"{name} must be a list of numbers") from None
    if any(math.isnan(v) for v in out):
        raise ScenarioError(f"{name} contains NaN")
    return out


def _has_data_path(modes: frozenset) -> bool:
    r1_in = modes & {Mode.BROADCAST, Mode.SUCCESSIVE_I}
    r1_out = modes & {Mode.MULTI_ACCESS, Mode.SUCCESSIVE_II}
    r2_in = modes & {Mode.BROADCAST, Mode.SUCCESSIVE_II}
    r2_out = modes & {Mode.MULTI_ACCESS, Mode.SUCCESSIVE_I}
    return bool((r1_in and r1_out) or (r2_in and r2_out))


_SWAP_MODE = {
    Mode.SUCCESSIVE_I: Mode.SUCCESSIVE_II,
    Mode.SUCCESSIVE_II: Mode.SUCCESSIVE_I,
    Mode.BROADCAST: Mode.BROADCAST,
    Mode.MULTI_ACCESS: Mode.MULTI_ACCESS,
}


def validate_scenario(raw: Scenario) -> Scenario:
    """Check a problem instance and return its canonical form.

    Canonicalization pads short arrival lists with zeros, relabels the relays
    of a two-relay instance so that ``alpha_sr1 >= alpha_sr2`` (successive
    relaying phases are relabeled with them) and clears the mode set and the
    second relay of a single-relay instance.  Validation is idempotent.
    """
    prof = raw.profile
    tau = _as_floats(prof.epoch_durations, "epoch_durations")
    K = len(tau)
    if K == 0:
        raise LengthMismatch("at least one epoch is required")
    for i, t in enumerate(tau):
        if not (t > 0) or not math.isfinite(t):
            raise NonPositiveDuration(f"epoch {i} has non-positive duration {t}")

    arrivals = {}
    for attr in ("arrivals_s", "arrivals_r1", "arrivals_r2"):
        vec = _as_floats(getattr(prof, attr), attr)
        if len(vec) > K:
            raise LengthMismatch(f"{attr} has {len(vec)} entries but there are {K} epochs")
        for i, e in enumerate(vec):
            if e < 0 or not math.isfinite(e):
                raise NegativeEnergy(f"{attr}[{i}] = {e} is not a finite non-negative energy")
        arrivals[attr] = vec + (0.0,) * (K - len(vec))

    g = raw.gains
    gains = ChannelGains(*(_as_floats(g.as_tuple(), "gains")))
    if raw.relay_count not in (1, 2):
        raise ScenarioError(f"relay_count must be 1 or 2, got {raw.relay_count!r}")
    used = gains.as_tuple() if raw.relay_count == 2 else (gains.alpha_sr1, gains.alpha_r1d)
    for a in used:
        if not (a > 0) or not math.isfinite(a):
            raise GainNotPositive(f"channel gain {a} is not strictly positive and finite")

    B = float(raw.buffer_capacity)
    if math.isnan(B) or B < 0:
        raise ScenarioError(f"buffer capacity must be non-negative, got {raw.buffer_capacity!r}")

    if raw.relay_count == 1:
        modes = frozenset()
        gains = ChannelGains(gains.alpha_sr1, gains.alpha_sr1, gains.alpha_r1d, gains.alpha_r1d)
        if any(arrivals["arrivals_r2"]):
            raise ScenarioError("single-relay instance carries energy arrivals for R2")
        arrivals["arrivals_r2"] = (0.0,) * K
    else:
        modes = frozenset(raw.mode_set)
        if not _has_data_path(modes):
            raise EmptyModeSet(
                "mode set has no source-to-destination data path "
                f"({mode_set_label(modes) or 'empty'})"
            )
        if gains.alpha_sr1 < gains.alpha_sr2:
            gains = gains.swapped()
            arrivals["arrivals_r1"], arrivals["arrivals_r2"] = (
                arrivals["arrivals_r2"], arrivals["arrivals_r1"])
            modes = frozenset(_SWAP_MODE[m] for m in modes)

    profile = EnergyProfile(
        epoch_durations=tau,
        arrivals_s=arrivals["arrivals_s"],
        arrivals_r1=arrivals["arrivals_r1"],
        arrivals_r2=arrivals["arrivals_r2"],
    )
    return Scenario(gains=gains, profile=profile, buffer_capacity=B,
                    relay_count=raw.relay_count, mode_set=modes)


def single_relay_scenario(tau, e_s, e_r, alpha_sr, alpha_rd, buffer_capacity=math.inf) -> Scenario:
    return validate_scenario(Scenario(
        gains=ChannelGains(alpha_sr, alpha_sr, alpha_rd, alpha_rd),
        profile=EnergyProfile(tuple(tau), tuple(e_s), tuple(e_r)),
        buffer_capacity=buffer_capacity,
        relay_count=1,
    ))


def two_relay_scenario(tau, e_s, e_r1, e_r2, gains, buffer_capacity=math.inf,
                       modes=ALL_MODES) -> Scenario:
    if not isinstance(gains, ChannelGains):
        gains = ChannelGains(*gains)
    return validate_scenario(Scenario(
        gains=gains,
        profile=EnergyProfile(tuple(tau), tuple(e_s), tuple(e_r1), tuple(e_r2)),
        buffer_capacity=buffer_capacity,
        relay_count=2,
        mode_set=parse_mode_set(modes),
    ))


def relay_reduction(s: Scenario, relay: int) -> Scenario:
    """Single-relay instance keeping only relay ``relay`` (1 or 2) of ``s``."""
    g = s.gains
    if relay == 1:
        a_sr, a_rd, e_r = g.alpha_sr1, g.alpha_r1d, s.profile.arrivals("R1")
    else:
        a_sr, a_rd, e_r = g.alpha_sr2, g.alpha_r2d, s.profile.arrivals("R2")
    return single_relay_scenario(s.profile.epoch_durations, s.profile.arrivals("S"), e_r,
                                 a_sr, a_rd, s.buffer_capacity)


# --- policies -----------------------------------------------------------------

SINGLE_FIELDS = ("l_s", "l_r", "c_s", "c_r")
TWO_FIELDS = ("l_b", "l_I", "l_II", "l_m",
              "c_br1", "c_br2", "c_sI", "c_sII", "c_r1II", "c_r2I", "c_r1m", "c_r2m",
              "e_r1m", "e_r2m")

# duration variable -> variables that must vanish with it
SINGLE_GROUPS = {"l_s": ("c_s",), "l_r": ("c_r",)}
TWO_GROUPS = {
    "l_b": ("c_br1", "c_br2"),
    "l_I": ("c_sI", "c_r2I"),
    "l_II": ("c_sII", "c_r1II"),
    "l_m": ("c_r1m", "c_r2m", "e_r1m", "e_r2m"),
}
MODE_OF_DURATION = {
    "l_b": Mode.BROADCAST,
    "l_I": Mode.SUCCESSIVE_I,
    "l_II": Mode.SUCCESSIVE_II,
    "l_m": Mode.MULTI_ACCESS,
}


class _PolicyBase:
    FIELDS: tuple = ()
    GROUPS: dict = {}

    def __init__(self, **arrays):
        missing = set(self.FIELDS) - set(arrays)
        extra = set(arrays) - set(self.FIELDS)
        if missing or extra:
            raise TypeError(f"bad policy fields: missing={sorted(missing)} extra={sorted(extra)}")
        K = None
        for name in self.FIELDS:
            a = np.array(arrays[name], dtype=float).reshape(-1)
            if K is None:
                K = a.size
            elif a.size != K:
                raise LengthMismatch(f"policy field {name} has length {a.size}, expected {K}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __setattr__(self, key, value):
        raise AttributeError("policies are immutable")

    @property
    def K(self) -> int:
        return getattr(self, self.FIELDS[0]).size

    def as_dict(self) -> dict:
        return {f: getattr(self, f).tolist() for f in self.FIELDS}

    def replace(self, **changes):
        d = {f: getattr(self, f) for f in self.FIELDS}
        d.update(changes)
        return type(self)(**d)

    def __eq__(self, other):
        return type(self) is type(other) and all(
            np.array_equal(getattr(self, f), getattr(other, f)) for f in self.FIELDS)

    def __repr__(self):
        return f"{type(self).__name__}(K={self.K})"

    @classmethod
    def zeros(cls, K: int):
        return cls(**{f: np.zeros(K) for f in cls.FIELDS})


class SingleRelayPolicy(_PolicyBase):
    FIELDS = SINGLE_FIELDS
    GROUPS = SINGLE_GROUPS

    def throughput(self) -> float:
        return math.fsum(self.c_r)


class TwoRelayPolicy(_PolicyBase):
    FIELDS = TWO_FIELDS
    GROUPS = TWO_GROUPS

    def throughput(self) -> float:
        return math.fsum(np.concatenate([self.c_r1II, self.c_r2I, self.c_r1m, self.c_r2m]))


def policy_from_dict(d: dict):
    keys = set(d)
    if keys == set(SINGLE_FIELDS):
        return SingleRelayPolicy(**d)
    if keys == set(TWO_FIELDS):
        return TwoRelayPolicy(**d)
    raise ValueError(f"cannot infer policy type from fields {sorted(keys)}")


@dataclass
class DualVariables:
    """Multipliers grouped by constraint family, one entry per epoch.

    ``constraints`` maps family names such as ``"energy_S"``, ``"data_R1"`` or
    ``"buffer_R"`` to arrays of length K; ``nonneg`` maps policy field names
    to the multipliers of their non-negativity constraints.  Constraints
    removed from the program (identically satisfied) carry a zero.
    """
    constraints: dict
    nonneg: dict

    def suffix(self, family: str) -> np.ndarray:
        """``sum_{j >= i} lambda_j`` for every epoch ``i``."""
        lam = self.constraints.get(family)
        if lam is None:
            return None
        return np.cumsum(np.asarray(lam)[::-1])[::-1]

    def as_dict(self) -> dict:
        return {
            "constraints": {k: np.asarray(v).tolist() for k, v in self.constraints.items()},
            "nonneg": {k: np.asarray(v).tolist() for k, v in self.nonneg.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DualVariables":
        return cls(
            constraints={k: np.asarray(v, dtype=float) for k, v in d["constraints"].items()},
            nonneg={k: np.asarray(v, dtype=float) for k, v in d["nonneg"].items()},
        )


# --- scenario files ---------------------------------------------------------------

_TOP_KEYS = {"gains", "epochs", "Bmax", "relays", "modes"}
_GAIN_KEYS = {"sr1", "sr2", "r1d", "r2d"}
_EPOCH_KEYS = {"tau", "Es", "Er1", "Er2"}


def _reject_unknown(d, allowed, where):
    if not isinstance(d, dict):
        raise ScenarioError(f"{where} must be an object")
    extra = set(d) - allowed
    if extra:
        raise ScenarioError(f"unknown field(s) in {where}: {', '.join(sorted(extra))}")


def scenario_from_dict(doc: dict) -> Scenario:
    """Build and validate a scenario from its file representation.

    ``relays`` defaults to 2 when any epoch carries ``Er2`` and to 1 otherwise;
    ``modes`` defaults to all four and is ignored for one relay.  ``Bmax`` is a
    number or the string ``"inf"``.
    """
    _reject_unknown(doc, _TOP_KEYS, "scenario")
    for key in ("gains", "epochs"):
        if key not in doc:
            raise ScenarioError(f"scenario is missing {key!r}")
    g = doc["gains"]
    _reject_unknown(g, _GAIN_KEYS, "gains")
    epochs = doc["epochs"]
    if not isinstance(epochs, list) or not epochs:
        raise ScenarioError("epochs must be a non-empty list")
    for k, e in enumerate(epochs):
        _reject_unknown(e, _EPOCH_KEYS, f"epochs[{k}]")
        if "tau" not in e:
            raise ScenarioError(f"epochs[{k}] is missing 'tau'")
    relays = doc.get("relays", 2 if any("Er2" in e for e in epochs) else 1)
    if relays not in (1, 2) or isinstance(relays, bool):
        raise ScenarioError(f"relays must be 1 or 2, got {relays!r}")
    need = ("sr1", "r1d") if relays == 1 else ("sr1", "sr2", "r1d", "r2d")
    for key in need:
        if key not in g:
            raise ScenarioError(f"gains is missing {key!r}")
    B = doc.get("Bmax", "inf")
    if isinstance(B, str):
        if B.strip().lower() not in ("inf", "infinity"):
            raise ScenarioError(f"Bmax must be a number or \"inf\", got {B!r}")
        B = math.inf
    elif isinstance(B, bool) or not isinstance(B, (int, float)):
        raise ScenarioError(f"Bmax must be a number or \"inf\", got {B!r}")

    def col(key):
        return tuple(e.get(key, 0.0) for e in epochs)

    gains = ChannelGains(g["sr1"], g.get("sr2", g["sr1"]), g["r1d"], g.get("r2d", g["r1d"]))
    modes = ALL_MODES
    if "modes" in doc:
        if not isinstance(doc["modes"], (list, str)):
            raise ScenarioError("modes must be a list of mode names")
        try:
            modes = parse_mode_set(doc["modes"])
        except ValueError as exc:
            raise ScenarioError(str(exc)) from None
    if relays == 1 and any(col("Er2")):
        raise ScenarioError("single-relay scenario carries Er2 arrivals")
    return validate_scenario(Scenario(
        gains=gains,
        profile=EnergyProfile(col("tau"), col("Es"), col("Er1"), col("Er2") if relays == 2 else ()),
        buffer_capacity=float(B),
        relay_count=relays,
        mode_set=modes if relays == 2 else frozenset(),
    ))


def scenario_to_dict(s: Scenario) -> dict:
    p = s.profile
    epochs = []
    for i in range(s.K):
        e = {"tau": float(p.epoch_durations[i]), "Es": float(p.arrivals_s[i]),
             "Er1": float(p.arrivals_r1[i])}
        if s.relay_count == 2:
            e["Er2"] = float(p.arrivals_r2[i])
        epochs.append(e)
    g = s.gains
    doc = {"gains": {"sr1": g.alpha_sr1, "sr2": g.alpha_sr2, "r1d": g.alpha_r1d, "r2d": g.alpha_r2d},
           "epochs": epochs,
           "Bmax": "inf" if not s.finite_buffer else s.buffer_capacity,
           "relays": s.relay_count}
    if s.relay_count == 2:
        order = [Mode.BROADCAST, Mode.MULTI_ACCESS, Mode.SUCCESSIVE_I, Mode.SUCCESSIVE_II]
        doc["modes"] = [m.value for m in order if m in s.mode_set]
    return doc


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    return scenario_from_dict(doc)
