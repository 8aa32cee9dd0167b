"""Event-driven GI/G/1 FCFS queue observed under a stopping rule.

Customer 0 arrives at t=0 and starts service immediately. Customer j >= 1
arrives at ``u_1 + ... + u_j``. Customer 0 is not counted in A(T), but its
service time is part of the service list once it completes.

Waiting times follow the Lindley recursion, evaluated as a reflected random
walk so that a whole path is computed with numpy in one pass.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .expfam import ExpFamilyModel, get_model

__all__ = [
    "SimulationError",
    "FixedTime",
    "FixedDepartures",
    "FixedArrivals",
    "FixedTransitions",
    "StoppingRule",
    "parse_rule",
    "ObservationWindow",
    "simulate",
    "checkpoints",
]

EVENT_CEILING = 10**8
_BLOCK = 1024


class SimulationError(RuntimeError):
    """Defective sampler output or a stopping target that was never reached."""


@dataclass(frozen=True)
class FixedTime:
    """Rule 1: observe until time ``t``."""

    t: float

    def __post_init__(self):
        if not (math.isfinite(self.t) and self.t > 0):
            raise ValueError(f"FixedTime needs t > 0, got {self.t!r}")

    def __str__(self):
        return f"fixed_time:{self.t!r}"


@dataclass(frozen=True)
class FixedDepartures:
    """Rule 2: observe until ``d`` departures."""

    d: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"FixedDepartures needs d >= 1, got {self.d!r}")

    def __str__(self):
        return f"fixed_departures:{self.d}"


@dataclass(frozen=True)
class FixedArrivals:
    """Rule 3: observe until ``m`` arrivals."""

    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"FixedArrivals needs m >= 1, got {self.m!r}")

    def __str__(self):
        return f"fixed_arrivals:{self.m}"


@dataclass(frozen=True)
class FixedTransitions:
    """Rule 4: stop at the ``n``-th transition epoch (arrival or departure)."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"FixedTransitions needs n >= 2, got {self.n!r}")

    def __str__(self):
        return f"fixed_transitions:{self.n}"


StoppingRule = Union[FixedTime, FixedDepartures, FixedArrivals, FixedTransitions]

_RULES = {
    "fixed_time": (FixedTime, float),
    "fixed_departures": (FixedDepartures, int),
    "fixed_arrivals": (FixedArrivals, int),
    "fixed_transitions": (FixedTransitions, int),
}


def parse_rule(text: "str | StoppingRule") -> StoppingRule:
    """Parse ``"fixed_time:100"``, ``"fixed_arrivals:5"`` and friends."""
    if isinstance(text, (FixedTime, FixedDepartures, FixedArrivals, FixedTransitions)):
        return text
    m = re.fullmatch(r"\s*([a-z_]+)\s*:\s*([^\s]+)\s*", str(text))
    if not m or m.group(1) not in _RULES:
        raise ValueError(
            f"bad stopping rule {text!r}; expected one of "
            + ", ".join(f"{k}:<value>" for k in _RULES)
        )
    cls, conv = _RULES[m.group(1)]
    raw = m.group(2)
    try:
        value = conv(float(raw)) if conv is int and float(raw).is_integer() else conv(raw)
    except ValueError:
        raise ValueError(f"bad value {raw!r} in stopping rule {text!r}") from None
    return cls(value)


@dataclass(frozen=True)
class ObservationWindow:
    """One observed sample path on [0, T].

    ``arrivals`` holds the completed interarrival times u_1..u_A(T) and
    ``services`` the completed service times v_1..v_D(T). ``idle`` is the
    total idle time of the server in (0, T].
    """

    T: float
    arrivals: np.ndarray
    services: np.ndarray
    a_count: int
    d_count: int
    idle: float
    initial_customer_present: bool = True
    rule: str = ""

    @property
    def arrival_residual(self) -> float:
        """Elapsed part of the unfinished interarrival interval at T."""
        return max(0.0, self.T - float(np.sum(self.arrivals)))

    @property
    def service_residual(self) -> float:
        """Elapsed part of the service in progress at T (0 when idle)."""
        return max(0.0, self.T - self.idle - float(np.sum(self.services)))

    def to_dict(self) -> dict:
        return {
            "T": float(self.T),
            "arrivals": [float(x) for x in self.arrivals],
            "services": [float(x) for x in self.services],
            "a_count": int(self.a_count),
            "d_count": int(self.d_count),
            "idle": float(self.idle),
            "initial_customer_present": bool(self.initial_customer_present),
            "rule": self.rule,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ObservationWindow":
        expected = {
            "T", "arrivals", "services", "a_count", "d_count", "idle",
            "initial_customer_present", "rule",
        }
        if not isinstance(data, dict):
            raise ValueError("window record must be a JSON object")
        missing = expected - set(data) - {"rule", "initial_customer_present"}
        if missing:
            raise ValueError(f"window record missing fields: {sorted(missing)}")
        unknown = set(data) - expected
        if unknown:
            raise ValueError(f"window record has unknown fields: {sorted(unknown)}")
        arrivals = np.asarray(data["arrivals"], dtype=float)
        services = np.asarray(data["services"], dtype=float)
        if arrivals.ndim != 1 or services.ndim != 1:
            raise ValueError("arrivals and services must be flat lists")
        win = cls(
            T=float(data["T"]),
            arrivals=arrivals,
            services=services,
            a_count=int(data["a_count"]),
            d_count=int(data["d_count"]),
            idle=float(data["idle"]),
            initial_customer_present=bool(data.get("initial_customer_present", True)),
            rule=str(data.get("rule", "")),
        )
        if win.a_count != arrivals.size or win.d_count != services.size:
            raise ValueError("a_count/d_count disagree with list lengths")
        return win

    @classmethod
    def from_json(cls, text: str) -> "ObservationWindow":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, ObservationWindow):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


class _Path:
    """Lazily extended sample path of one queue.

    Draws come in blocks with a fixed size schedule, so the path is a
    function of the generator alone and never of the horizon asked for.
    """

    def __init__(self, arrival, theta, service, phi, rng):
        self.arrival = get_model(arrival)
        self.service = get_model(service)
        self.theta = self.arrival.check_param(theta)
        self.phi = self.service.check_param(phi)
        self._arr_rng, self._svc_rng = rng.spawn(2)
        self.u = np.empty(0)
        self.s = np.empty(0)
        self._dirty = True

    def _draw(self, model, param, rng, size):
        x = np.asarray(model.sampler(param, rng, size), dtype=float)
        if x.shape != (size,) or not np.all(x > 0) or not np.all(np.isfinite(x)):
            raise SimulationError(f"{model.spec} sampler produced nonpositive or invalid draws")
        return x

    def _grow(self):
        n = self.u.size
        if n >= EVENT_CEILING:
            raise SimulationError(f"event ceiling {EVENT_CEILING} reached before stopping")
        block = max(_BLOCK, n)
        self.u = np.concatenate([self.u, self._draw(self.arrival, self.theta, self._arr_rng, block)])
        # one service per customer: customer 0 plus one per arrival
        self.s = np.concatenate([self.s, self._draw(self.service, self.phi, self._svc_rng, block)])
        self._dirty = True

    def _refresh(self):
        if not self._dirty:
            return
        u, s = self.u, self.s
        self.A = np.concatenate([[0.0], np.cumsum(u)])
        # reflected walk: W_k = S_k - min_{j<=k} S_j with S_k = sum_{i<k} (s_i - u_{i+1})
        steps = s[:-1] - u[: s.size - 1]
        walk = np.concatenate([[0.0], np.cumsum(steps)])
        wait = walk - np.minimum.accumulate(walk)
        self.start = self.A[: walk.size] + wait
        self.D = self.start + s[: walk.size]
        self._dirty = False

    def ensure_time(self, t: float):
        """Extend until the path is fully known on [0, t]."""
        while True:
            self._refresh()
            if self.u.size and self.A[-1] > t and self.D.size >= 1:
                return
            self._grow()

    def ensure_arrivals(self, m: int):
        while self.u.size < m + 1:
            self._grow()
        self._refresh()

    def window(self, T: float, a_count=None, d_count=None, rule="") -> ObservationWindow:
        self.ensure_time(T)
        if a_count is None:
            a_count = int(np.searchsorted(self.A, T, side="right")) - 1
        # customers 0..a_count have arrived; departures are increasing in k
        if d_count is None:
            d_count = int(np.searchsorted(self.D[: a_count + 1], T, side="right"))
        served = float(np.sum(self.s[:d_count]))
        partial = 0.0
        if d_count <= a_count:
            partial = min(self.s[d_count], max(0.0, T - self.start[d_count]))
        idle = max(0.0, T - served - partial)
        return ObservationWindow(
            T=float(T),
            arrivals=self.u[:a_count],
            services=self.s[:d_count],
            a_count=a_count,
            d_count=d_count,
            idle=idle,
            rule=rule,
        )


def _stop(path: _Path, rule: StoppingRule) -> ObservationWindow:
    tag = str(rule)
    if isinstance(rule, FixedTime):
        return path.window(rule.t, rule=tag)
    if isinstance(rule, FixedArrivals):
        path.ensure_arrivals(rule.m)
        return path.window(float(path.A[rule.m]), a_count=rule.m, rule=tag)
    if isinstance(rule, FixedDepartures):
        # the d-th departure belongs to customer d-1, who needs arrivals up to d-1
        path.ensure_arrivals(rule.d)
        T = float(path.D[rule.d - 1])
        path.ensure_time(T)
        a_count = int(np.searchsorted(path.A, T, side="right")) - 1
        return path.window(T, a_count=a_count, d_count=rule.d, rule=tag)
    if isinstance(rule, FixedTransitions):
        n = rule.n
        # every event up to the n-th arrival epoch is known once n arrivals exist
        path.ensure_arrivals(n)
        horizon = path.A[n]
        deps = path.D[: n + 1]
        deps = deps[deps <= horizon]
        epochs = np.concatenate([deps, path.A[1 : n + 1]])
        kinds = np.concatenate([np.zeros(deps.size, int), np.ones(n, int)])
        # departures sort ahead of arrivals at equal epochs
        order = np.lexsort((kinds, epochs))[:n]
        T = float(epochs[order[-1]])
        d_count = int(np.sum(kinds[order] == 0))
        return path.window(T, a_count=n - d_count, d_count=d_count, rule=tag)
    raise TypeError(f"not a stopping rule: {rule!r}")


def simulate(
    arrival: "str | ExpFamilyModel",
    theta: float,
    service: "str | ExpFamilyModel",
    phi: float,
    rule: "StoppingRule | str",
    rng: np.random.Generator,
) -> ObservationWindow:
    """Simulate one window of the GI/G/1 queue under ``rule``.

    Parameters
    ----------
    arrival, service : model or catalog string
        Interarrival and service laws.
    theta, phi : float
        Natural parameters of the two laws.
    rule : StoppingRule or str
        When to stop observing, e.g. ``FixedTime(100.0)`` or ``"fixed_arrivals:5"``.
    rng : numpy.random.Generator
        Source of randomness. Two child streams are spawned from it, one per law.
    """
    path = _Path(arrival, theta, service, phi, rng)
    return _stop(path, parse_rule(rule))


def checkpoints(arrival, theta, service, phi, grid, rng) -> list[ObservationWindow]:
    """Observe one sample path at each time in ``grid`` (nested windows)."""
    grid = [float(t) for t in grid]
    if not grid:
        raise ValueError("time grid is empty")
    if any(not (t > 0 and math.isfinite(t)) for t in grid):
        raise ValueError("time grid must be positive and finite")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("time grid must be strictly increasing")
    path = _Path(arrival, theta, service, phi, rng)
    path.ensure_time(grid[-1])
    return [path.window(t, rule=str(FixedTime(t))) for t in grid]
