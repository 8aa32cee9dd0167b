"""Boundary functions h(T) and numerical upper/lower class tests.

h belongs to the upper class of the standardized estimator when

    int (h(T)/T) exp(-h(T)^2 / 2) dT

converges, and to the lower class when it diverges. With s = log T the
integrand becomes ``h exp(-h^2/2) ds`` and ``exp(-h^2/2) = (log T)^(-rho)``
with ``rho = h^2 / (2 loglog T)``. The classifier estimates the limit of
rho and compares it with 1; near rho = 1 it falls back to the trend of the
partial integrals and may honestly answer Indeterminate.

All integrals start at T = e^2 so that loglog T > 0.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate

__all__ = [
    "PreconditionError",
    "Verdict",
    "C2Verdict",
    "ClassFunction",
    "ScaledLil",
    "PowerLogLog",
    "UserTable",
    "parse_class_function",
    "Epsilon",
    "parse_epsilon",
    "ClassificationReport",
    "C2Report",
    "DiagnosticTable",
    "integral_test",
    "condition_c2_check",
    "series_diagnostics",
    "envelope",
    "geometric_grid",
]

E2 = math.exp(2.0)
T_MAX_MIN = math.exp(math.exp(2.0))
DEFAULT_T_MAX = 1e12
DEFAULT_C2_T_MAX = 1e100
_QUAD_TOL = 1e-10


class PreconditionError(ValueError):
    pass


class Verdict(str, Enum):
    UPPER = "Upper"
    LOWER = "Lower"
    INDETERMINATE = "Indeterminate"


class C2Verdict(str, Enum):
    FINITE = "Finite"
    INFINITE = "Infinite"
    INDETERMINATE = "Indeterminate"


def _loglog(T):
    return np.log(np.log(np.asarray(T, dtype=float)))


class ClassFunction:
    """Base for boundary functions; subclasses define ``_eval``."""

    domain_floor: float

    def __call__(self, T):
        T_arr = np.asarray(T, dtype=float)
        if np.any(T_arr < self.domain_floor * (1 - 1e-12)):
            raise ValueError(f"{self.label}: T below domain floor {self.domain_floor}")
        out = self._eval(T_arr)
        return out if out.ndim else float(out)

    def _eval(self, T: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def label(self) -> str:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


def _check_floor(floor: float):
    if not floor > math.e:
        raise ValueError(f"domain_floor must exceed e so that loglog T > 0, got {floor!r}")


@dataclass(frozen=True)
class ScaledLil(ClassFunction):
    """h(T) = c * sqrt(2 loglog T)."""

    c: float
    domain_floor: float = E2

    def __post_init__(self):
        _check_floor(self.domain_floor)
        if not self.c > 0:
            raise ValueError(f"ScaledLil needs c > 0, got {self.c!r}")

    def _eval(self, T):
        return self.c * np.sqrt(2.0 * _loglog(T))

    @property
    def label(self):
        return f"scaled_lil:{self.c!r}"

    def to_dict(self):
        return {"family": "scaled_lil", "c": self.c}


@dataclass(frozen=True)
class PowerLogLog(ClassFunction):
    """h(T) = c * (loglog T)^(1/2)."""

    c: float
    domain_floor: float = E2

    def __post_init__(self):
        _check_floor(self.domain_floor)
        if not self.c > 0:
            raise ValueError(f"PowerLogLog needs c > 0, got {self.c!r}")

    def _eval(self, T):
        return self.c * np.sqrt(_loglog(T))

    @property
    def label(self):
        return f"power_loglog:{self.c!r}"

    def to_dict(self):
        return {"family": "power_loglog", "c": self.c}


@dataclass(frozen=True)
class UserTable(ClassFunction):
    """Tabulated boundary, interpolated linearly in log T.

    Values outside the table are held constant. ``inf`` entries are
    allowed and propagate to any interval they bound.
    """

    t: tuple
    h: tuple
    domain_floor: float = field(default=None)

    def __post_init__(self):
        t = tuple(float(x) for x in self.t)
        h = tuple(float(x) for x in self.h)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "h", h)
        if len(t) == 0 or len(t) != len(h):
            raise ValueError("table needs equally many T and h values (at least one)")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("table T values must be strictly increasing")
        if any(math.isnan(v) or v < 0 for v in h):
            raise ValueError("table h values must be nonnegative")
        if any(b < a for a, b in zip(h, h[1:])):
            raise ValueError("table h values must be nondecreasing")
        if self.domain_floor is None:
            object.__setattr__(self, "domain_floor", t[0])
        _check_floor(self.domain_floor)

    def _eval(self, T):
        lt = np.log(np.asarray(self.t))
        hv = np.asarray(self.h)
        x = np.log(np.atleast_1d(T))
        idx = np.clip(np.searchsorted(lt, x, side="right") - 1, 0, len(lt) - 1)
        out = hv[idx].copy()
        nxt = np.minimum(idx + 1, len(lt) - 1)
        inner = (x > lt[idx]) & (nxt > idx)
        if np.any(inner):
            h0, h1 = hv[idx[inner]], hv[nxt[inner]]
            w = (x[inner] - lt[idx[inner]]) / (lt[nxt[inner]] - lt[idx[inner]])
            with np.errstate(invalid="ignore"):
                val = h0 + w * (h1 - h0)
            val[np.isinf(h0) | np.isinf(h1)] = np.inf
            out[inner] = val
        return out.reshape(np.shape(T))

    @property
    def label(self):
        return f"table[{len(self.t)}]"

    def to_dict(self):
        return {"family": "table", "t": list(self.t), "h": list(self.h)}


def parse_class_function(spec) -> ClassFunction:
    """Build a boundary from ``"scaled_lil:1.2"``, ``"power_loglog:2"`` or a dict."""
    if isinstance(spec, ClassFunction):
        return spec
    if isinstance(spec, str):
        m = re.fullmatch(r"\s*([a-z_]+)\s*:\s*([^\s]+)\s*", spec)
        if not m:
            raise ValueError(f"bad boundary spec {spec!r}")
        spec = {"family": m.group(1), "c": m.group(2)}
    if not isinstance(spec, dict) or "family" not in spec:
        raise ValueError(f"bad boundary spec {spec!r}")
    fam = spec["family"]
    extra = {k: v for k, v in spec.items() if k != "family"}
    try:
        if fam == "scaled_lil":
            return ScaledLil(float(extra.pop("c")), **extra)
        if fam == "power_loglog":
            return PowerLogLog(float(extra.pop("c")), **extra)
        if fam == "table":
            return UserTable(tuple(extra.pop("t")), tuple(extra.pop("h")), **extra)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"bad parameters for boundary family {fam!r}: {exc}") from None
    raise ValueError(f"unknown boundary family {fam!r}; use scaled_lil, power_loglog or table")


@dataclass(frozen=True)
class Epsilon:
    """Decay function for the concentration and integrability conditions.

    kinds: ``power`` t^(-a), ``iterlog`` (loglog t)^(-a), ``exp`` e^(-t),
    ``const`` a constant a.
    """

    kind: str = "power"
    a: float = 0.4

    def __post_init__(self):
        if self.kind not in ("power", "iterlog", "exp", "const"):
            raise ValueError(f"unknown epsilon kind {self.kind!r}")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "power":
            out = t ** (-self.a)
        elif self.kind == "iterlog":
            out = _loglog(t) ** (-self.a)
        elif self.kind == "exp":
            out = np.exp(-t)
        else:
            out = np.full(t.shape, float(self.a))
        return out if out.ndim else float(out)

    def __str__(self):
        return "exp" if self.kind == "exp" else f"{self.kind}:{self.a!r}"


def parse_epsilon(spec) -> Epsilon:
    """``"power:0.4"`` is t^(-0.4); also ``iterlog:2``, ``exp``, ``const:10``."""
    if isinstance(spec, Epsilon):
        return spec
    text = str(spec).strip()
    if text == "exp":
        return Epsilon("exp", 0.0)
    m = re.fullmatch(r"([a-z]+)\s*:\s*([^\s]+)", text)
    if not m:
        raise ValueError(f"bad epsilon spec {spec!r}; expected e.g. power:0.4")
    try:
        return Epsilon(m.group(1), float(m.group(2)))
    except ValueError as exc:
        raise ValueError(f"bad epsilon spec {spec!r}: {exc}") from None


def geometric_grid(start: float, stop: float, num: int) -> np.ndarray:
    return np.geomspace(float(start), float(stop), int(num))


# ---------------------------------------------------------------------------
# integral test


@dataclass
class ClassificationReport:
    verdict: Verdict
    exponent_estimate: float
    tail_partial_integrals: list
    notes: list

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "exponent_estimate": self.exponent_estimate,
            "tail_partial_integrals": [
                {"t": t, "integral": v} for t, v in self.tail_partial_integrals
            ],
            "notes": list(self.notes),
        }


_CHECK_T_MAX = 1e300


def _check_boundary(h: ClassFunction, s0: float) -> None:
    """Positivity, monotonicity and growth of ``h`` on a grid reaching 1e300."""
    T = np.exp(np.geomspace(s0, math.log(_CHECK_T_MAX), 200))
    hv = np.asarray(h(T), dtype=float)
    if np.any(np.isnan(hv)) or np.any(hv <= 0):
        raise PreconditionError(f"{h.label}: boundary must be positive")
    if np.any(hv[1:] < hv[:-1]):
        raise PreconditionError(f"{h.label}: boundary is not monotone nondecreasing")
    grows = hv[-1] > hv[0] + 1.0 or hv[-1] >= 2.0 * hv[0]
    if not np.all(np.isfinite(hv)) or not grows:
        raise PreconditionError(f"{h.label}: boundary does not increase to infinity")


def _partial_integrals(g: Callable[[float], float], edges: np.ndarray) -> np.ndarray:
    """Cumulative integrals of ``g`` from edges[0] to each edge."""
    pieces = [0.0]
    for a, b in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(g, a, b, epsabs=0.0, epsrel=_QUAD_TOL, limit=200)
        pieces.append(val)
    return np.cumsum(pieces)


def _block_edges(s0: float, s1: float) -> np.ndarray:
    """Edges doubling in s from s0, with s1 closing the last block."""
    edges = [s0]
    while edges[-1] * 2 < s1:
        edges.append(edges[-1] * 2)
    if s1 / edges[-1] < 2 ** 0.25 and len(edges) > 1:
        edges[-1] = s1
    else:
        edges.append(s1)
    return np.asarray(edges)


def integral_test(
    h: ClassFunction,
    t_max: float = DEFAULT_T_MAX,
    margin: float = 0.05,
    n_grid: int = 40,
) -> ClassificationReport:
    """Classify ``h`` as an upper or lower class function.

    The limit of ``rho(T) = h(T)^2 / (2 loglog T)`` is extrapolated by a
    least-squares fit in ``1/loglog T`` on a grid geometric in log T over
    [e^2, t_max]. rho >= 1 + margin gives Upper, rho <= 1 - margin gives
    Lower. In between, the growth of the partial integrals over doubling
    blocks in log T decides, if it is clear enough.
    """
    h = parse_class_function(h)
    if not t_max >= T_MAX_MIN:
        raise PreconditionError(f"t_max must be at least e^(e^2) ~ {T_MAX_MIN:.1f}, got {t_max!r}")
    if not margin > 0:
        raise PreconditionError(f"margin must be positive, got {margin!r}")
    s0 = max(2.0, math.log(h.domain_floor))
    s1 = math.log(t_max)
    s = np.geomspace(s0, s1, n_grid)
    _check_boundary(h, s0)
    hv = np.asarray(h(np.exp(s)), dtype=float)
    ll = np.log(s)
    rho = hv**2 / (2.0 * ll)
    slope, rho_inf = np.polyfit(1.0 / ll, rho, 1)
    notes = [
        f"grid: {n_grid} points geometric in log T on [{math.exp(s0):.6g}, {t_max:.6g}]",
        f"rho fit: rho(T) ~ {rho_inf:.6g} + {slope:.6g}/loglog T",
    ]

    def g(x):
        hx = float(h(math.exp(x)))
        return hx * math.exp(-0.5 * hx * hx)

    edges = _block_edges(s0, s1)
    partial = _partial_integrals(g, edges)
    tails = [(float(math.exp(e)), float(v)) for e, v in zip(edges, partial)]

    if rho_inf >= 1.0 + margin:
        verdict = Verdict.UPPER
        notes.append(f"rho limit {rho_inf:.6g} >= 1 + margin: integrand below (log T)^-(1+delta)/T")
    elif rho_inf <= 1.0 - margin:
        verdict = Verdict.LOWER
        notes.append(f"rho limit {rho_inf:.6g} <= 1 - margin: integrand above (log T)^-(1-delta)/T")
    else:
        verdict = Verdict.INDETERMINATE
        inc = np.diff(partial)
        mids = np.sqrt(edges[:-1] * edges[1:])
        widths = np.log(edges[1:] / edges[:-1])
        ok = (inc > 0) & (widths > 0)
        if np.count_nonzero(ok) >= 3:
            # increments over [a, 2a] blocks scale like a^(1 - p) for integrand s^-p
            trend = np.polyfit(np.log(mids[ok]), np.log(inc[ok] / widths[ok]), 1)[0]
            notes.append(f"near critical rho; partial-integral growth exponent {trend:.4g}")
            if trend < -margin:
                verdict = Verdict.UPPER
            elif trend > margin:
                verdict = Verdict.LOWER
        if verdict is Verdict.INDETERMINATE:
            notes.append("inconclusive at the critical boundary")
    return ClassificationReport(verdict, float(rho_inf), tails, notes)


# ---------------------------------------------------------------------------
# integrability condition on epsilon


@dataclass
class C2Report:
    verdict: C2Verdict
    partial_integrals: list
    increment_ratios: list
    notes: list

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "partial_integrals": [{"t": t, "integral": v} for t, v in self.partial_integrals],
            "increment_ratios": list(self.increment_ratios),
            "notes": list(self.notes),
        }


def condition_c2_check(eps, t_max: float = DEFAULT_C2_T_MAX, n_check: int = 3) -> C2Report:
    """Decide whether ``int t^-1 loglog t eps(t)^(1/2) dt`` over [e^2, inf) is finite.

    Partial integrals are taken over blocks doubling in log t. Increments,
    normalized by the block width in log log t, that contract by at least
    a factor 0.8 over the last ``n_check`` blocks mean Finite; increments
    that never shrink mean Infinite.
    """
    if isinstance(eps, str):
        eps = parse_epsilon(eps)
    if not t_max >= T_MAX_MIN:
        raise PreconditionError(f"t_max must be at least e^(e^2) ~ {T_MAX_MIN:.1f}")
    s0, s1 = 2.0, math.log(t_max)
    probe = np.exp(np.geomspace(s0, s1, 64))
    vals = np.array([float(eps(t)) for t in probe])
    if np.any(np.isnan(vals)) or np.any(vals < 0) or not vals[0] > 0:
        raise PreconditionError("eps must be positive on [e^2, t_max]")
    if np.any(vals[1:] > vals[:-1] * (1 + 1e-12)):
        raise PreconditionError("eps must be nonincreasing on [e^2, t_max]")

    def g(x):
        e = float(eps(math.exp(x)))
        return math.log(x) * math.sqrt(e) if e > 0 else 0.0

    edges = _block_edges(s0, s1)
    partial = _partial_integrals(g, edges)
    inc = np.diff(partial) / np.log(edges[1:] / edges[:-1])
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = inc[1:] / inc[:-1]
    tails = [(float(math.exp(e)), float(v)) for e, v in zip(edges, partial)]
    notes = [f"{len(edges) - 1} blocks doubling in log t on [e^2, {t_max:.6g}]"]
    last = ratios[-n_check:]
    total = partial[-1]
    if inc[-1] <= 1e-15 * max(total, np.finfo(float).tiny):
        verdict = C2Verdict.FINITE
        notes.append("tail increments negligible")
    elif len(last) == n_check and np.all(last <= 0.8):
        verdict = C2Verdict.FINITE
        notes.append("tail increments contract geometrically")
    elif len(last) == n_check and np.all(last >= 1.0):
        verdict = C2Verdict.INFINITE
        notes.append("partial integrals grow without contraction")
    else:
        verdict = C2Verdict.INDETERMINATE
        notes.append("no clear contraction or growth in the tail")
    ratio_list = [float(r) if np.isfinite(r) else None for r in ratios]
    return C2Report(verdict, tails, ratio_list, notes)


# ---------------------------------------------------------------------------
# series diagnostics


DIAGNOSTIC_COLUMNS = ("n", "t_n", "h", "S_A", "S_B", "S_C", "S_D")


@dataclass
class DiagnosticTable:
    """Partial sums of the four series over a grid.

    S_A needs crossing probabilities and is ``None`` without them.
    ``ratios`` holds pairwise ratios of partial sums, keyed ``"B/C"``,
    ``"D/B"`` and ``"A/B"``.
    """

    t: np.ndarray
    h: np.ndarray
    S_A: Optional[np.ndarray]
    S_B: np.ndarray
    S_C: np.ndarray
    S_D: np.ndarray
    ratios: dict
    C: float

    def column(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def block_increments(self, name: str, edges: Sequence[float]) -> np.ndarray:
        """Growth of a partial sum between successive ``edges`` in T."""
        S = self.column(name)
        idx = np.searchsorted(self.t, np.asarray(edges, dtype=float), side="right") - 1
        if np.any(idx < 0):
            raise ValueError("block edge below the grid")
        return np.diff(S[idx])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DIAGNOSTIC_COLUMNS)
        for i in range(self.t.size):
            w.writerow([
                i + 1,
                repr(float(self.t[i])),
                repr(float(self.h[i])),
                "" if self.S_A is None else repr(float(self.S_A[i])),
                repr(float(self.S_B[i])),
                repr(float(self.S_C[i])),
                repr(float(self.S_D[i])),
            ])
        return buf.getvalue()


def _weights(t: np.ndarray, mode: str) -> np.ndarray:
    if mode == "unit":
        return np.ones_like(t)
    if mode != "spacing":
        raise ValueError(f"weights must be 'spacing' or 'unit', got {mode!r}")
    if t.size == 1:
        return np.ones_like(t)
    w = np.empty_like(t)
    w[1:] = np.diff(t)
    w[0] = w[1] * t[0] / t[1] if t[1] / t[0] > 1 + 1e-12 else w[1]
    return w


def series_diagnostics(
    h: ClassFunction,
    t_grid: Sequence[float],
    crossing_probs: Optional[Sequence[float]] = None,
    C: float = 1.0,
    weights: str = "spacing",
) -> DiagnosticTable:
    """Partial sums of the series linking crossing probabilities to h.

    Terms, with ``ll = loglog t_n`` and ``g = exp(-h^2/2)``:

        S_A: ll / t_n * p_n
        S_B: ll / (t_n h) * g
        S_C: 1 / (t_n h) * g
        S_D: ll / (t_n h) * exp(-h^2/2 * (1 + C/ll))

    With ``weights="spacing"`` each term is multiplied by the local grid
    spacing, which reproduces the plain series on the integer grid t_n = n
    and turns a geometric grid into a Riemann sum over T. ``"unit"`` sums
    the terms as they are.
    """
    h = parse_class_function(h)
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("t_grid must be a non-empty 1-d sequence")
    if np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    if t[0] < E2 * (1 - 1e-12):
        raise ValueError("t_grid must start at or above e^2")
    hv = np.asarray(h(t), dtype=float)
    ll = _loglog(t)
    w = _weights(t, weights) / t
    half_sq = -0.5 * hv**2
    g = np.exp(half_sq)
    S_B = np.cumsum(w * ll / hv * g)
    S_C = np.cumsum(w / hv * g)
    S_D = np.cumsum(w * ll / hv * np.exp(half_sq * (1.0 + C / ll)))
    S_A = None
    if crossing_probs is not None:
        p = np.asarray(crossing_probs, dtype=float)
        if p.shape != t.shape:
            raise ValueError(
                f"crossing_probs has {p.size} entries but the grid has {t.size} points"
            )
        if np.any((p < 0) | (p > 1)):
            raise ValueError("crossing probabilities must lie in [0, 1]")
        S_A = np.cumsum(w * ll * p)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = {"B/C": S_B / S_C, "D/B": S_D / S_B}
        if S_A is not None:
            ratios["A/B"] = S_A / S_B
    return DiagnosticTable(t, hv, S_A, S_B, S_C, S_D, ratios, float(C))


def envelope(h: ClassFunction, t_grid: Sequence[float]) -> list[tuple[float, float]]:
    """Boundary values along ``t_grid`` as (T, h(T)) pairs."""
    h = parse_class_function(h)
    t = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t) < 0):
        raise ValueError("t_grid must be sorted")
    hv = np.atleast_1d(h(t))
    return [(float(a), float(b)) for a, b in zip(t, hv)]
