"""Continuous one-parameter exponential families on [0, inf).

A model has density ``a(x) * exp(theta * h(x) - k(theta))`` for x >= 0 and
zero for x < 0. ``theta`` is the natural parameter, ``h`` the sufficient
statistic and ``k`` the cumulant function, so that

    eta(theta)    = k'(theta)  = E[h(X)]
    sigma2(theta) = k''(theta) = Var[h(X)]

For the rate-type laws shipped here the natural parameter is the rate
itself and ``h(x) = -x``, which makes the exponential density read
``theta * exp(-theta * x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

__all__ = [
    "DomainError",
    "InversionError",
    "ExpFamilyModel",
    "exponential",
    "gamma",
    "get_model",
    "catalog_names",
    "density",
    "log_density",
    "eta",
    "sigma2",
    "eta_inv",
    "cdf",
    "survival",
    "sample",
]


class DomainError(ValueError):
    """Natural parameter outside the model's natural domain."""


class InversionError(ValueError):
    """Mean value lies outside the range of ``eta``."""


_BISECT_WIDTH = 1e-12
_QUAD_TOL = 1e-10
_MAX_BRACKET_STEPS = 1100


@dataclass(frozen=True)
class ExpFamilyModel:
    """Immutable description of one exponential-family law.

    Callables taking ``x`` must accept numpy arrays. ``log_carrier`` is
    only ever evaluated for x >= 0.
    """

    name: str
    log_carrier: Callable[[np.ndarray], np.ndarray]
    stat: Callable[[np.ndarray], np.ndarray]
    cumulant: Callable[[float], float]
    cumulant_d1: Callable[[float], float]
    cumulant_d2: Callable[[float], float]
    natural_domain: tuple[float, float]
    sampler: Callable[[float, np.random.Generator, int], np.ndarray]
    eta_inverse: Optional[Callable[[float], float]] = None
    cdf: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    sf: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    params: tuple = field(default=())

    @property
    def spec(self) -> str:
        """Catalog string that rebuilds this model via :func:`get_model`."""
        if not self.params:
            return self.name
        return self.name + ":" + ":".join(repr(p) for p in self.params)

    def check_param(self, theta: float) -> float:
        lo, hi = self.natural_domain
        theta = float(theta)
        if not (lo < theta < hi):
            raise DomainError(
                f"{self.spec}: parameter {theta!r} outside natural domain ({lo}, {hi})"
            )
        return theta


# ---------------------------------------------------------------------------
# catalog


def exponential() -> ExpFamilyModel:
    """Exponential law with rate ``theta``: a(x)=1, h(x)=-x, k(theta)=-log(theta)."""
    return ExpFamilyModel(
        name="exponential",
        log_carrier=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
        stat=lambda x: -np.asarray(x, dtype=float),
        cumulant=lambda t: -math.log(t),
        cumulant_d1=lambda t: -1.0 / t,
        cumulant_d2=lambda t: 1.0 / (t * t),
        natural_domain=(0.0, math.inf),
        sampler=lambda t, rng, size: rng.exponential(1.0 / t, size),
        eta_inverse=lambda y: -1.0 / y,
        cdf=lambda x, t: -np.expm1(-t * np.asarray(x, dtype=float)),
        sf=lambda x, t: np.exp(-t * np.asarray(x, dtype=float)),
    )


def gamma(alpha: float) -> ExpFamilyModel:
    """Gamma law with known shape ``alpha`` and rate ``theta``.

    a(x) = x**(alpha-1) / Gamma(alpha), h(x) = -x, k(theta) = -alpha*log(theta).
    """
    alpha = float(alpha)
    if not alpha > 0:
        raise ValueError(f"gamma shape must be positive, got {alpha!r}")
    log_norm = math.lgamma(alpha)

    def log_carrier(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return special.xlogy(alpha - 1.0, x) - log_norm

    return ExpFamilyModel(
        name="gamma",
        log_carrier=log_carrier,
        stat=lambda x: -np.asarray(x, dtype=float),
        cumulant=lambda t: -alpha * math.log(t),
        cumulant_d1=lambda t: -alpha / t,
        cumulant_d2=lambda t: alpha / (t * t),
        natural_domain=(0.0, math.inf),
        sampler=lambda t, rng, size: rng.gamma(alpha, 1.0 / t, size),
        eta_inverse=lambda y: -alpha / y,
        cdf=lambda x, t: special.gammainc(alpha, t * np.asarray(x, dtype=float)),
        sf=lambda x, t: special.gammaincc(alpha, t * np.asarray(x, dtype=float)),
        params=(alpha,),
    )


_CATALOG: dict[str, Callable[..., ExpFamilyModel]] = {
    "exponential": exponential,
    "gamma": gamma,
}


def catalog_names() -> list[str]:
    return sorted(_CATALOG)


def get_model(spec: "str | ExpFamilyModel") -> ExpFamilyModel:
    """Build a model from a catalog string such as ``"exponential"`` or ``"gamma:2"``."""
    if isinstance(spec, ExpFamilyModel):
        return spec
    if not isinstance(spec, str) or not spec:
        raise ValueError(f"model spec must be a non-empty string, got {spec!r}")
    name, *args = spec.split(":")
    try:
        ctor = _CATALOG[name]
    except KeyError:
        raise ValueError(
            f"unknown model {name!r}; known models: {', '.join(catalog_names())}"
        ) from None
    try:
        values = [float(a) for a in args]
        return ctor(*values)
    except TypeError:
        raise ValueError(f"wrong number of parameters in model spec {spec!r}") from None


# ---------------------------------------------------------------------------
# operations


def log_density(model: ExpFamilyModel, x, theta: float):
    theta = model.check_param(theta)
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, -np.inf)
    pos = x >= 0
    if np.any(pos):
        xp = x[pos]
        out[pos] = model.log_carrier(xp) + theta * model.stat(xp) - model.cumulant(theta)
    return out if out.ndim else float(out)


def density(model: ExpFamilyModel, x, theta: float):
    """Evaluate ``a(x) exp(theta h(x) - k(theta))``; zero for negative ``x``."""
    return np.exp(log_density(model, x, theta))


def eta(model: ExpFamilyModel, theta: float) -> float:
    return float(model.cumulant_d1(model.check_param(theta)))


def sigma2(model: ExpFamilyModel, theta: float) -> float:
    return float(model.cumulant_d2(model.check_param(theta)))


def _bracket(model: ExpFamilyModel, y: float) -> tuple[float, float]:
    lo_dom, hi_dom = model.natural_domain
    if math.isfinite(lo_dom) and math.isfinite(hi_dom):
        start = 0.5 * (lo_dom + hi_dom)
    elif math.isfinite(lo_dom):
        start = lo_dom + 1.0
    elif math.isfinite(hi_dom):
        start = hi_dom - 1.0
    else:
        start = 0.0
    f = model.cumulant_d1
    e0 = f(start)
    if e0 == y:
        return start, start
    # eta is increasing, so walk from start toward the boundary on y's side
    up = e0 < y
    prev = start
    for k in range(1, _MAX_BRACKET_STEPS):
        if k > 1023:
            break
        if up:
            nxt = start + 2.0**k if math.isinf(hi_dom) else hi_dom - (hi_dom - start) * 0.5**k
        else:
            nxt = start - 2.0**k if math.isinf(lo_dom) else lo_dom + (start - lo_dom) * 0.5**k
        if not (lo_dom < nxt < hi_dom) or not math.isfinite(nxt) or nxt == prev:
            break
        e = f(nxt)
        if up and e >= y:
            return prev, nxt
        if not up and e <= y:
            return nxt, prev
        prev = nxt
    raise InversionError(
        f"{model.spec}: value {y!r} is outside the range of eta (bracketing failed)"
    )


def _eta_inv_generic(model: ExpFamilyModel, y: float) -> float:
    lo, hi = _bracket(model, y)
    f = model.cumulant_d1
    while hi - lo > _BISECT_WIDTH * max(1.0, abs(lo)):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if f(mid) < y:
            lo = mid
        else:
            hi = mid
    x = 0.5 * (lo + hi)
    # one Newton step polishes the last bits; keep it only if it stays in the bracket
    d2 = model.cumulant_d2(x)
    if d2 > 0:
        x_new = x - (f(x) - y) / d2
        if lo <= x_new <= hi:
            x = x_new
    return x


def eta_inv(model: ExpFamilyModel, y: float, method: str = "auto") -> float:
    """Invert the mean map ``eta``.

    ``method="auto"`` uses the model's closed form when it has one,
    ``"generic"`` forces bracketing plus bisection on the increasing ``eta``.
    """
    y = float(y)
    if not math.isfinite(y):
        raise InversionError(f"{model.spec}: cannot invert eta at {y!r}")
    if method not in ("auto", "generic"):
        raise ValueError(f"unknown inversion method {method!r}")
    if method == "auto" and model.eta_inverse is not None:
        with np.errstate(divide="ignore"):
            try:
                theta = float(model.eta_inverse(y))
            except ZeroDivisionError:
                theta = math.nan
        lo, hi = model.natural_domain
        if not (lo < theta < hi):
            raise InversionError(
                f"{model.spec}: value {y!r} is outside the range of eta"
            )
        return theta
    return _eta_inv_generic(model, y)


def _quad_cdf(model: ExpFamilyModel, x: float, theta: float) -> float:
    if x <= 0:
        return 0.0
    val, _ = integrate.quad(
        lambda t: density(model, t, theta), 0.0, x, epsabs=0.0, epsrel=_QUAD_TOL, limit=200
    )
    return min(1.0, val)


def _quad_sf(model: ExpFamilyModel, x: float, theta: float) -> float:
    if x <= 0:
        return 1.0
    val, _ = integrate.quad(
        lambda t: density(model, t, theta), x, np.inf, epsabs=0.0, epsrel=_QUAD_TOL, limit=200
    )
    return min(1.0, val)


def cdf(model: ExpFamilyModel, x, theta: float):
    theta = model.check_param(theta)
    x_arr = np.asarray(x, dtype=float)
    if model.cdf is not None:
        out = np.where(x_arr <= 0, 0.0, model.cdf(np.maximum(x_arr, 0.0), theta))
    else:
        out = np.vectorize(lambda v: _quad_cdf(model, v, theta))(x_arr)
    return out if np.ndim(out) else float(out)


def survival(model: ExpFamilyModel, x, theta: float):
    """Return ``1 - F(x; theta)``, the censoring factor for an unfinished interval."""
    theta = model.check_param(theta)
    x_arr = np.asarray(x, dtype=float)
    if model.sf is not None:
        out = np.where(x_arr <= 0, 1.0, model.sf(np.maximum(x_arr, 0.0), theta))
    elif model.cdf is not None:
        out = np.where(x_arr <= 0, 1.0, 1.0 - model.cdf(np.maximum(x_arr, 0.0), theta))
    else:
        out = np.vectorize(lambda v: _quad_sf(model, v, theta))(x_arr)
    return out if np.ndim(out) else float(out)


def sample(model: ExpFamilyModel, theta: float, rng: np.random.Generator, size=None):
    """Draw i.i.d. variates; deterministic given the generator state."""
    theta = model.check_param(theta)
    if size is None:
        return float(model.sampler(theta, rng, 1)[0])
    return np.asarray(model.sampler(theta, rng, size), dtype=float)
