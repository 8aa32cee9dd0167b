"""Likelihoods and maximum likelihood estimates of arrival and service rates.

The estimator maximizes the approximate likelihood (censoring factors
dropped), which has the closed-form solution

    theta_hat = eta_1^{-1}( mean of h_1(u_i) )
    phi_hat   = eta_2^{-1}( mean of h_2(v_i) )

The full likelihood, with the survival factors of the two unfinished
intervals at T, is available for evaluation only.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import expfam
from .expfam import ExpFamilyModel, get_model
from .qsim import ObservationWindow

__all__ = [
    "InsufficientDataError",
    "MleResult",
    "loglik_approx",
    "loglik_full",
    "censoring_terms",
    "score",
    "observed_info",
    "estimate",
]


class InsufficientDataError(ValueError):
    """The window holds no completed interarrival or no completed service."""


@dataclass(frozen=True)
class MleResult:
    theta_hat: float
    phi_hat: float
    info_theta: float
    info_phi: float
    a_count: int
    d_count: int
    z_theta: Optional[float] = None
    z_phi: Optional[float] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.z_theta is None:
            del d["z_theta"]
        if self.z_phi is None:
            del d["z_phi"]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _part(model: ExpFamilyModel, x: np.ndarray, param: float) -> float:
    param = model.check_param(param)
    n = x.size
    if n == 0:
        return 0.0
    return float(
        np.sum(model.log_carrier(x)) + param * np.sum(model.stat(x)) - n * model.cumulant(param)
    )


def loglik_approx(window: ObservationWindow, arrival, service, theta: float, phi: float) -> float:
    """Log of the approximate likelihood (no censoring factors)."""
    arrival, service = get_model(arrival), get_model(service)
    return _part(arrival, window.arrivals, theta) + _part(service, window.services, phi)


def censoring_terms(window: ObservationWindow, arrival, service, theta, phi) -> tuple[float, float]:
    """Log survival factors of the unfinished interarrival and service intervals."""
    arrival, service = get_model(arrival), get_model(service)
    sa = expfam.survival(arrival, window.arrival_residual, theta)
    ss = expfam.survival(service, window.service_residual, phi)
    with np.errstate(divide="ignore"):
        return float(np.log(sa)), float(np.log(ss))


def loglik_full(window: ObservationWindow, arrival, service, theta: float, phi: float) -> float:
    """Log likelihood including both censoring factors.

    Returns ``-inf`` when a survival factor is zero.
    """
    ca, cs = censoring_terms(window, arrival, service, theta, phi)
    return loglik_approx(window, arrival, service, theta, phi) + ca + cs


def _stat_sum(model: ExpFamilyModel, x: np.ndarray) -> float:
    return float(np.sum(model.stat(x))) if x.size else 0.0


def score(window: ObservationWindow, model, theta: float, which: str = "arrival") -> float:
    """Derivative of the log likelihood: sum h(x_i) - n k'(theta)."""
    model = get_model(model)
    x = _obs(window, which)
    return _stat_sum(model, x) - x.size * expfam.eta(model, theta)


def observed_info(window: ObservationWindow, model, theta: float, which: str = "arrival") -> float:
    """Negative second derivative of the log likelihood: n sigma^2(theta)."""
    model = get_model(model)
    x = _obs(window, which)
    return x.size * expfam.sigma2(model, theta)


def _obs(window: ObservationWindow, which: str) -> np.ndarray:
    if which == "arrival":
        return window.arrivals
    if which == "service":
        return window.services
    raise ValueError(f"which must be 'arrival' or 'service', got {which!r}")


def _invert(model: ExpFamilyModel, total: float, n: int, inversion: str) -> float:
    return expfam.eta_inv(model, total / n, method=inversion)


def estimate(
    window: ObservationWindow,
    arrival,
    service,
    true_params: Optional[tuple[float, float]] = None,
    inversion: str = "auto",
) -> MleResult:
    """Maximum likelihood estimates from one window.

    With ``true_params=(theta0, phi0)`` the standardized deviations
    ``z = I^{1/2} (estimate - true)`` are filled in, using the information
    at the true value with the observed counts, ``I(theta0) = sigma2(theta0) A(T)``.
    """
    arrival, service = get_model(arrival), get_model(service)
    a, d = window.arrivals.size, window.services.size
    if a == 0:
        raise InsufficientDataError("no completed interarrival time in the window (A(T) = 0)")
    if d == 0:
        raise InsufficientDataError("no completed service time in the window (D(T) = 0)")
    theta_hat = _invert(arrival, _stat_sum(arrival, window.arrivals), a, inversion)
    phi_hat = _invert(service, _stat_sum(service, window.services), d, inversion)
    z_theta = z_phi = None
    if true_params is not None:
        theta0, phi0 = true_params
        z_theta = math.sqrt(a * expfam.sigma2(arrival, theta0)) * (theta_hat - theta0)
        z_phi = math.sqrt(d * expfam.sigma2(service, phi0)) * (phi_hat - phi0)
    return MleResult(
        theta_hat=theta_hat,
        phi_hat=phi_hat,
        info_theta=a * expfam.sigma2(arrival, theta_hat),
        info_phi=d * expfam.sigma2(service, phi_hat),
        a_count=a,
        d_count=d,
        z_theta=z_theta,
        z_phi=z_phi,
    )
