"""Scikit-learn style front end for the rate estimator."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import mle
from ._validation import check_windows
from .expfam import get_model
from .qsim import ObservationWindow


def pool_windows(windows: list[ObservationWindow]) -> ObservationWindow:
    """Merge independent windows into one; their likelihoods simply add."""
    if len(windows) == 1:
        return windows[0]
    return ObservationWindow(
        T=float(sum(w.T for w in windows)),
        arrivals=np.concatenate([w.arrivals for w in windows]),
        services=np.concatenate([w.services for w in windows]),
        a_count=sum(w.a_count for w in windows),
        d_count=sum(w.d_count for w in windows),
        idle=float(sum(w.idle for w in windows)),
        rule="pooled",
    )


class QueueRateMLE(BaseEstimator):
    """Maximum likelihood estimator of the arrival and service parameters.

    Parameters
    ----------
    arrival, service : str
        Catalog names of the interarrival and service laws, e.g.
        ``"exponential"`` or ``"gamma:2"``.
    theta0, phi0 : float, optional
        True parameters. When both are set, ``fit`` also reports the
        standardized deviations ``z_theta_`` and ``z_phi_``.
    inversion : {"auto", "generic"}
        How the mean map is inverted; ``"generic"`` ignores closed forms.

    Attributes
    ----------
    theta_hat_, phi_hat_ : float
    info_theta_, info_phi_ : float
        Plug-in Fisher information at the estimates.
    result_ : MleResult
    """

    def __init__(self, arrival="exponential", service="exponential", theta0=None, phi0=None,
                 inversion="auto"):
        self.arrival = arrival
        self.service = service
        self.theta0 = theta0
        self.phi0 = phi0
        self.inversion = inversion

    def _true_params(self):
        if self.theta0 is None or self.phi0 is None:
            return None
        return (float(self.theta0), float(self.phi0))

    def fit(self, X, y=None):
        """Fit on one window, or on several independent windows pooled together."""
        windows = check_windows(X)
        arrival, service = get_model(self.arrival), get_model(self.service)
        res = mle.estimate(pool_windows(windows), arrival, service,
                           true_params=self._true_params(), inversion=self.inversion)
        self.result_ = res
        self.theta_hat_ = res.theta_hat
        self.phi_hat_ = res.phi_hat
        self.info_theta_ = res.info_theta
        self.info_phi_ = res.info_phi
        self.z_theta_ = res.z_theta
        self.z_phi_ = res.z_phi
        self.n_windows_ = len(windows)
        return self

    def transform(self, X):
        """Per-window estimates as an array of shape (n_windows, 2)."""
        windows = check_windows(X)
        arrival, service = get_model(self.arrival), get_model(self.service)
        out = np.empty((len(windows), 2))
        for i, w in enumerate(windows):
            r = mle.estimate(w, arrival, service, inversion=self.inversion)
            out[i] = r.theta_hat, r.phi_hat
        return out

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)

    def score(self, X, y=None):
        """Mean approximate log likelihood per window at the fitted parameters."""
        check_is_fitted(self, "result_")
        windows = check_windows(X)
        return float(np.mean([
            mle.loglik_approx(w, self.arrival, self.service, self.theta_hat_, self.phi_hat_)
            for w in windows
        ]))
