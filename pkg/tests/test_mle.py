import math

import mpmath
import numpy as np
import pytest

from queuelil import expfam, mle
from queuelil.mle import InsufficientDataError, estimate, loglik_approx, loglik_full
from queuelil.qsim import FixedArrivals, FixedTime, ObservationWindow, simulate


def window(u, v, T=None, idle=0.0):
    u, v = np.asarray(u, float), np.asarray(v, float)
    if T is None:
        T = max(u.sum(), idle + v.sum())
    return ObservationWindow(T=T, arrivals=u, services=v, a_count=u.size, d_count=v.size, idle=idle)


def random_windows(n, seed=0, service="exponential"):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        theta, phi = rng.uniform(0.3, 3.0, 2)
        T = rng.uniform(20, 400)
        w = simulate("exponential", theta, service, phi, FixedTime(T), rng)
        if w.a_count and w.d_count:
            out.append((w, theta, phi))
    return out


class TestLoglik:
    def test_mm1_example(self):
        # A=2, sum u=3, theta=1, D=1, sum v=0.5, phi=2
        w = window([1.0, 2.0], [0.5], T=3.0)
        with mpmath.workdps(30):
            oracle = 2 * mpmath.log(1) - 3 + 1 * mpmath.log(2) - 2 * mpmath.mpf("0.5")
        got = loglik_approx(w, "exponential", "exponential", 1.0, 2.0)
        assert got == pytest.approx(float(oracle), rel=1e-14)
        assert got == pytest.approx(-3.306853, abs=1e-6)

    def test_empty_window(self):
        assert loglik_approx(window([], [], T=1.0), "exponential", "exponential", 1.3, 0.7) == 0.0

    def test_maximizer(self):
        for w, _, _ in random_windows(30, seed=1):
            r = estimate(w, "exponential", "exponential")
            best = loglik_approx(w, "exponential", "exponential", r.theta_hat, r.phi_hat)
            for d in (-1e-3, 1e-3):
                assert best >= loglik_approx(w, "exponential", "exponential", r.theta_hat + d, r.phi_hat)
                assert best >= loglik_approx(w, "exponential", "exponential", r.theta_hat, r.phi_hat + d)

    def test_strictly_concave_on_grid(self):
        for w, _, _ in random_windows(10, seed=2, service="gamma:2"):
            r = estimate(w, "exponential", "gamma:2")
            grid = r.theta_hat * np.linspace(0.7, 1.3, 10)
            vals = [loglik_approx(w, "exponential", "gamma:2", t, r.phi_hat) for t in grid]
            assert np.all(np.diff(vals, 2) < 0)

    def test_full_minus_approx_exponential(self):
        # residual of 1 at rate 1 gives a censoring factor exp(-1)
        w = window([1.5, 2.5], [], T=5.0, idle=5.0)
        diff = loglik_full(w, "exponential", "exponential", 1.0, 1.0) - loglik_approx(
            w, "exponential", "exponential", 1.0, 1.0)
        assert diff == pytest.approx(-1.0, rel=1e-14)

    def test_rule3_has_no_arrival_censoring(self, rng):
        w = simulate("exponential", 1.0, "exponential", 1.5, FixedArrivals(20), rng)
        ca, _ = mle.censoring_terms(w, "exponential", "exponential", 1.0, 1.5)
        assert abs(ca) <= 1e-12

    def test_gamma_censoring_against_quadrature(self):
        w = window([0.4, 0.9], [0.3], T=2.0, idle=0.2)
        ca, cs = mle.censoring_terms(w, "gamma:2", "gamma:3", 2.5, 4.0)
        with mpmath.workdps(30):
            fa = lambda t: 2.5**2 * t * mpmath.exp(-2.5 * t)
            fs = lambda t: 4.0**3 * t**2 * mpmath.exp(-4.0 * t) / 2
            oa = mpmath.log(mpmath.quad(fa, [0.7, mpmath.inf]))
            os_ = mpmath.log(mpmath.quad(fs, [1.5, mpmath.inf]))
        assert ca == pytest.approx(float(oa), abs=1e-8)
        assert cs == pytest.approx(float(os_), abs=1e-8)

    def test_censoring_terms_nonpositive(self):
        for w, theta, phi in random_windows(50, seed=3, service="gamma:2"):
            ca, cs = mle.censoring_terms(w, "exponential", "gamma:2", theta, phi)
            assert ca <= 0 and cs <= 0

    def test_zero_survival_gives_minus_inf(self):
        w = window([1.0], [], T=1e4, idle=1e4)
        assert loglik_full(w, "exponential", "exponential", 1.0, 1.0) == -math.inf


class TestEstimate:
    def test_closed_forms(self):
        w = window([0.5, 1.5, 1.0], [0.25, 0.25], T=3.0, idle=2.5)
        r = estimate(w, "exponential", "exponential")
        assert r.theta_hat == pytest.approx(1.0, rel=1e-15)
        assert r.phi_hat == pytest.approx(4.0, rel=1e-15)
        assert r.z_theta is None and r.z_phi is None
        assert r.a_count == 3 and r.d_count == 2

    def test_generic_inversion_gamma(self):
        for w, _, _ in random_windows(100, seed=4, service="gamma:2"):
            r = estimate(w, "gamma:2", "gamma:2", inversion="generic")
            assert r.theta_hat == pytest.approx(2 * w.a_count / w.arrivals.sum(), rel=1e-10)
            assert r.phi_hat == pytest.approx(2 * w.d_count / w.services.sum(), rel=1e-10)

    def test_standardized(self):
        w = window([0.5, 1.5, 1.0, 1.0], [0.5, 0.25], T=4.0, idle=3.25)
        r = estimate(w, "exponential", "exponential", true_params=(2.0, 3.0))
        # I(theta0) = A / theta0^2
        assert r.z_theta == pytest.approx(math.sqrt(4 / 4.0) * (1.0 - 2.0))
        assert r.z_phi == pytest.approx(math.sqrt(2 / 9.0) * (8 / 3 - 3.0))
        assert r.info_theta == pytest.approx(4 / 1.0**2)

    def test_true_value_recovered(self):
        # a window whose mean of h equals eta(theta0) returns theta0 exactly
        theta0 = 1.7
        w = window([1 / theta0] * 5, [1 / 2.2] * 3)
        r = estimate(w, "exponential", "exponential", inversion="generic")
        assert r.theta_hat == pytest.approx(theta0, rel=1e-10)
        assert r.phi_hat == pytest.approx(2.2, rel=1e-10)

    @pytest.mark.parametrize("u,v", [([], [1.0]), ([1.0], [])])
    def test_insufficient(self, u, v):
        with pytest.raises(InsufficientDataError):
            estimate(window(u, v, T=2.0), "exponential", "exponential")

    def test_score_vanishes_at_estimate(self):
        for w, _, _ in random_windows(50, seed=5, service="gamma:2"):
            r = estimate(w, "exponential", "gamma:2")
            assert abs(mle.score(w, "exponential", r.theta_hat)) <= 1e-8 * w.a_count
            assert abs(mle.score(w, "gamma:2", r.phi_hat, which="service")) <= 1e-8 * w.d_count


class TestDerivatives:
    def test_observed_info_value(self):
        w = window(np.full(100, 0.5), [1.0], T=60.0)
        assert mle.observed_info(w, "exponential", 2.0) == pytest.approx(25.0)

    @pytest.mark.parametrize("service", ["exponential", "gamma:2"])
    def test_against_finite_differences(self, service):
        for w, theta, phi in random_windows(40, seed=6, service=service):
            f = lambda t: loglik_approx(w, "exponential", service, t, phi)
            g = lambda p: loglik_approx(w, "exponential", service, theta, p)
            step = 1e-5
            fd = (f(theta + step) - f(theta - step)) / (2 * step)
            assert mle.score(w, "exponential", theta) == pytest.approx(fd, rel=1e-6, abs=1e-6)
            fd = (g(phi + step) - g(phi - step)) / (2 * step)
            assert mle.score(w, service, phi, which="service") == pytest.approx(fd, rel=1e-6, abs=1e-6)
            h = 1e-3 * theta
            fd2 = (f(theta + h) - 2 * f(theta) + f(theta - h)) / h**2
            assert mle.observed_info(w, "exponential", theta) == pytest.approx(-fd2, rel=1e-6)

    def test_unknown_side(self):
        with pytest.raises(ValueError):
            mle.score(window([1.0], [1.0]), "exponential", 1.0, which="both")


def test_result_json():
    r = estimate(window([0.5, 1.5, 1.0], [0.25, 0.25]), "exponential", "exponential",
                 true_params=(1.0, 4.0))
    d = r.to_dict()
    assert d["theta_hat"] == pytest.approx(1.0) and d["z_theta"] == pytest.approx(0.0, abs=1e-12)
    assert "z_phi" in d
    assert "z_theta" not in estimate(window([1.0], [1.0]), "exponential", "exponential").to_dict()
