import math
import random

import numpy as np
import pytest
from scipy import stats

from queuelil import montecarlo as mc
from queuelil.classfn import PreconditionError, ScaledLil, UserTable, series_diagnostics
from queuelil.montecarlo import ExperimentConfig


def cfg(**kw):
    base = dict(grid=(50.0, 200.0), replications=500, master_seed=7)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def small_paths():
    config = cfg(grid=(100.0, 400.0, 1600.0), replications=200)
    return config, mc.simulate_paths(config)


class TestKolmogorovSmirnov:
    @pytest.mark.parametrize("n", [1, 5, 50, 1000])
    def test_matches_scipy(self, n):
        x = np.random.default_rng(n).standard_normal(n)
        assert mc.ks_statistic(x) == pytest.approx(stats.kstest(x, "norm").statistic, abs=1e-14)

    def test_single_point(self):
        for x in (-1.3, 0.0, 0.7):
            phi = stats.norm.cdf(x)
            assert mc.ks_statistic([x]) == pytest.approx(max(phi, 1 - phi), abs=1e-15)

    def test_custom_cdf(self):
        x = np.random.default_rng(3).uniform(size=200)
        ref = stats.kstest(x, "uniform").statistic
        assert mc.ks_statistic(x, cdf=lambda v: np.clip(v, 0, 1)) == pytest.approx(ref, abs=1e-14)

    def test_empty(self):
        with pytest.raises(ValueError):
            mc.ks_statistic([])


class TestStreams:
    def test_replication_streams_independent_of_order(self):
        a = mc.replication_rng(11, 5).standard_normal(4)
        mc.replication_rng(11, 4).standard_normal(100)
        b = mc.replication_rng(11, 5).standard_normal(4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, mc.replication_rng(11, 6).standard_normal(4))
        assert not np.array_equal(a, mc.replication_rng(12, 5).standard_normal(4))

    def test_parallel_bit_identical(self):
        config = cfg(replications=40)
        serial = mc.simulate_paths(config, workers=1)
        par = mc.simulate_paths(config, workers=2)
        assert [r.rep for r in par] == list(range(40))
        for a, b in zip(serial, par):
            for name in ("theta_hat", "phi_hat", "z_theta", "z_phi", "A", "D", "idle"):
                assert np.array_equal(getattr(a, name), getattr(b, name), equal_nan=True)

    def test_nested_checkpoints_counts_monotone(self, small_paths):
        _, recs = small_paths
        for r in recs:
            assert np.all(np.diff(r.A) >= 0) and np.all(np.diff(r.D) >= 0)


class TestConfig:
    @pytest.mark.parametrize("kw", [
        dict(replications=0),
        dict(replications=2.5),
        dict(grid=()),
        dict(grid=(10.0, 5.0)),
        dict(grid=(-1.0, 5.0)),
        dict(theta0=-1.0),
        dict(arrival="weibull"),
        dict(epsilon="bogus:1"),
        dict(master_seed=-1),
    ])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            cfg(**kw)

    def test_stability_warning(self):
        with pytest.warns(RuntimeWarning, match="unstable"):
            cfg(theta0=2.0, phi0=1.0, stability_check=True)

    def test_gamma_stable_no_warning(self, recwarn):
        cfg(arrival="gamma:2", theta0=1.0, phi0=1.5, stability_check=True)
        assert not [w for w in recwarn if issubclass(w.category, RuntimeWarning)]

    @pytest.mark.parametrize("runner,kind", [
        (mc.run_normality, "normality"),
        (mc.run_condition_c1, "c1"),
        (mc.run_consistency, "consistency"),
    ])
    def test_too_few_replications(self, runner, kind):
        with pytest.raises(PreconditionError, match=str(mc.MIN_REPLICATIONS[kind])):
            runner(cfg(replications=mc.MIN_REPLICATIONS[kind] - 1))


class TestAggregation:
    def test_shuffle_invariant(self, small_paths):
        config, recs = small_paths
        shuffled = list(recs)
        random.Random(1).shuffle(shuffled)
        for agg in (mc.aggregate_normality, mc.aggregate_condition_c1, mc.aggregate_consistency):
            assert agg(recs, config).to_csv() == agg(shuffled, config).to_csv()

    def test_duplicate_ids(self, small_paths):
        config, recs = small_paths
        with pytest.raises(ValueError):
            mc.aggregate_normality(recs + recs[:1], config)

    def test_normality_columns(self, small_paths):
        config, recs = small_paths
        rep = mc.aggregate_normality(recs, config)
        assert rep.to_csv().splitlines()[0] == ",".join(mc.NORMALITY_COLUMNS)
        assert rep.column("n_used") == [200, 200, 200]
        for row in rep.rows:
            es = math.sqrt(row["T"] ** -0.4)
            assert row["envelope_5"] == pytest.approx(5 * es)
            assert abs(row["mean_z_theta"]) < 4 / math.sqrt(200) + 0.1

    def test_exclusion_limit(self):
        # tiny T leaves many windows without a departure
        config = cfg(grid=(0.3,), replications=200)
        with pytest.raises(mc.ExperimentError, match="5%"):
            mc.aggregate_normality(mc.simulate_paths(config), config)

    def test_c1_constant_epsilon_never_exceeded(self, small_paths):
        config, recs = small_paths
        config = cfg(grid=config.grid, replications=200, epsilon="const:10")
        rep = mc.aggregate_condition_c1(recs, config)
        assert rep.column("exceed_A") == [0.0] * 3
        assert rep.passed

    def test_c1_exceedance_matches_direct_count(self, small_paths):
        config, recs = small_paths
        rep = mc.aggregate_condition_c1(recs, config)
        A = np.array([r.A[1] for r in recs], dtype=float)
        e = 400.0 ** -0.4
        expect = np.mean(np.abs(A / A.mean() - 1) >= e)
        assert rep.rows[1]["exceed_A"] == pytest.approx(expect)

    def test_consistency_recovers_rates(self, small_paths):
        config, recs = small_paths
        rep = mc.aggregate_consistency(recs, config)
        mae = rep.column("mae_theta")
        assert mae == sorted(mae, reverse=True)
        assert rep.rows[-1]["ratio_theta"] is None
        # MAE of a root-T consistent estimator: about sqrt(2/pi) theta0 / sqrt(T)
        assert mae[-1] == pytest.approx(math.sqrt(2 / math.pi) / math.sqrt(1600), rel=0.25)

    def test_consistency_needs_ratio_four(self):
        with pytest.raises(PreconditionError, match="ratio-4"):
            mc.run_consistency(cfg(grid=(100.0, 300.0)))


CROSS_GRID = tuple(np.geomspace(100, 1e4, 7))


@pytest.fixture(scope="module")
def crossing_paths():
    return mc.simulate_paths(cfg(grid=CROSS_GRID, replications=500))


class TestCrossings:
    grid = CROSS_GRID

    @pytest.fixture
    def recs(self, crossing_paths):
        return crossing_paths

    def test_zero_boundary_is_a_coin_flip(self, recs):
        config = cfg(grid=self.grid, replications=500,
                     boundaries=({"family": "table", "t": [10, 1e6], "h": [0, 0]},))
        rep = mc.aggregate_crossings(recs, config)
        freqs = rep.summary["checkpoint_freqs"]["table[2]"]
        se = math.sqrt(0.25 / 500)
        assert all(abs(f - 0.5) < 4 * se for f in freqs)
        assert rep.passed is False

    def test_infinite_boundary_never_crossed(self, recs):
        config = cfg(grid=self.grid, replications=500,
                     boundaries=({"family": "table", "t": [10, 1e6], "h": [math.inf, math.inf]},))
        rep = mc.aggregate_crossings(recs, config)
        assert set(rep.column("tail_fraction")) == {0.0}

    def test_lower_dominates_upper(self, recs):
        config = cfg(grid=self.grid, replications=500, boundaries=("scaled_lil:0.5", "scaled_lil:1.5"))
        rep = mc.aggregate_crossings(recs, config)
        assert rep.summary["verdicts"] == {"scaled_lil:0.5": "Lower", "scaled_lil:1.5": "Upper"}
        assert rep.passed
        tails = rep.summary["tail_fractions"]["scaled_lil:0.5"]
        assert tails == sorted(tails, reverse=True)

    def test_frequencies_feed_series_diagnostics(self, recs):
        config = cfg(grid=self.grid, replications=500, boundaries=("scaled_lil:0.5",))
        rep = mc.aggregate_crossings(recs, config)
        p = rep.summary["checkpoint_freqs"]["scaled_lil:0.5"]
        tab = series_diagnostics(ScaledLil(0.5), config.grid, p)
        assert len(tab.S_A) == len(config.grid) and np.all(np.diff(tab.S_A) >= 0)

    @pytest.mark.parametrize("kw,match", [
        (dict(grid=(100.0, 200.0, 400.0)), "at least 6"),
        (dict(grid=(100.0, 200.0, 300.0, 400.0, 500.0, 600.0)), "geometric"),
        (dict(boundaries=("scaled_lil:1.5", "scaled_lil:2")), "upper-class and a lower-class"),
        (dict(boundaries=()), "boundaries"),
        (dict(replications=499), "500"),
    ])
    def test_preconditions(self, kw, match):
        base = dict(grid=self.grid, replications=500, boundaries=("scaled_lil:0.5", "scaled_lil:1.5"))
        base.update(kw)
        with pytest.raises(PreconditionError, match=match):
            mc.run_crossings(cfg(**base))


class TestReport:
    def test_write_names_and_round_trip(self, tmp_path, small_paths):
        config, recs = small_paths
        rep = mc.aggregate_condition_c1(recs, config)
        csv_path, json_path = rep.write(tmp_path, "abc123", 7)
        assert csv_path.name == "c1_abc123_seed7.csv"
        assert json_path.name == "c1_abc123_seed7.json"
        assert csv_path.read_text() == rep.to_csv()
        rows = csv_path.read_text().splitlines()[1:]
        assert float(rows[0].split(",")[0]) == 100.0

    def test_floats_round_trip_exactly(self):
        rep = mc.Report("x", ("v",), [{"v": 0.1 + 0.2}])
        assert float(rep.to_csv().splitlines()[1]) == 0.1 + 0.2

    def test_config_hash_stable(self):
        d = cfg().to_dict()
        assert mc.config_hash(d) == mc.config_hash(dict(reversed(list(d.items()))))
        assert mc.config_hash(d) != mc.config_hash({**d, "master_seed": 8})
        assert len(mc.config_hash(d)) == 12
