"""Seeded replication experiments for the estimator's asymptotics.

Every replication observes one sample path at each time of the grid
(nested windows). Replication ``r`` draws from its own stream

    PCG64(SeedSequence(master_seed, spawn_key=(r,)))

so results do not depend on how replications are spread over workers.
Aggregation always sorts records by replication id before reducing.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special

from . import classfn, expfam, mle, qsim
from .classfn import PreconditionError, Verdict

__all__ = [
    "ExperimentError",
    "ExperimentConfig",
    "PathRecord",
    "Report",
    "replication_rng",
    "simulate_paths",
    "ks_statistic",
    "normal_cdf",
    "aggregate_normality",
    "aggregate_condition_c1",
    "aggregate_crossings",
    "aggregate_consistency",
    "run_normality",
    "run_condition_c1",
    "run_crossings",
    "run_consistency",
    "MIN_REPLICATIONS",
]

MIN_REPLICATIONS = {"normality": 200, "c1": 500, "crossings": 500, "consistency": 500}
MAX_EXCLUDED = 0.05
ENVELOPE_CONSTANTS = (1, 5, 25)


class ExperimentError(RuntimeError):
    """An experiment ran but its data are unusable (e.g. too many empty windows)."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Inputs of one replication experiment.

    Models are catalog strings so that configs pickle cleanly into workers.
    """

    grid: tuple
    replications: int
    arrival: str = "exponential"
    theta0: float = 1.0
    service: str = "exponential"
    phi0: float = 1.5
    master_seed: int = 0
    boundaries: tuple = ()
    epsilon: str = "power:0.4"
    stability_check: bool = False

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(t) for t in self.grid))
        object.__setattr__(
            self, "boundaries", tuple(classfn.parse_class_function(b) for b in self.boundaries)
        )
        if isinstance(self.replications, bool) or int(self.replications) != self.replications \
                or self.replications < 1:
            raise PreconditionError(f"replications must be >= 1, got {self.replications!r}")
        object.__setattr__(self, "replications", int(self.replications))
        if not 0 <= int(self.master_seed) < 2**64:
            raise PreconditionError("master_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "master_seed", int(self.master_seed))
        if not self.grid:
            raise PreconditionError("time grid is empty")
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])) or self.grid[0] <= 0:
            raise PreconditionError("time grid must be positive and strictly increasing")
        arrival = expfam.get_model(self.arrival)
        service = expfam.get_model(self.service)
        arrival.check_param(self.theta0)
        service.check_param(self.phi0)
        classfn.parse_epsilon(self.epsilon)
        if self.stability_check:
            ma, ms = _mean(arrival, self.theta0), _mean(service, self.phi0)
            if not ma > ms:
                warnings.warn(
                    f"unstable queue: mean interarrival {ma:.6g} <= mean service {ms:.6g}",
                    RuntimeWarning,
                    stacklevel=2,
                )

    @property
    def eps(self) -> classfn.Epsilon:
        return classfn.parse_epsilon(self.epsilon)

    def to_dict(self) -> dict:
        return {
            "arrival": self.arrival,
            "theta0": self.theta0,
            "service": self.service,
            "phi0": self.phi0,
            "grid": list(self.grid),
            "replications": self.replications,
            "master_seed": self.master_seed,
            "boundaries": [b.to_dict() for b in self.boundaries],
            "epsilon": str(self.eps),
            "stability_check": self.stability_check,
        }


def _mean(model, param) -> float:
    val, _ = integrate.quad(lambda x: x * expfam.density(model, x, param), 0, np.inf)
    return val


@dataclass
class PathRecord:
    """Estimates along one replication's path, one entry per grid time."""

    rep: int
    T: np.ndarray
    theta_hat: np.ndarray
    phi_hat: np.ndarray
    z_theta: np.ndarray
    z_phi: np.ndarray
    A: np.ndarray
    D: np.ndarray
    idle: np.ndarray


def replication_rng(master_seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=(rep,))))


def _run_chunk(args) -> list[PathRecord]:
    arrival_spec, theta0, service_spec, phi0, grid, master_seed, reps = args
    arrival = expfam.get_model(arrival_spec)
    service = expfam.get_model(service_spec)
    k = len(grid)
    out = []
    for rep in reps:
        windows = qsim.checkpoints(arrival, theta0, service, phi0, grid, replication_rng(master_seed, rep))
        cols = {name: np.full(k, np.nan) for name in ("theta_hat", "phi_hat", "z_theta", "z_phi")}
        A = np.empty(k, dtype=np.int64)
        D = np.empty(k, dtype=np.int64)
        idle = np.empty(k)
        for i, w in enumerate(windows):
            A[i], D[i], idle[i] = w.a_count, w.d_count, w.idle
            if w.a_count >= 1 and w.d_count >= 1:
                r = mle.estimate(w, arrival, service, true_params=(theta0, phi0))
                cols["theta_hat"][i] = r.theta_hat
                cols["phi_hat"][i] = r.phi_hat
                cols["z_theta"][i] = r.z_theta
                cols["z_phi"][i] = r.z_phi
        out.append(PathRecord(rep, np.asarray(grid, dtype=float), A=A, D=D, idle=idle, **cols))
    return out


def simulate_paths(config: ExperimentConfig, workers: int = 1) -> list[PathRecord]:
    """Run all replications; the result is sorted by replication id."""
    reps = list(range(config.replications))
    base = (config.arrival, config.theta0, config.service, config.phi0, config.grid, config.master_seed)
    if workers <= 1 or len(reps) < 2:
        records = _run_chunk(base + (reps,))
    else:
        n_chunks = min(len(reps), 4 * workers)
        chunks = [reps[i::n_chunks] for i in range(n_chunks)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_chunk, [base + (c,) for c in chunks])
            records = [r for part in parts for r in part]
    return _sorted(records)


def _sorted(records: Sequence[PathRecord]) -> list[PathRecord]:
    recs = sorted(records, key=lambda r: r.rep)
    if any(a.rep == b.rep for a, b in zip(recs, recs[1:])):
        raise ValueError("duplicate replication ids")
    return recs


def _stack(records: Sequence[PathRecord], name: str) -> np.ndarray:
    return np.vstack([getattr(r, name) for r in records])


# ---------------------------------------------------------------------------
# statistics


def normal_cdf(x):
    return special.ndtr(x)


def ks_statistic(sample, cdf=normal_cdf) -> float:
    """Exact one-sample Kolmogorov-Smirnov distance to a continuous ``cdf``."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


# ---------------------------------------------------------------------------
# reports


@dataclass
class Report:
    """Tabular result plus a JSON summary.

    ``passed`` is the outcome of the experiment's envelope check.
    """

    name: str
    columns: tuple
    rows: list
    summary: dict = field(default_factory=dict)
    passed: Optional[bool] = None

    def column(self, name: str) -> list:
        return [row[name] for row in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows:
            w.writerow([_fmt(row[c]) for c in self.columns])
        return buf.getvalue()

    def summary_json(self) -> str:
        data = {"name": self.name, "passed": self.passed, **self.summary}
        return json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n"

    def write(self, outdir, config_hash: str, seed: int) -> tuple[Path, Path]:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        stem = f"{self.name}_{config_hash}_seed{seed}"
        csv_path, json_path = outdir / f"{stem}.csv", outdir / f"{stem}.json"
        csv_path.write_text(self.to_csv())
        json_path.write_text(self.summary_json())
        return csv_path, json_path


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def config_hash(data: dict) -> str:
    text = json.dumps(_jsonable(data), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _require_n(config: ExperimentConfig, kind: str):
    need = MIN_REPLICATIONS[kind]
    if config.replications < need:
        raise PreconditionError(f"{kind} needs at least {need} replications, got {config.replications}")


def _usable(records, which: str):
    z = _stack(records, which)
    ok = np.isfinite(z)
    return z, ok


# ---------------------------------------------------------------------------
# asymptotic normality


NORMALITY_COLUMNS = (
    "T", "n_used", "n_excluded", "ks_theta", "ks_phi", "mean_z_theta", "mean_z_phi",
    "sd_z_theta", "sd_z_phi", "eps_sqrt", "envelope_1", "envelope_5", "envelope_25",
)


def aggregate_normality(records, config: ExperimentConfig) -> Report:
    records = _sorted(records)
    zt, ok_t = _usable(records, "z_theta")
    zp, ok_p = _usable(records, "z_phi")
    n = len(records)
    rows = []
    for j, T in enumerate(config.grid):
        ok = ok_t[:, j] & ok_p[:, j]
        used = int(ok.sum())
        excluded = n - used
        if used == 0 or excluded / n > MAX_EXCLUDED:
            raise ExperimentError(
                f"T={T}: {excluded} of {n} windows had no arrival or no departure (limit 5%)"
            )
        a, b = zt[ok, j], zp[ok, j]
        es = math.sqrt(float(config.eps(T)))
        rows.append({
            "T": T,
            "n_used": used,
            "n_excluded": excluded,
            "ks_theta": ks_statistic(a),
            "ks_phi": ks_statistic(b),
            "mean_z_theta": float(np.mean(a)),
            "mean_z_phi": float(np.mean(b)),
            "sd_z_theta": float(np.std(a, ddof=1)) if used > 1 else math.nan,
            "sd_z_phi": float(np.std(b, ddof=1)) if used > 1 else math.nan,
            "eps_sqrt": es,
            "envelope_1": es,
            "envelope_5": 5 * es,
            "envelope_25": 25 * es,
        })
    passed = all(r["ks_theta"] <= r["envelope_25"] and r["ks_phi"] <= r["envelope_25"] for r in rows)
    summary = {
        "config": config.to_dict(),
        "envelope_check": "KS <= 25 * eps(T)^(1/2) for theta and phi at every T",
        "ks_theta_nonincreasing": bool(all(
            b["ks_theta"] <= a["ks_theta"] for a, b in zip(rows, rows[1:])
        )),
    }
    return Report("normality", NORMALITY_COLUMNS, rows, summary, passed)


def run_normality(config: ExperimentConfig, workers: int = 1) -> Report:
    """KS distance of the standardized estimates to N(0, 1) at each grid time."""
    _require_n(config, "normality")
    return aggregate_normality(simulate_paths(config, workers), config)


# ---------------------------------------------------------------------------
# concentration of the counting processes


C1_COLUMNS = (
    "T", "mean_A", "mean_D", "eps", "exceed_A", "se_A", "exceed_D", "se_D", "eps_sqrt",
)


def aggregate_condition_c1(records, config: ExperimentConfig) -> Report:
    records = _sorted(records)
    A = _stack(records, "A").astype(float)
    D = _stack(records, "D").astype(float)
    n = len(records)
    rows = []
    for j, T in enumerate(config.grid):
        e = float(config.eps(T))
        row = {"T": T, "eps": e, "eps_sqrt": math.sqrt(e)}
        for key, X in (("A", A[:, j]), ("D", D[:, j])):
            m = float(np.mean(X))
            if m > 0:
                p = float(np.mean(np.abs(X / m - 1.0) >= e))
            else:
                p = 1.0
            row[f"mean_{key}"] = m
            row[f"exceed_{key}"] = p
            row[f"se_{key}"] = math.sqrt(p * (1 - p) / n)
        rows.append(row)
    passed = all(
        r["exceed_A"] <= r["eps_sqrt"] + 2 * r["se_A"] and r["exceed_D"] <= r["eps_sqrt"] + 2 * r["se_D"]
        for r in rows
    )
    summary = {
        "config": config.to_dict(),
        "envelope_check": "exceedance <= eps(T)^(1/2) + 2 SE for A and D at every T",
    }
    return Report("c1", C1_COLUMNS, rows, summary, passed)


def run_condition_c1(config: ExperimentConfig, workers: int = 1) -> Report:
    """Frequency of |A(T)/mean A(T) - 1| >= eps(T), and the same for D(T)."""
    _require_n(config, "c1")
    return aggregate_condition_c1(simulate_paths(config, workers), config)


# ---------------------------------------------------------------------------
# boundary crossings


CROSSING_COLUMNS = ("boundary", "verdict", "tail_index", "T", "h", "checkpoint_freq", "tail_fraction")


def _verdict(h) -> str:
    try:
        return classfn.integral_test(h).verdict.value
    except PreconditionError:
        return "n/a"


def _check_geometric(grid, min_points=6):
    g = np.asarray(grid)
    if g.size < min_points:
        raise PreconditionError(f"crossing grid needs at least {min_points} checkpoints, got {g.size}")
    ratios = g[1:] / g[:-1]
    if not np.allclose(ratios, ratios[0], rtol=1e-6):
        raise PreconditionError("crossing grid must be geometric")


def aggregate_crossings(records, config: ExperimentConfig) -> Report:
    records = _sorted(records)
    z = _stack(records, "z_theta")
    grid = np.asarray(config.grid)
    rows = []
    freqs, tails, verdicts = {}, {}, {}
    for h in config.boundaries:
        hv = np.atleast_1d(h(grid))
        with np.errstate(invalid="ignore"):
            crossed = z > hv  # NaN compares False
        # tail j: any crossing at checkpoints k >= j
        tail_any = np.logical_or.accumulate(crossed[:, ::-1], axis=1)[:, ::-1]
        p = crossed.mean(axis=0)
        f = tail_any.mean(axis=0)
        v = _verdict(h)
        freqs[h.label], tails[h.label], verdicts[h.label] = p, f, v
        for j, T in enumerate(grid):
            rows.append({
                "boundary": h.label,
                "verdict": v,
                "tail_index": j,
                "T": float(T),
                "h": float(hv[j]),
                "checkpoint_freq": float(p[j]),
                "tail_fraction": float(f[j]),
            })
    uppers = [k for k, v in verdicts.items() if v == Verdict.UPPER.value]
    lowers = [k for k, v in verdicts.items() if v == Verdict.LOWER.value]
    passed = bool(uppers and lowers) and all(
        np.all(tails[lo] > tails[up]) for lo in lowers for up in uppers
    )
    summary = {
        "config": config.to_dict(),
        "verdicts": verdicts,
        "checkpoint_freqs": {k: list(v) for k, v in freqs.items()},
        "tail_fractions": {k: list(v) for k, v in tails.items()},
        "envelope_check": "every Lower-class tail fraction exceeds every Upper-class one at each tail index",
    }
    return Report("crossings", CROSSING_COLUMNS, rows, summary, passed)


def run_crossings(config: ExperimentConfig, workers: int = 1) -> Report:
    """Fraction of paths whose standardized estimate crosses each boundary.

    Needs a geometric grid of at least 6 checkpoints and boundaries that
    include at least one upper-class and one lower-class function.
    """
    _require_n(config, "crossings")
    _check_geometric(config.grid)
    if not config.boundaries:
        raise PreconditionError("crossing experiment needs boundaries")
    for h in config.boundaries:
        if config.grid[0] < h.domain_floor:
            raise PreconditionError(f"{h.label}: grid starts below the boundary's domain floor")
    verdicts = {_verdict(h) for h in config.boundaries}
    if not {Verdict.UPPER.value, Verdict.LOWER.value} <= verdicts:
        raise PreconditionError("boundaries must include an upper-class and a lower-class function")
    return aggregate_crossings(simulate_paths(config, workers), config)


# ---------------------------------------------------------------------------
# consistency


CONSISTENCY_COLUMNS = ("T", "n_used", "mae_theta", "mae_phi", "ratio_theta", "ratio_phi")


def aggregate_consistency(records, config: ExperimentConfig) -> Report:
    records = _sorted(records)
    th = _stack(records, "theta_hat")
    ph = _stack(records, "phi_hat")
    rows = []
    for j, T in enumerate(config.grid):
        ok = np.isfinite(th[:, j]) & np.isfinite(ph[:, j])
        if not ok.any():
            raise ExperimentError(f"T={T}: no window with both an arrival and a departure")
        rows.append({
            "T": T,
            "n_used": int(ok.sum()),
            "mae_theta": float(np.mean(np.abs(th[ok, j] - config.theta0))),
            "mae_phi": float(np.mean(np.abs(ph[ok, j] - config.phi0))),
        })
    for a, b in zip(rows, rows[1:] + [None]):
        a["ratio_theta"] = b["mae_theta"] / a["mae_theta"] if b else None
        a["ratio_phi"] = b["mae_phi"] / a["mae_phi"] if b else None
    checked = [r for r in rows if r["T"] >= 400 and r["ratio_theta"] is not None]
    passed = all(0.4 <= r["ratio_theta"] <= 0.6 for r in checked)
    summary = {
        "config": config.to_dict(),
        "envelope_check": "MAE(4T)/MAE(T) for theta within [0.4, 0.6] for T >= 400",
    }
    return Report("consistency", CONSISTENCY_COLUMNS, rows, summary, passed)


def run_consistency(config: ExperimentConfig, workers: int = 1) -> Report:
    """Mean absolute error of the estimates on a grid with ratio-4 spacing."""
    _require_n(config, "consistency")
    g = np.asarray(config.grid)
    if g.size < 2 or not np.allclose(g[1:] / g[:-1], 4.0, rtol=1e-9):
        raise PreconditionError("consistency grid must have ratio-4 spacing")
    return aggregate_consistency(simulate_paths(config, workers), config)
