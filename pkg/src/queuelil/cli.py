"""Command line entry point.

Exit codes: 0 success, 2 configuration or precondition error, 3 data
error, 4 envelope check failed under ``--strict``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import classfn, montecarlo, qsim
from ._validation import check_window
from .classfn import PreconditionError
from .expfam import InversionError
from .mle import InsufficientDataError, estimate
from .montecarlo import ExperimentConfig, ExperimentError, config_hash

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_STRICT = 0, 2, 3, 4

_GRID = {
    "oneOf": [
        {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        {
            "type": "object",
            "properties": {
                "start": {"type": "number", "exclusiveMinimum": 0},
                "stop": {"type": "number", "exclusiveMinimum": 0},
                "num": {"type": "integer", "minimum": 1},
            },
            "required": ["start", "stop", "num"],
            "additionalProperties": False,
        },
    ]
}

_BOUNDARY = {
    "oneOf": [
        {"type": "string"},
        {
            "type": "object",
            "properties": {
                "family": {"enum": ["scaled_lil", "power_loglog", "table"]},
                "c": {"type": "number"},
                "t": {"type": "array", "items": {"type": "number"}},
                "h": {"type": "array", "items": {"type": "number"}},
                "domain_floor": {"type": "number"},
            },
            "required": ["family"],
            "additionalProperties": False,
        },
    ]
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "arrival": {"type": "string", "minLength": 1},
        "theta0": {"type": "number"},
        "service": {"type": "string", "minLength": 1},
        "phi0": {"type": "number"},
        "rule": {"type": "string"},
        "grid": _GRID,
        "replications": {"type": "integer", "minimum": 1},
        "master_seed": {"type": "integer", "minimum": 0},
        "boundaries": {"type": "array", "items": _BOUNDARY},
        "epsilon": {"type": "string"},
        "stability_check": {"type": "boolean"},
        "out": {"type": "string"},
        "parallel": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

_MODEL_KEYS = ["arrival", "theta0", "service", "phi0"]
REQUIRED = {
    "simulate": _MODEL_KEYS + ["rule"],
    "normality": _MODEL_KEYS + ["grid", "replications"],
    "c1check": _MODEL_KEYS + ["grid", "replications"],
    "crossings": _MODEL_KEYS + ["grid", "replications", "boundaries"],
    "consistency": _MODEL_KEYS + ["grid", "replications"],
}
# keys that never change results and so stay out of the config hash
_UNHASHED = {"out", "parallel"}


class ConfigError(ValueError):
    pass


def load_config(path, command: str, overrides: dict) -> dict:
    """Read, merge and validate a config file; flags in ``overrides`` win."""
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    schema = dict(CONFIG_SCHEMA, required=REQUIRED.get(command, []))
    try:
        jsonschema.validate(data, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(f"config error{' at ' + where if where else ''}: {exc.message}") from None
    return data


def _grid(spec) -> tuple:
    if isinstance(spec, dict):
        return tuple(float(x) for x in np.geomspace(spec["start"], spec["stop"], spec["num"]))
    return tuple(float(x) for x in spec)


def experiment_config(data: dict) -> ExperimentConfig:
    return ExperimentConfig(
        grid=_grid(data["grid"]),
        replications=data["replications"],
        arrival=data["arrival"],
        theta0=data["theta0"],
        service=data["service"],
        phi0=data["phi0"],
        master_seed=data.get("master_seed", 0),
        boundaries=tuple(data.get("boundaries", ())),
        epsilon=data.get("epsilon", "power:0.4"),
        stability_check=data.get("stability_check", False),
    )


def _run_dir(data: dict, command: str) -> tuple[Path, str]:
    h = config_hash({k: v for k, v in data.items() if k not in _UNHASHED})
    return Path(data.get("out", "runs")) / command / h, h


def _emit(obj: dict, args, name: str):
    text = json.dumps(montecarlo._jsonable(obj), indent=2, sort_keys=True) + "\n"
    if args.out:
        data = {k: v for k, v in vars(args).items() if k not in ("func", "out", "strict", "parallel")}
        outdir, h = _run_dir(dict(data, out=args.out), args.command)
        outdir.mkdir(parents=True, exist_ok=True)
        path = outdir / f"{name}_{h}.json"
        path.write_text(text)
    sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    data = load_config(args.config, "simulate", {
        "master_seed": args.seed, "out": args.out, "rule": args.rule,
    })
    rule = qsim.parse_rule(data["rule"])
    seed = data.get("master_seed", 0)
    rng = np.random.default_rng(seed)
    win = qsim.simulate(data["arrival"], data["theta0"], data["service"], data["phi0"], rule, rng)
    outdir, h = _run_dir(data, "simulate")
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / f"window_{h}_seed{seed}.json"
    path.write_text(win.to_json())
    print(path)
    return EXIT_OK


def cmd_estimate(args) -> int:
    win = check_window(args.window)
    true = None
    if args.theta0 is not None or args.phi0 is not None:
        if args.theta0 is None or args.phi0 is None:
            raise ConfigError("--theta0 and --phi0 must be given together")
        true = (args.theta0, args.phi0)
    res = estimate(win, args.arrival, args.service, true_params=true, inversion=args.inversion)
    _emit(res.to_dict(), args, "mle")
    return EXIT_OK


def _experiment(args, command: str, runner) -> int:
    data = load_config(args.config, command, {
        "master_seed": args.seed, "out": args.out, "parallel": args.parallel,
    })
    config = experiment_config(data)
    report = runner(config, workers=data.get("parallel", 1))
    outdir, h = _run_dir(data, command)
    for p in report.write(outdir, h, config.master_seed):
        print(p)
    if args.strict and not report.passed:
        print(f"{command}: envelope check failed", file=sys.stderr)
        return EXIT_STRICT
    return EXIT_OK


def cmd_normality(args) -> int:
    return _experiment(args, "normality", montecarlo.run_normality)


def cmd_c1(args) -> int:
    return _experiment(args, "c1check", montecarlo.run_condition_c1)


def cmd_crossings(args) -> int:
    return _experiment(args, "crossings", montecarlo.run_crossings)


def cmd_consistency(args) -> int:
    return _experiment(args, "consistency", montecarlo.run_consistency)


def _boundary(args) -> classfn.ClassFunction:
    return classfn.parse_class_function({"family": args.family, "c": args.param})


def cmd_classify(args) -> int:
    report = classfn.integral_test(_boundary(args), t_max=args.t_max, margin=args.margin)
    _emit(report.to_dict(), args, "classify")
    return EXIT_OK


def cmd_c2check(args) -> int:
    report = classfn.condition_c2_check(classfn.parse_epsilon(args.epsilon), t_max=args.t_max)
    _emit(report.to_dict(), args, "c2check")
    return EXIT_OK


def cmd_diagnostics(args) -> int:
    grid = classfn.geometric_grid(args.t_min, args.t_max, args.points)
    probs = None
    if args.probs:
        try:
            probs = [float(x) for x in args.probs.split(",")]
        except ValueError:
            raise ConfigError(f"--probs must be comma separated numbers, got {args.probs!r}") from None
    table = classfn.series_diagnostics(_boundary(args), grid, probs, C=args.C, weights=args.weights)
    text = table.to_csv()
    if args.out:
        data = {k: v for k, v in vars(args).items() if k not in ("func", "out")}
        outdir, h = _run_dir(dict(data, out=args.out), "diagnostics")
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / f"diagnostics_{h}.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="queuelil", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, strict=False, parallel=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--out", help="output root directory")
        if strict:
            p.add_argument("--strict", action="store_true", help="exit 4 when the envelope check fails")
        if parallel:
            p.add_argument("--parallel", type=int, help="worker processes")

    p = sub.add_parser("simulate", help="simulate one observation window")
    common(p)
    p.add_argument("--rule", help="stopping rule, e.g. fixed_time:100 or fixed_arrivals:5")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate rates from a window file")
    p.add_argument("window", help="window JSON file")
    p.add_argument("--arrival", default="exponential")
    p.add_argument("--service", default="exponential")
    p.add_argument("--theta0", type=float)
    p.add_argument("--phi0", type=float)
    p.add_argument("--inversion", choices=["auto", "generic"], default="auto")
    p.add_argument("--out")
    p.set_defaults(func=cmd_estimate)

    for name, func, help_ in (
        ("normality", cmd_normality, "KS distance of standardized estimates to N(0,1)"),
        ("crossings", cmd_crossings, "boundary crossing experiment on nested paths"),
        ("c1check", cmd_c1, "concentration of the counting processes"),
        ("consistency", cmd_consistency, "mean absolute error on a ratio-4 grid"),
    ):
        p = sub.add_parser(name, help=help_)
        common(p, strict=True, parallel=True)
        p.set_defaults(func=func)

    p = sub.add_parser("classify", help="integral test for a boundary function")
    p.add_argument("--family", required=True, choices=["scaled_lil", "power_loglog"])
    p.add_argument("--param", type=float, required=True)
    p.add_argument("--t-max", type=float, default=classfn.DEFAULT_T_MAX)
    p.add_argument("--margin", type=float, default=0.05)
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("c2check", help="integrability of an epsilon function")
    p.add_argument("--epsilon", default="power:0.4", help="power:<a>, iterlog:<a>, exp or const:<a>")
    p.add_argument("--t-max", type=float, default=classfn.DEFAULT_C2_T_MAX)
    p.add_argument("--out")
    p.set_defaults(func=cmd_c2check)

    p = sub.add_parser("diagnostics", help="partial sums of the crossing series")
    p.add_argument("--family", required=True, choices=["scaled_lil", "power_loglog"])
    p.add_argument("--param", type=float, required=True)
    p.add_argument("--t-min", type=float, default=100.0)
    p.add_argument("--t-max", type=float, default=1e12)
    p.add_argument("--points", type=int, default=40)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--probs", help="comma separated crossing probabilities aligned with the grid")
    p.add_argument("--weights", choices=["spacing", "unit"], default="spacing")
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnostics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InsufficientDataError, InversionError, ExperimentError, qsim.SimulationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, PreconditionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
