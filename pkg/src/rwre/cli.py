"""Command-line entry point.

Every failure ends with one machine-parsable line on stderr,
``rwre: error code=<name> exit=<status> message=<json string>``.
"""

from __future__ import annotations

import argparse
import json
import os
import secrets
import sys
from pathlib import Path

import numpy as np

from . import oracle, study
from .env_field import ConductanceLaw, EnvironmentField, InvalidLawError, parse_seed
from .estimator import CSV_FIELDS, unit_direction
from .walker import simulate_discrete

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_INVALID_PARAM = 3
EXIT_BUDGET = 4
EXIT_WRITE = 5

COMMANDS = ("estimate", "sweep", "fluctuations", "diagnostics", "oracle-check")

DEFAULTS = {
    "law": "two_point:1,4,0.5",
    "d": 2,
    "t": None,
    "n": None,
    "K": None,
    "m": None,
    "lam": 0.05,
    "xi": None,
    "seed": None,
    "workers": 1,
    "budget_draws": None,
    "out_dir": ".",
    "scale": 1.0,
    "table1": False,
    "env_index": 0,
    "json": False,
}


class CliError(Exception):
    def __init__(self, code: str, status: int, message: str):
        super().__init__(message)
        self.code = code
        self.status = status


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", EXIT_USAGE, message)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rwre", description="Random-walk estimation of homogenized conductivity.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="flat JSON file whose keys mirror the flags")
        s.add_argument("--law", help="two_point:A,B[,P] | uniform:A,B | constant:C")
        s.add_argument("--d", type=int)
        s.add_argument("--t", help="horizon, or comma-separated horizons")
        s.add_argument("--n", type=int, help="walks per estimate")
        s.add_argument("--K", type=int, help="replication factor, n = K t^2")
        s.add_argument("--m", type=int, help="repetitions")
        s.add_argument("--lam", type=float, help="exponential-moment parameter")
        s.add_argument("--xi", help="direction, comma-separated; normalized")
        s.add_argument("--seed", help="decimal or 0x-hex 64-bit seed")
        s.add_argument("--workers", type=int)
        s.add_argument("--budget-draws", dest="budget_draws", type=int)
        s.add_argument("--out-dir", dest="out_dir")
        s.add_argument("--scale", type=float)
        s.add_argument("--table1", action="store_const", const=True)
        s.add_argument("--env-index", dest="env_index", type=int)
        s.add_argument("--json", action="store_const", const=True)
    return p


def _resolve(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError("config", EXIT_USAGE, f"cannot read config {args.config}: {exc}")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise CliError("usage", EXIT_USAGE, f"unknown config keys {sorted(unknown)}")
        cfg.update(loaded)
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    cfg["command"] = args.command
    if cfg["seed"] is None and os.environ.get("RWRE_SEED"):
        cfg["seed"] = os.environ["RWRE_SEED"]
    if cfg["seed"] is None:
        cfg["seed"] = secrets.randbits(64)
        print(f"rwre: NOTE no seed given, generated seed={cfg['seed']:#x}; pass --seed to reproduce",
              file=sys.stderr)
    try:
        cfg["seed"] = parse_seed(cfg["seed"])
    except ValueError as exc:
        raise CliError("invalid_parameter", EXIT_INVALID_PARAM, str(exc))
    return cfg


def _law(cfg) -> ConductanceLaw:
    spec = cfg["law"]
    try:
        law = ConductanceLaw.from_dict(spec) if isinstance(spec, dict) else ConductanceLaw.parse(spec)
        law.arrays(int(cfg["d"]))
    except (InvalidLawError, ValueError, KeyError, TypeError) as exc:
        raise CliError("invalid_parameter", EXIT_INVALID_PARAM, f"invalid law {spec!r}: {exc}")
    cfg["law"] = law.to_dict()
    return law


def _ints(v) -> list[int]:
    if v is None:
        return []
    if isinstance(v, (list, tuple)):
        return [int(x) for x in v]
    return [int(x) for x in str(v).split(",") if x.strip()]


def _xi(cfg) -> list[float]:
    d = int(cfg["d"])
    raw = cfg["xi"]
    if raw is None:
        vals = [1.0] + [0.0] * (d - 1)
    else:
        vals = raw if isinstance(raw, list) else [float(x) for x in str(raw).split(",")]
    xi = unit_direction(vals)
    if len(xi) != d:
        raise ValueError(f"--xi has {len(xi)} components, dimension is {d}")
    cfg["xi"] = [float(v) for v in xi]
    return cfg["xi"]


def _plan(cfg, law, mode) -> study.StudyPlan:
    horizons = _ints(cfg["t"])
    common = dict(d=int(cfg["d"]), xi=tuple(_xi(cfg)), mode=mode, lam=float(cfg["lam"]),
                  budget_draws=cfg["budget_draws"], walks=cfg["n"])
    if cfg["m"] is not None:
        common["repetitions"] = int(cfg["m"])
    if cfg["table1"]:
        return study.StudyPlan.table1(law, cfg["seed"], scale=float(cfg["scale"]),
                                      horizons=horizons or None, **common)
    if not horizons:
        raise ValueError("--t is required unless --table1 is given")
    k = int(cfg["K"]) if cfg["K"] is not None else 1
    return study.StudyPlan(law, cfg["seed"], horizons=tuple(horizons),
                           replication={t: k for t in horizons}, **common)


def _out_dir(cfg) -> Path:
    out = Path(cfg["out_dir"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("write_failure", EXIT_WRITE, f"cannot create {out}: {exc}")
    return out


def _cmd_estimate(cfg, law):
    ts = _ints(cfg["t"])
    if len(ts) != 1 or cfg["n"] is None:
        raise ValueError("estimate needs one --t and --n")
    rep = study.estimate(law, int(cfg["d"]), _xi(cfg), ts[0], int(cfg["n"]), cfg["seed"], int(cfg["workers"]))
    if cfg["json"]:
        print(rep.to_json())
    else:
        print(",".join(CSV_FIELDS))
        print(",".join(repr(v) for v in rep.csv_row()))


def _cmd_sweep(cfg, law):
    plan = _plan(cfg, law, "sweep")
    plan.check_budget()
    out = _out_dir(cfg)
    records = study.run_sweep(plan, workers=int(cfg["workers"]))
    study.write_sweep_csv(records, plan, out / "sweep.csv", cfg)
    try:
        fit = study.fit_rate(records)
        study.write_fit_json(fit, plan, out / "fit.json", cfg)
    except ValueError:
        with open(out / "fit.json", "w") as fh:
            json.dump({"fit": None, "plan": plan.to_dict(), "config": cfg}, fh, sort_keys=True, indent=2)
    study.write_meta_json(out / "meta.json", {str(r.t): r.wall_seconds for r in records})
    for r in records:
        print(f"t={r.t} n={r.n} ahom={r.ahom_direction!r} err={r.systematic_error!r}")


def _cmd_fluctuations(cfg, law):
    plan = _plan(cfg, law, "fluctuations")
    plan.check_budget()
    out = _out_dir(cfg)
    results = study.run_fluctuations(plan, workers=int(cfg["workers"]))
    study.write_fluct_csv(results, plan, out / "fluct.csv", cfg)
    study.write_meta_json(out / "meta.json", {})
    for r in results:
        s = r.sample
        print(f"t={r.t} n={r.n} m={s.m} sd={r.sd!r} skew={s.skewness!r} exkurt={s.excess_kurtosis!r}")


def _cmd_diagnostics(cfg, law):
    plan = _plan(cfg, law, "diagnostics")
    plan.check_budget()
    out = _out_dir(cfg)
    results = study.run_diagnostics(plan, workers=int(cfg["workers"]))
    study.write_diag_json(results, plan, out / "diag.json", cfg)
    study.write_meta_json(out / "meta.json", {})
    for r in results:
        print(f"t={r.t} n={r.n} tail={r.tail} exp_moment={r.exp_moment!r}")


def _cmd_oracle(cfg, law):
    ts = _ints(cfg["t"]) or [6]
    t, d = ts[0], int(cfg["d"])
    n = int(cfg["n"] or 100_000)
    xi = _xi(cfg)
    field = EnvironmentField(law, cfg["seed"], int(cfg["env_index"]))
    kernel = oracle.exact_distribution(field, t, d)
    batch = simulate_discrete(law, d, cfg["seed"], t, np.full(n, field.env_index, dtype=np.uint64),
                              np.arange(n, dtype=np.uint64))
    z2 = (batch.positions.astype(np.float64) @ np.asarray(xi)) ** 2 / t
    balance = oracle.check_detailed_balance(field, min(t, oracle.MAX_BALANCE_RADIUS), d)
    result = {
        "total_mass": kernel.total_mass(),
        "exact_sigma_t": kernel.second_moment(xi) / t,
        "mc_sigma_t": float(z2.mean()),
        "mc_standard_error": float(z2.std(ddof=1) / np.sqrt(n)),
        "total_variation": oracle.total_variation(kernel, batch.positions),
        "detailed_balance_ok": balance.ok,
        "detailed_balance_max_violation": balance.max_violation,
        "config": cfg,
    }
    out = _out_dir(cfg)
    with open(out / "kernel.csv", "w", newline="") as fh:
        kernel.to_csv(fh)
    with open(out / "oracle.json", "w") as fh:
        json.dump(result, fh, sort_keys=True, indent=2)
    print(json.dumps({k: v for k, v in result.items() if k != "config"}, sort_keys=True))


_DISPATCH = {
    "estimate": _cmd_estimate,
    "sweep": _cmd_sweep,
    "fluctuations": _cmd_fluctuations,
    "diagnostics": _cmd_diagnostics,
    "oracle-check": _cmd_oracle,
}


def run(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
        cfg = _resolve(args)
        law = _law(cfg)
        if int(cfg["workers"]) < 1:
            raise ValueError("--workers must be >= 1")
        _DISPATCH[args.command](cfg, law)
        return EXIT_OK
    except CliError as exc:
        err = exc
    except study.BudgetExceededError as exc:
        err = CliError("budget_exceeded", EXIT_BUDGET, str(exc))
    except (InvalidLawError, ValueError) as exc:
        err = CliError("invalid_parameter", EXIT_INVALID_PARAM, str(exc))
    except OSError as exc:
        err = CliError("write_failure", EXIT_WRITE, str(exc))
    except Exception as exc:  # noqa: BLE001
        err = CliError("internal", EXIT_INTERNAL, f"{type(exc).__name__}: {exc}")
    print(f"rwre: error code={err.code} exit={err.status} message={json.dumps(str(err))}", file=sys.stderr)
    return err.status


def main() -> None:
    sys.exit(run())
